//! Experiment configuration: a single TOML file plus `key.path=value`
//! overrides, validated up front before any computation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::derive_seed;
use crate::dae::{DaeConfig, InputMode, Variant};
use crate::error::{Error, Result};
use crate::trainer::TrainSchedule;

/// Environment variable consulted when the config omits `out_dir`.
pub const OUT_DIR_ENV: &str = "MIMO_DAE_OUT_DIR";

const TAG_EVAL_SEED: u64 = 0x65766c73;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Full-scale settings matching the published training budget.
    Paper,
    /// Scaled-down settings that train and evaluate in minutes.
    Desk,
}

/// Raw file schema. Unknown keys anywhere are a hard error.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    profile: Option<Profile>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    workers: Option<usize>,
    dae: DaeSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DaeSection {
    variant: Variant,
    input_mode: InputMode,
    residuals: Option<bool>,
    n_s: u32,
    hidden_layers: Option<usize>,
    hidden_width: Option<usize>,
    power: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    channels: Option<u32>,
    batch_size: Option<u32>,
    rounds: Option<u32>,
    lr0: Option<f64>,
    lr_decay: Option<f64>,
    n0_range_db: Option<(f64, f64)>,
    checkpoint_every: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    grid_db: Option<Vec<f64>>,
    frames_per_point: Option<u64>,
    channels: Option<usize>,
    seed: Option<u64>,
}

/// Resolved evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub grid_db: Vec<f64>,
    pub frames_per_point: u64,
    pub channels: usize,
    pub seed: u64,
}

/// A fully validated experiment: everything a command needs to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub dae: DaeConfig,
    pub train: TrainSchedule,
    pub eval: EvalSettings,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.dae.validate()?;
        self.train.validate()?;
        if self.eval.grid_db.is_empty() {
            return Err(Error::Config("eval.grid_db must be non-empty".into()));
        }
        if self.eval.frames_per_point == 0 || self.eval.channels == 0 {
            return Err(Error::Config(
                "eval.frames_per_point and eval.channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Load, override, resolve, and validate an experiment file.
pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<Experiment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_experiment(&text, overrides)
}

/// Parse experiment TOML text with `key.path=value` overrides applied.
pub fn parse_experiment(text: &str, overrides: &[String]) -> Result<Experiment> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    let file: ExperimentFile = value
        .try_into()
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    resolve(file)
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{entry}' is not key.path=value")))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override '{entry}' has an empty path segment")));
    }
    // Parse the value as a TOML literal; fall back to a bare string.
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));

    let mut node = root;
    for seg in &segments[..segments.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
    table.insert(segments.last().unwrap().to_string(), parsed);
    Ok(())
}

fn resolve(file: ExperimentFile) -> Result<Experiment> {
    let profile = file.profile.unwrap_or(Profile::Desk);
    let seed = file.seed.unwrap_or(0);

    let mut dae = DaeConfig::new(
        file.dae.variant,
        file.dae.input_mode,
        file.dae.residuals.unwrap_or(true),
        file.dae.n_s,
    );
    if let Some(v) = file.dae.hidden_layers {
        dae.hidden_layers = v;
    }
    if let Some(v) = file.dae.hidden_width {
        dae.hidden_width = v;
    }
    if let Some(v) = file.dae.power {
        dae.power = v;
    }

    let mut train = match profile {
        Profile::Paper => TrainSchedule::paper(seed),
        Profile::Desk => TrainSchedule::desk(seed),
    };
    if let Some(v) = file.train.channels {
        train.channels = v;
    }
    if let Some(v) = file.train.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = file.train.rounds {
        train.rounds = v;
    }
    if let Some(v) = file.train.lr0 {
        train.lr0 = v;
    }
    if let Some(v) = file.train.lr_decay {
        train.lr_decay = v;
    }
    if let Some(v) = file.train.n0_range_db {
        train.n0_range_db = v;
    }
    if let Some(v) = file.train.checkpoint_every {
        train.checkpoint_every = v;
    }

    let eval = EvalSettings {
        grid_db: file.eval.grid_db.unwrap_or_else(crate::evaluator::default_grid),
        frames_per_point: file.eval.frames_per_point.unwrap_or(match profile {
            Profile::Paper => 400_000,
            Profile::Desk => 40_000,
        }),
        channels: file.eval.channels.unwrap_or(match profile {
            Profile::Paper => 2000,
            Profile::Desk => 200,
        }),
        // Evaluation channels must come from a stream disjoint from training.
        seed: file.eval.seed.unwrap_or_else(|| derive_seed(seed, &[TAG_EVAL_SEED])),
    };

    let out_dir = file
        .out_dir
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    let experiment =
        Experiment { profile, seed, out_dir, workers: file.workers, dae, train, eval };
    experiment.validate()?;
    Ok(experiment)
}

/// Error unless `path` does not exist yet or `force` is set.
pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.display().to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
profile = "desk"
seed = 7

[dae]
variant = "svd"
input_mode = "bit"
n_s = 4
"#;

    #[test]
    fn minimal_config_resolves_with_profile_defaults() {
        let exp = parse_experiment(MINIMAL, &[]).unwrap();
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.train.channels, 200);
        assert_eq!(exp.train.batch_size, 500);
        assert_eq!(exp.train.rounds, 60);
        assert_eq!(exp.eval.channels, 200);
        assert_eq!(exp.eval.grid_db.len(), 13);
        assert_eq!(exp.dae.power, 20.0);
        assert!(exp.dae.residuals);
        assert_ne!(exp.eval.seed, exp.seed);
    }

    #[test]
    fn paper_profile_defaults() {
        let text = MINIMAL.replace("desk", "paper");
        let exp = parse_experiment(&text, &[]).unwrap();
        assert_eq!(exp.train.channels, 2000);
        assert_eq!(exp.train.batch_size, 2000);
        assert_eq!(exp.train.rounds, 1000);
        assert_eq!(exp.train.lr0, 1e-4);
        assert_eq!(exp.train.lr_decay, 0.995);
        assert_eq!(exp.eval.channels, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let text = format!("{MINIMAL}\n[train]\nroundz = 5\n");
        let err = parse_experiment(&text, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("roundz"), "error should name the key: {msg}");
    }

    #[test]
    fn overrides_change_nested_values() {
        let exp =
            parse_experiment(MINIMAL, &["train.rounds=5".into(), "dae.variant=\"plain\"".into()])
                .unwrap();
        assert_eq!(exp.train.rounds, 5);
        assert_eq!(exp.dae.variant, Variant::Plain);
    }

    #[test]
    fn override_with_unknown_key_is_rejected() {
        let err = parse_experiment(MINIMAL, &["train.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn malformed_override_is_rejected() {
        assert!(parse_experiment(MINIMAL, &["no-equals-sign".into()]).is_err());
    }

    #[test]
    fn invalid_n_s_fails_validation() {
        let text = MINIMAL.replace("n_s = 4", "n_s = 3");
        assert!(parse_experiment(&text, &[]).is_err());
    }

    #[test]
    fn one_hot_kebab_case_parses() {
        let text = MINIMAL.replace("\"bit\"", "\"one-hot\"");
        let exp = parse_experiment(&text, &[]).unwrap();
        assert_eq!(exp.dae.input_mode, InputMode::OneHot);
    }

    #[test]
    fn would_overwrite_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exists.csv");
        std::fs::write(&path, "x").unwrap();
        assert!(matches!(ensure_writable(&path, false), Err(Error::WouldOverwrite(_))));
        ensure_writable(&path, true).unwrap();
        ensure_writable(&dir.path().join("new.csv"), false).unwrap();
    }
}
