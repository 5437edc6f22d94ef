//! Command-line entry point: train, eval, baseline, sweep, grad-check, and
//! selftest workflows over a single TOML experiment file.
//!
//! Logs go to stderr; data artifacts go to files under the experiment's
//! output directory. Exit codes: 0 success, 1 validation error, 2 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;

use mimo_dae::baseline::{analytic_ber, q_function, Modulation};
use mimo_dae::channel::{rng_from_seed, sample_channel, LinkBudget, LinkQuantity};
use mimo_dae::config::{ensure_writable, load_experiment, Experiment};
use mimo_dae::dae::{
    configure_frozen, draw_noise, draw_payload_frames, encode_payload_batch, feature_vector,
    grad_check, NetParams,
};
use mimo_dae::error::Error;
use mimo_dae::evaluator::{
    ber_sweep, channel_set_id, compare_curves, evaluation_channels, write_comparison_csv,
    write_comparison_json, write_curve_csv, write_curve_json, BaselineSystem, BerCurve, DaeSystem,
};
use mimo_dae::trainer::{config_hash, load_checkpoint, train_with_options, write_history_csv};

#[derive(Parser)]
#[command(name = "mimo-dae", version, about = "SVD-embedded deep-autoencoder MIMO link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a DAE and write checkpoints plus the loss history.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config value, e.g. --set train.rounds=10.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Overwrite existing artifacts.
        #[arg(long)]
        force: bool,
        /// Resume from a checkpoint written under an identical config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over the Eb/N0 grid; writes CSV and JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to <out_dir>/checkpoint.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Sweep the classical SVD + adaptive-QAM baseline over the grid.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate several checkpoints (and optionally the baseline) on one
    /// shared grid and emit a comparison report.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoints to evaluate; repeat the flag for each. The first
        /// curve is the comparison reference.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Also evaluate the classical baseline as the final curve.
        #[arg(long)]
        include_baseline: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Full-graph gradient verification against central differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        /// Check a trained checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the built-in analytic oracles (SVD, water-filling, QAM BER,
    /// link budget) and report pass/fail per check.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            match err {
                Error::Config(_) | Error::InvalidInput(_) | Error::WouldOverwrite(_) => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train { config, overrides, force, resume } => {
            let exp = load_experiment(&config, &overrides)?;
            init_workers(&exp);
            std::fs::create_dir_all(&exp.out_dir)?;
            let ckpt_path = exp.out_dir.join("checkpoint.ckpt");
            let history_path = exp.out_dir.join("history.csv");
            ensure_writable(&ckpt_path, force)?;
            ensure_writable(&history_path, force)?;

            let resume_state = match resume {
                Some(path) => Some(load_checkpoint(&path)?),
                None => None,
            };
            let result =
                train_with_options(&exp.dae, &exp.train, Some(&exp.out_dir), resume_state)?;
            write_history_csv(&history_path, &result.history, &config_hash(&exp.dae), exp.seed)?;
            log::info!("wrote {} and {}", ckpt_path.display(), history_path.display());
            Ok(())
        }
        Command::Eval { config, checkpoint, overrides, force } => {
            let exp = load_experiment(&config, &overrides)?;
            init_workers(&exp);
            let ckpt_path = checkpoint.unwrap_or_else(|| exp.out_dir.join("checkpoint.ckpt"));
            let curve = eval_checkpoint(&exp, &ckpt_path)?;
            std::fs::create_dir_all(&exp.out_dir)?;
            write_curve(&exp.out_dir, &curve, force)
        }
        Command::Baseline { config, overrides, force } => {
            let exp = load_experiment(&config, &overrides)?;
            init_workers(&exp);
            let system = BaselineSystem { n_s: exp.dae.n_s, power: exp.dae.power };
            let channels = evaluation_channels(exp.eval.seed, exp.eval.channels);
            let curve = ber_sweep(
                &system,
                &channels,
                &exp.eval.grid_db,
                exp.eval.frames_per_point,
                exp.eval.seed,
                &channel_set_id(exp.eval.seed, exp.eval.channels),
            )?;
            std::fs::create_dir_all(&exp.out_dir)?;
            write_curve(&exp.out_dir, &curve, force)
        }
        Command::Sweep { config, checkpoints, include_baseline, overrides, force } => {
            let exp = load_experiment(&config, &overrides)?;
            init_workers(&exp);
            let channels = evaluation_channels(exp.eval.seed, exp.eval.channels);
            let set_id = channel_set_id(exp.eval.seed, exp.eval.channels);

            let mut curves: Vec<BerCurve> = Vec::new();
            for path in &checkpoints {
                let ckpt = load_checkpoint(path)?;
                let system = DaeSystem { config: &ckpt.config, params: &ckpt.params };
                curves.push(ber_sweep(
                    &system,
                    &channels,
                    &exp.eval.grid_db,
                    exp.eval.frames_per_point,
                    exp.eval.seed,
                    &set_id,
                )?);
            }
            if include_baseline {
                let system = BaselineSystem { n_s: exp.dae.n_s, power: exp.dae.power };
                curves.push(ber_sweep(
                    &system,
                    &channels,
                    &exp.eval.grid_db,
                    exp.eval.frames_per_point,
                    exp.eval.seed,
                    &set_id,
                )?);
            }

            std::fs::create_dir_all(&exp.out_dir)?;
            for curve in &curves {
                write_curve(&exp.out_dir, curve, force)?;
            }
            let report = compare_curves(&curves)?;
            let csv_path = exp.out_dir.join("comparison.csv");
            let json_path = exp.out_dir.join("comparison.json");
            ensure_writable(&csv_path, force)?;
            ensure_writable(&json_path, force)?;
            write_comparison_csv(&csv_path, &curves, &report)?;
            write_comparison_json(&json_path, &report)?;
            log::info!("wrote {} and {}", csv_path.display(), json_path.display());
            Ok(())
        }
        Command::GradCheck { config, checkpoint, overrides } => {
            let exp = load_experiment(&config, &overrides)?;
            let params = match checkpoint {
                Some(path) => {
                    let ckpt = load_checkpoint(&path)?;
                    ckpt.ensure_matches(&exp.dae)?;
                    ckpt.params
                }
                None => NetParams::init(&exp.dae, exp.seed)?,
            };
            let worst = full_graph_grad_check(&exp, &params)?;
            println!("grad-check: max relative error {worst:.3e} (tolerance 1e-4)");
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "gradient check failed: {worst:.3e} exceeds 1e-4"
                )))
            }
        }
        Command::Selftest => selftest(),
    }
}

fn init_workers(exp: &Experiment) {
    if let Some(n) = exp.workers {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn eval_checkpoint(exp: &Experiment, ckpt_path: &Path) -> Result<BerCurve, Error> {
    let ckpt = load_checkpoint(ckpt_path)?;
    ckpt.ensure_matches(&exp.dae)?;
    let system = DaeSystem { config: &ckpt.config, params: &ckpt.params };
    let channels = evaluation_channels(exp.eval.seed, exp.eval.channels);
    ber_sweep(
        &system,
        &channels,
        &exp.eval.grid_db,
        exp.eval.frames_per_point,
        exp.eval.seed,
        &channel_set_id(exp.eval.seed, exp.eval.channels),
    )
}

fn write_curve(dir: &Path, curve: &BerCurve, force: bool) -> Result<(), Error> {
    let csv_path = dir.join(format!("{}.csv", curve.meta.label));
    let json_path = dir.join(format!("{}.json", curve.meta.label));
    ensure_writable(&csv_path, force)?;
    ensure_writable(&json_path, force)?;
    write_curve_csv(&csv_path, curve)?;
    write_curve_json(&json_path, curve)?;
    log::info!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn full_graph_grad_check(exp: &Experiment, params: &NetParams) -> Result<f64, Error> {
    let mut worst = 0.0f64;
    let mut channel_rng = rng_from_seed(exp.seed ^ 0x6763);
    for c in 0..5u64 {
        let n0 = 10f64.powf(channel_rng.gen_range(-10.0..10.0) / 10.0);
        let ch = sample_channel(&mut channel_rng).with_noise(n0);
        let frozen = configure_frozen(&exp.dae, &ch)?;
        let feature = feature_vector(&exp.dae, &ch);
        for i in 0..3u64 {
            let mut rng = rng_from_seed(exp.seed ^ (c * 3 + i));
            let frames = draw_payload_frames(exp.dae.n_s, 2, &mut rng);
            let payload = encode_payload_batch(&frames, &exp.dae)?;
            let noise = draw_noise(2 * exp.dae.n_t, 2, n0, &mut rng);
            let rel = grad_check(
                &exp.dae, params, &frozen, &feature, &payload, &noise, 200, 1e-5, &mut rng,
            )?;
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn selftest() -> Result<(), Error> {
    let mut failures = 0u32;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!("{}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    // SVD reconstruction and unitarity on random channels.
    {
        let mut rng = rng_from_seed(814);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let ch = sample_channel(&mut rng);
            let recon = ch.svd.reconstruct();
            let rel = recon.frobenius_distance(&ch.h) / ch.h.frobenius_norm();
            worst = worst.max(rel);
        }
        check("svd-reconstruction", worst < 1e-10, format!("worst relative error {worst:.2e}"));
    }

    // Water-filling KKT residuals.
    {
        let mut rng = rng_from_seed(815);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let lambda_sq = [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0];
            let n0 = 0.01 + rng.gen::<f64>() * 2.0;
            let p_total = 0.1 + rng.gen::<f64>() * 40.0;
            let alloc = mimo_dae::baseline::waterfill(&lambda_sq, n0, p_total)?;
            let sum_err = (alloc.p.iter().sum::<f64>() - p_total).abs();
            worst = worst.max(sum_err);
            let active: Vec<f64> = alloc
                .p
                .iter()
                .zip(&lambda_sq)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, l)| p + n0 / l)
                .collect();
            for pair in active.windows(2) {
                worst = worst.max((pair[0] - pair[1]).abs());
            }
        }
        check("water-filling-kkt", worst < 1e-9, format!("worst residual {worst:.2e}"));
    }

    // Monte Carlo QAM BER against the closed-form Q-function expressions.
    {
        let mut rng = rng_from_seed(816);
        let mut all_ok = true;
        let mut detail = String::new();
        for (m, ebn0_db) in [(Modulation::Bpsk, 4.0), (Modulation::Qam16, 8.0)] {
            let ebn0 = 10f64.powf(ebn0_db / 10.0);
            let expected = analytic_ber(m, ebn0)?;
            let nb = m.bits_per_symbol();
            let n0 = 1.0 / (nb as f64 * ebn0);
            let sigma = (n0 / 2.0).sqrt();
            let frames = 200_000u64;
            let mut errors = 0u64;
            for _ in 0..frames {
                let bits: Vec<i8> =
                    (0..nb).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
                let s = mimo_dae::baseline::gray_modulate(&bits, m)?;
                let noise = num_complex::Complex64::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma,
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma,
                );
                let decided = mimo_dae::baseline::gray_demodulate(s + noise, m, 1.0)?;
                errors += bits.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64;
            }
            let bits_total = (frames * nb as u64) as f64;
            let measured = errors as f64 / bits_total;
            let sd = (expected * (1.0 - expected) / bits_total).sqrt();
            let ok = (measured - expected).abs() <= 3.0 * sd;
            all_ok &= ok;
            detail.push_str(&format!("{m:?}@{ebn0_db}dB {measured:.3e} vs {expected:.3e}; "));
        }
        check("qam-ber-vs-q-function", all_ok, detail);
    }

    // Q(0) sanity and the 4-QAM = BPSK identity.
    {
        let q0 = q_function(0.0);
        let same =
            (analytic_ber(Modulation::Qam4, 2.5)? - analytic_ber(Modulation::Bpsk, 2.5)?).abs();
        check(
            "q-function-identities",
            (q0 - 0.5).abs() < 1e-12 && same < 1e-12,
            format!("Q(0) = {q0}, |4QAM - BPSK| = {same:.1e}"),
        );
    }

    // Link budget against the published training-region table.
    {
        let mut ok = true;
        for (n_s, ebn0_lo, ebn0_hi) in
            [(1u32, -12.0, 33.0), (2, -15.0, 30.0), (4, -18.0, 27.0), (6, -20.0, 25.0)]
        {
            let budget = LinkBudget::new(20.0, n_s)?;
            let snr_lo = budget.convert(25.0, LinkQuantity::N0Db, LinkQuantity::SnrDb);
            let snr_hi = budget.convert(-20.0, LinkQuantity::N0Db, LinkQuantity::SnrDb);
            ok &= snr_lo.round() == -12.0 && snr_hi.round() == 33.0;
            let lo = budget.convert(25.0, LinkQuantity::N0Db, LinkQuantity::EbN0Db);
            let hi = budget.convert(-20.0, LinkQuantity::N0Db, LinkQuantity::EbN0Db);
            ok &= lo.round() == ebn0_lo && hi.round() == ebn0_hi;
        }
        check("link-budget-table", ok, "P=20W, N0 in [-20,25] dB".into());
    }

    if failures == 0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{failures} selftest check(s) failed")))
    }
}
