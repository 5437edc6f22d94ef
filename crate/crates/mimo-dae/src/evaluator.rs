//! Monte Carlo BER/SER sweeps over held-out channels and curve comparison.
//!
//! A sweep fixes the noise level per Eb/N0 grid point, spreads a frame
//! budget over the channel set, and counts bit and frame errors. Results
//! carry their raw counts so confidence intervals stay recomputable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::baseline::{best_allocation, simulate_allocation};
use crate::channel::{derive_seed, rng_from_seed, sample_channel, ChannelRealization, LinkBudget};
use crate::dae::{configure_frozen, draw_payload_frames, evaluate_frames, feature_vector, DaeConfig, NetParams};
use crate::error::{Error, Result};
use crate::trainer::config_hash;

const TAG_EVAL_CHANNELS: u64 = 0x6576616c;
const TAG_EVAL_TASK: u64 = 0x7461736b;

// Eval forward passes are chunked to bound activation memory.
const EVAL_BATCH: usize = 512;

/// One grid point of a BER curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub ebn0_db: f64,
    pub snr_db: f64,
    pub ber: f64,
    pub ser: f64,
    pub frames: u64,
    pub bit_errors: u64,
}

/// Provenance block embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub channel_set: String,
    /// Bits per frame, so confidence intervals stay recomputable.
    pub n_s: u32,
}

/// BER/SER versus Eb/N0, with metadata and raw error counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub meta: CurveMeta,
    pub rows: Vec<BerRow>,
}

impl BerCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ebn0_db).collect()
    }
}

/// Anything that can push frames through one channel at one noise level.
pub trait LinkSystem: Sync {
    fn n_s(&self) -> u32;
    fn power(&self) -> f64;
    /// A short name for curve labels and logs.
    fn label(&self) -> String;
    /// Hash of whatever defines the system (network config or baseline).
    fn config_hash(&self) -> String;
    /// Simulate `frames` transmissions over `ch` (noise level inside `ch`).
    fn simulate(&self, ch: &ChannelRealization, frames: u64, rng: &mut crate::channel::Rng64)
        -> Result<(u64, u64)>;
}

/// A trained DAE under evaluation. Parameters are never mutated.
pub struct DaeSystem<'a> {
    pub config: &'a DaeConfig,
    pub params: &'a NetParams,
}

impl LinkSystem for DaeSystem<'_> {
    fn n_s(&self) -> u32 {
        self.config.n_s
    }

    fn power(&self) -> f64 {
        self.config.power
    }

    fn label(&self) -> String {
        let variant = match self.config.variant {
            crate::dae::Variant::Plain => "plain-dae",
            crate::dae::Variant::Svd => "svd-dae",
            crate::dae::Variant::SvdWf => "svd-wf-dae",
        };
        format!("{variant}-ns{}", self.config.n_s)
    }

    fn config_hash(&self) -> String {
        config_hash(self.config)
    }

    fn simulate(
        &self,
        ch: &ChannelRealization,
        frames: u64,
        rng: &mut crate::channel::Rng64,
    ) -> Result<(u64, u64)> {
        let frozen = configure_frozen(self.config, ch)?;
        let feature = feature_vector(self.config, ch);
        let mut bit_errors = 0u64;
        let mut frame_errors = 0u64;
        let mut remaining = frames;
        while remaining > 0 {
            let batch = remaining.min(EVAL_BATCH as u64) as usize;
            let payload_frames = draw_payload_frames(self.config.n_s, batch, rng);
            let (be, fe) = evaluate_frames(
                self.config,
                self.params,
                &frozen,
                &feature,
                &payload_frames,
                ch.n0,
                rng,
            )?;
            bit_errors += be;
            frame_errors += fe;
            remaining -= batch as u64;
        }
        Ok((bit_errors, frame_errors))
    }
}

/// The classical SVD + adaptive-modulation baseline as a sweepable system.
pub struct BaselineSystem {
    pub n_s: u32,
    pub power: f64,
}

impl LinkSystem for BaselineSystem {
    fn n_s(&self) -> u32 {
        self.n_s
    }

    fn power(&self) -> f64 {
        self.power
    }

    fn label(&self) -> String {
        format!("svd-qam-baseline-ns{}", self.n_s)
    }

    fn config_hash(&self) -> String {
        format!("baseline-ns{}-p{}", self.n_s, self.power)
    }

    fn simulate(
        &self,
        ch: &ChannelRealization,
        frames: u64,
        rng: &mut crate::channel::Rng64,
    ) -> Result<(u64, u64)> {
        let alloc = best_allocation(&ch.svd.lambda, ch.n0, self.n_s, self.power)?;
        let counts = simulate_allocation(ch, &alloc, self.power, frames, rng)?;
        Ok((counts.bit_errors, counts.frame_errors))
    }
}

/// Held-out channel set, disjoint from training by seed derivation.
pub fn evaluation_channels(seed: u64, count: usize) -> Vec<ChannelRealization> {
    let mut rng = rng_from_seed(derive_seed(seed, &[TAG_EVAL_CHANNELS]));
    (0..count).map(|_| sample_channel(&mut rng)).collect()
}

/// Identifier recorded in artifacts so channel sets can be matched up.
pub fn channel_set_id(seed: u64, count: usize) -> String {
    format!("eval-s{seed}-n{count}")
}

/// Default evaluation grid: Eb/N0 from -10 to 20 dB in 2.5 dB steps.
pub fn default_grid() -> Vec<f64> {
    (0..13).map(|i| -10.0 + 2.5 * i as f64).collect()
}

/// Sweep `system` over the grid, spending ~`frames_per_point` per point
/// spread across the channel set.
///
/// Work fans out across channels; per-task seeds derive from (seed, point,
/// channel) and results reduce in channel order, so the outcome does not
/// depend on the worker count.
pub fn ber_sweep(
    system: &dyn LinkSystem,
    channel_set: &[ChannelRealization],
    grid_db: &[f64],
    frames_per_point: u64,
    seed: u64,
    channel_set_label: &str,
) -> Result<BerCurve> {
    if grid_db.is_empty() {
        return Err(Error::InvalidInput("evaluation grid must be non-empty".into()));
    }
    if channel_set.is_empty() {
        return Err(Error::InvalidInput("channel set must be non-empty".into()));
    }
    let budget = LinkBudget::new(system.power(), system.n_s())?;
    let frames_per_channel = (frames_per_point / channel_set.len() as u64).max(1);

    let mut rows = Vec::with_capacity(grid_db.len());
    for (pi, &ebn0_db) in grid_db.iter().enumerate() {
        let n0 = budget.n0_for_ebn0_db(ebn0_db);
        let snr_db = budget.snr_db_for_ebn0_db(ebn0_db);

        let counts: Result<Vec<(u64, u64)>> = channel_set
            .par_iter()
            .enumerate()
            .map(|(ci, base)| {
                let ch = base.clone().with_noise(n0);
                let mut rng = rng_from_seed(derive_seed(
                    seed,
                    &[TAG_EVAL_TASK, pi as u64, ci as u64],
                ));
                system.simulate(&ch, frames_per_channel, &mut rng)
            })
            .collect();
        let counts = counts?;

        let mut bit_errors = 0u64;
        let mut frame_errors = 0u64;
        for (be, fe) in counts {
            bit_errors += be;
            frame_errors += fe;
        }
        let frames = frames_per_channel * channel_set.len() as u64;
        let bits = frames * system.n_s() as u64;
        rows.push(BerRow {
            ebn0_db,
            snr_db,
            ber: bit_errors as f64 / bits as f64,
            ser: frame_errors as f64 / frames as f64,
            frames,
            bit_errors,
        });
        log::info!(
            "{}: Eb/N0 {ebn0_db} dB -> BER {:.3e} ({bit_errors}/{bits} bits)",
            system.label(),
            bit_errors as f64 / bits as f64
        );
    }

    Ok(BerCurve {
        meta: CurveMeta {
            label: system.label(),
            config_hash: system.config_hash(),
            seed,
            channel_set: channel_set_label.to_string(),
            n_s: system.n_s(),
        },
        rows,
    })
}

/// Wilson 95% score interval for `k` errors in `n` trials.
///
/// Zero-error points degenerate to the one-sided bound (0, z^2/(n+z^2)).
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    assert!(n > 0, "interval needs at least one trial");
    let z = 1.959963984540054f64; // 97.5th percentile of N(0,1)
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = n_f + z2;
    let center = (k as f64 + z2 / 2.0) / denom;
    let half = z * (p * (1.0 - p) * n_f + z2 / 4.0).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Per-point BER ratios of every curve against the first (reference) curve.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub grid: Vec<f64>,
    pub labels: Vec<String>,
    /// ratios[c][p] = reference BER / curve BER at grid point p, None when
    /// either side measured zero errors.
    pub ratios: Vec<Vec<Option<f64>>>,
    /// Wilson 95% interval on BER per curve and point.
    pub intervals: Vec<Vec<(f64, f64)>>,
    /// Min/max defined ratio per non-reference curve.
    pub ratio_range: Vec<Option<(f64, f64)>>,
}

/// Compare curves sharing a grid; the first curve is the reference.
pub fn compare_curves(curves: &[BerCurve]) -> Result<ComparisonReport> {
    if curves.is_empty() {
        return Err(Error::InvalidInput("need at least one curve".into()));
    }
    let grid = curves[0].grid();
    for c in curves.iter().skip(1) {
        if c.grid() != grid {
            return Err(Error::InvalidInput(format!(
                "curve '{}' grid differs from reference '{}'",
                c.meta.label, curves[0].meta.label
            )));
        }
    }

    let reference = &curves[0];
    let mut ratios = Vec::new();
    let mut intervals = Vec::new();
    let mut ratio_range = Vec::new();
    for curve in curves {
        let mut curve_ratios = Vec::with_capacity(grid.len());
        let mut curve_intervals = Vec::with_capacity(grid.len());
        let mut defined: Vec<f64> = Vec::new();
        for (row, ref_row) in curve.rows.iter().zip(&reference.rows) {
            let ratio = if row.ber > 0.0 && ref_row.ber > 0.0 {
                Some(ref_row.ber / row.ber)
            } else {
                None
            };
            if let Some(r) = ratio {
                defined.push(r);
            }
            curve_ratios.push(ratio);
            curve_intervals.push(wilson_interval(row.bit_errors, row.frames * curve.meta.n_s as u64));
        }
        ratios.push(curve_ratios);
        intervals.push(curve_intervals);
        ratio_range.push(if defined.is_empty() {
            None
        } else {
            let min = defined.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = defined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some((min, max))
        });
    }

    Ok(ComparisonReport {
        grid,
        labels: curves.iter().map(|c| c.meta.label.clone()).collect(),
        ratios,
        intervals,
        ratio_range,
    })
}

/// Write `ebn0_db,snr_db,ber,ser,frames,bit_errors` rows with a commented
/// metadata header.
pub fn write_curve_csv(path: &Path, curve: &BerCurve) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# label: {}\n", curve.meta.label));
    out.push_str(&format!("# config_hash: {}\n", curve.meta.config_hash));
    out.push_str(&format!("# seed: {}\n", curve.meta.seed));
    out.push_str(&format!("# channel_set: {}\n", curve.meta.channel_set));
    out.push_str("ebn0_db,snr_db,ber,ser,frames,bit_errors\n");
    for r in &curve.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.ebn0_db, r.snr_db, r.ber, r.ser, r.frames, r.bit_errors
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_curve_json(path: &Path, curve: &BerCurve) -> Result<()> {
    let json = serde_json::to_string_pretty(curve).expect("curve serializes");
    std::fs::write(path, json)?;
    Ok(())
}

/// Side-by-side comparison CSV: grid column plus BER and ratio per curve.
pub fn write_comparison_csv(path: &Path, curves: &[BerCurve], report: &ComparisonReport) -> Result<()> {
    let mut out = String::new();
    out.push_str("ebn0_db");
    for label in &report.labels {
        out.push_str(&format!(",ber_{label},ratio_{label}"));
    }
    out.push('\n');
    for (p, ebn0) in report.grid.iter().enumerate() {
        out.push_str(&format!("{ebn0}"));
        for (c, _) in report.labels.iter().enumerate() {
            let ber = curves[c].rows[p].ber;
            match report.ratios[c][p] {
                Some(r) => out.push_str(&format!(",{ber},{r}")),
                None => out.push_str(&format!(",{ber},")),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_comparison_json(path: &Path, report: &ComparisonReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json)?;
    Ok(())
}
