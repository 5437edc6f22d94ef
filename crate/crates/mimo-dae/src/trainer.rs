//! Per-channel stochastic training loop with learning-rate decay and
//! resumable checkpoints.
//!
//! One round visits every channel of a fixed set once, in order; each visit
//! draws a fresh noise level and payload batch and applies exactly one Adam
//! step. All randomness is derived from (master seed, round, channel), so a
//! resumed run is bit-identical to an uninterrupted one.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::channel::{derive_seed, rng_from_seed, sample_channel, ChannelRealization};
use crate::dae::{
    backward, chain_loss, configure_frozen, draw_payload_frames, encode_payload_batch,
    feature_vector, forward, DaeConfig, NetParams,
};
use crate::error::{Error, Result};
use crate::nn::{AdamTensor, DenseLayer, Mlp};
use rand::Rng;

// Stream tags for seed derivation.
const TAG_CHANNELS: u64 = 0x6368616e;
const TAG_STEP: u64 = 0x73746570;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSchedule {
    /// Channels per round (M_c).
    pub channels: u32,
    /// Payload vectors per optimizer step (M_b).
    pub batch_size: u32,
    /// Rounds (M_r); every channel is visited once per round.
    pub rounds: u32,
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplicative decay applied after each round.
    pub lr_decay: f64,
    /// Noise level draw range in dB, inclusive.
    pub n0_range_db: (f64, f64),
    pub seed: u64,
    /// Rounds between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: u32,
}

impl TrainSchedule {
    /// Full-scale defaults: M_c = 2000, M_b = 2000, M_r = 1000,
    /// lr = 1e-4 decaying by 0.995, N0 in [-20, 25] dB.
    pub fn paper(seed: u64) -> Self {
        Self {
            channels: 2000,
            batch_size: 2000,
            rounds: 1000,
            lr0: 1e-4,
            lr_decay: 0.995,
            n0_range_db: (-20.0, 25.0),
            seed,
            checkpoint_every: 50,
        }
    }

    /// Desk-scale preset that trains in minutes: M_c = 200, M_b = 500,
    /// M_r = 60, with a faster learning-rate schedule to compensate for the
    /// short run.
    pub fn desk(seed: u64) -> Self {
        Self {
            channels: 200,
            batch_size: 500,
            rounds: 60,
            lr0: 1e-3,
            lr_decay: 0.95,
            n0_range_db: (-20.0, 25.0),
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.batch_size == 0 || self.rounds == 0 {
            return Err(Error::Config("channels, batch_size, and rounds must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.n0_range_db.0 > self.n0_range_db.1 {
            return Err(Error::Config("n0 range must satisfy low <= high".into()));
        }
        Ok(())
    }

    /// Learning rate during 1-indexed `round`: lr0 * decay^(round-1).
    pub fn lr_at(&self, round: u32) -> f64 {
        self.lr0 * self.lr_decay.powi(round as i32 - 1)
    }
}

/// Loss trace of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Final parameters plus the per-round loss history.
#[derive(Debug)]
pub struct TrainResult {
    pub params: NetParams,
    pub history: Vec<RoundRecord>,
}

/// The fixed channel set a run trains on, derived from the master seed.
pub fn training_channels(schedule: &TrainSchedule) -> Vec<ChannelRealization> {
    let mut rng = rng_from_seed(derive_seed(schedule.seed, &[TAG_CHANNELS]));
    (0..schedule.channels).map(|_| sample_channel(&mut rng)).collect()
}

/// Train from scratch.
pub fn train(config: &DaeConfig, schedule: &TrainSchedule) -> Result<TrainResult> {
    train_with_options(config, schedule, None, None)
}

/// Train with optional checkpoint directory and resume state.
///
/// When `checkpoint_dir` is set, `checkpoint-roundNNNN.ckpt` files are
/// written every `checkpoint_every` rounds plus a final `checkpoint.ckpt`.
/// If the loss goes non-finite the run aborts with a diagnostic checkpoint
/// (`diverged.ckpt`) rather than silently skipping the step.
pub fn train_with_options(
    config: &DaeConfig,
    schedule: &TrainSchedule,
    checkpoint_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainResult> {
    config.validate()?;
    schedule.validate()?;

    let channel_set = training_channels(schedule);
    let (mut params, start_round) = match resume {
        Some(ckpt) => {
            ckpt.ensure_matches(config)?;
            if ckpt.seed != schedule.seed {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with seed {}, schedule has {}",
                    ckpt.seed, schedule.seed
                )));
            }
            let next = ckpt.completed_rounds + 1;
            (ckpt.params, next)
        }
        None => (NetParams::init(config, schedule.seed)?, 1),
    };

    let mut history = Vec::new();
    for round in start_round..=schedule.rounds {
        let lr = schedule.lr_at(round);
        let mut loss_sum = 0.0;
        for (m, base_channel) in channel_set.iter().enumerate() {
            let mut rng =
                rng_from_seed(derive_seed(schedule.seed, &[TAG_STEP, round as u64, m as u64]));
            let n0_db = rng.gen_range(schedule.n0_range_db.0..=schedule.n0_range_db.1);
            let n0 = 10f64.powf(n0_db / 10.0);
            let ch = base_channel.clone().with_noise(n0);

            let frozen = configure_frozen(config, &ch)?;
            let feature = feature_vector(config, &ch);
            let frames =
                draw_payload_frames(config.n_s, schedule.batch_size as usize, &mut rng);
            let payload = encode_payload_batch(&frames, config)?;

            let cache = forward(config, &params, &frozen, &feature, &payload, n0, &mut rng)?;
            let (loss, grad) = chain_loss(config, &cache, &payload)?;
            if !loss.is_finite() {
                if let Some(dir) = checkpoint_dir {
                    // Best-effort diagnostic dump of the diverged state.
                    let _ = save_checkpoint(
                        &dir.join("diverged.ckpt"),
                        config,
                        &params,
                        round - 1,
                        schedule.seed,
                    );
                }
                return Err(Error::Diverged { round, channel: m as u32, loss });
            }
            let (tx_grads, rx_grads) = backward(&params, &frozen, &cache, &grad);
            params.adam_step(&tx_grads, &rx_grads, lr);
            loss_sum += loss;
        }
        history.push(RoundRecord {
            round,
            lr,
            mean_loss: loss_sum / schedule.channels as f64,
        });
        log::info!(
            "round {round}/{}: lr {lr:.3e}, mean loss {:.6e}",
            schedule.rounds,
            loss_sum / schedule.channels as f64
        );

        if let Some(dir) = checkpoint_dir {
            let last = round == schedule.rounds;
            let periodic =
                schedule.checkpoint_every > 0 && round % schedule.checkpoint_every == 0;
            if periodic && !last {
                let path = dir.join(format!("checkpoint-round{round:04}.ckpt"));
                save_checkpoint(&path, config, &params, round, schedule.seed)?;
            }
            if last {
                save_checkpoint(
                    &dir.join("checkpoint.ckpt"),
                    config,
                    &params,
                    round,
                    schedule.seed,
                )?;
            }
        }
    }
    Ok(TrainResult { params, history })
}

/// Write the per-round loss history as `round,lr,mean_loss` CSV with a
/// commented provenance header.
pub fn write_history_csv(
    path: &Path,
    history: &[RoundRecord],
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let mut out = format!("# config_hash: {config_hash}\n# seed: {seed}\n");
    out.push_str("round,lr,mean_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.round, r.lr, r.mean_loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Hex SHA-256 of the canonical (JSON) serialization of a config.
pub fn config_hash(config: &DaeConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex_string(&digest)
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"MDAE";
const CKPT_VERSION: u32 = 1;

/// A loaded checkpoint: resumable parameters plus training position.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: DaeConfig,
    pub params: NetParams,
    pub completed_rounds: u32,
    pub seed: u64,
}

impl Checkpoint {
    /// Refuse checkpoints that were produced under a different config.
    pub fn ensure_matches(&self, config: &DaeConfig) -> Result<()> {
        if config_hash(&self.config) != config_hash(config) {
            return Err(Error::Checkpoint(
                "checkpoint config hash does not match the requested config".into(),
            ));
        }
        Ok(())
    }
}

/// Serialize parameters, Adam state, and training position to `path`.
///
/// The container is versioned, carries the config (and its hash) inline,
/// and ends with a SHA-256 of the payload so corruption is detected on
/// load. The write goes through a temp file and rename.
pub fn save_checkpoint(
    path: &Path,
    config: &DaeConfig,
    params: &NetParams,
    completed_rounds: u32,
    seed: u64,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    push_u32(&mut buf, CKPT_VERSION);

    let config_json = serde_json::to_string(config).expect("config serializes");
    let hash = config_hash(config);
    push_bytes(&mut buf, config_json.as_bytes());
    push_bytes(&mut buf, hash.as_bytes());

    push_u32(&mut buf, completed_rounds);
    push_u64(&mut buf, seed);

    for mlp in [&params.tx, &params.rx] {
        push_u32(&mut buf, mlp.layers.len() as u32);
        for layer in &mlp.layers {
            push_u32(&mut buf, layer.out_dim() as u32);
            push_u32(&mut buf, layer.in_dim() as u32);
            buf.push(u8::from(layer.trainable));
            push_f64_slice(&mut buf, layer.w.as_slice().expect("standard layout"));
            push_f64_slice(&mut buf, layer.b.as_slice().expect("contiguous"));
        }
    }

    push_u64(&mut buf, params.adam.t);
    push_f64(&mut buf, params.adam.beta1);
    push_f64(&mut buf, params.adam.beta2);
    push_f64(&mut buf, params.adam.eps);
    push_u32(&mut buf, params.moments.len() as u32);
    for tensor in &params.moments {
        push_u64(&mut buf, tensor.m.len() as u64);
        push_f64_slice(&mut buf, &tensor.m);
        push_f64_slice(&mut buf, &tensor.v);
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(&buf)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load and verify a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    if data.len() < 32 {
        return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
    }
    let (payload, stored_digest) = data.split_at(data.len() - 32);
    let digest = Sha256::digest(payload);
    if digest.as_slice() != stored_digest {
        return Err(Error::Checkpoint("checksum mismatch: file is corrupt or truncated".into()));
    }

    let mut cur = Cursor { data: payload, pos: 0 };
    let magic = cur.take(4)?;
    if magic != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CKPT_VERSION})"
        )));
    }

    let config_json = cur.bytes()?;
    let config: DaeConfig = serde_json::from_slice(config_json)
        .map_err(|e| Error::Checkpoint(format!("embedded config is invalid: {e}")))?;
    let stored_hash = String::from_utf8(cur.bytes()?.to_vec())
        .map_err(|_| Error::Checkpoint("config hash is not UTF-8".into()))?;
    if stored_hash != config_hash(&config) {
        return Err(Error::Checkpoint("embedded config hash mismatch".into()));
    }

    let completed_rounds = cur.u32()?;
    let seed = cur.u64()?;

    let mut nets: Vec<Mlp> = Vec::with_capacity(2);
    for which in 0..2 {
        let n_layers = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let out = cur.u32()? as usize;
            let inp = cur.u32()? as usize;
            let trainable = cur.take(1)?[0] != 0;
            let w = cur.f64_vec(out * inp)?;
            let b = cur.f64_vec(out)?;
            let w = ndarray::Array2::from_shape_vec((out, inp), w)
                .map_err(|e| Error::Checkpoint(format!("bad weight shape: {e}")))?;
            layers.push(DenseLayer::new(w, ndarray::Array1::from_vec(b), trainable)?);
        }
        let (hidden, output, residuals) = if which == 0 {
            (crate::nn::Activation::LeakyRelu, crate::nn::Activation::Identity, config.residuals)
        } else {
            (
                crate::nn::Activation::LeakyRelu,
                match config.input_mode {
                    crate::dae::InputMode::Bit => crate::nn::Activation::Tanh,
                    crate::dae::InputMode::OneHot => crate::nn::Activation::Identity,
                },
                config.residuals,
            )
        };
        nets.push(Mlp::from_layers(layers, hidden, output, residuals)?);
    }
    let rx = nets.pop().expect("two nets read");
    let tx = nets.pop().expect("two nets read");

    let adam = crate::nn::AdamState {
        t: cur.u64()?,
        beta1: cur.f64()?,
        beta2: cur.f64()?,
        eps: cur.f64()?,
    };
    let n_tensors = cur.u32()? as usize;
    let mut moments = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let len = cur.u64()? as usize;
        let m = cur.f64_vec(len)?;
        let v = cur.f64_vec(len)?;
        moments.push(AdamTensor { m, v });
    }
    if cur.pos != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint payload".into()));
    }

    Ok(Checkpoint {
        config,
        params: NetParams { tx, rx, adam, moments },
        completed_rounds,
        seed,
    })
}

/// Default checkpoint filename inside an output directory.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.ckpt")
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64_slice(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        push_f64(buf, *v);
    }
}

fn push_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    push_u64(buf, bytes.len() as u64);
    buf.extend_from_slice(bytes);
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("unexpected end of checkpoint data".into()));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk"))).collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }
}
