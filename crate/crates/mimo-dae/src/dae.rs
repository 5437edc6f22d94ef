//! End-to-end differentiable chain: Tx DAE, frozen precoding/channel/
//! pre-processing layers, and Rx DAE, for all three variants and both
//! input encodings.
//!
//! Complex signals travel through the real-valued network as stacked
//! (Re; Im) vectors; the frozen complex matrices act via their real block
//! embeddings, which keeps the chain exactly equivalent to the complex
//! model.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baseline::{bits_to_word, gray_code, gray_decode, waterfill, word_to_bits, Bit};
use crate::channel::{derive_seed, rng_from_seed, ChannelRealization, Rng64};
use crate::error::{Error, Result};
use crate::linalg::complex_to_real_block;
use crate::nn::{
    power_normalize, power_normalize_backward, Activation, AdamState, AdamTensor, DenseLayer,
    Mlp, MlpCache, MlpGrads, PowerNormCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Identity frozen layers; CSI reaches the network only as a feature.
    Plain,
    /// Frozen V precoding and U^H / pinv(Lambda) pre-processing.
    Svd,
    /// Svd plus a frozen water-filling diagonal before the precoder.
    SvdWf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// +-1 bit vector in, per-bit regression out (MSE, tanh head).
    Bit,
    /// Gray-mapped one-hot in, classification out (cross-entropy).
    OneHot,
}

/// Experiment definition: variant, encoding, and the network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeConfig {
    pub variant: Variant,
    pub input_mode: InputMode,
    pub residuals: bool,
    /// Bits per transmission.
    pub n_s: u32,
    pub n_t: usize,
    pub n_r: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Total transmit power in Watts.
    pub power: f64,
}

impl DaeConfig {
    pub fn new(variant: Variant, input_mode: InputMode, residuals: bool, n_s: u32) -> Self {
        Self {
            variant,
            input_mode,
            residuals,
            n_s,
            n_t: 2,
            n_r: 2,
            hidden_layers: 5,
            hidden_width: 32,
            power: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4, 6].contains(&self.n_s) {
            return Err(Error::Config(format!("n_s must be one of 1, 2, 4, 6, got {}", self.n_s)));
        }
        if self.n_t != 2 || self.n_r != 2 {
            return Err(Error::Config("this artifact is fixed at 2x2 antennas".into()));
        }
        if self.hidden_layers < 1 || self.hidden_width < 1 {
            return Err(Error::Config("hidden layer count and width must be >= 1".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Config(format!("power must be positive, got {}", self.power)));
        }
        Ok(())
    }

    /// Width of the message part of the input.
    pub fn payload_width(&self) -> usize {
        match self.input_mode {
            InputMode::Bit => self.n_s as usize,
            InputMode::OneHot => 1usize << self.n_s,
        }
    }

    /// Width of the CSI feature part of the input.
    ///
    /// The SVD variants see the per-sub-channel gain-to-noise feature; the
    /// plain variant instead receives the raw channel entries plus a scaled
    /// noise-level feature, since nothing else would tell it the channel.
    pub fn feature_width(&self) -> usize {
        match self.variant {
            Variant::Plain => 2 * self.n_t * self.n_r + 1,
            Variant::Svd | Variant::SvdWf => self.n_t,
        }
    }

    pub fn tx_input_width(&self) -> usize {
        self.payload_width() + self.feature_width()
    }

    pub fn rx_input_width(&self) -> usize {
        2 * self.n_t + self.feature_width()
    }

    pub fn rx_output_width(&self) -> usize {
        self.payload_width()
    }

    fn rx_output_activation(&self) -> Activation {
        match self.input_mode {
            // +-1 regression targets.
            InputMode::Bit => Activation::Tanh,
            // Raw logits; softmax lives in the loss.
            InputMode::OneHot => Activation::Identity,
        }
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(input);
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Zero-centered sigmoid 2/(1+e^-t) - 1, mapping dB values into (-1, 1).
pub fn scaled_sigmoid(t: f64) -> f64 {
    2.0 / (1.0 + (-t).exp()) - 1.0
}

// Offset keeping log10(gamma) finite when a sub-channel gain is zero.
const GAMMA_FLOOR: f64 = 1e-6;

/// CSI feature: gain-to-noise ratios compressed into (-1, 1).
pub fn csi_feature(gamma: &[f64]) -> Vec<f64> {
    gamma.iter().map(|g| scaled_sigmoid(0.2 * 10.0 * (g + GAMMA_FLOOR).log10())).collect()
}

/// Feature vector fed to both DAEs for the given variant.
pub fn feature_vector(config: &DaeConfig, ch: &ChannelRealization) -> Array1<f64> {
    match config.variant {
        Variant::Svd | Variant::SvdWf => Array1::from_vec(csi_feature(&ch.gamma())),
        Variant::Plain => {
            let mut feat = Vec::with_capacity(config.feature_width());
            for z in ch.h.entries() {
                feat.push(z.re);
            }
            for z in ch.h.entries() {
                feat.push(z.im);
            }
            feat.push(scaled_sigmoid(0.2 * (-10.0 * ch.n0.log10())));
            Array1::from_vec(feat)
        }
    }
}

/// Encode one payload of +-1 bits as a network input column (message part).
pub fn encode_payload(bits: &[Bit], config: &DaeConfig) -> Result<Array1<f64>> {
    if bits.len() != config.n_s as usize {
        return Err(Error::DimensionMismatch(format!(
            "expected {} payload bits, got {}",
            config.n_s,
            bits.len()
        )));
    }
    if bits.iter().any(|b| *b != 1 && *b != -1) {
        return Err(Error::InvalidInput("payload bits must be +-1".into()));
    }
    match config.input_mode {
        InputMode::Bit => Ok(Array1::from_iter(bits.iter().map(|&b| f64::from(b)))),
        InputMode::OneHot => {
            let mut v = Array1::zeros(1usize << config.n_s);
            v[one_hot_index(bits)] = 1.0;
            Ok(v)
        }
    }
}

/// Position of a bit pattern in the Gray-ordered one-hot alphabet.
pub fn one_hot_index(bits: &[Bit]) -> usize {
    gray_decode(bits_to_word(bits)) as usize
}

/// Bits behind a one-hot position; inverse of [`one_hot_index`].
pub fn one_hot_bits(index: usize, n_s: u32) -> Vec<Bit> {
    let mut bits = Vec::with_capacity(n_s as usize);
    word_to_bits(gray_code(index as u32), n_s, &mut bits);
    bits
}

/// Stack per-frame payloads into a (payload_width x batch) input block.
pub fn encode_payload_batch(frames: &[Vec<Bit>], config: &DaeConfig) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((config.payload_width(), frames.len()));
    for (j, bits) in frames.iter().enumerate() {
        let col = encode_payload(bits, config)?;
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

/// Hard bit decision for one network output column.
///
/// Bit mode takes the sign (0.0 decides +1); one-hot mode takes the argmax
/// (ties decide the lowest index) and maps it back through the Gray order.
pub fn decide_bits(output: &[f64], config: &DaeConfig) -> Vec<Bit> {
    match config.input_mode {
        InputMode::Bit => output.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect(),
        InputMode::OneHot => {
            let mut best = 0usize;
            for (i, v) in output.iter().enumerate() {
                if *v > output[best] {
                    best = i;
                }
            }
            one_hot_bits(best, config.n_s)
        }
    }
}

/// Fraction of mismatched bits in one frame.
pub fn frame_ber(decided: &[Bit], sent: &[Bit]) -> f64 {
    let errors = decided.iter().zip(sent).filter(|(a, b)| a != b).count();
    errors as f64 / sent.len() as f64
}

/// The non-trainable layers of the chain, configured for one channel draw.
#[derive(Debug, Clone)]
pub struct FrozenChain {
    /// Water-filling diagonal ahead of the precoder (SvdWf only).
    pub tx_scaling: Option<DenseLayer>,
    pub tx_precode: DenseLayer,
    pub channel: DenseLayer,
    pub rx_rotate: DenseLayer,
    pub rx_equalize: DenseLayer,
}

/// Build the frozen layers for `ch` under the given variant.
///
/// Svd: precode = embed(V), channel = embed(H), then embed(U^H) and
/// embed(pinv(Lambda)). Plain keeps identity weights everywhere except the
/// channel itself. SvdWf adds diag(sqrt(p)) from water-filling between the
/// Tx DAE and the precoder. All biases are zero.
pub fn configure_frozen(config: &DaeConfig, ch: &ChannelRealization) -> Result<FrozenChain> {
    let eye = Array2::<f64>::eye(2 * config.n_t);
    let channel = DenseLayer::frozen(complex_to_real_block(&ch.h));
    let (tx_precode, rx_rotate, rx_equalize) = match config.variant {
        Variant::Plain => (
            DenseLayer::frozen(eye.clone()),
            DenseLayer::frozen(eye.clone()),
            DenseLayer::frozen(eye.clone()),
        ),
        Variant::Svd | Variant::SvdWf => {
            let pinv = crate::linalg::pinv_diag(&ch.svd.lambda, crate::linalg::PINV_TOL)?;
            (
                DenseLayer::frozen(complex_to_real_block(&ch.svd.v)),
                DenseLayer::frozen(complex_to_real_block(&ch.svd.u.hermitian())),
                DenseLayer::frozen(real_diag_embed(&pinv, config.n_t)),
            )
        }
    };
    let tx_scaling = match config.variant {
        Variant::SvdWf => {
            let lambda_sq: Vec<f64> = ch.svd.lambda.iter().map(|l| l * l).collect();
            let wf = waterfill(&lambda_sq, ch.n0, config.power)?;
            Some(DenseLayer::frozen(real_diag_embed(&wf.sigma(), config.n_t)))
        }
        _ => None,
    };
    Ok(FrozenChain { tx_scaling, tx_precode, channel, rx_rotate, rx_equalize })
}

/// Real diagonal acting per complex sample: diag(d) duplicated over the
/// stacked Re and Im halves.
fn real_diag_embed(d: &[f64], n: usize) -> Array2<f64> {
    assert_eq!(d.len(), n);
    let mut m = Array2::<f64>::zeros((2 * n, 2 * n));
    for (i, &v) in d.iter().enumerate() {
        m[(i, i)] = v;
        m[(i + n, i + n)] = v;
    }
    m
}

/// All trainable state: both DAE networks plus the Adam accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub tx: Mlp,
    pub rx: Mlp,
    pub adam: AdamState,
    /// Moments per tensor: tx layer 0 w, b, layer 1 w, b, ..., then rx.
    pub moments: Vec<AdamTensor>,
}

impl NetParams {
    /// Fresh Glorot-initialized parameters for `config`, deterministic in
    /// `seed`.
    pub fn init(config: &DaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, &[0x696e_6974]));
        let tx = Mlp::new(
            &config.mlp_dims(config.tx_input_width(), 2 * config.n_t),
            Activation::LeakyRelu,
            Activation::Identity,
            config.residuals,
            &mut rng,
        )?;
        let rx = Mlp::new(
            &config.mlp_dims(config.rx_input_width(), config.rx_output_width()),
            Activation::LeakyRelu,
            config.rx_output_activation(),
            config.residuals,
            &mut rng,
        )?;
        let moments = tx
            .layers
            .iter()
            .chain(rx.layers.iter())
            .flat_map(|l| [AdamTensor::zeros(l.w.len()), AdamTensor::zeros(l.b.len())])
            .collect();
        Ok(Self { tx, rx, adam: AdamState::default(), moments })
    }

    pub fn param_count(&self) -> usize {
        self.tx.param_count() + self.rx.param_count()
    }

    /// Apply one Adam step from the given gradients (summed over both nets).
    pub fn adam_step(&mut self, tx_grads: &MlpGrads, rx_grads: &MlpGrads, lr: f64) {
        self.adam.begin_step();
        let adam = self.adam.clone();
        let layers = self.tx.layers.iter_mut().chain(self.rx.layers.iter_mut());
        let grads = tx_grads.w.iter().zip(&tx_grads.b).chain(rx_grads.w.iter().zip(&rx_grads.b));
        let mut slot = 0usize;
        for (layer, (gw, gb)) in layers.zip(grads) {
            let m = &mut self.moments[slot];
            adam.update(
                layer.w.as_slice_mut().expect("standard layout"),
                gw.as_slice().expect("standard layout"),
                &mut m.m,
                &mut m.v,
                lr,
            );
            let m = &mut self.moments[slot + 1];
            adam.update(layer.b.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous"), &mut m.m, &mut m.v, lr);
            slot += 2;
        }
    }

    /// Read a parameter by flat index (tx tensors first, then rx).
    pub fn get_param(&self, idx: usize) -> f64 {
        self.visit_param(idx, |slice, off| slice[off])
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for layer in self.tx.layers.iter_mut().chain(self.rx.layers.iter_mut()) {
            if i < layer.w.len() {
                layer.w.as_slice_mut().unwrap()[i] = value;
                return;
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                layer.b[i] = value;
                return;
            }
            i -= layer.b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    fn visit_param<R>(&self, idx: usize, f: impl Fn(&[f64], usize) -> R) -> R {
        let mut i = idx;
        for layer in self.tx.layers.iter().chain(self.rx.layers.iter()) {
            if i < layer.w.len() {
                return f(layer.w.as_slice().unwrap(), i);
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return f(layer.b.as_slice().unwrap(), i);
            }
            i -= layer.b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Gradient lookup with the same flat indexing as [`Self::get_param`].
    pub fn grad_at(tx: &MlpGrads, rx: &MlpGrads, idx: usize) -> f64 {
        let mut i = idx;
        for (gw, gb) in tx.w.iter().zip(&tx.b).chain(rx.w.iter().zip(&rx.b)) {
            if i < gw.len() {
                return gw.as_slice().unwrap()[i];
            }
            i -= gw.len();
            if i < gb.len() {
                return gb[i];
            }
            i -= gb.len();
        }
        panic!("gradient index {idx} out of range");
    }
}

/// Forward intermediates of the full chain for one batch.
pub struct ChainCache {
    tx_cache: MlpCache,
    wf_input: Option<Array2<f64>>,
    norm_cache: PowerNormCache,
    normalized: Array2<f64>,
    /// Signal on the air, after the precoder; per-column power equals P.
    pub transmitted: Array2<f64>,
    after_channel: Array2<f64>,
    rotated: Array2<f64>,
    equalized: Array2<f64>,
    rx_cache: MlpCache,
}

impl ChainCache {
    pub fn output(&self) -> &Array2<f64> {
        self.rx_cache.output()
    }

    /// Rx pre-processing output (what the Rx DAE sees besides the feature).
    pub fn equalized(&self) -> &Array2<f64> {
        &self.equalized
    }
}

/// Run the full chain on a batch with a caller-supplied noise block.
///
/// `noise` is added in the stacked-real domain after the channel layer;
/// entries should be N(0, N0/2) draws. Supplying it explicitly keeps the
/// graph deterministic for gradient checking.
pub fn forward_with_noise(
    config: &DaeConfig,
    params: &NetParams,
    frozen: &FrozenChain,
    feature: &Array1<f64>,
    payload: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<ChainCache> {
    if feature.len() != config.feature_width() {
        return Err(Error::DimensionMismatch(format!(
            "feature width {} does not match config {}",
            feature.len(),
            config.feature_width()
        )));
    }
    let batch = payload.ncols();
    if noise.dim() != (2 * config.n_t, batch) {
        return Err(Error::DimensionMismatch(format!(
            "noise block {:?} does not match ({}, {batch})",
            noise.dim(),
            2 * config.n_t
        )));
    }

    let tx_input = stack_feature(payload, feature);
    let tx_cache = params.tx.forward(&tx_input)?;

    let (wf_input, to_normalize) = match &frozen.tx_scaling {
        Some(layer) => {
            let scaled = layer.forward(tx_cache.output());
            (Some(tx_cache.output().clone()), scaled)
        }
        None => (None, tx_cache.output().clone()),
    };
    let (normalized, norm_cache) = power_normalize(&to_normalize, config.power)?;
    let transmitted = frozen.tx_precode.forward(&normalized);
    let after_channel = frozen.channel.forward(&transmitted) + noise;
    let rotated = frozen.rx_rotate.forward(&after_channel);
    let equalized = frozen.rx_equalize.forward(&rotated);
    let rx_input = stack_feature(&equalized, feature);
    let rx_cache = params.rx.forward(&rx_input)?;

    Ok(ChainCache {
        tx_cache,
        wf_input,
        norm_cache,
        normalized,
        transmitted,
        after_channel,
        rotated,
        equalized,
        rx_cache,
    })
}

/// Run the chain drawing fresh AWGN at level `n0` from `rng`.
pub fn forward(
    config: &DaeConfig,
    params: &NetParams,
    frozen: &FrozenChain,
    feature: &Array1<f64>,
    payload: &Array2<f64>,
    n0: f64,
    rng: &mut Rng64,
) -> Result<ChainCache> {
    let noise = draw_noise(2 * config.n_t, payload.ncols(), n0, rng);
    forward_with_noise(config, params, frozen, feature, payload, &noise)
}

/// AWGN block in the stacked-real domain: each entry N(0, n0/2).
pub fn draw_noise(rows: usize, cols: usize, n0: f64, rng: &mut Rng64) -> Array2<f64> {
    if n0 == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let sigma = (n0 / 2.0).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal) * sigma)
}

/// Backpropagate through the whole chain; gradients for both networks.
pub fn backward(
    params: &NetParams,
    frozen: &FrozenChain,
    cache: &ChainCache,
    grad_output: &Array2<f64>,
) -> (MlpGrads, MlpGrads) {
    let (grad_rx_input, rx_grads) = params.rx.backward(&cache.rx_cache, grad_output);
    // The feature rows are inputs, not activations; only the signal rows
    // propagate further back.
    let signal_rows = cache.equalized.nrows();
    let grad_equalized = grad_rx_input.slice(ndarray::s![..signal_rows, ..]).to_owned();

    let (grad_rotated, _, _) = frozen.rx_equalize.backward(&cache.rotated, &grad_equalized);
    let (grad_after_channel, _, _) = frozen.rx_rotate.backward(&cache.after_channel, &grad_rotated);
    // Noise addition is identity in the gradient.
    let (grad_transmitted, _, _) = frozen.channel.backward(&cache.transmitted, &grad_after_channel);
    let (grad_normalized, _, _) = frozen.tx_precode.backward(&cache.normalized, &grad_transmitted);
    let grad_to_normalize = power_normalize_backward(&cache.norm_cache, &grad_normalized);
    let grad_tx_out = match (&frozen.tx_scaling, &cache.wf_input) {
        (Some(layer), Some(wf_input)) => layer.backward(wf_input, &grad_to_normalize).0,
        _ => grad_to_normalize,
    };
    let (_, tx_grads) = params.tx.backward(&cache.tx_cache, &grad_tx_out);
    (tx_grads, rx_grads)
}

fn stack_feature(payload: &Array2<f64>, feature: &Array1<f64>) -> Array2<f64> {
    let batch = payload.ncols();
    let mut out = Array2::zeros((payload.nrows() + feature.len(), batch));
    out.slice_mut(ndarray::s![..payload.nrows(), ..]).assign(payload);
    for (i, &f) in feature.iter().enumerate() {
        out.row_mut(payload.nrows() + i).fill(f);
    }
    out
}

/// Full-graph gradient check: backprop vs central differences (step `h`)
/// on `samples` randomly chosen parameters. Returns the max relative error.
pub fn grad_check(
    config: &DaeConfig,
    params: &NetParams,
    frozen: &FrozenChain,
    feature: &Array1<f64>,
    payload: &Array2<f64>,
    noise: &Array2<f64>,
    samples: usize,
    h: f64,
    rng: &mut Rng64,
) -> Result<f64> {
    let cache = forward_with_noise(config, params, frozen, feature, payload, noise)?;
    let (_, grad_out) = chain_loss(config, &cache, payload)?;
    let (tx_grads, rx_grads) = backward(params, frozen, &cache, &grad_out);

    let mut work = params.clone();
    let n = work.param_count();
    let cell = std::cell::RefCell::new(&mut work);
    let max_rel = crate::nn::finite_difference_check(
        n,
        samples,
        h,
        rng,
        &|i| cell.borrow().get_param(i),
        &mut |i, v| cell.borrow_mut().set_param(i, v),
        &mut || {
            let p = cell.borrow();
            let c = forward_with_noise(config, &p, frozen, feature, payload, noise)
                .expect("shapes unchanged");
            chain_loss(config, &c, payload).expect("shapes unchanged").0
        },
        &|i| NetParams::grad_at(&tx_grads, &rx_grads, i),
    );
    Ok(max_rel)
}

/// Loss of a forward pass against the encoded payload it carried.
///
/// Bit mode: MSE against the +-1 payload. One-hot mode: softmax
/// cross-entropy against the one-hot payload.
pub fn chain_loss(
    config: &DaeConfig,
    cache: &ChainCache,
    payload: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    match config.input_mode {
        InputMode::Bit => crate::nn::mse_loss(cache.output(), payload),
        InputMode::OneHot => crate::nn::cross_entropy_loss(cache.output(), payload),
    }
}

/// Draw `count` payload frames of n_s fair +-1 bits each.
pub fn draw_payload_frames(n_s: u32, count: usize, rng: &mut Rng64) -> Vec<Vec<Bit>> {
    (0..count)
        .map(|_| (0..n_s).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

/// Evaluate one configured chain on a batch of frames; error counts only.
pub fn evaluate_frames(
    config: &DaeConfig,
    params: &NetParams,
    frozen: &FrozenChain,
    feature: &Array1<f64>,
    frames: &[Vec<Bit>],
    n0: f64,
    rng: &mut Rng64,
) -> Result<(u64, u64)> {
    let payload = encode_payload_batch(frames, config)?;
    let cache = forward(config, params, frozen, feature, &payload, n0, rng)?;
    let output = cache.output();
    let mut bit_errors = 0u64;
    let mut frame_errors = 0u64;
    for (j, frame) in frames.iter().enumerate() {
        let col: Vec<f64> = output.column(j).to_vec();
        let decided = decide_bits(&col, config);
        let errors = decided.iter().zip(frame).filter(|(a, b)| a != b).count() as u64;
        bit_errors += errors;
        if errors > 0 {
            frame_errors += 1;
        }
    }
    Ok((bit_errors, frame_errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use approx::assert_abs_diff_eq;
    use ndarray::Axis as NdAxis;

    fn test_config(variant: Variant, mode: InputMode) -> DaeConfig {
        DaeConfig::new(variant, mode, true, 4)
    }

    fn configured(
        variant: Variant,
        mode: InputMode,
        seed: u64,
        n0: f64,
    ) -> (DaeConfig, NetParams, FrozenChain, Array1<f64>, ChannelRealization) {
        let config = test_config(variant, mode);
        let params = NetParams::init(&config, seed).unwrap();
        let mut rng = rng_from_seed(seed + 1);
        let ch = sample_channel(&mut rng).with_noise(n0);
        let frozen = configure_frozen(&config, &ch).unwrap();
        let feature = feature_vector(&config, &ch);
        (config, params, frozen, feature, ch)
    }

    #[test]
    fn csi_feature_reference_points() {
        let f = csi_feature(&[1.0, 1.0]);
        assert!(f.iter().all(|v| v.abs() < 1e-5));
        let f = csi_feature(&[100.0]);
        assert_abs_diff_eq!(f[0], 0.96402758, epsilon = 1e-6);
        let f = csi_feature(&[0.0]);
        assert_abs_diff_eq!(f[0], -0.999988, epsilon = 1e-6);
        assert!(f[0] > -1.0);
    }

    #[test]
    fn one_hot_encoding_reference() {
        let config = DaeConfig::new(Variant::Svd, InputMode::OneHot, true, 2);
        let v = encode_payload(&[-1, -1], &config).unwrap();
        assert_eq!(v.to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bit_mode_passes_bits_verbatim() {
        let config = DaeConfig::new(Variant::Svd, InputMode::Bit, true, 4);
        let v = encode_payload(&[1, -1, -1, 1], &config).unwrap();
        assert_eq!(v.to_vec(), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn gray_order_neighbors_differ_in_one_bit() {
        for n_s in [1u32, 2, 4, 6] {
            for idx in 0..(1usize << n_s) - 1 {
                let a = one_hot_bits(idx, n_s);
                let b = one_hot_bits(idx + 1, n_s);
                let diff = a.iter().zip(&b).filter(|(x, y)| x != y).count();
                assert_eq!(diff, 1, "n_s={n_s} index {idx}");
            }
        }
    }

    #[test]
    fn one_hot_round_trip_all_patterns() {
        for n_s in [1u32, 2, 4, 6] {
            let config = DaeConfig::new(Variant::Svd, InputMode::OneHot, true, n_s);
            for pattern in 0..(1u32 << n_s) {
                let mut bits = Vec::new();
                word_to_bits(pattern, n_s, &mut bits);
                let encoded = encode_payload(&bits, &config).unwrap();
                let decided = decide_bits(encoded.as_slice().unwrap(), &config);
                assert_eq!(bits, decided);
            }
        }
    }

    #[test]
    fn decide_bits_sign_and_ties() {
        let config = DaeConfig::new(Variant::Svd, InputMode::Bit, true, 4);
        let decided = decide_bits(&[0.3, -0.7, 0.0, -0.0], &config);
        assert_eq!(decided, vec![1, -1, 1, 1]);
    }

    #[test]
    fn frame_ber_counts_mismatches() {
        assert_eq!(frame_ber(&[1, 1, 1, 1], &[1, 1, 1, 1]), 0.0);
        assert_eq!(frame_ber(&[1, -1, 1, 1], &[1, 1, 1, 1]), 0.25);
    }

    #[test]
    fn svd_frozen_chain_composes_to_identity() {
        let mut rng = rng_from_seed(71);
        for _ in 0..50 {
            let ch = sample_channel(&mut rng).with_noise(1.0);
            let config = test_config(Variant::Svd, InputMode::Bit);
            let frozen = configure_frozen(&config, &ch).unwrap();
            let composite = frozen
                .rx_equalize
                .w
                .dot(&frozen.rx_rotate.w)
                .dot(&frozen.channel.w)
                .dot(&frozen.tx_precode.w);
            let err = (&composite - &Array2::<f64>::eye(4))
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-9, "composite deviates from identity by {err}");
        }
    }

    #[test]
    fn plain_frozen_chain_is_just_the_channel() {
        let mut rng = rng_from_seed(73);
        let ch = sample_channel(&mut rng).with_noise(1.0);
        let config = test_config(Variant::Plain, InputMode::Bit);
        let frozen = configure_frozen(&config, &ch).unwrap();
        assert_eq!(frozen.tx_precode.w, Array2::<f64>::eye(4));
        assert_eq!(frozen.rx_rotate.w, Array2::<f64>::eye(4));
        assert_eq!(frozen.rx_equalize.w, Array2::<f64>::eye(4));
        assert_eq!(frozen.channel.w, complex_to_real_block(&ch.h));
        assert!(frozen.tx_scaling.is_none());
    }

    #[test]
    fn frozen_layers_have_zero_bias_and_are_not_trainable() {
        let mut rng = rng_from_seed(79);
        let ch = sample_channel(&mut rng).with_noise(0.5);
        let config = test_config(Variant::SvdWf, InputMode::Bit);
        let frozen = configure_frozen(&config, &ch).unwrap();
        for layer in [
            frozen.tx_scaling.as_ref().unwrap(),
            &frozen.tx_precode,
            &frozen.channel,
            &frozen.rx_rotate,
            &frozen.rx_equalize,
        ] {
            assert!(!layer.trainable);
            assert!(layer.b.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic_given_seed() {
        let (config, params, frozen, feature, _) = configured(Variant::Svd, InputMode::Bit, 5, 0.5);
        let frames = draw_payload_frames(4, 8, &mut rng_from_seed(9));
        let payload = encode_payload_batch(&frames, &config).unwrap();
        let a = forward(&config, &params, &frozen, &feature, &payload, 0.5, &mut rng_from_seed(10))
            .unwrap();
        let b = forward(&config, &params, &frozen, &feature, &payload, 0.5, &mut rng_from_seed(10))
            .unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn transmit_power_is_normalized_per_example() {
        for variant in [Variant::Plain, Variant::Svd, Variant::SvdWf] {
            let (config, params, frozen, feature, _) = configured(variant, InputMode::Bit, 11, 0.25);
            let frames = draw_payload_frames(4, 64, &mut rng_from_seed(12));
            let payload = encode_payload_batch(&frames, &config).unwrap();
            let cache =
                forward(&config, &params, &frozen, &feature, &payload, 0.25, &mut rng_from_seed(13))
                    .unwrap();
            for col in cache.transmitted.axis_iter(NdAxis(1)) {
                let power: f64 = col.iter().map(|v| v * v).sum();
                assert_abs_diff_eq!(power, 20.0, epsilon = 20.0 * 1e-9);
            }
        }
    }

    #[test]
    fn svd_variant_sees_interference_free_channel() {
        // Noiseless: the Rx pre-processing output equals the normalized Tx
        // output, i.e. the frozen path is the identity map.
        let (config, params, frozen, feature, _) = configured(Variant::Svd, InputMode::Bit, 17, 0.5);
        let frames = draw_payload_frames(4, 16, &mut rng_from_seed(18));
        let payload = encode_payload_batch(&frames, &config).unwrap();
        let noise = Array2::zeros((4, 16));
        let cache =
            forward_with_noise(&config, &params, &frozen, &feature, &payload, &noise).unwrap();
        let err = (cache.equalized() - &cache.normalized)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "frozen path deviates from identity: {err}");
    }

    #[test]
    fn svd_and_svdwf_have_equal_trainable_parameter_counts() {
        let a = NetParams::init(&test_config(Variant::Svd, InputMode::Bit), 3).unwrap();
        let b = NetParams::init(&test_config(Variant::SvdWf, InputMode::Bit), 3).unwrap();
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn whole_graph_gradient_check() {
        for (variant, mode) in [
            (Variant::Svd, InputMode::Bit),
            (Variant::Plain, InputMode::Bit),
            (Variant::SvdWf, InputMode::Bit),
            (Variant::Svd, InputMode::OneHot),
        ] {
            let (config, params, frozen, feature, _) = configured(variant, mode, 23, 0.8);
            let frames = draw_payload_frames(4, 3, &mut rng_from_seed(24));
            let payload = encode_payload_batch(&frames, &config).unwrap();
            let noise = draw_noise(4, 3, 0.8, &mut rng_from_seed(25));
            let max_rel = grad_check(
                &config,
                &params,
                &frozen,
                &feature,
                &payload,
                &noise,
                250,
                1e-5,
                &mut rng_from_seed(26),
            )
            .unwrap();
            assert!(max_rel < 1e-4, "{variant:?}/{mode:?}: max rel error {max_rel}");
        }
    }

    #[test]
    fn adam_step_leaves_frozen_chain_untouched() {
        let (config, mut params, frozen, feature, _) =
            configured(Variant::Svd, InputMode::Bit, 31, 0.5);
        let frozen_before = frozen.clone();
        let frames = draw_payload_frames(4, 32, &mut rng_from_seed(32));
        let payload = encode_payload_batch(&frames, &config).unwrap();
        for step in 0..100 {
            let cache = forward(
                &config,
                &params,
                &frozen,
                &feature,
                &payload,
                0.5,
                &mut rng_from_seed(100 + step),
            )
            .unwrap();
            let (_, grad) = chain_loss(&config, &cache, &payload).unwrap();
            let (tx_grads, rx_grads) = backward(&params, &frozen, &cache, &grad);
            params.adam_step(&tx_grads, &rx_grads, 1e-3);
        }
        // Frozen layers are not in the optimizer's parameter set at all.
        assert_eq!(frozen.tx_precode.w, frozen_before.tx_precode.w);
        assert_eq!(frozen.channel.w, frozen_before.channel.w);
        assert_eq!(frozen.rx_rotate.w, frozen_before.rx_rotate.w);
        assert_eq!(frozen.rx_equalize.w, frozen_before.rx_equalize.w);
        assert_eq!(params.adam.t, 100);
    }

    #[test]
    fn unconfigured_noise_width_is_rejected() {
        let (config, params, frozen, feature, _) = configured(Variant::Svd, InputMode::Bit, 37, 0.5);
        let frames = draw_payload_frames(4, 4, &mut rng_from_seed(38));
        let payload = encode_payload_batch(&frames, &config).unwrap();
        let noise = Array2::zeros((2, 4));
        assert!(matches!(
            forward_with_noise(&config, &params, &frozen, &feature, &payload, &noise),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn plain_feature_contains_channel_entries_and_noise() {
        let mut rng = rng_from_seed(41);
        let ch = sample_channel(&mut rng).with_noise(0.125);
        let config = test_config(Variant::Plain, InputMode::Bit);
        let feat = feature_vector(&config, &ch);
        assert_eq!(feat.len(), 9);
        for (i, z) in ch.h.entries().iter().enumerate() {
            assert_eq!(feat[i], z.re);
            assert_eq!(feat[i + 4], z.im);
        }
        // Noise feature: scaled sigmoid of -10 log10(N0).
        let expected = scaled_sigmoid(0.2 * (-10.0 * 0.125f64.log10()));
        assert_abs_diff_eq!(feat[8], expected, epsilon = 1e-15);
    }

    #[test]
    fn feature_width_depends_on_variant() {
        assert_eq!(test_config(Variant::Svd, InputMode::Bit).tx_input_width(), 6);
        assert_eq!(test_config(Variant::Plain, InputMode::Bit).tx_input_width(), 13);
        assert_eq!(
            DaeConfig::new(Variant::Svd, InputMode::OneHot, true, 4).tx_input_width(),
            18
        );
    }

    #[test]
    fn config_validation() {
        let mut config = test_config(Variant::Svd, InputMode::Bit);
        config.n_s = 3;
        assert!(config.validate().is_err());
        let mut config = test_config(Variant::Svd, InputMode::Bit);
        config.n_t = 4;
        assert!(config.validate().is_err());
    }

    #[test]
    fn noisy_rotation_keeps_noise_level() {
        // Empirical variance at the rotation stage output stays N0 when the
        // transmit signal is zeroed out.
        let (config, params, frozen, feature, _) = configured(Variant::Svd, InputMode::Bit, 43, 1.0);
        let _ = (&config, &params);
        let zeros = Array2::zeros((4, 20_000));
        let noise = draw_noise(4, 20_000, 1.0, &mut rng_from_seed(44));
        let after = frozen.rx_rotate.forward(&(frozen.channel.forward(&zeros) + &noise));
        // Stacked-real variance per complex sample = sum over the Re and Im
        // rows of that sample.
        let total: f64 = after.iter().map(|v| v * v).sum();
        let per_sample = total / (20_000.0 * 2.0);
        assert_abs_diff_eq!(per_sample, 1.0, epsilon = 0.03);
        let _ = feature;
    }
}
