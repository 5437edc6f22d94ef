//! Minimal trainable-network engine: dense layers, activations, per-example
//! power normalization, losses, Adam, and a finite-difference checker.
//!
//! Everything is batched: an input is a (features x batch) matrix in f64,
//! and backward passes return exact analytic gradients summed over the
//! batch. There is no autodiff graph; the architecture module wires these
//! primitives into its fixed chain by hand.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::channel::Rng64;
use crate::error::{Error, Result};

/// Fully-connected layer y = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// (out x in) weight matrix.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Frozen layers still propagate input gradients but their parameter
    /// gradients are discarded by the optimizer wiring.
    pub trainable: bool,
}

impl DenseLayer {
    pub fn new(w: Array2<f64>, b: Array1<f64>, trainable: bool) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "bias length {} does not match {} output rows",
                b.len(),
                w.nrows()
            )));
        }
        if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("layer parameters must be finite".into()));
        }
        Ok(Self { w, b, trainable })
    }

    /// Glorot-uniform initialization, +-sqrt(6/(fan_in+fan_out)).
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut Rng64) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
        Self { w, b: Array1::zeros(out_dim), trainable: true }
    }

    /// Frozen layer with fixed weights and zero bias.
    pub fn frozen(w: Array2<f64>) -> Self {
        let b = Array1::zeros(w.nrows());
        Self { w, b, trainable: false }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.nrows(), self.in_dim());
        self.w.dot(x) + self.b.view().insert_axis(Axis(1))
    }

    /// Returns (grad_x, grad_w, grad_b) for upstream gradient `grad_out`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let grad_x = self.w.t().dot(grad_out);
        let grad_w = grad_out.dot(&x.t());
        let grad_b = grad_out.sum_axis(Axis(1));
        (grad_x, grad_w, grad_b)
    }
}

/// Slope of the leaky rectifier's negative branch.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    pub fn forward(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::LeakyRelu => z.mapv(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x }),
            Self::Tanh => z.mapv(f64::tanh),
            Self::Identity => z.clone(),
            Self::Softmax => {
                let mut out = z.clone();
                for mut col in out.axis_iter_mut(Axis(1)) {
                    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    col.mapv_inplace(|x| (x - max).exp());
                    let sum = col.sum();
                    col.mapv_inplace(|x| x / sum);
                }
                out
            }
        }
    }

    /// Backward through the activation given its forward OUTPUT.
    ///
    /// For the leaky rectifier the output sign determines the branch, so no
    /// pre-activation cache is needed (the slope at exactly zero is the
    /// negative-branch slope).
    pub fn backward(self, out: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::LeakyRelu => {
                let mut g = grad_out.clone();
                g.zip_mut_with(out, |gi, &oi| {
                    if oi <= 0.0 {
                        *gi *= LEAKY_SLOPE;
                    }
                });
                g
            }
            Self::Tanh => {
                let mut g = grad_out.clone();
                g.zip_mut_with(out, |gi, &oi| *gi *= 1.0 - oi * oi);
                g
            }
            Self::Identity => grad_out.clone(),
            Self::Softmax => {
                let mut g = out * grad_out;
                for (mut gcol, scol) in
                    g.axis_iter_mut(Axis(1)).zip(out.axis_iter(Axis(1)))
                {
                    let dot = gcol.sum();
                    gcol.zip_mut_with(&scol, |gi, &si| *gi -= si * dot);
                }
                g
            }
        }
    }
}

/// Stack of dense layers with an output head and optional identity skips.
///
/// With `residuals` on, hidden slot 2k (k >= 1) adds the post-skip value of
/// slot 2k-2 after its activation: for the five-hidden-layer networks used
/// here that is two parameter-free shortcuts, spanning hidden layers 1->3
/// and 3->5.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub residuals: bool,
}

/// Forward intermediates needed for one backward pass.
pub struct MlpCache {
    input: Array2<f64>,
    /// Activation outputs per hidden slot, before any skip add.
    act: Vec<Array2<f64>>,
    /// Values entering the next layer (act plus skip where wired).
    post: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Parameter gradients per layer, same order as `Mlp::layers`.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Mlp {
    /// Glorot-initialized network with the given layer widths
    /// (`dims[0]` inputs through `dims.last()` outputs).
    pub fn new(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        residuals: bool,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput("an Mlp needs at least one layer".into()));
        }
        let layers: Vec<DenseLayer> =
            dims.windows(2).map(|w| DenseLayer::glorot(w[1], w[0], rng)).collect();
        let mlp = Self { layers, hidden_activation, output_activation, residuals };
        mlp.validate_skips()?;
        Ok(mlp)
    }

    pub fn from_layers(
        layers: Vec<DenseLayer>,
        hidden_activation: Activation,
        output_activation: Activation,
        residuals: bool,
    ) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        let mlp = Self { layers, hidden_activation, output_activation, residuals };
        mlp.validate_skips()?;
        Ok(mlp)
    }

    fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    fn skip_targets(&self) -> Vec<usize> {
        if !self.residuals {
            return Vec::new();
        }
        (2..self.n_hidden()).step_by(2).collect()
    }

    fn validate_skips(&self) -> Result<()> {
        for target in self.skip_targets() {
            let (a, b) = (self.layers[target].out_dim(), self.layers[target - 2].out_dim());
            if a != b {
                return Err(Error::DimensionMismatch(format!(
                    "skip endpoints must have equal width, got {b} -> {a}"
                )));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("validated non-empty").out_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<MlpCache> {
        if x.nrows() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.nrows()
            )));
        }
        let n_hidden = self.n_hidden();
        let skips = self.skip_targets();
        let mut act = Vec::with_capacity(n_hidden);
        let mut post = Vec::with_capacity(n_hidden);
        let mut current = x.clone();
        for l in 0..n_hidden {
            let z = self.layers[l].forward(&current);
            let a = self.hidden_activation.forward(&z);
            let p = if skips.contains(&l) { &a + &post[l - 2] } else { a.clone() };
            act.push(a);
            current = p.clone();
            post.push(p);
        }
        let out_z = self.layers[n_hidden].forward(&current);
        let output = self.output_activation.forward(&out_z);
        Ok(MlpCache { input: x.clone(), act, post, output })
    }

    /// Backpropagate `grad_output`; returns the input gradient and fills
    /// per-layer parameter gradients.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Array2<f64>) -> (Array2<f64>, MlpGrads) {
        let n_hidden = self.n_hidden();
        let skips = self.skip_targets();
        let mut grads = MlpGrads {
            w: self.layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            b: self.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        };

        let g_out = self.output_activation.backward(&cache.output, grad_output);
        let (gx, gw, gb) = self.layers[n_hidden].backward(&cache.post[n_hidden - 1], &g_out);
        grads.w[n_hidden] = gw;
        grads.b[n_hidden] = gb;

        // Gradient w.r.t. each post-skip value, accumulated as skips fan in.
        let mut delta: Vec<Option<Array2<f64>>> = vec![None; n_hidden];
        delta[n_hidden - 1] = Some(gx);
        let mut grad_input = None;
        for l in (0..n_hidden).rev() {
            let g_post = delta[l].take().expect("filled by downstream layer");
            if skips.contains(&l) {
                match &mut delta[l - 2] {
                    Some(acc) => *acc += &g_post,
                    slot => *slot = Some(g_post.clone()),
                }
            }
            let g_z = self.hidden_activation.backward(&cache.act[l], &g_post);
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let (gx, gw, gb) = self.layers[l].backward(input, &g_z);
            grads.w[l] = gw;
            grads.b[l] = gb;
            if l == 0 {
                grad_input = Some(gx);
            } else {
                match &mut delta[l - 1] {
                    Some(acc) => *acc += &gx,
                    slot => *slot = Some(gx),
                }
            }
        }
        (grad_input.expect("loop visits layer 0"), grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Guard against all-zero activations in the normalization layer.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PowerNormCache {
    input: Array2<f64>,
    scales: Vec<f64>,
    norms_sq: Vec<f64>,
}

/// Scale each column to squared norm `power` (columns below the guard pass
/// through with the guard's fixed scale, so a zero column stays zero).
pub fn power_normalize(x: &Array2<f64>, power: f64) -> Result<(Array2<f64>, PowerNormCache)> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidInput(format!("power must be positive, got {power}")));
    }
    let mut out = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    let mut norms_sq = Vec::with_capacity(x.ncols());
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm_sq: f64 = col.iter().map(|v| v * v).sum();
        let scale = (power / norm_sq.max(EPS_NORM)).sqrt();
        col.mapv_inplace(|v| v * scale);
        scales.push(scale);
        norms_sq.push(norm_sq);
    }
    Ok((out, PowerNormCache { input: x.clone(), scales, norms_sq }))
}

pub fn power_normalize_backward(cache: &PowerNormCache, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut grad = grad_out.clone();
    for (c, mut gcol) in grad.axis_iter_mut(Axis(1)).enumerate() {
        let scale = cache.scales[c];
        let norm_sq = cache.norms_sq[c];
        if norm_sq > EPS_NORM {
            let xcol = cache.input.column(c);
            let dot: f64 = xcol.iter().zip(gcol.iter()).map(|(a, b)| a * b).sum();
            let coef = dot / norm_sq;
            gcol.zip_mut_with(&xcol, |gi, &xi| *gi = scale * (*gi - coef * xi));
        } else {
            // Below the guard the map is linear with the clamped scale.
            gcol.mapv_inplace(|gi| gi * scale);
        }
    }
    grad
}

/// Mean squared error over all entries; gradient w.r.t. predictions.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let diff = pred - target;
    let count = (pred.nrows() * pred.ncols()) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let grad = diff.mapv(|d| 2.0 * d / count);
    Ok((loss, grad))
}

/// Softmax cross-entropy against one-hot targets, averaged over the batch.
///
/// Gradients are w.r.t. the raw logits (softmax folded into the loss).
pub fn cross_entropy_loss(
    logits: &Array2<f64>,
    one_hot: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != one_hot.dim() {
        return Err(Error::DimensionMismatch(format!(
            "logits {:?} vs target {:?}",
            logits.dim(),
            one_hot.dim()
        )));
    }
    for col in one_hot.axis_iter(Axis(1)) {
        let ones = col.iter().filter(|&&v| v == 1.0).count();
        let zeros = col.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != col.len() {
            return Err(Error::InvalidInput("targets must be one-hot columns".into()));
        }
    }
    let probs = Activation::Softmax.forward(logits);
    let batch = logits.ncols() as f64;
    let mut loss = 0.0;
    for (pcol, tcol) in probs.axis_iter(Axis(1)).zip(one_hot.axis_iter(Axis(1))) {
        for (p, t) in pcol.iter().zip(tcol.iter()) {
            if *t == 1.0 {
                loss -= p.max(1e-300).ln();
            }
        }
    }
    let grad = (&probs - one_hot) / batch;
    Ok((loss / batch, grad))
}

/// Adam hyperparameters and step counter shared by all tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self { t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamState {
    /// Advance the shared step counter; call once per optimizer step before
    /// updating the tensors that belong to it.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Standard bias-corrected Adam update of one tensor.
    pub fn update(
        &self,
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
    ) {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), m.len());
        assert_eq!(params.len(), v.len());
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// First/second Adam moments for one tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamTensor {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamTensor {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// Central finite differences (step `h`) against analytic gradients on a
/// random subset of parameters.
///
/// `loss` must re-evaluate the full forward pass at the current parameter
/// state; `read`/`write` address a flat parameter index. Returns the worst
/// relative error over the sampled subset.
pub fn finite_difference_check(
    n_params: usize,
    samples: usize,
    h: f64,
    rng: &mut Rng64,
    read: &dyn Fn(usize) -> f64,
    write: &mut dyn FnMut(usize, f64),
    loss: &mut dyn FnMut() -> f64,
    analytic: &dyn Fn(usize) -> f64,
) -> f64 {
    assert!(n_params > 0 && h > 0.0);
    let mut indices: Vec<usize> = if samples >= n_params {
        (0..n_params).collect()
    } else {
        // Sample without replacement.
        let mut chosen = std::collections::BTreeSet::new();
        while chosen.len() < samples {
            chosen.insert(rng.gen_range(0..n_params));
        }
        chosen.into_iter().collect()
    };
    indices.sort_unstable();

    let mut max_rel = 0.0f64;
    for idx in indices {
        let original = read(idx);
        write(idx, original + h);
        let plus = loss();
        write(idx, original - h);
        let minus = loss();
        write(idx, original);
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic(idx);
        let denom = exact.abs().max(numeric.abs()).max(1e-3);
        max_rel = max_rel.max((exact - numeric).abs() / denom);
    }
    max_rel
}
