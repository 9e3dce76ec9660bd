//! One-sided convolutional networks with hard parameter caps.
//!
//! The architecture maps a vector `x ∈ R^D` to a scalar. The input is padded
//! to a `D × J` matrix `[x 0 … 0]` (channel 0 carries `x`), then pushed
//! through `M` blocks of `L` convolutional layers. Each layer applies a
//! stride-one, one-sided convolution (rows beyond `D` read as zero), adds a
//! per-entry bias, and applies ReLU:
//!
//! `Y[k][j] = Σ_{i<I} Σ_{l<C} W[j][i][l] · Z[k+i][l]`.
//!
//! The head is a dense entrywise product with a `D × J` weight matrix plus a
//! scalar bias. Filter and bias entries are capped at `R1` in absolute value,
//! dense head entries at `R2`; the caps are enforced by projection after
//! every optimizer step. An optional truncation stage clamps the output to
//! `[-A, A]`; it is realized by the ReLU composition
//! `y ↦ ReLU(2A - ReLU(A - y)) - A`, so the network stays a ReLU circuit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifold::{EmbeddedManifold, ManifoldError};

/// Errors from network construction, training, and persistence.
#[derive(Debug, Error)]
pub enum CnnError {
    #[error("bad architecture: {reason}")]
    BadSpec { reason: String },
    #[error("input has length {found}, expected {expected}")]
    InputLength { expected: usize, found: usize },
    #[error("dataset is empty or has mismatched lengths")]
    BadDataset,
    #[error("training aborted: non-finite loss at epoch {epoch} (last finite loss {last})")]
    NanLoss { epoch: usize, last: f64 },
    #[error("model file corrupt: {reason}")]
    Corrupt { reason: String },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture descriptor: `M` blocks × `L` layers of `J`-channel one-sided
/// convolutions with window `I` over inputs of length `D`, with hard caps
/// `R1` (filters/biases) and `R2` (dense head).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnSpec {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub channels: usize,
    pub filter_len: usize,
    pub filter_cap: f64,
    pub output_cap: f64,
    pub input_dim: usize,
}

impl CnnSpec {
    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |reason: String| Err(CnnError::BadSpec { reason });
        if self.blocks == 0 || self.layers_per_block == 0 || self.channels == 0 {
            return bad("blocks, layers, and channels must be positive".into());
        }
        if self.filter_len < 2 || self.filter_len > self.input_dim {
            return bad(format!(
                "filter length {} outside [2, D={}]",
                self.filter_len, self.input_dim
            ));
        }
        if !(self.filter_cap.is_finite() && self.filter_cap > 0.0) {
            return bad(format!("filter cap {} must be positive", self.filter_cap));
        }
        if !(self.output_cap.is_finite() && self.output_cap > 0.0) {
            return bad(format!("output cap {} must be positive", self.output_cap));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.blocks * self.layers_per_block
    }

    /// Entries in one filter tensor (`J × I × J`).
    fn filter_size(&self) -> usize {
        self.channels * self.filter_len * self.channels
    }

    /// Entries in one bias matrix (`D × J`).
    fn bias_size(&self) -> usize {
        self.input_dim * self.channels
    }

    /// Total trainable parameter count.
    pub fn n_parameters(&self) -> usize {
        self.n_layers() * (self.filter_size() + self.bias_size())
            + self.input_dim * self.channels
            + 1
    }
}

/// One convolutional layer: filter `[j·I·C + i·C + l]` and bias `[k·C + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub filter: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable parameters, layers in block-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub layers: Vec<ConvLayer>,
    /// Dense head weights, `[k·J + j]`.
    pub dense: Vec<f64>,
    pub dense_bias: f64,
}

/// A network: architecture, parameters, and an optional truncation level.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub spec: CnnSpec,
    pub params: CnnParams,
    /// Truncation stage: outputs are clamped to `[-A, A]` when set.
    pub clamp: Option<f64>,
}

/// One-sided, stride-one convolution:
/// `Y[k][j] = Σ_{i<filter_len} Σ_{l<c_in} W[j][i][l]·Z[k+i][l]`, with rows of
/// `Z` beyond `rows` read as zero. `z` is `rows × c_in` row-major, the result
/// is `rows × c_out` row-major.
pub fn conv_forward(
    z: &[f64],
    rows: usize,
    c_in: usize,
    filter: &[f64],
    c_out: usize,
    filter_len: usize,
) -> Vec<f64> {
    debug_assert_eq!(z.len(), rows * c_in);
    debug_assert_eq!(filter.len(), c_out * filter_len * c_in);
    let mut out = vec![0.0; rows * c_out];
    for k in 0..rows {
        let reach = filter_len.min(rows - k);
        let out_row = &mut out[k * c_out..][..c_out];
        for i in 0..reach {
            let z_row = &z[(k + i) * c_in..][..c_in];
            for (j, out_v) in out_row.iter_mut().enumerate() {
                let f_row = &filter[(j * filter_len + i) * c_in..][..c_in];
                let mut acc = 0.0;
                for l in 0..c_in {
                    acc += f_row[l] * z_row[l];
                }
                *out_v += acc;
            }
        }
    }
    out
}

/// Reusable forward-pass buffers: the padded input, every layer's pre- and
/// post-activation, and the output head pieces.
#[derive(Debug, Default, Clone)]
pub struct ForwardTrace {
    /// `stages[0]` is the padded input; `stages[t+1]` is layer `t`'s output.
    stages: Vec<Vec<f64>>,
    /// Pre-activation (conv + bias) per layer, for ReLU masks.
    preact: Vec<Vec<f64>>,
    /// Network output before the truncation stage.
    pub raw: f64,
    /// Final output (after truncation, when configured).
    pub output: f64,
}

/// Truncation stage `y ↦ ReLU(2A - ReLU(A - y)) - A` (equal to
/// `clamp(y, -A, A)` pointwise).
fn truncate(y: f64, a: f64) -> f64 {
    let inner = (a - y).max(0.0);
    (2.0 * a - inner).max(0.0) - a
}

/// Derivative of the truncation stage (1 strictly inside `(-A, A)`, else 0,
/// matching the ReLU subgradient convention `ReLU'(0) = 0`).
fn truncate_grad(y: f64, a: f64) -> f64 {
    if a - y > 0.0 && a + y > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl CnnModel {
    /// Fresh model with identity-preserving initialization (see
    /// [`CnnParams::init`]); `clamp` starts unset.
    pub fn new(spec: CnnSpec, seed: u64) -> Result<Self, CnnError> {
        spec.validate()?;
        Ok(Self { params: CnnParams::init(&spec, seed, 0.0), spec, clamp: None })
    }

    /// Model with every parameter zero: the constant-zero function.
    pub fn zeroed(spec: CnnSpec) -> Result<Self, CnnError> {
        spec.validate()?;
        Ok(Self { params: CnnParams::zeros(&spec), spec, clamp: None })
    }

    /// Scalar output at `x` (truncation applied when configured).
    pub fn forward(&self, x: &[f64]) -> Result<f64, CnnError> {
        let mut trace = ForwardTrace::default();
        self.forward_traced(x, &mut trace)?;
        Ok(trace.output)
    }

    /// Forward pass retaining every intermediate stage for the backward pass.
    pub fn forward_traced(&self, x: &[f64], trace: &mut ForwardTrace) -> Result<(), CnnError> {
        let spec = &self.spec;
        let d = spec.input_dim;
        let c = spec.channels;
        if x.len() != d {
            return Err(CnnError::InputLength { expected: d, found: x.len() });
        }
        let n_layers = spec.n_layers();
        trace.stages.resize(n_layers + 1, Vec::new());
        trace.preact.resize(n_layers, Vec::new());

        // Padding: [x 0 … 0] in a D × J matrix, x in channel 0.
        let z0 = &mut trace.stages[0];
        z0.clear();
        z0.resize(d * c, 0.0);
        for k in 0..d {
            z0[k * c] = x[k];
        }

        for t in 0..n_layers {
            let layer = &self.params.layers[t];
            let conv = conv_forward(&trace.stages[t], d, c, &layer.filter, c, spec.filter_len);
            let pre = &mut trace.preact[t];
            pre.clear();
            pre.extend(conv.iter().zip(&layer.bias).map(|(y, b)| y + b));
            let stage = &mut trace.stages[t + 1];
            stage.clear();
            stage.extend(trace.preact[t].iter().map(|&p| p.max(0.0)));
        }

        let features = &trace.stages[n_layers];
        let mut out = self.params.dense_bias;
        for (w, g) in self.params.dense.iter().zip(features) {
            out += w * g;
        }
        trace.raw = out;
        trace.output = match self.clamp {
            Some(a) => truncate(out, a),
            None => out,
        };
        Ok(())
    }

    /// Exact reverse-mode gradients of `upstream · f(x)` with respect to every
    /// parameter, reusing the stages stored in `trace` by
    /// [`Self::forward_traced`]. Gradients are accumulated into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: f64,
        grads: &mut CnnGradients,
    ) {
        let spec = &self.spec;
        let d = spec.input_dim;
        let c = spec.channels;
        let i_len = spec.filter_len;
        let n_layers = spec.n_layers();

        let mut g_out = upstream;
        if let Some(a) = self.clamp {
            g_out *= truncate_grad(trace.raw, a);
        }

        let features = &trace.stages[n_layers];
        grads.dense_bias += g_out;
        let mut d_stage = vec![0.0; d * c];
        for idx in 0..d * c {
            grads.dense[idx] += g_out * features[idx];
            d_stage[idx] = g_out * self.params.dense[idx];
        }

        let mut d_prev = vec![0.0; d * c];
        for t in (0..n_layers).rev() {
            let layer = &self.params.layers[t];
            let grad_layer = &mut grads.layers[t];
            let pre = &trace.preact[t];
            let below = &trace.stages[t];
            // ReLU mask and bias gradient.
            for idx in 0..d * c {
                let dp = if pre[idx] > 0.0 { d_stage[idx] } else { 0.0 };
                d_stage[idx] = dp;
                grad_layer.bias[idx] += dp;
            }
            // Filter gradient and input gradient.
            d_prev.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let reach = i_len.min(d - k);
                let dp_row = &d_stage[k * c..][..c];
                for i in 0..reach {
                    let below_row = &below[(k + i) * c..][..c];
                    let d_below_row = &mut d_prev[(k + i) * c..][..c];
                    for (j, &dp) in dp_row.iter().enumerate() {
                        if dp == 0.0 {
                            continue;
                        }
                        let f_row = &layer.filter[(j * i_len + i) * c..][..c];
                        let g_row = &mut grad_layer.filter[(j * i_len + i) * c..][..c];
                        for l in 0..c {
                            g_row[l] += dp * below_row[l];
                            d_below_row[l] += dp * f_row[l];
                        }
                    }
                }
            }
            std::mem::swap(&mut d_stage, &mut d_prev);
        }
    }

    /// Convenience wrapper: forward at `x`, then gradients of
    /// `upstream · f(x)`; returns the (truncated) output.
    pub fn backward_gradients(
        &self,
        x: &[f64],
        upstream: f64,
        grads: &mut CnnGradients,
    ) -> Result<f64, CnnError> {
        let mut trace = ForwardTrace::default();
        self.forward_traced(x, &mut trace)?;
        self.backward_into(&trace, upstream, grads);
        Ok(trace.output)
    }

    /// Signs of every pre-activation: the ReLU region. Two inputs with the
    /// same pattern (and the truncation inactive) see the network as one
    /// affine function.
    pub fn activation_pattern(&self, x: &[f64]) -> Result<Vec<bool>, CnnError> {
        let mut trace = ForwardTrace::default();
        self.forward_traced(x, &mut trace)?;
        let mut pattern = Vec::new();
        for pre in &trace.preact {
            pattern.extend(pre.iter().map(|&p| p > 0.0));
        }
        if let Some(a) = self.clamp {
            pattern.push(trace.raw < -a);
            pattern.push(trace.raw > a);
        }
        Ok(pattern)
    }

    /// Projects every parameter onto its cap interval: filters and biases to
    /// `[-R1, R1]`, dense head and bias to `[-R2, R2]`.
    pub fn clip_to_caps(&mut self) {
        let r1 = self.spec.filter_cap;
        let r2 = self.spec.output_cap;
        for layer in &mut self.params.layers {
            for w in &mut layer.filter {
                *w = w.clamp(-r1, r1);
            }
            for b in &mut layer.bias {
                *b = b.clamp(-r1, r1);
            }
        }
        for w in &mut self.params.dense {
            *w = w.clamp(-r2, r2);
        }
        self.params.dense_bias = self.params.dense_bias.clamp(-r2, r2);
    }

    /// Largest absolute filter/bias entry (must stay ≤ R1 after training).
    pub fn max_filter_magnitude(&self) -> f64 {
        let mut m = 0.0f64;
        for layer in &self.params.layers {
            for w in layer.filter.iter().chain(&layer.bias) {
                m = m.max(w.abs());
            }
        }
        m
    }

    /// Largest absolute dense-head entry (must stay ≤ R2 after training).
    pub fn max_dense_magnitude(&self) -> f64 {
        self.params
            .dense
            .iter()
            .chain(std::iter::once(&self.params.dense_bias))
            .fold(0.0f64, |m, w| m.max(w.abs()))
    }
}

impl CnnParams {
    /// All-zero parameters (the induced network is identically zero).
    pub fn zeros(spec: &CnnSpec) -> Self {
        Self {
            layers: (0..spec.n_layers())
                .map(|_| ConvLayer {
                    filter: vec![0.0; spec.filter_size()],
                    bias: vec![0.0; spec.bias_size()],
                })
                .collect(),
            dense: vec![0.0; spec.input_dim * spec.channels],
            dense_bias: 0.0,
        }
    }

    /// Applies `y ↦ mul·y + add` to the pre-truncation output by rescaling
    /// the affine dense head in place — exact, no approximation.
    pub fn head_affine(&mut self, mul: f64, add: f64) {
        for w in &mut self.dense {
            *w *= mul;
        }
        self.dense_bias = self.dense_bias * mul + add;
    }

    /// Identity-preserving initialization. The first layer splits channel 0
    /// into a positive/negative pair `(x₊, x₋)` so ReLU keeps the full signal;
    /// deeper layers start near the channel-wise identity; every entry gets a
    /// small seeded Gaussian perturbation; the dense head starts near zero
    /// with its bias at `mean_output` (typically the target mean). Identity
    /// pass-through keeps gradients alive at depth without skip connections.
    pub fn init(spec: &CnnSpec, seed: u64, mean_output: f64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = move |std: f64, rng: &mut ChaCha8Rng| -> f64 {
            // Box–Muller, one value per call.
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let c = spec.channels;
        let i_len = spec.filter_len;
        let noise = 0.02;
        let mut layers = Vec::with_capacity(spec.n_layers());
        for t in 0..spec.n_layers() {
            let mut filter = vec![0.0; spec.filter_size()];
            for w in &mut filter {
                *w = normal(noise, &mut rng);
            }
            if t == 0 {
                // Sign split: channels 0/1 carry (x)₊ and (-x)₊.
                filter[0] += 1.0; // j=0, i=0, l=0
                if c > 1 {
                    filter[i_len * c] -= 1.0; // j=1, i=0, l=0
                }
            } else {
                for j in 0..c {
                    filter[(j * i_len) * c + j] += 1.0; // identity at window offset 0
                }
            }
            let mut bias = vec![0.0; spec.bias_size()];
            for b in &mut bias {
                *b = normal(noise * 0.5, &mut rng);
            }
            layers.push(ConvLayer { filter, bias });
        }
        let dense_std = 0.05 / ((spec.input_dim * c) as f64).sqrt();
        let dense: Vec<f64> =
            (0..spec.input_dim * c).map(|_| normal(dense_std, &mut rng)).collect();
        let mut params = Self { layers, dense, dense_bias: mean_output };
        // Respect the caps from the start.
        let mut model = CnnModel { spec: *spec, params: params.clone(), clamp: None };
        model.clip_to_caps();
        params = model.params;
        params
    }
}

/// Gradient accumulator shaped exactly like [`CnnParams`].
#[derive(Debug, Clone)]
pub struct CnnGradients {
    pub layers: Vec<ConvLayer>,
    pub dense: Vec<f64>,
    pub dense_bias: f64,
}

impl CnnGradients {
    pub fn zeros(spec: &CnnSpec) -> Self {
        Self {
            layers: (0..spec.n_layers())
                .map(|_| ConvLayer {
                    filter: vec![0.0; spec.filter_size()],
                    bias: vec![0.0; spec.bias_size()],
                })
                .collect(),
            dense: vec![0.0; spec.input_dim * spec.channels],
            dense_bias: 0.0,
        }
    }

    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.filter.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        self.dense.iter_mut().for_each(|v| *v = 0.0);
        self.dense_bias = 0.0;
    }
}

// ---------------------------------------------------------------------------
// Restricted class: sup-norm truncation + Hölder witness on a check net
// ---------------------------------------------------------------------------

/// The target class for trained networks: sup-norm level `A` (enforced by the
/// truncation stage) and an `(L, α, ε)` Hölder witness measured on a check
/// net.
#[derive(Debug, Clone)]
pub struct RestrictedClassSpec {
    /// Truncation level `A`; trained outputs satisfy `|f| ≤ A` exactly.
    pub sup_bound: f64,
    /// Hölder constant `L` of the witness.
    pub constant: f64,
    /// Hölder exponent `α ∈ (0, 1]`.
    pub exponent: f64,
    /// Proximity slack `ε` of the witness.
    pub proximity: f64,
    /// Net on which sup-norm and Hölder membership are audited.
    pub check_net: EmbeddedManifold,
}

/// Outcome of auditing a trained network against a [`RestrictedClassSpec`].
#[derive(Debug, Clone, Copy)]
pub struct RestrictionReport {
    pub sup_norm: f64,
    pub sup_pass: bool,
    pub lipschitz_estimate: f64,
    pub lipschitz_pass: bool,
}

/// Relative tolerance for restriction pass/fail decisions.
const RESTRICTION_REL_TOL: f64 = 1e-6;

/// Evaluates the model on every check-net point and audits sup-norm and
/// Hölder membership within relative tolerance `1e-6`.
pub fn check_restriction(
    model: &CnnModel,
    spec: &RestrictedClassSpec,
) -> Result<RestrictionReport, CnnError> {
    let values = eval_on_net(model, &spec.check_net)?;
    let sup_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lipschitz_estimate =
        spec.check_net.estimate_lipschitz(&values, spec.exponent, spec.proximity)?;
    Ok(RestrictionReport {
        sup_norm,
        sup_pass: sup_norm <= spec.sup_bound * (1.0 + RESTRICTION_REL_TOL),
        lipschitz_estimate,
        lipschitz_pass: lipschitz_estimate <= spec.constant * (1.0 + RESTRICTION_REL_TOL),
    })
}

/// Model values at every net point.
pub fn eval_on_net(model: &CnnModel, net: &EmbeddedManifold) -> Result<Vec<f64>, CnnError> {
    let mut trace = ForwardTrace::default();
    let mut values = Vec::with_capacity(net.len());
    for i in 0..net.len() {
        model.forward_traced(net.point(i), &mut trace)?;
        values.push(trace.output);
    }
    Ok(values)
}

/// Mean squared Hölder violation over all unordered check-net pairs:
/// `mean ((|f(x) - f(y)| - 2ε - L·d(x,y)^α)₊)²`. Used as a soft regularizer
/// during training and as a deterministic audit value.
pub fn lipschitz_penalty(model: &CnnModel, spec: &RestrictedClassSpec) -> Result<f64, CnnError> {
    let values = eval_on_net(model, &spec.check_net)?;
    let n = values.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        let row = spec.check_net.geodesic_row(i);
        for j in (i + 1)..n {
            let d = row[j];
            if !d.is_finite() {
                continue;
            }
            let violation = (values[i] - values[j]).abs()
                - 2.0 * spec.proximity
                - spec.constant * d.powf(spec.exponent);
            if violation > 0.0 {
                total += violation * violation;
            }
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Minibatch SGD hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Classical momentum coefficient (0 disables).
    pub momentum: f64,
    /// Weight `μ` on the soft Hölder penalty (0 disables the penalty).
    pub lipschitz_weight: f64,
    /// Check-net pairs sampled per minibatch for the penalty.
    pub lipschitz_pairs: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            lipschitz_weight: 0.0,
            lipschitz_pairs: 8,
            seed: 0,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-dataset MSE measured after each epoch.
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainReport {
    /// Running minimum of the epoch losses; non-increasing by construction,
    /// and the checkpoint the trainer returns tracks its last value.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.epoch_losses.len());
        let mut best = f64::INFINITY;
        for &l in &self.epoch_losses {
            best = best.min(l);
            out.push(best);
        }
        out
    }
}

/// Empirical risk minimization with minibatch SGD under the hard caps.
///
/// `xs` is row-major `N × D`, `ys` has length `N`. When `restriction` is
/// given, the model's truncation stage is set to its sup level before
/// training (so optimization sees the truncated outputs) and the soft Hölder
/// penalty draws pairs from its check net. After every step the parameters
/// are projected back onto the cap box. The returned parameters are the
/// best-epoch checkpoint under the full-dataset MSE; a non-finite loss aborts
/// with an error.
pub fn train_erm(
    model: &mut CnnModel,
    xs: &[f64],
    ys: &[f64],
    restriction: Option<&RestrictedClassSpec>,
    cfg: &TrainerConfig,
) -> Result<TrainReport, CnnError> {
    use rand::SeedableRng;
    let d = model.spec.input_dim;
    if ys.is_empty() || xs.len() != ys.len() * d {
        return Err(CnnError::BadDataset);
    }
    let n = ys.len();
    if let Some(spec) = restriction {
        model.clamp = Some(spec.sup_bound);
    }
    let eval_clamp = model.clamp;

    // The optimizer works in standardized target units: raw regression
    // scales vary by orders of magnitude across iterations of the outer
    // loop, and a single learning rate cannot serve them all. The transform
    // is inverted exactly on the affine dense head at entry/exit, so the
    // returned model lives on the raw scale. Gradient steps also run on the
    // unclamped surrogate — the truncation stage has zero derivative outside
    // its band, so one overshoot would otherwise kill every gradient for
    // good. The returned model carries the clamp, and the reported best loss
    // is its truncated raw-scale risk.
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let y_var = ys.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum::<f64>() / n as f64;
    let y_scale = y_var.sqrt().max(1e-9);
    let ys_std: Vec<f64> = ys.iter().map(|&y| (y - y_mean) / y_scale).collect();
    model.params.head_affine(1.0 / y_scale, -y_mean / y_scale);
    model.clamp = None;
    // Hölder penalty constants move to standardized units with the targets.
    let std_restriction = restriction.map(|spec| RestrictedClassSpec {
        sup_bound: spec.sup_bound / y_scale,
        constant: spec.constant / y_scale,
        exponent: spec.exponent,
        proximity: spec.proximity / y_scale,
        check_net: spec.check_net.clone(),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grads = CnnGradients::zeros(&model.spec);
    let mut velocity = CnnGradients::zeros(&model.spec);
    let mut trace = ForwardTrace::default();

    let full_mse = |model: &CnnModel,
                    targets: &[f64],
                    trace: &mut ForwardTrace|
     -> Result<f64, CnnError> {
        let mut total = 0.0;
        for (x, &y) in xs.chunks_exact(d).zip(targets) {
            model.forward_traced(x, trace)?;
            let err = trace.output - y;
            total += err * err;
        }
        Ok(total / n as f64)
    };

    let mut best_loss = full_mse(model, &ys_std, &mut trace)?;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        // Deterministic Fisher–Yates shuffle from the trainer stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grads.reset();
            let scale = 2.0 / batch.len() as f64;
            for &idx in batch {
                let x = &xs[idx * d..][..d];
                model.forward_traced(x, &mut trace)?;
                let err = trace.output - ys_std[idx];
                model.backward_into(&trace, scale * err, &mut grads);
            }
            if let Some(spec) = &std_restriction {
                if cfg.lipschitz_weight > 0.0 && cfg.lipschitz_pairs > 0 {
                    accumulate_penalty_gradient(model, spec, cfg, &mut rng, &mut grads)?;
                }
            }
            sgd_step(model, &mut velocity, &grads, cfg);
        }
        let loss = full_mse(model, &ys_std, &mut trace)?;
        if !loss.is_finite() {
            return Err(CnnError::NanLoss { epoch, last: best_loss });
        }
        epoch_losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_params = model.params.clone();
            best_epoch = epoch + 1;
        }
    }
    model.params = best_params;
    model.params.head_affine(y_scale, y_mean);
    model.clip_to_caps();
    model.clamp = eval_clamp;
    // Report losses in raw units: the epoch curve by exact rescaling, the
    // best loss as the returned (truncated) model's actual risk.
    for l in &mut epoch_losses {
        *l *= y_scale * y_scale;
    }
    let best_loss = full_mse(model, ys, &mut trace)?;
    Ok(TrainReport { epoch_losses, best_epoch, best_loss })
}

/// Gradient of `μ · mean((|f(x)-f(y)| - 2ε - L·d^α)₊)²` over `pairs` sampled
/// check-net pairs.
fn accumulate_penalty_gradient(
    model: &CnnModel,
    spec: &RestrictedClassSpec,
    cfg: &TrainerConfig,
    rng: &mut ChaCha8Rng,
    grads: &mut CnnGradients,
) -> Result<(), CnnError> {
    let net = &spec.check_net;
    let n = net.len();
    let mut trace_a = ForwardTrace::default();
    let mut trace_b = ForwardTrace::default();
    let scale = cfg.lipschitz_weight / cfg.lipschitz_pairs as f64;
    for _ in 0..cfg.lipschitz_pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let d = net.geodesic_row(i)[j];
        if !d.is_finite() {
            continue;
        }
        model.forward_traced(net.point(i), &mut trace_a)?;
        model.forward_traced(net.point(j), &mut trace_b)?;
        let diff = trace_a.output - trace_b.output;
        let violation =
            diff.abs() - 2.0 * spec.proximity - spec.constant * d.powf(spec.exponent);
        if violation <= 0.0 {
            continue;
        }
        let g = scale * 2.0 * violation * diff.signum();
        model.backward_into(&trace_a, g, grads);
        model.backward_into(&trace_b, -g, grads);
    }
    Ok(())
}

/// One SGD step with momentum, followed by projection onto the caps.
fn sgd_step(model: &mut CnnModel, velocity: &mut CnnGradients, grads: &CnnGradients, cfg: &TrainerConfig) {
    let lr = cfg.learning_rate;
    let mu = cfg.momentum;
    for (t, layer) in model.params.layers.iter_mut().enumerate() {
        let v = &mut velocity.layers[t];
        let g = &grads.layers[t];
        for ((w, vel), grad) in layer.filter.iter_mut().zip(&mut v.filter).zip(&g.filter) {
            *vel = mu * *vel - lr * grad;
            *w += *vel;
        }
        for ((b, vel), grad) in layer.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
            *vel = mu * *vel - lr * grad;
            *b += *vel;
        }
    }
    for ((w, vel), grad) in model
        .params
        .dense
        .iter_mut()
        .zip(&mut velocity.dense)
        .zip(&grads.dense)
    {
        *vel = mu * *vel - lr * grad;
        *w += *vel;
    }
    velocity.dense_bias = mu * velocity.dense_bias - lr * grads.dense_bias;
    model.params.dense_bias += velocity.dense_bias;
    model.clip_to_caps();
}

// ---------------------------------------------------------------------------
// Sizing rule
// ---------------------------------------------------------------------------

/// Tunable constants of the sizing rule. Each field defaults independently
/// so a config file may override a subset.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingConstants {
    /// Block-count scale: `M = ⌈κ_M·N^{d/(d+2α)}⌉`.
    #[serde(default = "defaults::kappa_m")]
    pub kappa_m: f64,
    /// Depth scale: `L = ⌈κ_L·(ln N + D + ln D)⌉`, capped at `l_max`.
    #[serde(default = "defaults::kappa_l")]
    pub kappa_l: f64,
    #[serde(default = "defaults::l_max")]
    pub l_max: usize,
    /// Channel scale: `J = max(8, ⌈κ_J·D⌉)`.
    #[serde(default = "defaults::kappa_j")]
    pub kappa_j: f64,
    /// Dense-head cap scale: `R2 = κ_R·N`.
    #[serde(default = "defaults::kappa_r")]
    pub kappa_r: f64,
}

mod defaults {
    pub fn kappa_m() -> f64 {
        1.0
    }
    pub fn kappa_l() -> f64 {
        0.25
    }
    pub fn l_max() -> usize {
        6
    }
    pub fn kappa_j() -> f64 {
        0.5
    }
    pub fn kappa_r() -> f64 {
        10.0
    }
}

impl Default for SizingConstants {
    fn default() -> Self {
        Self {
            kappa_m: defaults::kappa_m(),
            kappa_l: defaults::kappa_l(),
            l_max: defaults::l_max(),
            kappa_j: defaults::kappa_j(),
            kappa_r: defaults::kappa_r(),
        }
    }
}

/// Architecture from a sample budget: the block count follows the
/// `N^{d/(d+2α)}` approximation/estimation balance for `d`-dimensional data,
/// depth grows like `ln N + D·ln D` up to a hard cap, channels scale with the
/// ambient dimension, windows stay short, filter caps are unit, and the dense
/// cap grows linearly in `N`.
pub fn architecture_from_budget(
    n_samples: usize,
    input_dim: usize,
    intrinsic_dim: usize,
    exponent: f64,
    constants: &SizingConstants,
) -> Result<CnnSpec, CnnError> {
    if n_samples == 0 || input_dim < 2 || intrinsic_dim == 0 {
        return Err(CnnError::BadSpec {
            reason: format!(
                "sizing needs N ≥ 1, D ≥ 2, d ≥ 1 (got N={n_samples}, D={input_dim}, d={intrinsic_dim})"
            ),
        });
    }
    let n = n_samples as f64;
    let d_in = input_dim as f64;
    let rate = intrinsic_dim as f64 / (intrinsic_dim as f64 + 2.0 * exponent);
    let blocks = (constants.kappa_m * n.powf(rate)).ceil().max(1.0) as usize;
    let layers = ((constants.kappa_l * (n.ln() + d_in + d_in.ln())).ceil().max(1.0) as usize)
        .min(constants.l_max.max(1));
    let channels = ((constants.kappa_j * d_in).ceil() as usize).max(8);
    let spec = CnnSpec {
        blocks,
        layers_per_block: layers,
        channels,
        filter_len: 3.min(input_dim),
        filter_cap: 1.0,
        output_cap: constants.kappa_r * n,
        input_dim,
    };
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Serialization: binary parameters + text manifest
// ---------------------------------------------------------------------------

const MODEL_MAGIC: u32 = 0x4e50_4d31; // "NPM1"

/// Writes the model to `path` as little-endian binary (header: magic and the
/// five architecture integers as 32-bit values; then the two caps and the
/// truncation level as 64-bit floats, `+∞` meaning "no truncation"; then all
/// parameters in block-major, layer-major, row-major order) and a plain-text
/// manifest at `<path>.manifest`.
pub fn save_model(model: &CnnModel, path: &Path) -> Result<(), CnnError> {
    let spec = &model.spec;
    let mut bytes = Vec::with_capacity(16 + spec.n_parameters() * 8);
    for v in [
        MODEL_MAGIC,
        spec.blocks as u32,
        spec.layers_per_block as u32,
        spec.channels as u32,
        spec.filter_len as u32,
        spec.input_dim as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in [spec.filter_cap, spec.output_cap, model.clamp.unwrap_or(f64::INFINITY)] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for layer in &model.params.layers {
        for w in layer.filter.iter().chain(&layer.bias) {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
    }
    for w in model.params.dense.iter().chain(std::iter::once(&model.params.dense_bias)) {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    std::fs::write(path, &bytes)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "format cnn-binary-v1");
    let _ = writeln!(manifest, "blocks {}", spec.blocks);
    let _ = writeln!(manifest, "layers_per_block {}", spec.layers_per_block);
    let _ = writeln!(manifest, "channels {}", spec.channels);
    let _ = writeln!(manifest, "filter_len {}", spec.filter_len);
    let _ = writeln!(manifest, "input_dim {}", spec.input_dim);
    let _ = writeln!(manifest, "filter_cap {:.17e}", spec.filter_cap);
    let _ = writeln!(manifest, "output_cap {:.17e}", spec.output_cap);
    match model.clamp {
        Some(a) => {
            let _ = writeln!(manifest, "truncation {a:.17e}");
        }
        None => {
            let _ = writeln!(manifest, "truncation none");
        }
    }
    let _ = writeln!(manifest, "parameters {}", spec.n_parameters());
    let manifest_path = manifest_path_for(path);
    std::fs::write(manifest_path, manifest)?;
    Ok(())
}

fn manifest_path_for(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".manifest");
    std::path::PathBuf::from(os)
}

/// Reads a model written by [`save_model`]; all dimensions and caps are
/// validated before parameters are accepted.
pub fn load_model(path: &Path) -> Result<CnnModel, CnnError> {
    let bytes = std::fs::read(path)?;
    let corrupt = |reason: &str| CnnError::Corrupt { reason: reason.to_string() };
    if bytes.len() < 6 * 4 + 3 * 8 {
        return Err(corrupt("file shorter than header"));
    }
    let mut at = 0usize;
    let take_u32 = |bytes: &[u8], at: &mut usize| -> u32 {
        let v = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap());
        *at += 4;
        v
    };
    let take_f64 = |bytes: &[u8], at: &mut usize| -> f64 {
        let v = f64::from_le_bytes(bytes[*at..*at + 8].try_into().unwrap());
        *at += 8;
        v
    };
    if take_u32(&bytes, &mut at) != MODEL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let blocks = take_u32(&bytes, &mut at) as usize;
    let layers_per_block = take_u32(&bytes, &mut at) as usize;
    let channels = take_u32(&bytes, &mut at) as usize;
    let filter_len = take_u32(&bytes, &mut at) as usize;
    let input_dim = take_u32(&bytes, &mut at) as usize;
    let filter_cap = take_f64(&bytes, &mut at);
    let output_cap = take_f64(&bytes, &mut at);
    let clamp_raw = take_f64(&bytes, &mut at);
    let spec = CnnSpec {
        blocks,
        layers_per_block,
        channels,
        filter_len,
        filter_cap,
        output_cap,
        input_dim,
    };
    spec.validate()?;
    let expected = at + spec.n_parameters() * 8;
    if bytes.len() != expected {
        return Err(corrupt("parameter block has wrong length"));
    }
    let mut layers = Vec::with_capacity(spec.n_layers());
    for _ in 0..spec.n_layers() {
        let mut filter = vec![0.0; spec.filter_size()];
        for w in &mut filter {
            *w = take_f64(&bytes, &mut at);
        }
        let mut bias = vec![0.0; spec.bias_size()];
        for b in &mut bias {
            *b = take_f64(&bytes, &mut at);
        }
        layers.push(ConvLayer { filter, bias });
    }
    let mut dense = vec![0.0; spec.input_dim * spec.channels];
    for w in &mut dense {
        *w = take_f64(&bytes, &mut at);
    }
    let dense_bias = take_f64(&bytes, &mut at);
    let clamp = if clamp_raw.is_finite() { Some(clamp_raw) } else { None };
    Ok(CnnModel { spec, params: CnnParams { layers, dense, dense_bias }, clamp })
}
