//! Windowed MLP forecaster producing a Gaussian one-step-ahead prediction.
//!
//! The network maps the last `context_length` values (oldest first) through
//! `tanh` hidden layers to two outputs: the predictive mean and a
//! pre-variance `s`, with `variance = softplus(s) + variance_floor`.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as
//! its row-major `(n_out x n_in)` weight matrix followed by its biases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CONTEXT_LENGTH: usize = 25;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus for `y > 0`.
fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn nll(&self, x: f64) -> f64 {
        nll(self, x)
    }
}

/// Gaussian negative log-likelihood `0.5 ln(2 pi v) + (x - m)^2 / (2 v)`.
pub fn nll(pred: &GaussianPrediction, x: f64) -> f64 {
    let r = x - pred.mean;
    HALF_LN_2PI + 0.5 * pred.variance.ln() + r * r / (2.0 * pred.variance)
}

/// Per-timestep training mask. Positions flagged anomalous are excluded as
/// targets, and replaced by `impute_values` wherever they appear as inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMask {
    pub anomalous: Vec<bool>,
    pub impute_values: Vec<f64>,
}

impl TrainMask {
    pub fn all_nominal(len: usize) -> Self {
        Self {
            anomalous: vec![false; len],
            impute_values: vec![0.0; len],
        }
    }

    pub fn new(anomalous: Vec<bool>, impute_values: Vec<f64>) -> Result<Self> {
        if anomalous.len() != impute_values.len() {
            return Err(Error::ShapeMismatch {
                expected: anomalous.len(),
                actual: impute_values.len(),
            });
        }
        Ok(Self {
            anomalous,
            impute_values,
        })
    }

    pub fn len(&self) -> usize {
        self.anomalous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anomalous.is_empty()
    }

    /// Series with flagged positions replaced.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: values.len(),
                actual: self.len(),
            });
        }
        let out: Vec<f64> = values
            .iter()
            .zip(&self.anomalous)
            .zip(&self.impute_values)
            .map(|((&v, &a), &imp)| if a { imp } else { v })
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Per-batch gradient L2 norm bound.
    pub clip_norm: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            clip_norm: 10.0,
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be > 0"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::invalid("Adam needs beta1, beta2 in [0,1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    w_offset: usize,
    b_offset: usize,
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpForecaster {
    context_length: usize,
    hidden_sizes: Vec<usize>,
    variance_floor: f64,
    params: Vec<f64>,
    #[serde(default)]
    adam: Option<AdamState>,
}

/// Reusable forward/backward buffers.
struct Workspace {
    /// `acts[0]` is the input window, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpForecaster {
    /// Seeded initialization. Hidden weights are uniform in `+/- 1/sqrt(fan_in)`;
    /// the variance row of the output layer starts at zero with its bias set
    /// so the initial predicted variance is exactly 1.
    pub fn new(
        context_length: usize,
        hidden_sizes: &[usize],
        variance_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        if context_length == 0 {
            return Err(Error::invalid("context length must be >= 1"));
        }
        if hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be >= 1"));
        }
        if !(variance_floor > 0.0 && variance_floor < 1.0) {
            return Err(Error::invalid(format!(
                "variance_floor must lie in (0,1), got {variance_floor}"
            )));
        }
        let mut model = Self {
            context_length,
            hidden_sizes: hidden_sizes.to_vec(),
            variance_floor,
            params: Vec::new(),
            adam: None,
        };
        let shapes = model.shapes();
        let total = shapes.last().map(|s| s.b_offset + s.n_out).unwrap_or(0);
        model.params = vec![0.0; total];

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = shapes.len() - 1;
        for (i, s) in shapes.iter().enumerate() {
            let bound = 1.0 / (s.n_in as f64).sqrt();
            for o in 0..s.n_out {
                if i == last && o == 1 {
                    continue;
                }
                for k in 0..s.n_in {
                    model.params[s.w_offset + o * s.n_in + k] = rng.random_range(-bound..bound);
                }
            }
        }
        let out = shapes[last];
        model.params[out.b_offset + 1] = softplus_inv(1.0 - variance_floor);
        Ok(model)
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Sets the output-layer biases so a zero-weight network predicts
    /// `(mean, variance)`.
    pub fn set_output_bias(&mut self, mean: f64, variance: f64) -> Result<()> {
        if !(variance > self.variance_floor) {
            return Err(Error::invalid("variance must exceed the variance floor"));
        }
        let out = *self.shapes().last().unwrap();
        self.params[out.b_offset] = mean;
        self.params[out.b_offset + 1] = softplus_inv(variance - self.variance_floor);
        Ok(())
    }

    /// Checks structural consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.context_length == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("invalid layer sizes"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid("variance_floor must be > 0"));
        }
        let s = *self.shapes().last().unwrap();
        if self.params.len() != s.b_offset + s.n_out {
            return Err(Error::ShapeMismatch {
                expected: s.b_offset + s.n_out,
                actual: self.params.len(),
            });
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<LayerShape> {
        let sizes: Vec<usize> = std::iter::once(self.context_length)
            .chain(self.hidden_sizes.iter().copied())
            .chain(std::iter::once(2))
            .collect();
        let mut offset = 0;
        sizes
            .windows(2)
            .map(|w| {
                let s = LayerShape {
                    n_in: w[0],
                    n_out: w[1],
                    w_offset: offset,
                    b_offset: offset + w[0] * w[1],
                };
                offset = s.b_offset + s.n_out;
                s
            })
            .collect()
    }

    fn workspace(&self, shapes: &[LayerShape]) -> Workspace {
        let mut acts = vec![vec![0.0; self.context_length]];
        acts.extend(shapes.iter().map(|s| vec![0.0; s.n_out]));
        let deltas = acts.clone();
        Workspace { acts, deltas }
    }

    /// Forward pass on `ws.acts[0]`; returns `(mean, pre_variance)`.
    fn forward_ws(&self, shapes: &[LayerShape], ws: &mut Workspace) -> (f64, f64) {
        let last = shapes.len() - 1;
        for (i, s) in shapes.iter().enumerate() {
            let (inputs, outputs) = ws.acts.split_at_mut(i + 1);
            let x = &inputs[i];
            let y = &mut outputs[0];
            for o in 0..s.n_out {
                let row = &self.params[s.w_offset + o * s.n_in..s.w_offset + (o + 1) * s.n_in];
                let z = self.params[s.b_offset + o]
                    + row.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>();
                y[o] = if i == last { z } else { z.tanh() };
            }
        }
        let out = &ws.acts[last + 1];
        (out[0], out[1])
    }

    /// Accumulates `scale * dL/dtheta` into `grad`, given the output deltas.
    fn backward_ws(
        &self,
        shapes: &[LayerShape],
        ws: &mut Workspace,
        d_mean: f64,
        d_pre: f64,
        grad: &mut [f64],
    ) {
        let last = shapes.len() - 1;
        ws.deltas[last + 1][0] = d_mean;
        ws.deltas[last + 1][1] = d_pre;
        for i in (0..shapes.len()).rev() {
            let s = shapes[i];
            let (lower, upper) = ws.deltas.split_at_mut(i + 1);
            let delta = &upper[0];
            let x = &ws.acts[i];
            for o in 0..s.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[s.b_offset + o] += d;
                let g = &mut grad[s.w_offset + o * s.n_in..s.w_offset + (o + 1) * s.n_in];
                for (gk, xk) in g.iter_mut().zip(x) {
                    *gk += d * xk;
                }
            }
            if i > 0 {
                let d_in = &mut lower[i];
                for k in 0..s.n_in {
                    let mut acc = 0.0;
                    for o in 0..s.n_out {
                        acc += self.params[s.w_offset + o * s.n_in + k] * delta[o];
                    }
                    // x is the tanh output of layer i - 1.
                    d_in[k] = acc * (1.0 - x[k] * x[k]);
                }
            }
        }
    }

    fn prediction(&self, mean: f64, pre: f64) -> GaussianPrediction {
        GaussianPrediction {
            mean,
            variance: softplus(pre) + self.variance_floor,
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.context_length {
            return Err(Error::ShapeMismatch {
                expected: self.context_length,
                actual: window.len(),
            });
        }
        if let Some(i) = window.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    /// One-step-ahead prediction from a window ordered oldest to newest.
    pub fn forecast(&self, window: &[f64]) -> Result<GaussianPrediction> {
        self.check_window(window)?;
        let shapes = self.shapes();
        let mut ws = self.workspace(&shapes);
        ws.acts[0].copy_from_slice(window);
        let (m, s) = self.forward_ws(&shapes, &mut ws);
        Ok(self.prediction(m, s))
    }

    /// Mean NLL over `(window, target)` pairs and its gradient with respect to
    /// the flat parameter vector.
    pub fn loss_and_gradient(&self, windows: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        if windows.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: windows.len(),
                actual: targets.len(),
            });
        }
        if windows.is_empty() {
            return Err(Error::Degenerate("no training pairs".into()));
        }
        for w in windows {
            self.check_window(w)?;
        }
        let shapes = self.shapes();
        let mut ws = self.workspace(&shapes);
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(&shapes, &mut ws, windows.iter().copied().zip(targets.iter().copied()), &mut grad);
        let inv = 1.0 / windows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    /// Sums NLL and gradients over the given pairs.
    fn accumulate<'a>(
        &self,
        shapes: &[LayerShape],
        ws: &mut Workspace,
        pairs: impl Iterator<Item = (&'a [f64], f64)>,
        grad: &mut [f64],
    ) -> f64 {
        let mut total = 0.0;
        for (window, target) in pairs {
            ws.acts[0].copy_from_slice(window);
            let (mean, pre) = self.forward_ws(shapes, ws);
            let pred = self.prediction(mean, pre);
            let r = target - mean;
            let v = pred.variance;
            total += nll(&pred, target);
            let d_mean = -r / v;
            let d_var = 0.5 / v - r * r / (2.0 * v * v);
            self.backward_ws(shapes, ws, d_mean, d_var * sigmoid(pre), grad);
        }
        total
    }

    /// One pass of mini-batch descent over all `(window, target)` pairs whose
    /// target is not flagged anomalous. Returns the mean NLL over included
    /// targets, measured during the pass.
    pub fn train_epoch(
        &mut self,
        values: &[f64],
        mask: &TrainMask,
        opts: &TrainOptions,
        seed: u64,
    ) -> Result<f64> {
        opts.validate()?;
        let l = self.context_length;
        if values.len() <= l {
            return Err(Error::invalid(format!(
                "series of length {} is too short for context length {l}",
                values.len()
            )));
        }
        let inputs = mask.apply(values)?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut targets: Vec<usize> = (l..values.len()).filter(|&t| !mask.anomalous[t]).collect();
        if targets.is_empty() {
            return Err(Error::Degenerate(
                "every target is flagged anomalous; nothing to train on".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        targets.shuffle(&mut rng);

        let shapes = self.shapes();
        let mut ws = self.workspace(&shapes);
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for batch in targets.chunks(opts.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let pairs = batch.iter().map(|&t| (&inputs[t - l..t], values[t]));
            total += self.accumulate(&shapes, &mut ws, pairs, &mut grad);
            let inv = 1.0 / batch.len() as f64;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() * inv;
            let mut scale = inv;
            if norm > opts.clip_norm {
                scale *= opts.clip_norm / norm;
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            self.apply_gradient(&grad, opts);
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(total / targets.len() as f64)
    }

    fn apply_gradient(&mut self, grad: &[f64], opts: &TrainOptions) {
        let lr = opts.learning_rate;
        match opts.optimizer {
            Optimizer::Sgd => {
                for (p, g) in self.params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let n = self.params.len();
                let state = self.adam.get_or_insert_with(|| AdamState {
                    step: 0,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                });
                state.step += 1;
                let c1 = 1.0 - beta1.powi(state.step as i32);
                let c2 = 1.0 - beta2.powi(state.step as i32);
                for i in 0..n {
                    let g = grad[i];
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = state.m[i] / c1;
                    let v_hat = state.v[i] / c2;
                    self.params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }

    /// Rolling one-step predictions for every position `t >= context_length`,
    /// using inputs with flagged positions replaced by the mask's values.
    pub fn forecast_series(&self, values: &[f64], mask: &TrainMask) -> Result<Vec<GaussianPrediction>> {
        let l = self.context_length;
        if values.len() <= l {
            return Err(Error::invalid(format!(
                "series of length {} is too short for context length {l}",
                values.len()
            )));
        }
        let inputs = mask.apply(values)?;
        let shapes = self.shapes();
        let mut ws = self.workspace(&shapes);
        Ok((l..values.len())
            .map(|t| {
                ws.acts[0].copy_from_slice(&inputs[t - l..t]);
                let (m, s) = self.forward_ws(&shapes, &mut ws);
                self.prediction(m, s)
            })
            .collect())
    }

    /// Rolling pass that replaces every flagged position `t >= context_length`
    /// by its own predictive mean before it enters later windows. Returns the
    /// predictions (for `t >= context_length`) and the substituted series.
    /// Flagged positions inside the first window keep their raw values.
    pub fn forecast_self_imputed(
        &self,
        values: &[f64],
        flagged: &[bool],
    ) -> Result<(Vec<GaussianPrediction>, Vec<f64>)> {
        let l = self.context_length;
        if flagged.len() != values.len() {
            return Err(Error::ShapeMismatch {
                expected: values.len(),
                actual: flagged.len(),
            });
        }
        if values.len() <= l {
            return Err(Error::invalid(format!(
                "series of length {} is too short for context length {l}",
                values.len()
            )));
        }
        let shapes = self.shapes();
        let mut ws = self.workspace(&shapes);
        let mut filled = values.to_vec();
        let mut preds = Vec::with_capacity(values.len() - l);
        for t in l..values.len() {
            ws.acts[0].copy_from_slice(&filled[t - l..t]);
            let (m, s) = self.forward_ws(&shapes, &mut ws);
            if flagged[t] {
                filled[t] = m;
            }
            preds.push(self.prediction(m, s));
        }
        Ok((preds, filled))
    }
}
