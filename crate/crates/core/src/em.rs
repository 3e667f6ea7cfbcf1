//! Monte Carlo EM over the latent anomaly indicator.
//!
//! Each iteration runs an E-step (exact forward-backward over the indicator
//! chain with emissions from the current forecaster and the uniform anomaly
//! density) followed by a Monte Carlo M-step: `n_samples` indicator paths are
//! drawn from the posterior, the forecaster is trained for one epoch per path
//! with sampled-anomalous targets excluded and sampled-anomalous inputs
//! replaced by the previous forecast means, and the chain is re-estimated from
//! the transition counts of all sampled paths.
//!
//! Inference runs the chain as a filter: each incoming point is scored with
//! `P(z_t = 1 | x_{1:t})` and, when flagged, replaced by its predictive mean
//! before it enters later context windows.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::UniformAnomalyModel;
use crate::data::{ScaleParams, TimeSeries};
use crate::error::{Error, Result};
use crate::forecaster::{
    nll, GaussianPrediction, MlpForecaster, TrainMask, TrainOptions, DEFAULT_CONTEXT_LENGTH,
    DEFAULT_VARIANCE_FLOOR,
};
use crate::hmm::{
    filter_first, filter_step, forward_backward, sample_from_posterior, update_transitions,
    EmissionLogLik, HmmParams, IndicatorPath, IndicatorPosterior,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub n_epochs: usize,
    /// Indicator paths sampled (and forecaster epochs run) per M-step.
    pub n_samples: usize,
    /// Conventional all-nominal epochs before the first E-step.
    pub warmup_epochs: usize,
    /// Initial `P(z_{t+1} = 1 | z_t = 0)`.
    pub p01_init: f64,
    /// Initial `P(z_{t+1} = 1 | z_t = 1)`.
    pub p11_init: f64,
    pub smoothing: f64,
    pub detection_threshold: f64,
    /// Keep the chain's initial distribution fixed during re-estimation. The
    /// first context window carries no emission evidence, so re-estimating it
    /// only tracks the smoothing prior.
    pub freeze_initial: bool,
    pub context_length: usize,
    pub hidden_sizes: Vec<usize>,
    pub variance_floor: f64,
    pub train: TrainOptions,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_epochs: 10,
            n_samples: 20,
            warmup_epochs: 1,
            p01_init: 0.01,
            p11_init: 0.5,
            smoothing: 1.0,
            detection_threshold: 0.5,
            freeze_initial: true,
            context_length: DEFAULT_CONTEXT_LENGTH,
            hidden_sizes: vec![32, 32],
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            train: TrainOptions::default(),
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p01_init", self.p01_init),
            ("p11_init", self.p11_init),
            ("detection_threshold", self.detection_threshold),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0,1), got {p}")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::invalid("smoothing must be finite and >= 0"));
        }
        if self.context_length == 0 {
            return Err(Error::invalid("context_length must be >= 1"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be >= 1"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor < 1.0) {
            return Err(Error::invalid("variance_floor must lie in (0,1)"));
        }
        self.train.validate()
    }
}

/// Result of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub posterior: IndicatorPosterior,
    pub emissions: EmissionLogLik,
    /// Values substituted for sampled-anomalous inputs during the next M-step:
    /// the forecast means (raw values inside the first context window).
    pub impute_values: Vec<f64>,
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub log_evidence: f64,
    pub mean_train_nll: f64,
    pub expected_anomaly_fraction: f64,
    pub p01: f64,
    pub p11: f64,
}

/// E-step. `flagged` marks positions whose inputs are replaced by their own
/// forecast means while building context windows (the previous posterior's
/// anomalous points); the first `context_length` steps get equal emissions.
pub fn e_step(
    forecaster: &MlpForecaster,
    anomaly_model: &UniformAnomalyModel,
    hmm: &HmmParams,
    values: &[f64],
    flagged: &[bool],
) -> Result<EStep> {
    let l = forecaster.context_length();
    let (preds, _) = forecaster.forecast_self_imputed(values, flagged)?;
    let mut pairs = vec![[0.0, 0.0]; values.len()];
    let mut impute_values = values.to_vec();
    for (k, pred) in preds.iter().enumerate() {
        let t = k + l;
        pairs[t] = [-nll(pred, values[t]), anomaly_model.loglik(values[t])];
        impute_values[t] = pred.mean;
    }
    let emissions = EmissionLogLik::new(pairs)?;
    let posterior = forward_backward(&emissions, hmm);
    Ok(EStep {
        posterior,
        emissions,
        impute_values,
    })
}

/// Monte Carlo M-step. Trains `forecaster` in place for one epoch per sampled
/// path and returns the re-estimated chain together with the mean training
/// NLL over the epochs that ran.
pub fn m_step(
    forecaster: &mut MlpForecaster,
    hmm: &HmmParams,
    values: &[f64],
    estep: &EStep,
    config: &EmConfig,
    seed: u64,
) -> Result<(HmmParams, f64)> {
    let l = forecaster.context_length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = sample_from_posterior(&estep.posterior, hmm, config.n_samples, &mut rng);

    let mut losses = Vec::with_capacity(paths.len());
    for (s, path) in paths.iter().enumerate() {
        let epoch_seed = rng.next_u64();
        if !trainable(path, l) {
            log::warn!("sample {s}: every target sampled anomalous, skipping epoch");
            continue;
        }
        let mask = TrainMask::new(
            path.states.iter().map(|&z| z == 1).collect(),
            estep.impute_values.clone(),
        )?;
        losses.push(forecaster.train_epoch(values, &mask, &config.train, epoch_seed)?);
    }
    if losses.is_empty() {
        return Err(Error::Degenerate(
            "every sampled path flagged all targets anomalous".into(),
        ));
    }

    let mut updated = update_transitions(&paths, config.smoothing)?;
    if config.freeze_initial {
        updated = HmmParams::new(hmm.initial(), updated.transition())?;
    }
    Ok((updated, losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Everything needed to score and forecast new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDetector {
    pub forecaster: MlpForecaster,
    pub hmm: HmmParams,
    pub anomaly_model: UniformAnomalyModel,
    pub scaler: ScaleParams,
    /// Final E-step on the (scaled) training data; `None` for conventionally
    /// trained models, which never infer the indicator.
    pub train_posterior: Option<IndicatorPosterior>,
    pub detection_threshold: f64,
    pub history: Vec<EpochStats>,
}

struct Prepared {
    scaled: Vec<f64>,
    scaler: ScaleParams,
    anomaly_model: UniformAnomalyModel,
    forecaster: MlpForecaster,
    rng: ChaCha8Rng,
}

fn prepare(series: &TimeSeries, config: &EmConfig) -> Result<Prepared> {
    config.validate()?;
    if series.len() <= config.context_length + 1 {
        return Err(Error::invalid(format!(
            "training series of length {} is too short for context length {}",
            series.len(),
            config.context_length
        )));
    }
    let scaler = ScaleParams::fit(series.values())?;
    let scaled: Vec<f64> = series.values().iter().map(|&x| scaler.scale(x)).collect();
    let anomaly_model = UniformAnomalyModel::fit(&scaled)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let forecaster = MlpForecaster::new(
        config.context_length,
        &config.hidden_sizes,
        config.variance_floor,
        rng.next_u64(),
    )?;
    Ok(Prepared {
        scaled,
        scaler,
        anomaly_model,
        forecaster,
        rng,
    })
}

fn plain_epochs(
    forecaster: &mut MlpForecaster,
    values: &[f64],
    epochs: usize,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mask = TrainMask::all_nominal(values.len());
    for _ in 0..epochs {
        forecaster.train_epoch(values, &mask, opts, rng.next_u64())?;
    }
    Ok(())
}

/// Full Monte Carlo EM training on a raw (unscaled) training series.
pub fn run_em(series: &TimeSeries, config: &EmConfig) -> Result<TrainedDetector> {
    let Prepared {
        scaled,
        scaler,
        anomaly_model,
        mut forecaster,
        mut rng,
    } = prepare(series, config)?;
    plain_epochs(
        &mut forecaster,
        &scaled,
        config.warmup_epochs,
        &config.train,
        &mut rng,
    )?;

    let mut hmm = HmmParams::from_priors(config.p01_init, config.p11_init)?;
    let mut flagged = vec![false; scaled.len()];
    let mut history = Vec::with_capacity(config.n_epochs);
    for epoch in 0..config.n_epochs {
        let estep = e_step(&forecaster, &anomaly_model, &hmm, &scaled, &flagged)?;
        let (next, mean_nll) = m_step(&mut forecaster, &hmm, &scaled, &estep, config, rng.next_u64())?;
        let stats = EpochStats {
            log_evidence: estep.posterior.loglik,
            mean_train_nll: mean_nll,
            expected_anomaly_fraction: estep.posterior.marginals.iter().sum::<f64>()
                / scaled.len() as f64,
            p01: next.transition()[0][1],
            p11: next.transition()[1][1],
        };
        log::debug!("epoch {epoch}: {stats:?}");
        history.push(stats);
        flagged = estep
            .posterior
            .marginals
            .iter()
            .map(|&p| p > config.detection_threshold)
            .collect();
        hmm = next;
    }

    let final_step = e_step(&forecaster, &anomaly_model, &hmm, &scaled, &flagged)?;
    Ok(TrainedDetector {
        forecaster,
        hmm,
        anomaly_model,
        scaler,
        train_posterior: Some(final_step.posterior),
        detection_threshold: config.detection_threshold,
        history,
    })
}

/// Conventional training treating every point as nominal, with the same epoch
/// budget as [`run_em`]: `warmup_epochs + n_epochs * n_samples` epochs. The
/// chain stays at its prior initialization.
pub fn train_conventional(series: &TimeSeries, config: &EmConfig) -> Result<TrainedDetector> {
    let Prepared {
        scaled,
        scaler,
        anomaly_model,
        mut forecaster,
        mut rng,
    } = prepare(series, config)?;
    let epochs = config.warmup_epochs + config.n_epochs * config.n_samples;
    plain_epochs(&mut forecaster, &scaled, epochs, &config.train, &mut rng)?;
    Ok(TrainedDetector {
        forecaster,
        hmm: HmmParams::from_priors(config.p01_init, config.p11_init)?,
        anomaly_model,
        scaler,
        train_posterior: None,
        detection_threshold: config.detection_threshold,
        history: Vec::new(),
    })
}

/// Output of online filtering over a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Filtered `P(z_t = 1 | x_{1:t})`.
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    /// The stream as fed to the forecaster, in original units: flagged points
    /// replaced by their predictive mean.
    pub replaced_values: Vec<f64>,
    /// One-step predictions in original units; `None` inside the first context window.
    pub predictions: Vec<Option<GaussianPrediction>>,
}

impl TrainedDetector {
    pub fn context_length(&self) -> usize {
        self.forecaster.context_length()
    }

    /// Online filtering at the detector's own threshold.
    pub fn detect_online(&self, series: &TimeSeries) -> Result<DetectionResult> {
        self.detect_online_at(series, self.detection_threshold)
    }

    pub fn detect_online_at(&self, series: &TimeSeries, threshold: f64) -> Result<DetectionResult> {
        let l = self.context_length();
        let raw = series.values();
        if raw.len() <= l {
            return Err(Error::invalid(format!(
                "series of length {} is too short for context length {l}",
                raw.len()
            )));
        }
        let scaled: Vec<f64> = raw.iter().map(|&x| self.scaler.scale(x)).collect();
        let mut inputs = scaled.clone();
        let mut replaced_values = raw.to_vec();
        let mut scores = Vec::with_capacity(raw.len());
        let mut flags = Vec::with_capacity(raw.len());
        let mut predictions = Vec::with_capacity(raw.len());
        let mut belief = [1.0, 0.0];

        for t in 0..raw.len() {
            let pred = if t >= l {
                Some(self.forecaster.forecast(&inputs[t - l..t])?)
            } else {
                None
            };
            let emission = match &pred {
                Some(p) => [-nll(p, scaled[t]), self.anomaly_model.loglik(scaled[t])],
                None => [0.0, 0.0],
            };
            belief = if t == 0 {
                filter_first(emission, &self.hmm)?
            } else {
                filter_step(belief, emission, &self.hmm)?
            };
            let flag = belief[1] > threshold;
            if let (true, Some(p)) = (flag, &pred) {
                inputs[t] = p.mean;
                replaced_values[t] = self.scaler.unscale(p.mean);
            }
            scores.push(belief[1]);
            flags.push(flag);
            predictions.push(pred.map(|p| self.unscale_prediction(&p)));
        }
        Ok(DetectionResult {
            scores,
            flags,
            replaced_values,
            predictions,
        })
    }

    /// One-step predictions (original units) for every `t >= context_length`
    /// from the same filtering pass as [`Self::detect_online`].
    pub fn forecast_robust(&self, series: &TimeSeries) -> Result<Vec<GaussianPrediction>> {
        Ok(self
            .detect_online(series)?
            .predictions
            .into_iter()
            .flatten()
            .collect())
    }

    /// Rolling one-step predictions (original units) on the raw series, with no
    /// replacement.
    pub fn forecast_plain(&self, series: &TimeSeries) -> Result<Vec<GaussianPrediction>> {
        let scaled: Vec<f64> = series.values().iter().map(|&x| self.scaler.scale(x)).collect();
        Ok(self
            .forecaster
            .forecast_series(&scaled, &TrainMask::all_nominal(scaled.len()))?
            .iter()
            .map(|p| self.unscale_prediction(p))
            .collect())
    }

    fn unscale_prediction(&self, p: &GaussianPrediction) -> GaussianPrediction {
        GaussianPrediction {
            mean: self.scaler.unscale(p.mean),
            variance: p.variance * self.scaler.iqr_scale * self.scaler.iqr_scale,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let detector: Self = serde_json::from_str(text)?;
        detector.validate()?;
        Ok(detector)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        self.forecaster.validate()?;
        self.anomaly_model.validate()?;
        HmmParams::new(self.hmm.initial(), self.hmm.transition())?;
        if !(self.scaler.iqr_scale > 0.0 && self.scaler.median.is_finite()) {
            return Err(Error::invalid("invalid scaler"));
        }
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            return Err(Error::invalid("detection threshold must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Paths whose every target is anomalous cannot train the forecaster.
fn trainable(path: &IndicatorPath, context_length: usize) -> bool {
    path.states.iter().skip(context_length).any(|&z| z == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EmConfig {
        EmConfig {
            n_epochs: 2,
            n_samples: 2,
            context_length: 4,
            hidden_sizes: vec![6],
            seed: 5,
            ..Default::default()
        }
    }

    fn series(n: usize) -> TimeSeries {
        TimeSeries::from_values((0..n).map(|t| (t as f64 * 0.4).sin()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        for bad in [
            EmConfig { p01_init: 0.0, ..Default::default() },
            EmConfig { p11_init: 1.0, ..Default::default() },
            EmConfig { n_samples: 0, ..Default::default() },
            EmConfig { detection_threshold: 1.5, ..Default::default() },
            EmConfig { smoothing: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn e_step_first_window_follows_the_chain() {
        let cfg = small_config();
        let f = MlpForecaster::new(4, &[6], 1e-4, 1).unwrap();
        let values: Vec<f64> = (0..30).map(|t| (t as f64 * 0.4).sin()).collect();
        let a = UniformAnomalyModel::fit(&values).unwrap();
        let hmm = HmmParams::from_priors(cfg.p01_init, cfg.p11_init).unwrap();
        let es = e_step(&f, &a, &hmm, &values, &vec![false; 30]).unwrap();
        assert!(es.emissions.as_slice()[..4].iter().all(|p| *p == [0.0, 0.0]));
        assert_eq!(es.impute_values[..4], values[..4]);
        assert_eq!(es.posterior.len(), 30);
    }

    #[test]
    fn m_step_single_sample_runs_one_epoch() {
        let cfg = EmConfig { n_samples: 1, ..small_config() };
        let values: Vec<f64> = (0..40).map(|t| (t as f64 * 0.4).sin()).collect();
        let mut f = MlpForecaster::new(4, &[6], 1e-4, 1).unwrap();
        let a = UniformAnomalyModel::fit(&values).unwrap();
        let hmm = HmmParams::from_priors(0.01, 0.5).unwrap();
        let es = e_step(&f, &a, &hmm, &values, &vec![false; 40]).unwrap();

        // Force an all-nominal posterior so the single epoch is a plain epoch.
        let mut forced = es.clone();
        forced.posterior.forward_log.iter_mut().for_each(|m| *m = [0.0, -1e9]);
        let mut f_plain = f.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let _ = sample_from_posterior(&forced.posterior, &hmm, 1, &mut rng);
        let epoch_seed = rng.next_u64();
        f_plain
            .train_epoch(&values, &TrainMask::all_nominal(40), &cfg.train, epoch_seed)
            .unwrap();

        let (next, _) = m_step(&mut f, &hmm, &values, &forced, &cfg, 77).unwrap();
        assert_eq!(f.params(), f_plain.params());
        // No anomalies sampled: 39 nominal-to-nominal transitions, smoothing 1.
        assert!((next.transition()[0][1] - 1.0 / 41.0).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_warmup_model() {
        let cfg = EmConfig { n_epochs: 0, warmup_epochs: 3, ..small_config() };
        let s = series(60);
        let em = run_em(&s, &cfg).unwrap();
        let conv = train_conventional(&s, &cfg).unwrap();
        assert_eq!(em.forecaster, conv.forecaster);
        assert!(em.history.is_empty());
        assert!(em.train_posterior.is_some());
        assert!(conv.train_posterior.is_none());
    }

    #[test]
    fn run_em_is_deterministic() {
        let s = series(80);
        let a = run_em(&s, &small_config()).unwrap();
        let b = run_em(&s, &small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_short_series() {
        assert!(run_em(&series(5), &small_config()).is_err());
    }

    #[test]
    fn extreme_threshold_never_replaces() {
        let s = series(60);
        let det = run_em(&s, &small_config()).unwrap();
        let res = det.detect_online_at(&s, 1.0 - 1e-15).unwrap();
        assert_eq!(res.replaced_values, s.values());
        assert!(res.scores.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let det = run_em(&series(60), &small_config()).unwrap();
        let back = TrainedDetector::from_json(&det.to_json().unwrap()).unwrap();
        assert_eq!(back, det);
        let bits = |d: &TrainedDetector| d.forecaster.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&det));
    }
}
