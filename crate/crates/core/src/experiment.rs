//! End-to-end experiment pipelines shared by the CLI and the acceptance suite:
//! detection benchmarks (latent-indicator training vs conventional training)
//! and forecasting under contaminated training data.

use serde::{Deserialize, Serialize};

use crate::data::{self, Split, SplitSpec, TimeSeries};
use crate::em::{run_em, train_conventional, EmConfig, TrainedDetector};
use crate::error::{Error, Result};
use crate::evaluation::{best_f1_sweep, mae, SweepResult};

/// Prepends the last `context_length` points of `prefix` to `target` so that
/// every target point gets a forecast.
pub fn with_context(prefix: &TimeSeries, target: &TimeSeries, context_length: usize) -> Result<TimeSeries> {
    prefix.tail(context_length)?.concat(target)
}

/// Everything before the test part: train followed by validation.
fn history(split: &Split) -> Result<TimeSeries> {
    match &split.val {
        Some(val) => split.train.concat(val),
        None => Ok(split.train.clone()),
    }
}

/// Detection metrics for one labeled series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    /// Test split, latent-indicator model, filtered scores.
    pub lai_test: SweepResult,
    /// Test split, conventionally trained model, filtered scores.
    pub baseline_test: SweepResult,
    /// Training split, smoothed posterior of the latent-indicator model.
    pub lai_train: SweepResult,
}

/// Splits a labeled series, trains both models on the train part, and scores
/// the test part online with the train/validation tail as warm context.
pub fn detection_eval(series: &TimeSeries, config: &EmConfig, split_spec: SplitSpec) -> Result<DetectionEval> {
    if series.labels().is_none() {
        return Err(Error::invalid("detection evaluation needs a labeled series"));
    }
    let parts = data::split(series, split_spec)?;
    let lai = run_em(&parts.train, config)?;
    let baseline = train_conventional(&parts.train, config)?;

    let l = config.context_length;
    let stream = with_context(&history(&parts)?, &parts.test, l)?;
    let test_labels = parts.test.labels().expect("labels survive the split");
    let n_ctx = stream.len() - parts.test.len();
    let score = |det: &TrainedDetector| -> Result<SweepResult> {
        let res = det.detect_online(&stream)?;
        best_f1_sweep(&res.scores[n_ctx..], test_labels)
    };

    let train_marginals = &lai
        .train_posterior
        .as_ref()
        .expect("run_em always records the training posterior")
        .marginals;
    Ok(DetectionEval {
        lai_test: score(&lai)?,
        baseline_test: score(&baseline)?,
        lai_train: best_f1_sweep(train_marginals, parts.train.labels().expect("labeled"))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub rate: f64,
    pub magnitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEvalConfig {
    pub em: EmConfig,
    pub split: SplitSpec,
    /// Subsampling stride applied before splitting.
    pub factor: usize,
    /// Spikes injected into the training split only.
    pub contamination: Option<Contamination>,
}

/// Test-set MAE pair for one training condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaePair {
    pub baseline: f64,
    pub lai: f64,
}

/// MAE on the clean test split, in units of the clean training split's
/// robust scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastEvalResult {
    pub clean: MaePair,
    pub contaminated: Option<MaePair>,
}

impl ForecastEvalResult {
    /// Contaminated minus clean MAE, `(baseline, lai)`.
    pub fn degradation(&self) -> Option<MaePair> {
        self.contaminated.map(|c| MaePair {
            baseline: c.baseline - self.clean.baseline,
            lai: c.lai - self.clean.lai,
        })
    }

    /// Unweighted mean over series.
    pub fn mean(results: &[ForecastEvalResult]) -> Result<ForecastEvalResult> {
        if results.is_empty() {
            return Err(Error::Degenerate("no results to average".into()));
        }
        let n = results.len() as f64;
        let avg = |pairs: &[MaePair]| MaePair {
            baseline: pairs.iter().map(|p| p.baseline).sum::<f64>() / n,
            lai: pairs.iter().map(|p| p.lai).sum::<f64>() / n,
        };
        let clean: Vec<MaePair> = results.iter().map(|r| r.clean).collect();
        let contaminated: Option<Vec<MaePair>> = results.iter().map(|r| r.contaminated).collect();
        Ok(ForecastEvalResult {
            clean: avg(&clean),
            contaminated: contaminated.map(|c| avg(&c)),
        })
    }
}

fn test_maes(train: &TimeSeries, parts: &Split, config: &EmConfig, unit: f64) -> Result<MaePair> {
    let lai = run_em(train, config)?;
    let baseline = train_conventional(train, config)?;
    let prefix = match &parts.val {
        Some(val) => train.concat(val)?,
        None => train.clone(),
    };
    let stream = with_context(&prefix, &parts.test, config.context_length)?;
    let actual = parts.test.values();
    let means = |preds: Vec<crate::forecaster::GaussianPrediction>| -> Vec<f64> {
        preds[preds.len() - actual.len()..].iter().map(|p| p.mean).collect()
    };
    Ok(MaePair {
        baseline: mae(&means(baseline.forecast_plain(&stream)?), actual)? / unit,
        lai: mae(&means(lai.forecast_robust(&stream)?), actual)? / unit,
    })
}

/// Trains conventional and latent-indicator models on the clean and (when
/// configured) contaminated training split and scores one-step forecasts on
/// the clean test split.
pub fn forecast_eval(series: &TimeSeries, config: &ForecastEvalConfig) -> Result<ForecastEvalResult> {
    let series = data::subsample(series, config.factor)?;
    let parts = data::split(&series, config.split)?;
    let unit = data::ScaleParams::fit(parts.train.values())?.iqr_scale;
    let clean = test_maes(&parts.train, &parts, &config.em, unit)?;
    let contaminated = match config.contamination {
        Some(c) => {
            let dirty = data::inject_point_outliers(&parts.train, c.rate, c.magnitude, c.seed)?;
            Some(test_maes(&dirty, &parts, &config.em, unit)?)
        }
        None => None,
    };
    Ok(ForecastEvalResult {
        clean,
        contaminated,
    })
}
