use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the observed range added on each side when fitting.
pub const RANGE_PADDING: f64 = 0.1;

/// Uniform density over the padded training range, used as the likelihood of
/// anomalous points. The density is applied everywhere, including outside
/// `[low, high]`, so that out-of-range points are never forced nominal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAnomalyModel {
    low: f64,
    high: f64,
    log_density: f64,
}

impl UniformAnomalyModel {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && high > low) {
            return Err(Error::invalid(format!(
                "uniform support needs finite low < high, got [{low}, {high}]"
            )));
        }
        Ok(Self {
            low,
            high,
            log_density: -(high - low).ln(),
        })
    }

    pub fn fit(train_values: &[f64]) -> Result<Self> {
        let (min, max) = train_values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(Error::Degenerate(
                "anomaly model needs at least two distinct training values".into(),
            ));
        }
        let pad = RANGE_PADDING * (max - min);
        Self::new(min - pad, max + pad)
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn log_density(&self) -> f64 {
        self.log_density
    }

    pub fn loglik(&self, _x: f64) -> f64 {
        self.log_density
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let fresh = Self::new(self.low, self.high)?;
        if (fresh.log_density - self.log_density).abs() > 1e-12 {
            return Err(Error::invalid("stored log density disagrees with the support"));
        }
        Ok(())
    }
}
