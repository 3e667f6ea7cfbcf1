//! Point-adjusted F1 with a threshold sweep, plain F1, and MAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

#[inline]
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Any detection inside a labeled anomalous segment marks the whole segment
/// as detected. Flags outside labeled segments are left untouched.
pub fn point_adjust(flags: &[bool], labels: &[u8]) -> Result<Vec<bool>> {
    check_lengths(flags.len(), labels.len())?;
    let mut adjusted = flags.to_vec();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < labels.len() && labels[t] != 0 {
            t += 1;
        }
        if flags[start..t].iter().any(|&f| f) {
            adjusted[start..t].iter_mut().for_each(|f| *f = true);
        }
    }
    Ok(adjusted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrecisionRecall {
    /// Timestep-level precision, recall and F1; 0/0 ratios are 0.
    pub fn from_flags(flags: &[bool], labels: &[u8]) -> Result<Self> {
        check_lengths(flags.len(), labels.len())?;
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (&f, &l) in flags.iter().zip(labels) {
            match (f, l != 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            precision,
            recall,
            f1,
        })
    }
}

/// Unadjusted F1 of `scores > threshold`.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<PrecisionRecall> {
    let flags: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    PrecisionRecall::from_flags(&flags, labels)
}

/// Point-adjusted precision/recall/F1 of `scores > threshold`.
pub fn adjusted_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<PrecisionRecall> {
    check_lengths(scores.len(), labels.len())?;
    let flags: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    PrecisionRecall::from_flags(&point_adjust(&flags, labels)?, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_f1: f64,
    pub best_threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Best point-adjusted F1 over the thresholds `-inf`, every distinct score,
/// and `+inf`. Ties go to the higher threshold.
pub fn best_f1_sweep(scores: &[f64], labels: &[u8]) -> Result<SweepResult> {
    check_lengths(scores.len(), labels.len())?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut best: Option<SweepResult> = None;
    for &th in &thresholds {
        let pr = adjusted_f1(scores, labels, th)?;
        // Ascending thresholds: `>=` keeps the highest threshold among ties.
        if best.is_none_or(|b| pr.f1 >= b.best_f1) {
            best = Some(SweepResult {
                best_f1: pr.f1,
                best_threshold: th,
                precision: pr.precision,
                recall: pr.recall,
            });
        }
    }
    Ok(best.expect("threshold list is never empty"))
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), actuals.len())?;
    if predictions.is_empty() {
        return Err(Error::Degenerate("MAE of empty sequences".into()));
    }
    Ok(predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / predictions.len() as f64)
}

/// Detection metrics for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub name: String,
    pub best_f1: f64,
    pub best_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub mae: Option<f64>,
}

impl SeriesMetrics {
    pub fn from_sweep(name: impl Into<String>, sweep: SweepResult, mae: Option<f64>) -> Self {
        Self {
            name: name.into(),
            best_f1: sweep.best_f1,
            best_threshold: sweep.best_threshold,
            precision: sweep.precision,
            recall: sweep.recall,
            mae,
        }
    }
}

/// Aggregate over series: unweighted means of the per-series values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub best_f1: f64,
    /// Set only for single-series reports; thresholds are chosen per series.
    pub best_threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub mae: Option<f64>,
    pub per_series: Vec<SeriesMetrics>,
}

impl MetricReport {
    pub fn from_series(per_series: Vec<SeriesMetrics>) -> Result<Self> {
        if per_series.is_empty() {
            return Err(Error::Degenerate("no series to aggregate".into()));
        }
        let n = per_series.len() as f64;
        let mean = |f: fn(&SeriesMetrics) -> f64| per_series.iter().map(f).sum::<f64>() / n;
        let maes: Vec<f64> = per_series.iter().filter_map(|s| s.mae).collect();
        Ok(Self {
            best_f1: mean(|s| s.best_f1),
            best_threshold: (per_series.len() == 1).then(|| per_series[0].best_threshold),
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
            mae: (maes.len() == per_series.len()).then(|| maes.iter().sum::<f64>() / n),
            per_series,
        })
    }

    /// Key-value lines, `prefix.key = value`.
    pub fn to_kv_lines(&self, prefix: &str) -> Vec<(String, String)> {
        let mut out = vec![
            (format!("{prefix}.best_f1"), self.best_f1.to_string()),
            (format!("{prefix}.precision"), self.precision.to_string()),
            (format!("{prefix}.recall"), self.recall.to_string()),
        ];
        if let Some(th) = self.best_threshold {
            out.push((format!("{prefix}.best_threshold"), th.to_string()));
        }
        if let Some(m) = self.mae {
            out.push((format!("{prefix}.mae"), m.to_string()));
        }
        out.push((format!("{prefix}.n_series"), self.per_series.len().to_string()));
        for s in &self.per_series {
            let p = format!("{prefix}.series.{}", s.name);
            out.push((format!("{p}.best_f1"), s.best_f1.to_string()));
            out.push((format!("{p}.best_threshold"), s.best_threshold.to_string()));
            out.push((format!("{p}.precision"), s.precision.to_string()));
            out.push((format!("{p}.recall"), s.recall.to_string()));
            if let Some(m) = s.mae {
                out.push((format!("{p}.mae"), m.to_string()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_adjust_examples() {
        let labels = [0, 1, 1, 0];
        assert_eq!(
            point_adjust(&[false, false, true, false], &labels).unwrap(),
            vec![false, true, true, false]
        );
        assert_eq!(point_adjust(&[false; 4], &labels).unwrap(), vec![false; 4]);
        let flags = [true, false, true, true];
        assert_eq!(point_adjust(&flags, &[0; 4]).unwrap(), flags.to_vec());
        assert!(point_adjust(&[true], &[0, 1]).is_err());
    }

    #[test]
    fn adjusted_f1_examples() {
        let labels = [0, 1, 1, 0];
        let pr = adjusted_f1(&[0.1, 0.2, 0.9, 0.1], &labels, 0.5).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.f1), (1.0, 1.0, 1.0));

        let pr = adjusted_f1(&[0.9, 0.1, 0.1, 0.1], &labels, 0.5).unwrap();
        assert_eq!((pr.precision, pr.recall, pr.f1), (0.0, 0.0, 0.0));

        let pr = adjusted_f1(&[0.1; 4], &labels, 0.5).unwrap();
        assert_eq!(pr.f1, 0.0);

        // No labeled anomalies: recall and F1 are 0 by convention.
        let pr = adjusted_f1(&[0.9; 4], &[0; 4], 0.5).unwrap();
        assert_eq!((pr.recall, pr.f1), (0.0, 0.0));
    }

    #[test]
    fn plain_f1_does_not_adjust() {
        let pr = f1(&[0.1, 0.2, 0.9, 0.1], &[0, 1, 1, 0], 0.5).unwrap();
        assert_eq!(pr.precision, 1.0);
        assert_eq!(pr.recall, 0.5);
        assert!((pr.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_examples() {
        let labels = [0u8, 1, 1, 0, 0, 1];
        let scores: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let best = best_f1_sweep(&scores, &labels).unwrap();
        assert_eq!(best.best_f1, 1.0);

        // Constant scores: only all-ones (threshold -inf) or all-zeros flagging.
        let best = best_f1_sweep(&[0.3; 6], &labels).unwrap();
        let all_ones = PrecisionRecall::from_flags(&[true; 6], &labels).unwrap().f1;
        assert!((best.best_f1 - all_ones).abs() < 1e-15);
        assert_eq!(best.best_threshold, f64::NEG_INFINITY);

        // Reversed perfect scorer: the sweep still reports its best value.
        let reversed: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let best = best_f1_sweep(&reversed, &labels).unwrap();
        assert!((best.best_f1 - all_ones).abs() < 1e-15);
    }

    #[test]
    fn sweep_ties_prefer_higher_threshold() {
        // Thresholds 0.2 and 0.8 both detect the single segment without false positives.
        let labels = [0u8, 1, 1, 0];
        let best = best_f1_sweep(&[0.1, 0.8, 0.9, 0.2], &labels).unwrap();
        assert_eq!(best.best_f1, 1.0);
        assert_eq!(best.best_threshold, 0.8);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.5], &[0.25]).unwrap(), 0.25);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_aggregates_unweighted() {
        let a = SeriesMetrics { name: "a".into(), best_f1: 1.0, best_threshold: 0.5, precision: 1.0, recall: 1.0, mae: None };
        let b = SeriesMetrics { name: "b".into(), best_f1: 0.5, best_threshold: 0.1, precision: 0.25, recall: 1.0, mae: None };
        let r = MetricReport::from_series(vec![a, b]).unwrap();
        assert_eq!(r.best_f1, 0.75);
        assert!(r.best_threshold.is_none());
        assert!(r.mae.is_none());
        assert!(r.to_kv_lines("lai").iter().any(|(k, v)| k == "lai.series.b.best_f1" && v == "0.5"));
    }
}
