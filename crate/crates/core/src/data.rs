//! Univariate series ingestion and preparation: CSV loading, robust scaling,
//! temporal splits, subsampling, and seeded synthetic data with injected spikes.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guards `floor(frac * n)` against products such as `0.3 * 10 = 2.9999999999999996`.
const FLOOR_GUARD: f64 = 1e-9;

pub(crate) fn floor_count(frac: f64, n: usize) -> usize {
    (frac * n as f64 + FLOOR_GUARD).floor() as usize
}

/// A univariate real-valued series with an integer start index and optional
/// binary anomaly labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_index: i64,
    labels: Option<Vec<u8>>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, start_index: i64, labels: Option<Vec<u8>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("time series must be non-empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        if let Some(labels) = &labels {
            if labels.len() != values.len() {
                return Err(Error::ShapeMismatch {
                    expected: values.len(),
                    actual: labels.len(),
                });
            }
            if let Some(pos) = labels.iter().position(|&l| l > 1) {
                return Err(Error::invalid(format!(
                    "label at position {pos} is {}, expected 0 or 1",
                    labels[pos]
                )));
            }
        }
        Ok(Self {
            values,
            start_index,
            labels,
        })
    }

    /// Unlabeled series starting at index 0.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 0, None)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time index of the `i`-th point.
    pub fn index_at(&self, i: usize) -> i64 {
        self.start_index + i as i64
    }

    /// Same index and labels, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.start_index, self.labels.clone())
    }

    fn slice(&self, from: usize, to: usize) -> Result<Self> {
        Self::new(
            self.values[from..to].to_vec(),
            self.index_at(from),
            self.labels.as_ref().map(|l| l[from..to].to_vec()),
        )
    }

    /// Concatenates `other` after `self`, keeping `self`'s start index.
    /// Labels survive only if both sides carry them.
    pub fn concat(&self, other: &TimeSeries) -> Result<Self> {
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self::new(values, self.start_index, labels)
    }

    /// Last `n` points (or the whole series if shorter).
    pub fn tail(&self, n: usize) -> Result<Self> {
        let from = self.len().saturating_sub(n);
        self.slice(from, self.len())
    }

    /// `index,value[,label]` CSV with a header line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        match &self.labels {
            Some(labels) => {
                out.push_str("index,value,label\n");
                for (i, (v, l)) in self.values.iter().zip(labels).enumerate() {
                    out.push_str(&format!("{},{},{}\n", self.index_at(i), v, l));
                }
            }
            None => {
                out.push_str("index,value\n");
                for (i, v) in self.values.iter().enumerate() {
                    out.push_str(&format!("{},{}\n", self.index_at(i), v));
                }
            }
        }
        out
    }
}

/// Loads an `index,value[,label]` CSV with a one-line header. Columns past the
/// third are ignored.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv<R: std::io::Read>(reader: R) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut values = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut has_labels = None;
    let mut start_index = 0i64;

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        let field = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                row,
                column: name.into(),
                message: "missing field".into(),
            })
        };

        let index: i64 = field(0, "index")?.parse().map_err(|e| Error::Parse {
            row,
            column: "index".into(),
            message: format!("{e}"),
        })?;
        if row == 1 {
            start_index = index;
        }

        let raw = field(1, "value")?;
        let value: f64 = raw.parse().map_err(|_| Error::Parse {
            row,
            column: "value".into(),
            message: format!("cannot parse {raw:?} as a real number"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                row,
                column: "value".into(),
                message: format!("non-finite value {raw:?}"),
            });
        }
        values.push(value);

        let labeled = *has_labels.get_or_insert(record.len() >= 3);
        if labeled {
            let raw = field(2, "label")?;
            let label = match raw {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        row,
                        column: "label".into(),
                        message: format!("label {other:?} is not 0 or 1"),
                    })
                }
            };
            labels.push(label);
        }
    }

    let labels = has_labels.unwrap_or(false).then_some(labels);
    TimeSeries::new(values, start_index, labels)
}

/// Median / inter-quartile-range scaler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub median: f64,
    pub iqr_scale: f64,
}

impl ScaleParams {
    /// Quartiles use linear interpolation between order statistics. A zero
    /// IQR falls back to a unit divisor.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("cannot scale an empty series".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = quantile_sorted(&sorted, 0.5);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let iqr_scale = if iqr > 0.0 { iqr } else { 1.0 };
        Ok(Self { median, iqr_scale })
    }

    pub fn identity() -> Self {
        Self {
            median: 0.0,
            iqr_scale: 1.0,
        }
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.median) / self.iqr_scale
    }

    pub fn unscale(&self, x: f64) -> f64 {
        x * self.iqr_scale + self.median
    }

    pub fn transform(&self, series: &TimeSeries) -> Result<TimeSeries> {
        series.with_values(series.values().iter().map(|&x| self.scale(x)).collect())
    }

    pub fn inverse_transform(&self, series: &TimeSeries) -> Result<TimeSeries> {
        series.with_values(series.values().iter().map(|&x| self.unscale(x)).collect())
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits a [`ScaleParams`] on `series` and applies it.
pub fn robust_scale(series: &TimeSeries) -> Result<(TimeSeries, ScaleParams)> {
    let params = ScaleParams::fit(series.values())?;
    Ok((params.transform(series)?, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(Error::invalid(format!(
                "train_frac must lie in (0,1), got {train_frac}"
            )));
        }
        if !(0.0..1.0).contains(&val_frac) {
            return Err(Error::invalid(format!(
                "val_frac must lie in [0,1), got {val_frac}"
            )));
        }
        if train_frac + val_frac >= 1.0 {
            return Err(Error::invalid(format!(
                "train_frac + val_frac must be < 1, got {}",
                train_frac + val_frac
            )));
        }
        Ok(Self {
            train_frac,
            val_frac,
        })
    }
}

impl Default for SplitSpec {
    /// 40% train, 10% validation, last 50% test.
    fn default() -> Self {
        Self {
            train_frac: 0.4,
            val_frac: 0.1,
        }
    }
}

/// Contiguous temporal split. The validation part is `None` when it is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: TimeSeries,
    pub val: Option<TimeSeries>,
    pub test: TimeSeries,
}

pub fn split(series: &TimeSeries, spec: SplitSpec) -> Result<Split> {
    let spec = SplitSpec::new(spec.train_frac, spec.val_frac)?;
    let n = series.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "series of length {n} is too short to split"
        )));
    }
    let n_train = floor_count(spec.train_frac, n);
    let n_val = floor_count(spec.val_frac, n);
    if n_train == 0 {
        return Err(Error::Degenerate("train split is empty".into()));
    }
    if n_train + n_val >= n {
        return Err(Error::Degenerate("test split is empty".into()));
    }
    let val = (n_val > 0)
        .then(|| series.slice(n_train, n_train + n_val))
        .transpose()?;
    Ok(Split {
        train: series.slice(0, n_train)?,
        val,
        test: series.slice(n_train + n_val, n)?,
    })
}

/// Keeps every `factor`-th point starting at position 0.
pub fn subsample(series: &TimeSeries, factor: usize) -> Result<TimeSeries> {
    if factor == 0 {
        return Err(Error::invalid("subsampling factor must be >= 1"));
    }
    let values = series.values().iter().step_by(factor).copied().collect();
    let labels = series
        .labels()
        .map(|l| l.iter().step_by(factor).copied().collect());
    TimeSeries::new(values, series.start_index(), labels)
}

/// `amplitude * sin(2 pi t / period)` plus seeded Gaussian noise; all labels 0.
pub fn generate_sinusoid(
    length: usize,
    period: f64,
    amplitude: f64,
    noise_std: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if length == 0 {
        return Err(Error::invalid("length must be >= 1"));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::invalid(format!("period must be > 0, got {period}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::invalid("amplitude must be finite"));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::invalid(format!("noise_std must be >= 0, got {noise_std}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..length)
        .map(|t| {
            let clean = amplitude * (std::f64::consts::TAU * t as f64 / period).sin();
            clean + noise.sample(&mut rng)
        })
        .collect();
    TimeSeries::new(values, 0, Some(vec![0; length]))
}

/// Seeded AR(1) process with an additive sinusoidal component:
/// `s_t = phi * s_{t-1} + e_t`, `x_t = s_t + amplitude * sin(2 pi t / period)`.
pub fn generate_ar_sinusoid(
    length: usize,
    phi: f64,
    period: f64,
    amplitude: f64,
    noise_std: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if !(phi.abs() < 1.0) {
        return Err(Error::invalid(format!("|phi| must be < 1, got {phi}")));
    }
    let base = generate_sinusoid(length, period, amplitude, 0.0, seed)?;
    let noise = Normal::new(0.0, noise_std)
        .map_err(|_| Error::invalid(format!("noise_std must be >= 0, got {noise_std}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = 0.0;
    let values = base
        .values()
        .iter()
        .map(|&seasonal| {
            state = phi * state + noise.sample(&mut rng);
            seasonal + state
        })
        .collect();
    base.with_values(values)
}

/// Adds `+/- magnitude` spikes at `floor(rate * T)` distinct seeded positions
/// and marks them in the labels (OR-ed with any existing labels).
pub fn inject_point_outliers(
    series: &TimeSeries,
    rate: f64,
    magnitude: f64,
    seed: u64,
) -> Result<TimeSeries> {
    injected_positions(series, rate, magnitude, seed).map(|(s, _)| s)
}

/// Like [`inject_point_outliers`], also returning the spiked positions in draw order.
pub fn injected_positions(
    series: &TimeSeries,
    rate: f64,
    magnitude: f64,
    seed: u64,
) -> Result<(TimeSeries, Vec<usize>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("rate must lie in (0,1), got {rate}")));
    }
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::invalid(format!(
            "magnitude must be finite and > 0, got {magnitude}"
        )));
    }
    let n = series.len();
    let count = floor_count(rate, n);
    if count == 0 {
        return Err(Error::invalid(format!(
            "rate {rate} on {n} points injects no outliers (need rate * T >= 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = index::sample(&mut rng, n, count).into_vec();
    let mut values = series.values().to_vec();
    let mut labels = series
        .labels()
        .map(<[u8]>::to_vec)
        .unwrap_or_else(|| vec![0; n]);
    for &i in &positions {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        values[i] += sign * magnitude;
        labels[i] = 1;
    }
    Ok((
        TimeSeries::new(values, series.start_index(), Some(labels))?,
        positions,
    ))
}
