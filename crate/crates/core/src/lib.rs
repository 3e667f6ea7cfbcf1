//! Latent anomaly indicators for probabilistic time-series forecasters.
//!
//! A windowed MLP Gaussian forecaster models nominal data, a uniform density
//! models anomalies, and a two-state hidden Markov chain marks each timestep
//! as nominal or anomalous. Training alternates exact posterior inference over
//! the chain with Monte Carlo updates of the forecaster on sampled nominal
//! points, so the forecaster never fits the anomalies it finds. At inference
//! time the chain runs as a filter that scores and replaces incoming anomalies.
//!
//! ```no_run
//! use mcem_anomaly::{data, em::{run_em, EmConfig}};
//!
//! let series = data::load_csv("series.csv")?;
//! let parts = data::split(&series, data::SplitSpec::default())?;
//! let detector = run_em(&parts.train, &EmConfig::default())?;
//! let result = detector.detect_online(&parts.test)?;
//! println!("max score {:?}", result.scores.iter().cloned().fold(0.0, f64::max));
//! # Ok::<(), mcem_anomaly::Error>(())
//! ```

pub mod anomaly;
pub mod data;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod forecaster;
pub mod hmm;

pub use anomaly::UniformAnomalyModel;
pub use data::{ScaleParams, SplitSpec, TimeSeries};
pub use em::{DetectionResult, EmConfig, TrainedDetector};
pub use error::{Error, Result};
pub use forecaster::{GaussianPrediction, MlpForecaster, TrainMask, TrainOptions};
pub use hmm::{EmissionLogLik, HmmParams, IndicatorPath, IndicatorPosterior};
