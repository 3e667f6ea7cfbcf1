//! Forecasting MAE on a synthetic AR + seasonal corpus, with and without
//! spikes injected into the training split.

use mcem_anomaly::data::generate_ar_sinusoid;
use mcem_anomaly::em::EmConfig;
use mcem_anomaly::experiment::{forecast_eval, Contamination, ForecastEvalConfig, ForecastEvalResult};
use mcem_anomaly::SplitSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let length: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let magnitude: f64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(10.0);
    let n_epochs: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(10);

    let mut results = Vec::new();
    for i in 0..5u64 {
        let series = generate_ar_sinusoid(length, 0.6, 24.0, 1.0, 0.2, 100 + i)?;
        let config = ForecastEvalConfig {
            em: EmConfig { n_epochs, seed: i, ..Default::default() },
            split: SplitSpec::default(),
            factor: 1,
            contamination: Some(Contamination { rate: 0.004, magnitude, seed: 200 + i }),
        };
        let t0 = std::time::Instant::now();
        let r = forecast_eval(&series, &config)?;
        println!("series {i}: {r:?} ({:?})", t0.elapsed());
        results.push(r);
    }
    let mean = ForecastEvalResult::mean(&results)?;
    println!("mean: {mean:?}");
    println!("degradation: {:?}", mean.degradation());
    Ok(())
}
