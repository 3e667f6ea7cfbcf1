//! Trains conventional and latent-indicator models on a sinusoid with injected
//! spikes and prints how well each recovers the clean signal.

use std::time::Instant;

use mcem_anomaly::data::{generate_sinusoid, injected_positions};
use mcem_anomaly::em::{run_em, train_conventional, EmConfig};
use mcem_anomaly::TimeSeries;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let n_epochs: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let n_samples: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(20);

    let clean = generate_sinusoid(1000, 50.0, 1.0, 0.05, seed)?;
    let truth = generate_sinusoid(1000, 50.0, 1.0, 0.0, seed)?;
    let (dirty, spikes) = injected_positions(&clean, 0.01, 5.0, seed + 1)?;
    let config = EmConfig { n_epochs, n_samples, seed, ..Default::default() };

    let t0 = Instant::now();
    let lai = run_em(&dirty, &config)?;
    let t_lai = t0.elapsed();
    let conv = train_conventional(&dirty, &config)?;
    println!("training: lai {t_lai:?}, total {:?}", t0.elapsed());

    let post = &lai.train_posterior.as_ref().unwrap().marginals;
    let min_spike = spikes.iter().map(|&i| post[i]).fold(1.0, f64::min);
    let clean_ok = (0..dirty.len())
        .filter(|i| !spikes.contains(i))
        .filter(|&i| post[i] <= 0.1)
        .count() as f64
        / (dirty.len() - spikes.len()) as f64;
    println!("min posterior at spikes {min_spike:.4}, clean <= 0.1 fraction {clean_ok:.4}");
    for h in &lai.history {
        println!("  {h:?}");
    }

    let l = config.context_length;
    let in_spike_window: Vec<usize> = (l..dirty.len())
        .filter(|&t| spikes.iter().any(|&s| s < t && s >= t - l))
        .collect();
    let err = |preds: Vec<mcem_anomaly::GaussianPrediction>| -> f64 {
        in_spike_window
            .iter()
            .map(|&t| (preds[t - l].mean - truth.values()[t]).abs())
            .sum::<f64>()
            / in_spike_window.len() as f64
    };
    let series: &TimeSeries = &dirty;
    let lai_mae = err(lai.forecast_robust(series)?);
    let conv_mae = err(conv.forecast_plain(series)?);
    println!("spike-window MAE vs truth: lai {lai_mae:.4} conventional {conv_mae:.4} ratio {:.2}", conv_mae / lai_mae);
    let other: Vec<usize> = (l..dirty.len()).filter(|t| !in_spike_window.contains(t)).collect();
    let err_other = |preds: Vec<mcem_anomaly::GaussianPrediction>| -> f64 {
        other.iter().map(|&t| (preds[t - l].mean - truth.values()[t]).abs()).sum::<f64>() / other.len() as f64
    };
    println!("non-spike-window MAE: lai {:.4} conventional {:.4}", err_other(lai.forecast_robust(series)?), err_other(conv.forecast_plain(series)?));
    let det = lai.detect_online(series)?;
    println!("online flags at spikes: {:?}, total flags {}", spikes.iter().map(|&i| det.flags[i]).filter(|&f| f).count(), det.flags.iter().filter(|&&f| f).count());
    let lai_plain = err(lai.forecast_plain(series)?);
    println!("lai model without replacement: {lai_plain:.4}");
    Ok(())
}
