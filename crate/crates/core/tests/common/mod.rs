#![allow(dead_code)]

use mcem_anomaly::data::{generate_ar_sinusoid, generate_sinusoid, injected_positions};
use mcem_anomaly::{EmissionLogLik, HmmParams, MlpForecaster, TimeSeries};

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Enumerates all 2^T paths. Returns `(P(z_t = 1 | x), log p(x))`.
pub fn brute_force(emissions: &EmissionLogLik, hmm: &HmmParams) -> (Vec<f64>, f64) {
    let e = emissions.as_slice();
    let n = e.len();
    let init = hmm.initial();
    let a = hmm.transition();
    let mut joint = Vec::with_capacity(1 << n);
    for mask in 0..(1u32 << n) {
        let z = |t: usize| ((mask >> t) & 1) as usize;
        let mut lp = init[z(0)].ln() + e[0][z(0)];
        for t in 1..n {
            lp += a[z(t - 1)][z(t)].ln() + e[t][z(t)];
        }
        joint.push(lp);
    }
    let evidence = log_sum_exp(&joint);
    let marginals = (0..n)
        .map(|t| {
            let on: Vec<f64> = joint
                .iter()
                .enumerate()
                .filter(|(mask, _)| (mask >> t) & 1 == 1)
                .map(|(_, &lp)| lp)
                .collect();
            (log_sum_exp(&on) - evidence).exp()
        })
        .collect();
    (marginals, evidence)
}

/// Enumerated marginals of the first `t + 1` steps only (the filtered posterior).
pub fn brute_force_filtered(emissions: &EmissionLogLik, hmm: &HmmParams, t: usize) -> f64 {
    let prefix = EmissionLogLik::new(emissions.as_slice()[..=t].to_vec()).unwrap();
    brute_force(&prefix, hmm).0[t]
}

/// Max relative error between the analytic gradient and central differences
/// over the given coordinates. Coordinates where both are below `1e-8` in
/// magnitude count as agreeing.
pub fn gradient_check(model: &MlpForecaster, windows: &[Vec<f64>], targets: &[f64], coords: &[usize]) -> f64 {
    let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    let (_, grad) = model.loss_and_gradient(&refs, targets).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &k in coords {
        let mut plus = model.clone();
        plus.params_mut()[k] += h;
        let mut minus = model.clone();
        minus.params_mut()[k] -= h;
        let fp = plus.loss_and_gradient(&refs, targets).unwrap().0;
        let fm = minus.loss_and_gradient(&refs, targets).unwrap().0;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grad[k];
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

/// Sinusoid of length 1000, period 50, amplitude 1, noise 0.05, with 10
/// spikes of magnitude 5. Returns `(contaminated, spike positions, noise-free signal)`.
pub fn spiked_sinusoid(seed: u64) -> (TimeSeries, Vec<usize>, Vec<f64>) {
    let clean = generate_sinusoid(1000, 50.0, 1.0, 0.05, seed).unwrap();
    let truth = generate_sinusoid(1000, 50.0, 1.0, 0.0, seed).unwrap();
    let (dirty, spikes) = injected_positions(&clean, 0.01, 5.0, seed + 1).unwrap();
    (dirty, spikes, truth.values().to_vec())
}

/// One member of the synthetic forecasting corpus.
pub fn ar_series(length: usize, i: u64) -> TimeSeries {
    generate_ar_sinusoid(length, 0.6, 24.0, 1.0, 0.2, 100 + i).unwrap()
}

/// Targets whose input window (the `l` preceding points) contains a spike.
pub fn spike_window_targets(len: usize, l: usize, spikes: &[usize]) -> Vec<usize> {
    (l..len)
        .filter(|&t| spikes.iter().any(|&s| s < t && s + l >= t))
        .collect()
}
