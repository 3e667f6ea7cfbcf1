//! Two-state latent anomaly indicator chain.
//!
//! State 0 is nominal, state 1 anomalous. All inference runs in log space so
//! that emission log-likelihoods as extreme as `-1e9` stay finite.
//!
//! Forward messages are stored normalized: `forward_log[t][k] = log P(z_t = k | x_{1:t})`.
//! The log-evidence is the sum of the per-step normalizers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every transition and initial probability.
pub const PROB_FLOOR: f64 = 1e-6;

const SUM_TOL: f64 = 1e-12;

pub const NOMINAL: u8 = 0;
pub const ANOMALOUS: u8 = 1;

#[inline]
pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Normalizes a non-negative pair and lifts the smaller entry to [`PROB_FLOOR`].
fn floored_pair(p: [f64; 2]) -> [f64; 2] {
    let total = p[0] + p[1];
    let (a, b) = if total > 0.0 {
        (p[0] / total, p[1] / total)
    } else {
        (0.5, 0.5)
    };
    if a < PROB_FLOOR {
        [PROB_FLOOR, 1.0 - PROB_FLOOR]
    } else if b < PROB_FLOOR {
        [1.0 - PROB_FLOOR, PROB_FLOOR]
    } else {
        [a, b]
    }
}

fn check_pair(p: &[f64; 2], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(PROB_FLOOR..=1.0).contains(&v)) {
        return Err(Error::invalid(format!(
            "{what} entries must lie in [{PROB_FLOOR}, 1], got {p:?}"
        )));
    }
    if (p[0] + p[1] - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("{what} must sum to 1, got {p:?}")));
    }
    Ok(())
}

/// Initial distribution and row-stochastic transition matrix;
/// `transition[i][j] = P(z_{t+1} = j | z_t = i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    initial: [f64; 2],
    transition: [[f64; 2]; 2],
}

impl HmmParams {
    pub fn new(initial: [f64; 2], transition: [[f64; 2]; 2]) -> Result<Self> {
        check_pair(&initial, "initial distribution")?;
        check_pair(&transition[0], "transition row 0")?;
        check_pair(&transition[1], "transition row 1")?;
        Ok(Self {
            initial,
            transition,
        })
    }

    /// Builds valid parameters from arbitrary non-negative weights by
    /// normalizing each row and applying the probability floor.
    pub fn floored(initial: [f64; 2], transition: [[f64; 2]; 2]) -> Self {
        Self {
            initial: floored_pair(initial),
            transition: [floored_pair(transition[0]), floored_pair(transition[1])],
        }
    }

    /// Chain initialized from prior knowledge: `p01 = P(1 | 0)` (expected
    /// anomaly rate) and `p11 = P(1 | 1)` (expected anomalous-run persistence).
    /// The initial distribution is `(1 - p01, p01)`.
    pub fn from_priors(p01: f64, p11: f64) -> Result<Self> {
        for (name, p) in [("p01", p01), ("p11", p11)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0,1), got {p}")));
            }
        }
        Self::new([1.0 - p01, p01], [[1.0 - p01, p01], [1.0 - p11, p11]])
    }

    pub fn initial(&self) -> [f64; 2] {
        self.initial
    }

    pub fn transition(&self) -> [[f64; 2]; 2] {
        self.transition
    }

    fn log_initial(&self) -> [f64; 2] {
        [self.initial[0].ln(), self.initial[1].ln()]
    }

    fn log_transition(&self) -> [[f64; 2]; 2] {
        let t = &self.transition;
        [[t[0][0].ln(), t[0][1].ln()], [t[1][0].ln(), t[1][1].ln()]]
    }
}

/// Per-timestep `(log p(x_t | z_t = 0), log p(x_t | z_t = 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionLogLik(Vec<[f64; 2]>);

impl EmissionLogLik {
    pub fn new(pairs: Vec<[f64; 2]>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Degenerate("emission sequence is empty".into()));
        }
        if let Some(t) = pairs.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::NonFinite(t));
        }
        Ok(Self(pairs))
    }

    pub fn from_columns(nominal: &[f64], anomalous: &[f64]) -> Result<Self> {
        if nominal.len() != anomalous.len() {
            return Err(Error::ShapeMismatch {
                expected: nominal.len(),
                actual: anomalous.len(),
            });
        }
        Self::new(nominal.iter().zip(anomalous).map(|(&n, &a)| [n, a]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.0
    }
}

/// Smoothed posterior over the indicator chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorPosterior {
    /// `P(z_t = 1 | x_{1:T})` per timestep.
    pub marginals: Vec<f64>,
    /// Normalized forward messages, `log P(z_t | x_{1:t})`.
    pub forward_log: Vec<[f64; 2]>,
    /// `log p(x_{1:T})`.
    pub loglik: f64,
}

impl IndicatorPosterior {
    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    /// Filtered `P(z_t = 1 | x_{1:t})`.
    pub fn filtered(&self, t: usize) -> f64 {
        self.forward_log[t][1].exp()
    }
}

/// A sampled indicator path, one state per timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndicatorPath {
    pub states: Vec<u8>,
}

impl IndicatorPath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_anomalous(&self, t: usize) -> bool {
        self.states[t] == ANOMALOUS
    }

    pub fn anomaly_count(&self) -> usize {
        self.states.iter().filter(|&&s| s == ANOMALOUS).count()
    }
}

/// Normalizes a log-space pair; returns the normalized pair and the log normalizer.
#[inline]
fn log_normalize(v: [f64; 2]) -> ([f64; 2], f64) {
    let z = log_sum_exp2(v[0], v[1]);
    ([v[0] - z, v[1] - z], z)
}

fn forward(emissions: &EmissionLogLik, hmm: &HmmParams) -> (Vec<[f64; 2]>, f64) {
    let log_a = hmm.log_transition();
    let log_pi = hmm.log_initial();
    let e = emissions.as_slice();
    let mut alpha = Vec::with_capacity(e.len());
    let (first, mut loglik) = log_normalize([log_pi[0] + e[0][0], log_pi[1] + e[0][1]]);
    alpha.push(first);
    for em in &e[1..] {
        let prev = alpha.last().unwrap();
        let pred = [
            log_sum_exp2(prev[0] + log_a[0][0], prev[1] + log_a[1][0]),
            log_sum_exp2(prev[0] + log_a[0][1], prev[1] + log_a[1][1]),
        ];
        let (next, z) = log_normalize([pred[0] + em[0], pred[1] + em[1]]);
        loglik += z;
        alpha.push(next);
    }
    (alpha, loglik)
}

/// Exact smoothed marginals and log-evidence.
pub fn forward_backward(emissions: &EmissionLogLik, hmm: &HmmParams) -> IndicatorPosterior {
    let (alpha, loglik) = forward(emissions, hmm);
    let log_a = hmm.log_transition();
    let e = emissions.as_slice();
    let n = e.len();

    // beta is kept up to an arbitrary per-step constant; only ratios matter.
    let mut marginals = vec![0.0; n];
    let mut beta = [0.0f64; 2];
    for t in (0..n).rev() {
        let (post, _) = log_normalize([alpha[t][0] + beta[0], alpha[t][1] + beta[1]]);
        marginals[t] = post[1].exp().clamp(0.0, 1.0);
        if t > 0 {
            let w = [e[t][0] + beta[0], e[t][1] + beta[1]];
            let next = [
                log_sum_exp2(log_a[0][0] + w[0], log_a[0][1] + w[1]),
                log_sum_exp2(log_a[1][0] + w[0], log_a[1][1] + w[1]),
            ];
            beta = log_normalize(next).0;
        }
    }

    IndicatorPosterior {
        marginals,
        forward_log: alpha,
        loglik,
    }
}

/// Forward-filter / backward-sample draws from `posterior` (produced by
/// [`forward_backward`] with the same `hmm`).
pub fn sample_from_posterior<R: Rng + ?Sized>(
    posterior: &IndicatorPosterior,
    hmm: &HmmParams,
    n_samples: usize,
    rng: &mut R,
) -> Vec<IndicatorPath> {
    let log_a = hmm.log_transition();
    let alpha = &posterior.forward_log;
    let n = alpha.len();
    (0..n_samples)
        .map(|_| {
            let mut states = vec![NOMINAL; n];
            let draw = |rng: &mut R, log_p: [f64; 2]| -> u8 {
                let (p, _) = log_normalize(log_p);
                if rng.random::<f64>() < p[1].exp() {
                    ANOMALOUS
                } else {
                    NOMINAL
                }
            };
            states[n - 1] = draw(rng, alpha[n - 1]);
            for t in (0..n - 1).rev() {
                let next = states[t + 1] as usize;
                states[t] = draw(rng, [alpha[t][0] + log_a[0][next], alpha[t][1] + log_a[1][next]]);
            }
            IndicatorPath { states }
        })
        .collect()
}

/// `n_samples` exact joint-posterior paths, deterministic given `seed`.
pub fn sample_paths(
    emissions: &EmissionLogLik,
    hmm: &HmmParams,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<IndicatorPath>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let posterior = forward_backward(emissions, hmm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_from_posterior(&posterior, hmm, n_samples, &mut rng))
}

/// Re-estimates the chain from sampled paths using smoothed transition counts.
/// The initial distribution comes from the state frequencies at the first step.
pub fn update_transitions(paths: &[IndicatorPath], smoothing: f64) -> Result<HmmParams> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing must be finite and >= 0, got {smoothing}"
        )));
    }
    if !paths.iter().any(|p| p.len() >= 2) {
        return Err(Error::Degenerate(
            "need at least one path of length >= 2 to count transitions".into(),
        ));
    }
    let mut counts = [[0usize; 2]; 2];
    let mut first = [0usize; 2];
    let mut n_paths = 0usize;
    for path in paths.iter().filter(|p| !p.is_empty()) {
        n_paths += 1;
        first[path.states[0] as usize] += 1;
        for w in path.states.windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1;
        }
    }
    let smoothed = |c: usize, total: usize| (c as f64 + smoothing) / (total as f64 + 2.0 * smoothing);
    let row = |i: usize| {
        let total = counts[i][0] + counts[i][1];
        if total == 0 && smoothing == 0.0 {
            // Unvisited state without smoothing: no information, keep it uniform.
            [0.5, 0.5]
        } else {
            [smoothed(counts[i][0], total), smoothed(counts[i][1], total)]
        }
    };
    let initial = [smoothed(first[0], n_paths), smoothed(first[1], n_paths)];
    Ok(HmmParams::floored(initial, [row(0), row(1)]))
}

/// One predict-then-update filtering step from the belief at `t - 1`.
pub fn filter_step(prev_belief: [f64; 2], emission: [f64; 2], hmm: &HmmParams) -> Result<[f64; 2]> {
    if prev_belief.iter().any(|&p| !(0.0..=1.0).contains(&p))
        || (prev_belief[0] + prev_belief[1] - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "previous belief must be a probability vector, got {prev_belief:?}"
        )));
    }
    let log_a = hmm.log_transition();
    let lp = [prev_belief[0].ln(), prev_belief[1].ln()];
    let pred = [
        log_sum_exp2(lp[0] + log_a[0][0], lp[1] + log_a[1][0]),
        log_sum_exp2(lp[0] + log_a[0][1], lp[1] + log_a[1][1]),
    ];
    update_belief(pred, emission)
}

/// Filtering at the first timestep: update the chain's initial distribution
/// with the first emission, no transition.
pub fn filter_first(emission: [f64; 2], hmm: &HmmParams) -> Result<[f64; 2]> {
    update_belief(hmm.log_initial(), emission)
}

fn update_belief(log_prior: [f64; 2], emission: [f64; 2]) -> Result<[f64; 2]> {
    if emission.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid(format!("invalid emission {emission:?}")));
    }
    let post = [log_prior[0] + emission[0], log_prior[1] + emission[1]];
    let z = log_sum_exp2(post[0], post[1]);
    if z == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "belief has zero total mass after the update".into(),
        ));
    }
    let p1 = (post[1] - z).exp().clamp(0.0, 1.0);
    Ok([1.0 - p1, p1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hmm(initial: [f64; 2], transition: [[f64; 2]; 2]) -> HmmParams {
        HmmParams::new(initial, transition).unwrap()
    }

    fn em(pairs: &[[f64; 2]]) -> EmissionLogLik {
        EmissionLogLik::new(pairs.to_vec()).unwrap()
    }

    #[test]
    fn single_step_equal_emissions_keeps_prior() {
        let h = hmm([0.9, 0.1], [[0.9, 0.1], [0.5, 0.5]]);
        let post = forward_backward(&em(&[[-3.0, -3.0]]), &h);
        assert!((post.marginals[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn impossible_anomalous_state() {
        let h = hmm([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]]);
        let post = forward_backward(&em(&[[0.0, -1e9], [0.0, -1e9]]), &h);
        assert!(post.marginals.iter().all(|&m| m < 1e-300));
        assert!(post.loglik.is_finite());
    }

    #[test]
    fn forced_paths_are_reproduced() {
        let forced = [0u8, 1, 1, 0, 0, 1];
        let pairs: Vec<[f64; 2]> = forced
            .iter()
            .map(|&s| if s == 1 { [-1e9, 0.0] } else { [0.0, -1e9] })
            .collect();
        let h = HmmParams::from_priors(0.01, 0.5).unwrap();
        let paths = sample_paths(&em(&pairs), &h, 50, 3).unwrap();
        assert!(paths.iter().all(|p| p.states == forced));
    }

    #[test]
    fn sampling_is_seeded() {
        let h = HmmParams::from_priors(0.2, 0.5).unwrap();
        let e = em(&[[-1.0, -2.0], [-3.0, -1.0], [-1.0, -1.5], [-2.0, -2.0]]);
        assert_eq!(sample_paths(&e, &h, 30, 11).unwrap(), sample_paths(&e, &h, 30, 11).unwrap());
        assert!(sample_paths(&e, &h, 0, 11).is_err());
    }

    #[test]
    fn transition_counts_with_smoothing() {
        let paths = vec![
            IndicatorPath { states: vec![0, 0, 1] },
            IndicatorPath { states: vec![0, 1, 1] },
        ];
        let h = update_transitions(&paths, 1.0).unwrap();
        assert!((h.transition()[0][1] - 0.6).abs() < 1e-15);
        assert!((h.transition()[1][1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_state_path_is_floored() {
        let h = update_transitions(&[IndicatorPath { states: vec![0, 0, 0] }], 0.0).unwrap();
        let t = h.transition();
        assert_eq!(t[0][1], PROB_FLOOR);
        assert!((t[0][0] + t[0][1] - 1.0).abs() < 1e-12);
        assert!(t[1].iter().all(|&p| p >= PROB_FLOOR));
    }

    #[test]
    fn symmetric_paths_give_uniform_initial() {
        let paths = vec![
            IndicatorPath { states: vec![0, 1] },
            IndicatorPath { states: vec![1, 0] },
        ];
        assert_eq!(update_transitions(&paths, 0.0).unwrap().initial(), [0.5, 0.5]);
    }

    #[test]
    fn update_needs_a_transition() {
        assert!(update_transitions(&[IndicatorPath { states: vec![0] }], 1.0).is_err());
        assert!(update_transitions(&[], 1.0).is_err());
    }

    #[test]
    fn filter_step_equal_emissions_is_prediction() {
        let h = hmm([0.9, 0.1], [[0.9, 0.1], [0.5, 0.5]]);
        let prev = [0.7, 0.3];
        let b = filter_step(prev, [-2.0, -2.0], &h).unwrap();
        let want1 = 0.7 * 0.1 + 0.3 * 0.5;
        assert!((b[1] - want1).abs() < 1e-15);
    }

    #[test]
    fn filter_step_rejects_anomalous_state() {
        let h = hmm([0.9, 0.1], [[0.9, 0.1], [0.5, 0.5]]);
        let b = filter_step([1.0, 0.0], [0.0, -1e9], &h).unwrap();
        assert!(b[1] < 1e-300 && (b[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn filter_step_errors() {
        let h = HmmParams::from_priors(0.01, 0.5).unwrap();
        assert!(filter_step([0.5, 0.5], [f64::NEG_INFINITY, f64::NEG_INFINITY], &h).is_err());
        assert!(filter_step([0.6, 0.6], [0.0, 0.0], &h).is_err());
    }

    #[test]
    fn filtering_matches_last_forward_marginal() {
        let h = hmm([0.95, 0.05], [[0.97, 0.03], [0.4, 0.6]]);
        let pairs = [[-1.0, -2.5], [-7.0, -2.5], [-1.2, -2.5], [-0.9, -2.5], [-4.0, -2.5]];
        let post = forward_backward(&em(&pairs), &h);
        let mut belief = filter_first(pairs[0], &h).unwrap();
        for p in &pairs[1..] {
            belief = filter_step(belief, *p, &h).unwrap();
        }
        let last = pairs.len() - 1;
        assert!((belief[1] - post.filtered(last)).abs() < 1e-10);
        // Filtering and smoothing coincide at the final step.
        assert!((belief[1] - post.marginals[last]).abs() < 1e-10);
    }

    #[test]
    fn params_validation() {
        assert!(HmmParams::new([0.5, 0.6], [[0.5, 0.5], [0.5, 0.5]]).is_err());
        assert!(HmmParams::new([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]]).is_err());
        assert!(HmmParams::from_priors(0.0, 0.5).is_err());
        let h = HmmParams::from_priors(0.01, 0.5).unwrap();
        assert_eq!(h.initial(), [0.99, 0.01]);
    }

    #[test]
    fn extreme_emissions_stay_finite() {
        let h = HmmParams::from_priors(0.01, 0.5).unwrap();
        let post = forward_backward(&em(&[[1e9, -1e9], [-1e9, 1e9], [-1e9, -1e9]]), &h);
        assert!(post.loglik.is_finite());
        assert!(post.marginals.iter().all(|m| (0.0..=1.0).contains(m)));
        assert!(post.forward_log.iter().flatten().all(|v| v.is_finite()));
    }
}
