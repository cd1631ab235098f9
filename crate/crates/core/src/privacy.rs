//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism, noise
//! calibration against a target (ε, δ), and the clip-and-noise gradient
//! primitive.
//!
//! The per-step RDP of order α is the integer-order binomial-sum bound
//!
//! ```text
//! rdp(α) = ln( Σ_{k=0}^{α} C(α,k) (1-q)^{α-k} q^k e^{k(k-1)/(2σ²)} ) / (α-1)
//! ```
//!
//! composed linearly over steps and converted with
//! ε = rdp·T + ln(1/δ)/(α-1), minimised over the α grid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// A target or certified (ε, δ) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

/// Mechanism parameters of a completed (or planned) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub subsample_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub alpha_grid: Vec<u32>,
}

/// Integer RDP orders 2..=64. Sufficient for ε around 1; extend the grid for
/// very large noise multipliers where the conversion term dominates.
pub fn default_alpha_grid() -> Vec<u32> {
    (2..=64).collect()
}

impl AccountantState {
    pub fn new(subsample_rate: f64, noise_multiplier: f64, steps: u64) -> Result<Self> {
        Self::with_alpha_grid(subsample_rate, noise_multiplier, steps, default_alpha_grid())
    }

    pub fn with_alpha_grid(
        subsample_rate: f64,
        noise_multiplier: f64,
        steps: u64,
        alpha_grid: Vec<u32>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&subsample_rate) {
            return Err(Error::InvalidArgument(format!(
                "subsample rate must lie in [0, 1], got {subsample_rate}"
            )));
        }
        if !(noise_multiplier >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise multiplier must be nonnegative, got {noise_multiplier}"
            )));
        }
        if alpha_grid.iter().any(|&a| a < 2) {
            return Err(Error::InvalidArgument("alpha orders must be >= 2".into()));
        }
        Ok(AccountantState {
            subsample_rate,
            noise_multiplier,
            steps,
            alpha_grid,
        })
    }
}

/// Per-step Rényi divergence bound of order `alpha` for the
/// Poisson-subsampled Gaussian mechanism.
///
/// q = 0 touches no data and costs nothing; q = 1 is the plain Gaussian
/// mechanism with rdp = α/(2σ²). A zero noise multiplier yields an infinite
/// bound (no privacy).
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be an integer >= 2, got {alpha}"
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "subsample rate must lie in [0, 1], got {q}"
        )));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if !(sigma > 0.0) {
        return Ok(f64::INFINITY);
    }
    let a = f64::from(alpha);
    if q == 1.0 {
        return Ok(a / (2.0 * sigma * sigma));
    }
    // log-sum-exp over the binomial terms
    let ln_q = q.ln();
    let ln_1mq = (1.0 - q).ln();
    let terms: Vec<f64> = (0..=alpha)
        .map(|k| {
            let kf = f64::from(k);
            ln_binomial(alpha, k) + (a - kf) * ln_1mq + kf * ln_q
                + kf * (kf - 1.0) / (2.0 * sigma * sigma)
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    Ok(log_sum / (a - 1.0))
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    ln_gamma(f64::from(n) + 1.0) - ln_gamma(f64::from(k) + 1.0) - ln_gamma(f64::from(n - k) + 1.0)
}

/// Composed (ε, δ) certificate: min over the α grid of
/// T·rdp(α) + ln(1/δ)/(α−1). Zero steps cost nothing.
pub fn total_epsilon(state: &AccountantState, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if state.alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    if state.steps == 0 {
        return Ok(0.0);
    }
    let ln_inv_delta = -delta.ln();
    let mut best = f64::INFINITY;
    for &alpha in &state.alpha_grid {
        let rdp = rdp_subsampled_gaussian(state.subsample_rate, state.noise_multiplier, alpha)?;
        let eps = state.steps as f64 * rdp + ln_inv_delta / (f64::from(alpha) - 1.0);
        if eps < best {
            best = eps;
        }
    }
    Ok(best)
}

/// Calibration bracket for the noise multiplier.
const SIGMA_LO: f64 = 0.3;
const SIGMA_HI: f64 = 1e4;

/// Smallest noise multiplier (to relative `tol`) whose composed ε stays
/// within the target budget over `steps` steps at subsample rate `q`.
pub fn calibrate_sigma(target: &PrivacyBudget, q: f64, steps: u64, tol: f64) -> Result<f64> {
    if !(target.epsilon > 0.0) {
        return Err(Error::Calibration(format!(
            "target epsilon must be positive, got {}",
            target.epsilon
        )));
    }
    if steps == 0 {
        return Err(Error::Calibration("steps must be >= 1".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Calibration(format!(
            "tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        let state = AccountantState::new(q, sigma, steps)?;
        total_epsilon(&state, target.delta)
    };
    if eps_at(SIGMA_HI)? > target.epsilon {
        return Err(Error::Calibration(format!(
            "epsilon {} unreachable within sigma in [{SIGMA_LO}, {SIGMA_HI}]",
            target.epsilon
        )));
    }
    if eps_at(SIGMA_LO)? <= target.epsilon {
        // the bracket floor already over-delivers privacy
        return Ok(SIGMA_LO);
    }
    let mut lo = SIGMA_LO;
    let mut hi = SIGMA_HI;
    while (hi - lo) / hi > tol {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Clips each per-example gradient to Euclidean norm at most `clip_norm`,
/// sums, adds isotropic Gaussian noise with standard deviation
/// `sigma * clip_norm`, and divides by the batch size.
///
/// `sigma = 0` reduces to the clipped mean; an infinite `clip_norm` disables
/// clipping (only valid together with `sigma = 0`).
pub fn clip_and_noise(
    per_example_grads: &[Vec<f64>],
    clip_norm: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if per_example_grads.is_empty() {
        return Err(Error::InvalidArgument(
            "clip_and_noise needs at least one gradient".into(),
        ));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip norm must be positive, got {clip_norm}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma > 0.0 && !clip_norm.is_finite() {
        return Err(Error::InvalidArgument(
            "noising requires a finite clip norm".into(),
        ));
    }
    let dim = per_example_grads[0].len();
    let mut sum = vec![0.0; dim];
    for (i, g) in per_example_grads.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "gradient {i} has length {}, expected {dim}",
                g.len()
            )));
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v * scale;
        }
    }
    if sigma > 0.0 {
        let mut rng = rng_from(seed);
        let noise_std = sigma * clip_norm;
        for s in sum.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += noise_std * z;
        }
    }
    let b = per_example_grads.len() as f64;
    for s in sum.iter_mut() {
        *s /= b;
    }
    Ok(sum)
}
