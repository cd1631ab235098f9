//! Monte-Carlo predictive log-likelihood distributions, ranked Welch tests
//! and box-plot summaries.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::glm::test_log_likelihood;
use crate::rng::rng_from;
use crate::tabular::Dataset;

/// A set of log-likelihood draws with the context that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikSamples {
    pub values: Vec<f64>,
    pub scenario: String,
    pub party: String,
    /// Which estimate the samples describe: "local", "combined",
    /// "pooled_real", "drop_feature".
    pub arm: String,
    /// Sweep coordinate such as "fraction=0.5", "step=3", "keep_prob=0.25".
    pub detail: String,
    pub repeat: usize,
    pub seed: u64,
    pub normalized: bool,
}

impl LogLikSamples {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Stats("log-likelihood sample set is empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stats(
                "log-likelihood sample set contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Uncertainty summary of a fitted analysis: a diagonal Gaussian over the
/// coefficients, from (MLE, squared standard errors) for single fits or
/// (q̄, total variance) for pooled ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl CoefficientGaussian {
    pub fn from_fit(fit: &crate::glm::RegressionFit) -> Self {
        CoefficientGaussian {
            mean: fit.coefficients.clone(),
            variance: fit.std_errors.iter().map(|s| s * s).collect(),
        }
    }

    pub fn from_pooled(pooled: &crate::pooling::PooledFit) -> Self {
        CoefficientGaussian {
            mean: pooled.point_estimates.clone(),
            variance: pooled.total_variance.clone(),
        }
    }
}

/// Draws coefficient vectors from the diagonal Gaussian and records the test
/// log-likelihood of each draw.
#[allow(clippy::too_many_arguments)]
pub fn sample_ll_distribution(
    estimate: &CoefficientGaussian,
    test: &Dataset,
    n_draws: usize,
    normalize: bool,
    seed: u64,
    scenario: &str,
    party: &str,
    arm: &str,
    detail: &str,
    repeat: usize,
) -> Result<LogLikSamples> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let p = estimate.mean.len();
    if estimate.variance.len() != p {
        return Err(Error::DimensionMismatch(
            "mean and variance lengths differ".into(),
        ));
    }
    if estimate.variance.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "variance entries must be nonnegative".into(),
        ));
    }
    let std: Vec<f64> = estimate.variance.iter().map(|v| v.sqrt()).collect();
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(n_draws);
    let mut w = vec![0.0; p];
    for _ in 0..n_draws {
        for d in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            w[d] = estimate.mean[d] + std[d] * z;
        }
        values.push(test_log_likelihood(&w, test, normalize)?);
    }
    let samples = LogLikSamples {
        values,
        scenario: scenario.to_string(),
        party: party.to_string(),
        arm: arm.to_string(),
        detail: detail.to_string(),
        repeat,
        seed,
        normalized: normalize,
    };
    samples.validate()?;
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sided {
    /// H1: mean of the first sample exceeds the second.
    OneGreater,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test applied to mid-ranks of the pooled
/// samples. Ranking makes the test invariant under monotone transforms of
/// the raw values and robust to their non-normality.
pub fn ranked_welch_test(a: &[f64], b: &[f64], sided: Sided) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Stats(
            "ranked Welch test needs at least two samples per group".into(),
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Stats("samples must be finite".into()));
    }
    let ranks = midranks(a, b);
    let (ra, rb) = ranks.split_at(a.len());
    let (mean_a, var_a) = mean_var(ra);
    let (mean_b, var_b) = mean_var(rb);
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let se2 = var_a / na + var_b / nb;
    if se2 <= 0.0 {
        return Err(Error::Stats(
            "zero pooled variance: the rank statistic is undefined".into(),
        ));
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / ((var_a / na).powi(2) / (na - 1.0) + (var_b / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Stats(format!("invalid Student-t parameters: {e}")))?;
    let p = match sided {
        Sided::OneGreater => 1.0 - dist.cdf(t),
        Sided::Two => 2.0 * (1.0 - dist.cdf(t.abs())),
    };
    Ok(WelchResult {
        t,
        df,
        p: p.clamp(0.0, 1.0),
    })
}

/// Mid-ranks (ties averaged) of the pooled values, returned in input order:
/// first all of `a`, then all of `b`.
fn midranks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len() + b.len();
    let mut order: Vec<usize> = (0..n).collect();
    let value = |i: usize| if i < a.len() { a[i] } else { b[i - a.len()] };
    order.sort_by(|&i, &j| value(i).total_cmp(&value(j)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && value(order[end]) == value(order[start]) {
            end += 1;
        }
        // ranks are 1-based; ties share the average of their positions
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Five-number box summary: quantiles by linear interpolation, whiskers at
/// the furthest sample within 1.5 IQR of the box edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn summarize_box(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Stats("cannot summarize an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q25 = quantile_linear(&sorted, 0.25);
    let median = quantile_linear(&sorted, 0.5);
    let q75 = quantile_linear(&sorted, 0.75);
    let iqr = q75 - q25;
    let lo_fence = q25 - 1.5 * iqr;
    let hi_fence = q75 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|&v| v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    let outliers = sorted
        .iter()
        .filter(|&&v| v < whisker_low || v > whisker_high)
        .count();
    Ok(BoxStats {
        q25,
        median,
        q75,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Linear-interpolation quantile on a sorted slice: position p·(n−1).
fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
