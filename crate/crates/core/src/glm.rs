//! Poisson regression with log link, fitted by Fisher scoring (Newton's
//! method for this family), plus point prediction and the test-set
//! log-likelihood utility.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Dataset, Schema};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const RIDGE: f64 = 1e-8;
const CONDITION_LIMIT: f64 = 1e12;
/// Iterates past this coefficient magnitude mean the MLE is running off to
/// infinity (e.g. a category with no positive outcomes).
const DIVERGENCE_BOUND: f64 = 15.0;

/// Maximum-likelihood coefficients with Fisher-information standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Whether the information matrix needed a ridge to stay invertible.
    pub ridged: bool,
}

impl RegressionFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }
}

/// Fits max_w Σ yᵢ·wᵀxᵢ − exp(wᵀxᵢ) by Fisher scoring with step halving.
///
/// Standard errors are sqrt(diag((XᵀΛX)⁻¹)) at the final iterate with
/// Λ = diag(exp(wᵀxᵢ)). Converged means the score sup-norm fell below 1e-8
/// with all coefficients bounded.
pub fn fit_poisson(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RegressionFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, target has {}",
            y.len()
        )));
    }
    if n < p {
        return Err(Error::Fit(format!(
            "need at least as many rows ({n}) as columns ({p})"
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Fit("target must be binary 0/1".into()));
    }

    let mut w = DVector::zeros(p);
    let mut ll = poisson_loglik(x, y, &w);
    let mut converged = false;
    let mut ridged = false;
    let mut iterations = 0;

    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = x * &w;
        let lambda = eta.map(f64::exp);
        let score = x.transpose() * (y - &lambda);
        let max_score = score.amax();

        if max_score < SCORE_TOL {
            converged = w.amax() <= DIVERGENCE_BOUND;
            break;
        }

        // expected information X^T diag(lambda) X
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let li = lambda[i];
            let xi = x.row(i);
            for a in 0..p {
                let xa = xi[a] * li;
                if xa == 0.0 {
                    continue;
                }
                for b in 0..p {
                    info[(a, b)] += xa * xi[b];
                }
            }
        }
        if needs_ridge(&info) {
            for d in 0..p {
                info[(d, d)] += RIDGE;
            }
            ridged = true;
        }
        let chol = match info.clone().cholesky() {
            Some(c) => c,
            None => {
                // one more ridge attempt before giving up
                let mut bumped = info.clone();
                for d in 0..p {
                    bumped[(d, d)] += RIDGE;
                }
                ridged = true;
                bumped.cholesky().ok_or_else(|| {
                    Error::Fit("information matrix is rank deficient beyond ridge rescue".into())
                })?
            }
        };
        let direction = chol.solve(&score);

        // step halving against log-likelihood decrease
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &w + step * &direction;
            let cand_ll = poisson_loglik(x, y, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 {
                w = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if w.iter().any(|v| !v.is_finite()) || w.amax() > DIVERGENCE_BOUND {
            converged = false;
            break;
        }
    }

    // standard errors from the information at the final iterate
    let eta = x * &w;
    let lambda = eta.map(f64::exp);
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let li = lambda[i];
        for a in 0..p {
            let xa = x[(i, a)] * li;
            if xa == 0.0 {
                continue;
            }
            for b in 0..p {
                info[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    if needs_ridge(&info) {
        for d in 0..p {
            info[(d, d)] += RIDGE;
        }
        ridged = true;
    }
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Fit("information matrix is rank deficient beyond ridge rescue".into()))?;
    let std_errors: Vec<f64> = (0..p).map(|d| cov[(d, d)].max(0.0).sqrt()).collect();

    Ok(RegressionFit {
        coefficients: w.iter().copied().collect(),
        std_errors,
        converged,
        iterations,
        ridged,
    })
}

/// One-hot encodes the dataset and fits.
pub fn fit_dataset(ds: &Dataset) -> Result<RegressionFit> {
    let (x, y) = ds.one_hot()?;
    fit_poisson(&x, &y)
}

fn needs_ridge(info: &DMatrix<f64>) -> bool {
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    !(min > 0.0) || max / min > CONDITION_LIMIT
}

fn poisson_loglik(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let eta = x * w;
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        ll += y[i] * eta[i] - eta[i].exp();
    }
    ll
}

/// Hard prediction of the analysis model: arg max over y ∈ {0, 1} of the
/// Poisson mass at rate e^{wᵀx̃}, which is 1 exactly when wᵀx̃ > 0. The tie
/// λ = 1 resolves to 0.
pub fn predict(w: &[f64], schema: &Schema, xs: &[usize]) -> Result<u8> {
    if w.len() != schema.one_hot_dim() {
        return Err(Error::DimensionMismatch(format!(
            "weights length {} != one-hot dimension {}",
            w.len(),
            schema.one_hot_dim()
        )));
    }
    let enc = schema.encode_row(xs);
    let eta: f64 = enc.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
    Ok(u8::from(eta > 0.0))
}

/// Predictive utility Σ y·η − e^η − ln(y!) over the test rows (the ln(y!)
/// term vanishes for binary targets); divided by the row count when
/// `normalize` is set.
pub fn test_log_likelihood(w: &[f64], test: &Dataset, normalize: bool) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if w.len() != test.schema().one_hot_dim() {
        return Err(Error::DimensionMismatch(format!(
            "weights length {} != one-hot dimension {}",
            w.len(),
            test.schema().one_hot_dim()
        )));
    }
    let mut total = 0.0;
    for row in test.rows() {
        let enc = test.schema().encode_row(&row.xs);
        let eta: f64 = enc.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        total += f64::from(row.y) * eta - eta.exp();
    }
    if normalize {
        total /= test.len() as f64;
    }
    Ok(total)
}
