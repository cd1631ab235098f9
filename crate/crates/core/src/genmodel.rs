//! Two-part generative model over a categorical schema: a mixture of
//! product-of-categoricals for the regressors and a Poisson-regression head
//! (log link) for the binary target.
//!
//! Parameters live on simplices; [`UnconstrainedParams`] and [`ParamLayout`]
//! provide the softmax coordinates (last logit pinned to zero) used by
//! gradient-based inference.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tabular::{Dataset, Row, Schema};

const SIMPLEX_TOL: f64 = 1e-9;

/// Mixture weights, per-component category tables and regression weights for
/// one generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    schema: Schema,
    /// π, length R.
    mixture_weights: Vec<f64>,
    /// θ\[r\]\[j\]\[c\]: category probabilities of feature j in component r.
    component_tables: Vec<Vec<Vec<f64>>>,
    /// w over the one-hot encoding (intercept first).
    regression_weights: Vec<f64>,
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{name}: empty simplex")));
    }
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name}: entries must be finite and nonnegative"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!(
            "{name}: entries sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl GenerativeParams {
    pub fn new(
        schema: Schema,
        mixture_weights: Vec<f64>,
        component_tables: Vec<Vec<Vec<f64>>>,
        regression_weights: Vec<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        check_simplex("mixture_weights", &mixture_weights)?;
        let r = mixture_weights.len();
        if component_tables.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "{} component tables for {} mixture weights",
                component_tables.len(),
                r
            )));
        }
        for (ri, tables) in component_tables.iter().enumerate() {
            if tables.len() != schema.feature_count() {
                return Err(Error::DimensionMismatch(format!(
                    "component {ri} has {} feature tables, schema has {}",
                    tables.len(),
                    schema.feature_count()
                )));
            }
            for (j, table) in tables.iter().enumerate() {
                if table.len() != schema.cardinality(j) {
                    return Err(Error::DimensionMismatch(format!(
                        "component {ri} feature {j}: table length {} != cardinality {}",
                        table.len(),
                        schema.cardinality(j)
                    )));
                }
                check_simplex(&format!("theta[{ri}][{j}]"), table)?;
            }
        }
        if regression_weights.len() != schema.one_hot_dim() {
            return Err(Error::DimensionMismatch(format!(
                "regression weights length {} != one-hot dimension {}",
                regression_weights.len(),
                schema.one_hot_dim()
            )));
        }
        if regression_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "regression weights must be finite".into(),
            ));
        }
        Ok(GenerativeParams {
            schema,
            mixture_weights,
            component_tables,
            regression_weights,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn components(&self) -> usize {
        self.mixture_weights.len()
    }

    pub fn mixture_weights(&self) -> &[f64] {
        &self.mixture_weights
    }

    pub fn component_tables(&self) -> &[Vec<Vec<f64>>] {
        &self.component_tables
    }

    pub fn regression_weights(&self) -> &[f64] {
        &self.regression_weights
    }

    /// log p(x, y) = log Σ_r π_r Π_j θ_j^(r)(x_j) + y·η − e^η − ln(y!)
    /// with η = wᵀx̃, computed through log-sum-exp.
    pub fn log_density(&self, xs: &[usize], y: u64) -> Result<f64> {
        if xs.len() != self.schema.feature_count() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} features, schema has {}",
                xs.len(),
                self.schema.feature_count()
            )));
        }
        for (j, &x) in xs.iter().enumerate() {
            if x >= self.schema.cardinality(j) {
                return Err(Error::Schema(format!(
                    "category index {x} out of range for feature {j}"
                )));
            }
        }
        let mix = self.mixture_log_prob(xs);
        let eta = self.linear_predictor(xs);
        let yf = y as f64;
        Ok(mix + yf * eta - eta.exp() - ln_gamma(yf + 1.0))
    }

    /// log Σ_r π_r Π_j θ_j^(r)(x_j); requires valid indices.
    pub(crate) fn mixture_log_prob(&self, xs: &[usize]) -> f64 {
        let logs: Vec<f64> = (0..self.components())
            .map(|r| self.component_log_prob(r, xs))
            .collect();
        log_sum_exp(&logs)
    }

    pub(crate) fn component_log_prob(&self, r: usize, xs: &[usize]) -> f64 {
        let mut acc = self.mixture_weights[r].ln();
        for (j, &x) in xs.iter().enumerate() {
            acc += self.component_tables[r][j][x].ln();
        }
        acc
    }

    pub(crate) fn linear_predictor(&self, xs: &[usize]) -> f64 {
        let enc = self.schema.encode_row(xs);
        enc.iter()
            .zip(self.regression_weights.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Draws `n` rows: component from π, features from the component's
    /// tables, and a Poisson count with rate e^η truncated to {0, 1} so the
    /// synthetic target stays binary like the real data.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        let schema = std::sync::Arc::new(self.schema.clone());
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let r = sample_categorical(&self.mixture_weights, &mut rng);
            let xs: Vec<usize> = (0..self.schema.feature_count())
                .map(|j| sample_categorical(&self.component_tables[r][j], &mut rng))
                .collect();
            let lambda = self.linear_predictor(&xs).exp();
            let y = sample_binarized_poisson(lambda, &mut rng);
            rows.push(Row { xs, y });
        }
        Dataset::new(schema, rows, None).expect("sampled rows are schema-valid by construction")
    }

    /// Marginal distribution Σ_r π_r θ_j^(r) of one feature under the mixture.
    pub fn mixture_feature_marginal(&self, j: usize) -> Vec<f64> {
        let c = self.schema.cardinality(j);
        let mut out = vec![0.0; c];
        for (r, &pi) in self.mixture_weights.iter().enumerate() {
            for (k, item) in out.iter_mut().enumerate() {
                *item += pi * self.component_tables[r][j][k];
            }
        }
        out
    }

    /// Same model with the component indices permuted.
    pub fn permute_components(&self, perm: &[usize]) -> Result<GenerativeParams> {
        let r = self.components();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        GenerativeParams::new(
            self.schema.clone(),
            perm.iter().map(|&p| self.mixture_weights[p]).collect(),
            perm.iter()
                .map(|&p| self.component_tables[p].clone())
                .collect(),
            self.regression_weights.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GenerativeParams = serde_json::from_str(text)?;
        GenerativeParams::new(
            raw.schema,
            raw.mixture_weights,
            raw.component_tables,
            raw.regression_weights,
        )
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_binarized_poisson(lambda: f64, rng: &mut impl Rng) -> u8 {
    if !(lambda > 1e-300) {
        return 0;
    }
    // Beyond this rate P(draw = 0) underflows; skip the sampler.
    if lambda > 1e6 {
        return 1;
    }
    let draw: f64 = Poisson::new(lambda)
        .expect("finite positive rate")
        .sample(rng);
    u8::from(draw >= 1.0)
}

/// Softmax coordinates of [`GenerativeParams`]: per simplex a logit vector of
/// the same length with the last entry pinned to zero; regression weights
/// pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    pub schema: Schema,
    /// Length R, last entry 0.
    pub mixture_logits: Vec<f64>,
    /// \[r\]\[j\]\[c\], last entry of each table 0.
    pub table_logits: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

pub fn constrain(u: &UnconstrainedParams) -> Result<GenerativeParams> {
    let pi = softmax(&u.mixture_logits);
    let tables = u
        .table_logits
        .iter()
        .map(|per_feature| per_feature.iter().map(|t| softmax(t)).collect())
        .collect();
    GenerativeParams::new(u.schema.clone(), pi, tables, u.weights.clone())
}

/// Inverse of [`constrain`] for strictly positive simplices.
pub fn unconstrain(p: &GenerativeParams) -> UnconstrainedParams {
    UnconstrainedParams {
        schema: p.schema.clone(),
        mixture_logits: to_logits(&p.mixture_weights),
        table_logits: p
            .component_tables
            .iter()
            .map(|per_feature| per_feature.iter().map(|t| to_logits(t)).collect())
            .collect(),
        weights: p.regression_weights.clone(),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn to_logits(probs: &[f64]) -> Vec<f64> {
    let last = probs[probs.len() - 1].ln();
    probs.iter().map(|&p| p.ln() - last).collect()
}

/// Vectorised view of the unconstrained coordinates: the free logits (each
/// simplex drops its pinned last entry) followed by the regression weights.
/// This is the coordinate system the variational posterior lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    schema: Schema,
    components: usize,
}

impl ParamLayout {
    pub fn new(schema: Schema, components: usize) -> Result<Self> {
        schema.validate()?;
        if components == 0 {
            return Err(Error::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        Ok(ParamLayout { schema, components })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of free coordinates:
    /// (R − 1) + R·Σ_j (c_j − 1) + p.
    pub fn dim(&self) -> usize {
        let free_cats: usize = self
            .schema
            .features()
            .iter()
            .map(|f| f.categories.len() - 1)
            .sum();
        (self.components - 1) + self.components * free_cats + self.schema.one_hot_dim()
    }

    pub fn constrain_flat(&self, z: &[f64]) -> Result<GenerativeParams> {
        constrain(&self.unflatten(z)?)
    }

    pub fn unconstrain_to_flat(&self, p: &GenerativeParams) -> Result<Vec<f64>> {
        if p.schema != self.schema || p.components() != self.components {
            return Err(Error::DimensionMismatch(
                "params do not match layout".into(),
            ));
        }
        Ok(self.flatten(&unconstrain(p)))
    }

    pub fn flatten(&self, u: &UnconstrainedParams) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend_from_slice(&u.mixture_logits[..self.components - 1]);
        for per_feature in &u.table_logits {
            for t in per_feature {
                z.extend_from_slice(&t[..t.len() - 1]);
            }
        }
        z.extend_from_slice(&u.weights);
        z
    }

    pub fn unflatten(&self, z: &[f64]) -> Result<UnconstrainedParams> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "flat vector length {} != layout dimension {}",
                z.len(),
                self.dim()
            )));
        }
        let r = self.components;
        let mut pos = 0;
        let mut mixture_logits = z[pos..pos + r - 1].to_vec();
        mixture_logits.push(0.0);
        pos += r - 1;
        let mut table_logits = Vec::with_capacity(r);
        for _ in 0..r {
            let mut per_feature = Vec::with_capacity(self.schema.feature_count());
            for j in 0..self.schema.feature_count() {
                let c = self.schema.cardinality(j);
                let mut t = z[pos..pos + c - 1].to_vec();
                t.push(0.0);
                pos += c - 1;
                per_feature.push(t);
            }
            table_logits.push(per_feature);
        }
        let weights = z[pos..].to_vec();
        Ok(UnconstrainedParams {
            schema: self.schema.clone(),
            mixture_logits,
            table_logits,
            weights,
        })
    }

    /// Gradient of log p(x, y | constrain(z)) with respect to the flat free
    /// coordinates, evaluated through the already-constrained parameters.
    pub fn loglik_grad(&self, params: &GenerativeParams, xs: &[usize], y: u64) -> Vec<f64> {
        let r = self.components;
        let logs: Vec<f64> = (0..r).map(|ri| params.component_log_prob(ri, xs)).collect();
        let total = log_sum_exp(&logs);
        // responsibilities γ_r; zero when the component has zero mass on x
        let gamma: Vec<f64> = logs
            .iter()
            .map(|&l| {
                if l == f64::NEG_INFINITY {
                    0.0
                } else {
                    (l - total).exp()
                }
            })
            .collect();

        let mut grad = Vec::with_capacity(self.dim());
        // π free logits: γ_k − π_k
        for k in 0..r - 1 {
            grad.push(gamma[k] - params.mixture_weights[k]);
        }
        // θ free logits: γ_r (1[x_j = c] − θ_j^(r)(c))
        for (ri, g) in gamma.iter().enumerate() {
            for (j, &x) in xs.iter().enumerate() {
                let table = &params.component_tables[ri][j];
                for (c, &th) in table[..table.len() - 1].iter().enumerate() {
                    let ind = if x == c { 1.0 } else { 0.0 };
                    grad.push(g * (ind - th));
                }
            }
        }
        // w: (y − λ) x̃
        let enc = self.schema.encode_row(xs);
        let eta: f64 = enc
            .iter()
            .zip(params.regression_weights.iter())
            .map(|(a, b)| a * b)
            .sum();
        let lambda = eta.exp();
        let resid = y as f64 - lambda;
        for v in enc {
            grad.push(resid * v);
        }
        grad
    }
}
