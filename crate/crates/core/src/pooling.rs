//! Assembly of combined training sets from local data plus other parties'
//! synthetic releases, and Rubin's-rules combination of the per-set fits.
//!
//! By construction nothing in this module accepts another party's raw
//! dataset: the only cross-party inputs are [`SyntheticRelease`] values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::RegressionFit;
use crate::tabular::{Dataset, Schema};

/// Privacy bookkeeping attached to a release: what the generator training
/// spent and against which budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantSummary {
    pub party: String,
    /// Training-set size actually used (after any subsampling).
    pub n: usize,
    pub subsample_rate: f64,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub epsilon_spent: f64,
    pub delta: f64,
    pub budget_epsilon: f64,
    pub seed: u64,
}

/// K synthetic data sets published by one party, each of the size of the
/// party's local training data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRelease {
    pub party: String,
    pub sets: Vec<Dataset>,
    pub accountant: AccountantSummary,
}

impl SyntheticRelease {
    pub fn new(party: String, sets: Vec<Dataset>, accountant: AccountantSummary) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidArgument(
                "a release needs at least one synthetic set".into(),
            ));
        }
        let schema = sets[0].schema();
        let size = sets[0].len();
        for (k, set) in sets.iter().enumerate() {
            if set.schema() != schema {
                return Err(Error::Schema(format!(
                    "release {party}: set {k} has a different schema"
                )));
            }
            if set.len() != size {
                return Err(Error::InvalidArgument(format!(
                    "release {party}: set {k} has {} rows, expected {size}",
                    set.len()
                )));
            }
        }
        Ok(SyntheticRelease {
            party,
            sets,
            accountant,
        })
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn set_size(&self) -> usize {
        self.sets[0].len()
    }

    /// Persists as a directory: `set_000.csv` … plus `release.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (k, set) in self.sets.iter().enumerate() {
            set.write_csv(dir.join(format!("set_{k:03}.csv")))?;
        }
        let meta = ReleaseMetadata {
            party: self.party.clone(),
            k: self.k(),
            set_size: self.set_size(),
            schema: self.sets[0].schema().clone(),
            accountant: self.accountant.clone(),
        };
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(dir.join("release.json"), text)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("release.json"))?;
        let meta: ReleaseMetadata = serde_json::from_str(&text)?;
        meta.schema.validate()?;
        let schema = std::sync::Arc::new(meta.schema);
        let mut sets = Vec::with_capacity(meta.k);
        for k in 0..meta.k {
            let set = Dataset::load_csv(dir.join(format!("set_{k:03}.csv")), schema.clone())?;
            sets.push(set);
        }
        SyntheticRelease::new(meta.party, sets, meta.accountant)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReleaseMetadata {
    party: String,
    k: usize,
    set_size: usize,
    schema: Schema,
    accountant: AccountantSummary,
}

/// Combined set k = local ∪ release_m.sets\[k\] over every provided release.
/// Local rows appear in every combined set.
pub fn assemble_combined_sets(
    local: &Dataset,
    releases: &[SyntheticRelease],
    k: usize,
) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    for release in releases {
        if release.k() < k {
            return Err(Error::InvalidArgument(format!(
                "release {} provides {} sets, need {k}",
                release.party,
                release.k()
            )));
        }
        if release.sets[0].schema() != local.schema() {
            return Err(Error::Schema(format!(
                "release {} schema differs from local data",
                release.party
            )));
        }
    }
    (0..k)
        .map(|i| local.concat(releases.iter().map(|r| &r.sets[i])))
        .collect()
}

/// Synthetic-only variant for ablation: combined sets without the local rows.
pub fn assemble_synthetic_only(releases: &[SyntheticRelease], k: usize) -> Result<Vec<Dataset>> {
    if releases.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic-only pooling needs at least one release".into(),
        ));
    }
    let empty = Dataset::empty(releases[0].sets[0].schema_arc());
    assemble_combined_sets(&empty, releases, k)
}

/// Rubin-combined point estimates with within/between variance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFit {
    pub point_estimates: Vec<f64>,
    pub total_variance: Vec<f64>,
    pub within: Vec<f64>,
    pub between: Vec<f64>,
    pub k: usize,
}

/// Classic rules: q̄ = mean of coefficients, W = mean squared standard error,
/// B = unbiased between-fit variance, total = W + (1 + 1/K)·B.
pub fn rubin_combine(fits: &[RegressionFit]) -> Result<PooledFit> {
    if fits.len() < 2 {
        return Err(Error::Pooling(format!(
            "Rubin's rules need K >= 2 fits, got {}",
            fits.len()
        )));
    }
    let p = fits[0].dim();
    for (i, fit) in fits.iter().enumerate() {
        if fit.dim() != p {
            return Err(Error::Pooling(format!(
                "fit {i} has {} coefficients, expected {p}",
                fit.dim()
            )));
        }
        if !fit.converged {
            return Err(Error::Pooling(format!(
                "fit {i} did not converge; drop it before combining"
            )));
        }
    }
    let k = fits.len();
    let kf = k as f64;
    let mut point = vec![0.0; p];
    let mut within = vec![0.0; p];
    for fit in fits {
        for d in 0..p {
            point[d] += fit.coefficients[d] / kf;
            within[d] += fit.std_errors[d] * fit.std_errors[d] / kf;
        }
    }
    let mut between = vec![0.0; p];
    for fit in fits {
        for d in 0..p {
            let dev = fit.coefficients[d] - point[d];
            between[d] += dev * dev / (kf - 1.0);
        }
    }
    let total_variance = within
        .iter()
        .zip(between.iter())
        .map(|(w, b)| w + (1.0 + 1.0 / kf) * b)
        .collect();
    Ok(PooledFit {
        point_estimates: point,
        total_variance,
        within,
        between,
        k,
    })
}

/// Drops non-converged fits with a count, then combines. Errors when fewer
/// than two fits survive.
pub fn pool_fits(fits: Vec<RegressionFit>) -> Result<(PooledFit, usize)> {
    let total = fits.len();
    let kept: Vec<RegressionFit> = fits.into_iter().filter(|f| f.converged).collect();
    let dropped = total - kept.len();
    if kept.len() < 2 {
        return Err(Error::Pooling(format!(
            "only {} of {total} fits converged; cannot combine",
            kept.len()
        )));
    }
    Ok((rubin_combine(&kept)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::tabular::{Row, Schema};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn fit(coeffs: Vec<f64>, ses: Vec<f64>) -> RegressionFit {
        RegressionFit {
            coefficients: coeffs,
            std_errors: ses,
            converged: true,
            iterations: 5,
            ridged: false,
        }
    }

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let schema = Arc::new(Schema::new(vec![("f", vec!["c0", "c1"])], "t").unwrap());
        let mut rng = rng_from(seed);
        let rows = (0..n)
            .map(|_| Row {
                xs: vec![rng.random_range(0..2)],
                y: rng.random_range(0..2u8),
            })
            .collect();
        Dataset::new(schema, rows, None).unwrap()
    }

    fn summary(party: &str) -> AccountantSummary {
        AccountantSummary {
            party: party.into(),
            n: 10,
            subsample_rate: 1.0,
            noise_multiplier: 5.0,
            steps: 100,
            epsilon_spent: 0.9,
            delta: 0.1,
            budget_epsilon: 1.0,
            seed: 1,
        }
    }

    #[test]
    fn rubin_hand_example() {
        // K=2, coefficients (0, 2), ses (1, 1):
        // mean 1, W = 1, B = 2, total = 1 + 1.5*2 = 4
        let pooled = rubin_combine(&[fit(vec![0.0], vec![1.0]), fit(vec![2.0], vec![1.0])]).unwrap();
        assert_eq!(pooled.point_estimates, vec![1.0]);
        assert_eq!(pooled.within, vec![1.0]);
        assert_eq!(pooled.between, vec![2.0]);
        assert_eq!(pooled.total_variance, vec![4.0]);
    }

    #[test]
    fn identical_fits_have_zero_between_variance() {
        let f = fit(vec![0.5, -1.0], vec![0.2, 0.3]);
        let pooled = rubin_combine(&[f.clone(), f.clone(), f.clone()]).unwrap();
        assert_eq!(pooled.point_estimates, f.coefficients);
        assert_eq!(pooled.between, vec![0.0, 0.0]);
        for (t, se) in pooled.total_variance.iter().zip(f.std_errors.iter()) {
            assert!((t - se * se).abs() < 1e-15);
        }
    }

    #[test]
    fn combine_order_invariance_and_errors() {
        let a = fit(vec![0.0], vec![1.0]);
        let b = fit(vec![2.0], vec![0.5]);
        let c = fit(vec![1.0], vec![2.0]);
        let p1 = rubin_combine(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let p2 = rubin_combine(&[c, a.clone(), b]).unwrap();
        for (x, y) in p1
            .point_estimates
            .iter()
            .chain(p1.total_variance.iter())
            .zip(p2.point_estimates.iter().chain(p2.total_variance.iter()))
        {
            assert!((x - y).abs() < 1e-12);
        }

        assert!(rubin_combine(&[a.clone()]).is_err());
        assert!(rubin_combine(&[a.clone(), fit(vec![0.0, 1.0], vec![1.0, 1.0])]).is_err());
        let mut bad = fit(vec![0.0], vec![1.0]);
        bad.converged = false;
        assert!(rubin_combine(&[a, bad]).is_err());
    }

    #[test]
    fn pool_fits_drops_nonconverged() {
        let good = fit(vec![1.0], vec![1.0]);
        let mut bad = fit(vec![99.0], vec![1.0]);
        bad.converged = false;
        let (pooled, dropped) =
            pool_fits(vec![good.clone(), bad.clone(), good.clone()]).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(pooled.k, 2);
        assert_eq!(pooled.point_estimates, vec![1.0]);
        assert!(pool_fits(vec![good, bad.clone(), bad]).is_err());
    }

    #[test]
    fn assemble_shapes_and_identity() {
        let local = small_dataset(20, 1);
        // zero releases: K copies of the local data
        let sets = assemble_combined_sets(&local, &[], 3).unwrap();
        assert_eq!(sets.len(), 3);
        for s in &sets {
            assert_eq!(s.rows(), local.rows());
        }

        let r1 = SyntheticRelease::new(
            "p1".into(),
            (0..3).map(|k| small_dataset(8, 100 + k)).collect(),
            summary("p1"),
        )
        .unwrap();
        let r2 = SyntheticRelease::new(
            "p2".into(),
            (0..3).map(|k| small_dataset(5, 200 + k)).collect(),
            summary("p2"),
        )
        .unwrap();
        let sets = assemble_combined_sets(&local, &[r1.clone(), r2.clone()], 3).unwrap();
        for s in &sets {
            assert_eq!(s.len(), 20 + 8 + 5);
        }
        // permuting release order yields the same multiset of rows
        let swapped = assemble_combined_sets(&local, &[r2.clone(), r1.clone()], 3).unwrap();
        for (a, b) in sets.iter().zip(swapped.iter()) {
            let mut ra: Vec<_> = a.rows().to_vec();
            let mut rb: Vec<_> = b.rows().to_vec();
            let key = |r: &Row| (r.xs.clone(), r.y);
            ra.sort_by_key(key);
            rb.sort_by_key(key);
            assert_eq!(ra, rb);
        }

        // asking for more sets than a release provides fails
        assert!(assemble_combined_sets(&local, &[r1], 4).is_err());
    }

    #[test]
    fn assemble_rejects_schema_mismatch() {
        let local = small_dataset(10, 1);
        let other_schema = Arc::new(Schema::new(vec![("g", vec!["x", "y"])], "t").unwrap());
        let foreign = Dataset::new(other_schema, vec![Row { xs: vec![0], y: 0 }], None).unwrap();
        let release =
            SyntheticRelease::new("p".into(), vec![foreign], summary("p")).unwrap();
        assert!(assemble_combined_sets(&local, &[release], 1).is_err());
    }

    #[test]
    fn release_roundtrips_through_directory() {
        let release = SyntheticRelease::new(
            "party_x".into(),
            (0..4).map(|k| small_dataset(12, 300 + k)).collect(),
            summary("party_x"),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("release");
        release.save_dir(&path).unwrap();
        let loaded = SyntheticRelease::load_dir(&path).unwrap();
        assert_eq!(release.party, loaded.party);
        assert_eq!(release.accountant, loaded.accountant);
        for (a, b) in release.sets.iter().zip(loaded.sets.iter()) {
            assert_eq!(a.rows(), b.rows());
        }
    }

    proptest! {
        #[test]
        fn total_variance_dominates_within(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 2..6),
            ses in proptest::collection::vec(0.01f64..3.0, 2..6),
        ) {
            let k = coeffs.len().min(ses.len());
            let fits: Vec<RegressionFit> = (0..k)
                .map(|i| fit(vec![coeffs[i]], vec![ses[i]]))
                .collect();
            let pooled = rubin_combine(&fits).unwrap();
            for (t, w) in pooled.total_variance.iter().zip(pooled.within.iter()) {
                prop_assert!(t >= w);
            }
        }
    }
}
