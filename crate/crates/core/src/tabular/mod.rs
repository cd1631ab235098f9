//! Schema-aware categorical datasets.
//!
//! A [`Schema`] fixes an ordered list of categorical features plus a binary
//! target; a [`Dataset`] stores rows as category indices against one schema
//! and is immutable after construction. All sampling-flavoured operations
//! take an explicit seed and are pure.

mod csv_io;
mod population;

pub use population::{synthesize_population, BaseModelSpec, PartySpec, PopulationConfig};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One categorical feature: a name plus its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub categories: Vec<String>,
}

/// Ordered categorical features plus a binary target column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    features: Vec<Feature>,
    target_name: String,
}

impl Schema {
    pub fn new<S: Into<String>>(features: Vec<(S, Vec<S>)>, target_name: S) -> Result<Self> {
        let features = features
            .into_iter()
            .map(|(name, cats)| Feature {
                name: name.into(),
                categories: cats.into_iter().map(Into::into).collect(),
            })
            .collect();
        let schema = Schema {
            features,
            target_name: target_name.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Re-checks the construction invariants. Needed after deserializing a
    /// schema from config files, which bypasses [`Schema::new`].
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema needs at least one feature".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.categories.len() < 2 {
                return Err(Error::Schema(format!(
                    "feature {:?} has {} categories, need at least 2",
                    f.name,
                    f.categories.len()
                )));
            }
            let mut cats = f.categories.clone();
            cats.sort();
            cats.dedup();
            if cats.len() != f.categories.len() {
                return Err(Error::Schema(format!(
                    "feature {:?} has duplicate categories",
                    f.name
                )));
            }
            if self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            if f.name == self.target_name {
                return Err(Error::Schema(format!(
                    "feature name {:?} collides with target",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown feature {name:?}")))
    }

    pub fn cardinality(&self, feature: usize) -> usize {
        self.features[feature].categories.len()
    }

    pub fn category_index(&self, feature: usize, label: &str) -> Option<usize> {
        self.features[feature]
            .categories
            .iter()
            .position(|c| c == label)
    }

    /// Width of the one-hot design row: intercept plus (cardinality - 1)
    /// reference-coded indicators per feature.
    pub fn one_hot_dim(&self) -> usize {
        1 + self
            .features
            .iter()
            .map(|f| f.categories.len() - 1)
            .sum::<usize>()
    }

    /// Reference-coded design row with a leading intercept. The first
    /// category of each feature is the reference level.
    pub fn encode_row(&self, xs: &[usize]) -> Vec<f64> {
        debug_assert_eq!(xs.len(), self.features.len());
        let mut row = vec![0.0; self.one_hot_dim()];
        row[0] = 1.0;
        let mut offset = 1;
        for (j, f) in self.features.iter().enumerate() {
            if xs[j] > 0 {
                row[offset + xs[j] - 1] = 1.0;
            }
            offset += f.categories.len() - 1;
        }
        row
    }

    /// Names of the design columns, aligned with [`Schema::encode_row`].
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        for f in &self.features {
            for c in &f.categories[1..] {
                names.push(format!("{}={}", f.name, c));
            }
        }
        names
    }

    /// Schema with one feature projected out.
    pub fn drop_feature(&self, name: &str) -> Result<Schema> {
        if self.features.len() < 2 {
            return Err(Error::Schema(
                "cannot drop the only feature of a schema".into(),
            ));
        }
        let j = self.feature_index(name)?;
        let mut features = self.features.clone();
        features.remove(j);
        Ok(Schema {
            features,
            target_name: self.target_name.clone(),
        })
    }
}

/// One observation: category indices per feature plus the binary target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub xs: Vec<usize>,
    pub y: u8,
}

/// An immutable table of rows bound to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<Row>,
    party_label: Option<String>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, rows: Vec<Row>, party_label: Option<String>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.xs.len() != schema.feature_count() {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} features, schema has {}",
                    row.xs.len(),
                    schema.feature_count()
                )));
            }
            for (j, &x) in row.xs.iter().enumerate() {
                if x >= schema.cardinality(j) {
                    return Err(Error::Schema(format!(
                        "row {i} feature {:?}: category index {x} out of range",
                        schema.features()[j].name
                    )));
                }
            }
            if row.y > 1 {
                return Err(Error::Schema(format!(
                    "row {i} target {} is not binary",
                    row.y
                )));
            }
        }
        Ok(Dataset {
            schema,
            rows,
            party_label,
        })
    }

    pub fn empty(schema: Arc<Schema>) -> Self {
        Dataset {
            schema,
            rows: Vec::new(),
            party_label: None,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn party_label(&self) -> Option<&str> {
        self.party_label.as_deref()
    }

    pub fn with_party_label(mut self, label: impl Into<String>) -> Self {
        self.party_label = Some(label.into());
        self
    }

    /// Seed-deterministic shuffle split. Train size is `floor(train_fraction * n)`;
    /// the two parts are disjoint, exhaustive, and keep the original row order.
    pub fn train_test_split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let n = self.rows.len();
        let n_train = (train_fraction * n as f64).floor() as usize;
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng_from(seed));
        let mut train_idx = indices[..n_train].to_vec();
        let mut test_idx = indices[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok((self.take(&train_idx), self.take(&test_idx)))
    }

    /// Uniform subsample without replacement of `floor(fraction * n)` rows.
    /// `fraction == 1.0` returns the dataset unchanged.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subsample fraction must lie in (0, 1], got {fraction}"
            )));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let n = self.rows.len();
        let k = (fraction * n as f64).floor() as usize;
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng_from(seed));
        let mut keep = indices[..k].to_vec();
        keep.sort_unstable();
        Ok(self.take(&keep))
    }

    /// Thins the rows matching (feature = category, target = target_value) to
    /// exactly `round(keep_prob * count)` survivors, selected uniformly; all
    /// other rows are retained. Rounding is half-up so sweep levels are
    /// reproducible counts rather than Bernoulli outcomes.
    pub fn inject_marginal_skew(
        &self,
        feature: &str,
        category: &str,
        target_value: u8,
        keep_prob: f64,
        seed: u64,
    ) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&keep_prob) {
            return Err(Error::InvalidArgument(format!(
                "keep_prob must lie in [0, 1], got {keep_prob}"
            )));
        }
        if target_value > 1 {
            return Err(Error::InvalidArgument(format!(
                "target_value must be 0 or 1, got {target_value}"
            )));
        }
        let j = self.schema.feature_index(feature)?;
        let cat = self
            .schema
            .category_index(j, category)
            .ok_or_else(|| Error::Schema(format!("unknown category {category:?} for feature {feature:?}")))?;

        let matching: Vec<usize> = (0..self.rows.len())
            .filter(|&i| self.rows[i].xs[j] == cat && self.rows[i].y == target_value)
            .collect();
        let n_keep = (keep_prob * matching.len() as f64 + 0.5).floor() as usize;
        if n_keep == matching.len() {
            return Ok(self.clone());
        }
        let mut shuffled = matching.clone();
        shuffled.shuffle(&mut rng_from(seed));
        let survivors: std::collections::HashSet<usize> = shuffled[..n_keep].iter().copied().collect();
        let keep: Vec<usize> = (0..self.rows.len())
            .filter(|&i| {
                !(self.rows[i].xs[j] == cat && self.rows[i].y == target_value)
                    || survivors.contains(&i)
            })
            .collect();
        Ok(self.take(&keep))
    }

    /// Projects one feature out of every row, with a correspondingly reduced
    /// schema. Row count is unchanged.
    pub fn drop_feature(&self, name: &str) -> Result<Dataset> {
        let j = self.schema.feature_index(name)?;
        let schema = Arc::new(self.schema.drop_feature(name)?);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut xs = r.xs.clone();
                xs.remove(j);
                Row { xs, y: r.y }
            })
            .collect();
        Ok(Dataset {
            schema,
            rows,
            party_label: self.party_label.clone(),
        })
    }

    /// Rows whose `feature` equals `category`; schema unchanged.
    pub fn filter_category(&self, feature: &str, category: &str) -> Result<Dataset> {
        let j = self.schema.feature_index(feature)?;
        let cat = self
            .schema
            .category_index(j, category)
            .ok_or_else(|| Error::Schema(format!("unknown category {category:?} for feature {feature:?}")))?;
        let rows = self
            .rows
            .iter()
            .filter(|r| r.xs[j] == cat)
            .cloned()
            .collect();
        Dataset::new(self.schema_arc(), rows, self.party_label.clone())
    }

    /// Joint proportions of two columns; either axis may be the target.
    pub fn two_way_marginal(&self, axis_a: &str, axis_b: &str) -> Result<MarginalTable> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (labels_a, vals_a) = self.column_values(axis_a)?;
        let (labels_b, vals_b) = self.column_values(axis_b)?;
        let mut counts = vec![vec![0usize; labels_b.len()]; labels_a.len()];
        for (&a, &b) in vals_a.iter().zip(vals_b.iter()) {
            counts[a][b] += 1;
        }
        let n = self.rows.len() as f64;
        let proportions = counts
            .into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / n).collect())
            .collect();
        Ok(MarginalTable {
            axis_a: axis_a.to_string(),
            axis_b: axis_b.to_string(),
            labels_a,
            labels_b,
            proportions,
        })
    }

    /// Proportions of one column (feature or target).
    pub fn one_way_marginal(&self, axis: &str) -> Result<Vec<f64>> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (labels, vals) = self.column_values(axis)?;
        let mut counts = vec![0usize; labels.len()];
        for &v in &vals {
            counts[v] += 1;
        }
        let n = self.rows.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }

    /// Reference-coded design matrix (intercept column first) and target vector.
    pub fn one_hot(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = self.schema.one_hot_dim();
        let n = self.rows.len();
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        for (i, row) in self.rows.iter().enumerate() {
            let enc = self.schema.encode_row(&row.xs);
            for (jj, v) in enc.into_iter().enumerate() {
                x[(i, jj)] = v;
            }
            y[i] = f64::from(row.y);
        }
        Ok((x, y))
    }

    /// Concatenation of this dataset with others sharing the same schema.
    pub fn concat<'a>(&self, others: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut rows = self.rows.clone();
        for other in others {
            if *other.schema != *self.schema {
                return Err(Error::Schema(
                    "cannot concatenate datasets with different schemas".into(),
                ));
            }
            rows.extend(other.rows.iter().cloned());
        }
        Ok(Dataset {
            schema: self.schema_arc(),
            rows,
            party_label: self.party_label.clone(),
        })
    }

    fn take(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema_arc(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            party_label: self.party_label.clone(),
        }
    }

    fn column_values(&self, axis: &str) -> Result<(Vec<String>, Vec<usize>)> {
        if axis == self.schema.target_name() {
            let labels = vec!["0".to_string(), "1".to_string()];
            let vals = self.rows.iter().map(|r| usize::from(r.y)).collect();
            Ok((labels, vals))
        } else {
            let j = self.schema.feature_index(axis)?;
            let labels = self.schema.features()[j].categories.clone();
            let vals = self.rows.iter().map(|r| r.xs[j]).collect();
            Ok((labels, vals))
        }
    }
}

/// Joint proportions for a pair of columns; cells sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalTable {
    pub axis_a: String,
    pub axis_b: String,
    pub labels_a: Vec<String>,
    pub labels_b: Vec<String>,
    pub proportions: Vec<Vec<f64>>,
}

impl MarginalTable {
    pub fn proportion(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels_a.iter().position(|l| l == a)?;
        let j = self.labels_b.iter().position(|l| l == b)?;
        Some(self.proportions[i][j])
    }

    pub fn total(&self) -> f64 {
        self.proportions.iter().flatten().sum()
    }
}
