//! Experiment orchestration: scenario configuration, the four runners,
//! raw-data access auditing, and result emission.

mod audit;
mod report;
mod runners;

pub use audit::{AccessEvent, AuditLog, DataVault, PartyData};
pub use report::write_reports;
pub use runners::{
    run_baseline_sharing, run_scenario, run_sequential_sharing, run_size_sweep, run_skew_sweep,
    ScenarioOutput,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LogLikSamples;
use crate::pooling::AccountantSummary;
use crate::tabular::PopulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BaselineSharing,
    SequentialSharing,
    SizeSweep,
    SkewSweep,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::BaselineSharing => "baseline_sharing",
            ScenarioKind::SequentialSharing => "sequential_sharing",
            ScenarioKind::SizeSweep => "size_sweep",
            ScenarioKind::SkewSweep => "skew_sweep",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "baseline_sharing" | "baseline" => Ok(ScenarioKind::BaselineSharing),
            "sequential_sharing" | "sequential" => Ok(ScenarioKind::SequentialSharing),
            "size_sweep" | "size" => Ok(ScenarioKind::SizeSweep),
            "skew_sweep" | "skew" => Ok(ScenarioKind::SkewSweep),
            other => Err(Error::Scenario(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Skew-sweep knobs: which (feature, category, target) marginal is thinned
/// and to which survival levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewParams {
    pub feature: String,
    pub category: String,
    pub target_value: u8,
    pub keep_probs: Vec<f64>,
}

impl Default for SkewParams {
    fn default() -> Self {
        SkewParams {
            feature: "group".into(),
            category: "minority".into(),
            target_value: 1,
            keep_probs: vec![0.1, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Overrides for the generator-training hyperparameters; `None` falls back
/// to the [`crate::dpvi::DpviConfig`] defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DpviOverrides {
    pub iterations: Option<u64>,
    pub batch_size: Option<usize>,
    pub clip_norm: Option<f64>,
    pub learning_rate: Option<f64>,
    pub mc_samples: Option<usize>,
    pub prior_std: Option<f64>,
    pub components: Option<usize>,
}

/// Full experiment definition. Defaults mirror the reference study
/// constants (ε = 1, K = 100, 10 repeats, 100 permutations, 100 draws,
/// 10% subsample, 80/20 split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub population: PopulationConfig,
    pub train_fraction: f64,
    pub subsample_fraction: f64,
    /// Size-sweep levels.
    pub fractions: Vec<f64>,
    pub epsilon: f64,
    pub k_sets: usize,
    pub repeats: usize,
    pub permutations: usize,
    pub n_draws: usize,
    pub skew: SkewParams,
    pub dpvi: DpviOverrides,
    pub master_seed: u64,
    /// 0 uses all cores; 1 forces sequential execution. Outputs are
    /// identical either way.
    pub threads: usize,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, population: PopulationConfig) -> Self {
        ScenarioConfig {
            kind,
            population,
            train_fraction: 0.8,
            subsample_fraction: 0.1,
            fractions: vec![0.1, 0.2, 0.5, 1.0],
            epsilon: 1.0,
            k_sets: 100,
            repeats: 10,
            permutations: 100,
            n_draws: 100,
            skew: SkewParams::default(),
            dpvi: DpviOverrides::default(),
            master_seed: 0,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Scenario("train_fraction must lie in (0, 1)".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Scenario(
                "subsample_fraction must lie in (0, 1]".into(),
            ));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Scenario("fractions must lie in (0, 1]".into()));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Scenario("epsilon must be positive".into()));
        }
        if self.k_sets < 2 {
            return Err(Error::Scenario("k_sets must be at least 2".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Scenario("repeats must be at least 1".into()));
        }
        if self.n_draws == 0 {
            return Err(Error::Scenario("n_draws must be at least 1".into()));
        }
        for &p in &self.skew.keep_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Scenario("keep_probs must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Summary of one emitted sample set, embedded in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSetSummary {
    pub party: String,
    pub arm: String,
    pub detail: String,
    pub repeat: usize,
    pub n: usize,
    pub mean: f64,
}

/// Everything a finished run leaves behind besides the raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub config: ScenarioConfig,
    pub accountants: Vec<AccountantSummary>,
    pub sample_sets: Vec<SampleSetSummary>,
    /// Parties whose local fit failed or did not converge, by (party, repeat,
    /// detail): their local arm is absent from the samples.
    pub flagged_local_fits: Vec<String>,
    pub raw_accesses: usize,
    pub cross_party_raw_accesses: usize,
    pub version: String,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn summarize(samples: &[LogLikSamples]) -> Vec<SampleSetSummary> {
        samples
            .iter()
            .map(|s| SampleSetSummary {
                party: s.party.clone(),
                arm: s.arm.clone(),
                detail: s.detail.clone(),
                repeat: s.repeat,
                n: s.values.len(),
                mean: s.mean(),
            })
            .collect()
    }
}
