//! Raw-data access auditing.
//!
//! Every touch of a party's raw training data goes through [`DataVault`]
//! and is logged as (owner, accessor). The structural privacy requirement —
//! a party's pipeline sees only its own raw data plus other parties'
//! synthetic releases — shows up as zero cross-party entries in the log;
//! the acceptance suite asserts exactly that.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::Dataset;

/// Accessor label for the privacy-agnostic pooled baseline (the dashed
/// ideal in the figures). It is a harness-level diagnostic rather than any
/// party's computation, so it is logged but not counted as cross-party.
pub const BASELINE_ACCESSOR: &str = "__pooled_baseline__";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub owner: String,
    pub accessor: String,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    events: Mutex<Vec<AccessEvent>>,
}

impl AuditLog {
    pub fn record(&self, owner: &str, accessor: &str) {
        self.events.lock().expect("audit lock").push(AccessEvent {
            owner: owner.to_string(),
            accessor: accessor.to_string(),
        });
    }

    pub fn events(&self) -> Vec<AccessEvent> {
        self.events.lock().expect("audit lock").clone()
    }

    pub fn total(&self) -> usize {
        self.events.lock().expect("audit lock").len()
    }

    /// Accesses where a party touched another party's raw data.
    pub fn cross_party(&self) -> usize {
        self.events
            .lock()
            .expect("audit lock")
            .iter()
            .filter(|e| e.accessor != e.owner && e.accessor != BASELINE_ACCESSOR)
            .count()
    }
}

/// One prepared party: its raw training split and its share of the held-out
/// test pool.
#[derive(Debug, Clone)]
pub struct PartyData {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

/// Holds all parties' raw training data behind an audited accessor.
#[derive(Debug)]
pub struct DataVault {
    parties: Vec<PartyData>,
    audit: AuditLog,
}

impl DataVault {
    pub fn new(parties: Vec<PartyData>) -> Self {
        DataVault {
            parties,
            audit: AuditLog::default(),
        }
    }

    pub fn party_names(&self) -> Vec<String> {
        self.parties.iter().map(|p| p.name.clone()).collect()
    }

    pub fn party_count(&self) -> usize {
        self.parties.len()
    }

    /// Raw training data of `owner`, accessed on behalf of `accessor`.
    pub fn train(&self, owner: &str, accessor: &str) -> Result<&Dataset> {
        let party = self
            .parties
            .iter()
            .find(|p| p.name == owner)
            .ok_or_else(|| Error::Scenario(format!("unknown party {owner:?}")))?;
        self.audit.record(owner, accessor);
        Ok(&party.train)
    }

    /// Test split of one party. Test data feeds only the shared evaluation
    /// pool, never any party's training, so it is not audited.
    pub fn test(&self, owner: &str) -> Result<&Dataset> {
        let party = self
            .parties
            .iter()
            .find(|p| p.name == owner)
            .ok_or_else(|| Error::Scenario(format!("unknown party {owner:?}")))?;
        Ok(&party.test)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Row, Schema};
    use std::sync::Arc;

    fn vault() -> DataVault {
        let schema = Arc::new(Schema::new(vec![("f", vec!["a", "b"])], "t").unwrap());
        let mk = |n: usize| {
            Dataset::new(
                schema.clone(),
                (0..n).map(|i| Row { xs: vec![i % 2], y: (i % 2) as u8 }).collect(),
                None,
            )
            .unwrap()
        };
        DataVault::new(vec![
            PartyData { name: "p1".into(), train: mk(4), test: mk(2) },
            PartyData { name: "p2".into(), train: mk(6), test: mk(3) },
        ])
    }

    #[test]
    fn records_and_classifies_accesses() {
        let v = vault();
        v.train("p1", "p1").unwrap();
        v.train("p2", "p2").unwrap();
        assert_eq!(v.audit().total(), 2);
        assert_eq!(v.audit().cross_party(), 0);

        v.train("p1", "p2").unwrap();
        assert_eq!(v.audit().cross_party(), 1);

        v.train("p1", BASELINE_ACCESSOR).unwrap();
        assert_eq!(v.audit().cross_party(), 1);
        assert_eq!(v.audit().total(), 4);

        assert!(v.train("nope", "p1").is_err());
    }
}
