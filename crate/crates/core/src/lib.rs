//! Collaborative learning from distributed tabular data through differentially
//! private synthetic twin releases.
//!
//! Each simulated party holds a local categorical dataset with a binary count
//! target. A party trains a mixture-plus-Poisson-regression generative model
//! under (ε, δ)-DP with noisy variational inference, publishes synthetic twin
//! data sets sampled from it, and improves its own Poisson-regression analysis
//! by pooling the twins it receives with its local data, combining the per-set
//! fits with Rubin's rules. Evaluation compares predictive log-likelihood
//! distributions on a shared held-out test set.

pub mod dpvi;
pub mod error;
pub mod eval;
pub mod genmodel;
pub mod glm;
pub mod pooling;
pub mod privacy;
pub mod rng;
pub mod scenario;
pub mod tabular;

pub use error::{Error, Result};
