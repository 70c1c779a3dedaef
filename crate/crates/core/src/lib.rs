//! Offline clustering of linear contextual bandits.
//!
//! Given logged `(user, action, reward)` triples, the estimators here build
//! a user similarity graph from per-user ridge estimates, pool each user's
//! neighbours, and pick a candidate for a test user with a pessimistic
//! (lower-confidence-bound) rule. An experiment harness generates seeded
//! synthetic environments and scores the methods by suboptimality gap.

// `!(x >= 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decision;
pub mod environment;
pub mod error;
pub mod estimation;
pub mod gamma;
pub mod graph;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod par;
pub mod quadrature;

pub use decision::{Method, PreparedData, PreparedMethod, Recommendation, TestQuery};
pub use environment::{EnvironmentSpec, GenConfig, GeneratedData, LoggingPolicy, UserDistribution};
pub use error::{Error, Result};
pub use estimation::{AlgoConfig, OfflineDataset, Regularizer, Sample, UserStats};
pub use gamma::GammaPolicy;
pub use graph::{AggregatedStats, PoolMode, UserGraph};
pub use harness::{Algorithm, HarnessOptions, RunResult, SweepResult};
pub use par::Exec;
