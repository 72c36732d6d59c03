//! Active anomaly detection over detector ensembles.
//!
//! The crate is `no_std` (with `alloc`) and carries only the algorithms:
//! isolation-forest leaf ensembles, hinge-loss weight learning from label
//! feedback, compact and interpretable subspace descriptions, diversity-aware
//! query selection, KL-divergence drift handling for streams, LODA projection
//! ensembles and the GLAD relevance network. File formats, the experiment
//! harness and the HTTP session service live in the `aad` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod active;
pub mod data;
pub mod describe;
mod error;
pub mod glad;
pub mod iforest;
pub mod loda;
pub mod math;
pub mod query;
pub mod rules;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};

/// Commonly used types.
pub mod prelude {
    pub use crate::active::{BalConfig, BalLearner, FeedbackState, HistoryRecord, LearnParams, Prior, WeightVector};
    pub use crate::data::{Dataset, FeatureMatrix, Label, LabelOracle, SimulatedOracle};
    pub use crate::describe::SubspaceCatalog;
    pub use crate::iforest::{EnsembleModel, ForestParams, SparseScoreVector};
    pub use crate::query::{QueryBatch, StrategyConfig, StrategyKind};
    pub use crate::rules::RuleSet;
    pub use crate::{Error, Result};
}
