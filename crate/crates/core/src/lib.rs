//! Credal self-supervised learning at desk scale.
//!
//! Unlabeled instances are labeled with credal sets, sets of candidate
//! distributions whose size shrinks as the learner grows confident, and
//! learned from with the optimistic superset loss. Hard-label (FixMatch),
//! smoothed-label (LSMatch) and uncertainty-filtered (UPSMatch) baselines
//! run in the same training loop on a small MLP and synthetic tasks.

pub mod credal;
pub mod data;
pub mod error;
pub mod labeling;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod trainer;

pub use credal::{CredalTarget, PossibilityDist, ProbDist};
pub use error::{Error, Result};
pub use labeling::{AlignmentState, PseudoLabel, StrategyConfig, StrategyKind};
pub use neural::{Activation, Mlp};
pub use trainer::{RunRecord, SelfTrainConfig, SelfTrainMethod, TrainConfig};
