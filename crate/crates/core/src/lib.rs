//! Implicit hierarchical GRPO.
//!
//! - [`policy`]: explicit (gated) and implicit (flat softmax) hierarchical
//!   policies and the conditions under which they coincide.
//! - [`surrogate`]: policy-gradient losses, the corrected implicit surrogate
//!   loss and the one-step update equivalence checker.
//! - [`grpo`]: group-relative advantages, the clipped token term, the
//!   hierarchical correction and the objective.
//! - [`tir`]: deferred-execution trajectory runtime with a stateful sandbox.
//! - [`trainer`]: tabular macro-action policy trained end to end.

pub mod error;
pub mod gradcheck;
pub mod grpo;
pub mod numeric;
pub mod policy;
pub mod rng;
pub mod surrogate;
pub mod tir;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use policy::{
    equivalence_conditions, explicit_distribution, explicit_from_implicit, implicit_distribution,
    ActionDistribution, EquivalenceReport, ExplicitParams, ImplicitLogits, EXEC_TOKEN,
};
pub use surrogate::{FMode, GradientVector, SurrogateQuantities, UpdateConfig};
pub use trainer::{PolicyTable, TrainConfig};
