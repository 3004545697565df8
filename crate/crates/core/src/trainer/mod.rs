//! Desk-scale training on synthetic arithmetic tasks.
//!
//! The policy is a table of logit rows over six macro-actions, keyed by a few
//! features of the trajectory prefix. Each step samples `batch_prompts`
//! tasks with `group_size` responses each, filters the groups and ascends
//! the IH-GRPO objective on what remains.

pub mod config;
pub mod env;
pub mod filter;
pub mod rollout;
pub mod table;
pub mod train;
pub mod update;

pub use config::TrainConfig;
pub use env::{generate_task, ContextKey, MacroAction, Task, ACTION_COUNT};
pub use filter::{filter_batch, FilterConfig, FilterReport, GroupOutcome, Verdict};
pub use rollout::{sample_rollout, ActionRecord, Rollout, RolloutLimits};
pub use table::PolicyTable;
pub use train::{evaluate_policy, train, train_from, write_metrics_csv, StepMetrics, TrainOutput};
pub use update::{update_policy, UpdateOutcome, UpdateSettings};
