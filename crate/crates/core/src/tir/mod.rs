//! Tool-integrated reasoning runtime: deferred code execution, a stateful
//! sandbox, trajectory files and usage statistics.

pub mod jsonl;
pub mod sandbox;
pub mod stats;
pub mod trajectory;

pub use sandbox::{sandbox_execute, SandboxError, SandboxState};
pub use stats::{classify_turn, corpus_stats, trajectory_stats, CorpusStats, TrajectoryStats, Turn, TurnKind};
pub use trajectory::{Step, StepKind, Trajectory, EXEC_MARKER};
