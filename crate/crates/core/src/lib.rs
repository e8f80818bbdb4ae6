//! Coverage-guided fuzzing as online stochastic control.
//!
//! The scheduler works on frontier branches (visited guards with an
//! unexercised edge) rather than on seeds, ranking them by how often time
//! spent on them lowered their branch distance. The mutator estimates a
//! subgradient of each branch distance by local search and takes a Newton
//! step toward the flip point.
//!
//! Targets are in-process guard programs ([`target::GuardProgram`]) that
//! report the same comparison feedback compare-hooking instrumentation would.

pub mod builtins;
pub mod campaign;
pub mod distance;
pub mod frontier;
pub mod havoc;
pub mod mutator;
pub mod oracle;
pub mod report;
pub mod scheduler;
pub mod target;

pub use campaign::{run, Budget, CampaignConfig, CampaignLog, CampaignOutcome, Mode};
pub use distance::{distance, string_distance, BranchDistance, DistanceRecord};
pub use frontier::{recompute_frontier, CoverageMap, FrontierSet};
pub use mutator::{MutatorConfig, SubgradientRecord};
pub use scheduler::Scheduler;
pub use target::{load_program, ConditionType, ExecutionTrace, GuardProgram, Harness};
