//! Deterministic simulation of a mainchain with attached sidechains:
//! scenario files, the tick scheduler, invariant checks, reports and
//! snapshots.

pub mod invariants;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod snapshot;

pub use report::{Outcome, RunReport};
pub use scenario::{Action, CertVariant, Scenario, ScenarioError};
pub use sim::{run, RunOutput, Simulation};
pub use snapshot::{Snapshot, SnapshotError, Verification};
