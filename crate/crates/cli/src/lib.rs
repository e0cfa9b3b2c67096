//! Scenario harness behind the `discedge` command: replays a conversation
//! against simulated or live nodes, writes per-turn metrics and compares
//! context modes.

pub mod compare;
pub mod harness;
pub mod live;
pub mod report;
pub mod scenario;

pub use compare::{compare_modes, ComparisonError, ComparisonRow};
pub use harness::{run_live, run_sim};
pub use report::Report;
pub use scenario::ScenarioConfig;
