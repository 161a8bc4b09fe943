//! Deterministic multi-node simulator: scripted scenarios, round-robin
//! block proposals with quorum endorsement, fault injection and a trace.

mod config;
mod node;
mod script;
mod sim;
mod trace;

pub use config::{ConfigError, SimConfig, DEFAULT_ORGS};
pub use node::{Node, PendingTx, MAX_DEFERRALS};
pub use script::{Command, Script, ScriptError, ScriptLine};
pub use sim::{
    founding_orgs, run_scenario, FaultKind, MatchOutcome, Message, SimError, Simulation, TimelineSnapshot,
};
pub use trace::{EventKind, ScenarioEvent, Trace};
