//! Replay simulator for one training iteration of a dataflow graph.
//!
//! Op durations come from an offline profile database, either as exact
//! records or through per-op linear cost models. A data-parallel strategy can
//! replicate the graph and insert gradient collectives before simulation.

pub mod cost;
pub mod graph;
mod par;
pub mod profile;
pub mod report;
pub mod sim;
pub mod strategy;
pub mod sweep;
pub mod synth;

pub use cost::{estimate_all, CostError, DurationSource, DurationTable, Estimate};
pub use graph::{parse_graph, serialize_graph, DataflowGraph, GraphError};
pub use profile::{load_profiles, save_profiles, ProfileDb, ProfileError};
pub use report::{summarize, to_trace, SummaryReport};
pub use sim::{naive_simulate, simulate, Schedule, SimError};
pub use strategy::{expand_data_parallel, parse_config, StrategyConfig, StrategyError};
pub use synth::{gen_durations, gen_graph, gen_profiles, SynthSpec};
