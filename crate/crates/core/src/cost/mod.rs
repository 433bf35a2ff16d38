//! Per-node duration estimation.
//!
//! Durations come from, in order: a manual override, an exact profile
//! record, a linear model fitted on the op's profile grid, and (for transfers
//! and collectives) bandwidth formulas.

mod comm;
mod estimate;
mod linear;

pub use comm::{allreduce_time, mib, transfer_time, CollectiveAlgo, BYTES_PER_MB};
pub use estimate::{estimate_all, node_features, node_signature, Estimate, UnresolvedNode};
pub use linear::{fit_linear, FitStats, LinearCostModel, R_SQUARED_WARN};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostError {
    #[error("no records to fit")]
    NoRecords,
    #[error("records mix op types, hardware tags or feature names: {0}")]
    MixedRecords(String),
    #[error("{op_type} on {hardware:?}: underdetermined fit, need {needed} records, have {got}")]
    Underdetermined {
        op_type: String,
        hardware: String,
        needed: usize,
        got: usize,
    },
    #[error("{op_type} on {hardware:?}: degenerate design matrix, collinear features {features:?}")]
    Degenerate {
        op_type: String,
        hardware: String,
        features: Vec<String>,
    },
    #[error("model expects {expected} features, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("device {0:?} is not a link")]
    NotALink(String),
    #[error("device {0:?} has no throughput")]
    MissingThroughput(String),
    #[error("byte count must be > 0")]
    ZeroBytes,
    #[error("a collective needs at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("no nccl-allreduce record for path {path:?} with {participants} participants and no fallback link")]
    UnknownCollective { path: String, participants: usize },
    #[error("ring allreduce needs a fallback link")]
    MissingFallbackLink,
    #[error("{} node(s) have no duration source: {}", .0.len(), list_unresolved(.0))]
    UnknownOp(Vec<UnresolvedNode>),
}

fn list_unresolved(nodes: &[UnresolvedNode]) -> String {
    nodes
        .iter()
        .map(|n| format!("{} ({})", n.node, n.op_type))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DurationSource {
    Override,
    ExactRecord,
    FittedModel,
    CommFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationEntry {
    /// Microseconds.
    pub duration: f64,
    pub source: DurationSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationTable {
    entries: BTreeMap<String, DurationEntry>,
}

impl DurationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, node: impl Into<String>, duration: f64, source: DurationSource) {
        self.entries.insert(node.into(), DurationEntry { duration, source });
    }

    pub fn get(&self, node: &str) -> Option<&DurationEntry> {
        self.entries.get(node)
    }

    pub fn duration(&self, node: &str) -> Option<f64> {
        self.entries.get(node).map(|e| e.duration)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DurationEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn durations(&self) -> BTreeMap<String, f64> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.duration)).collect()
    }

    /// Table with the given source for every entry.
    pub fn from_durations<I, S>(items: I, source: DurationSource) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut t = Self::new();
        for (k, d) in items {
            t.insert(k, d, source);
        }
        t
    }
}
