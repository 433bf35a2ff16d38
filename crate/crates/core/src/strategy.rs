//! Training-strategy config and data-parallel graph expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{CollectiveAlgo, DurationSource, DurationTable};
use crate::graph::{
    validate, AttrValue, DataflowGraph, DeviceKind, DeviceSpec, Finding, GraphError, InputRef, LinkParams, OpKind,
    OpNode,
};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StrategyError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported config format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("replicas must be >= 1")]
    NoReplicas,
    #[error("device_map has {got} entries for {replicas} replicas")]
    DeviceMapLength { replicas: usize, got: usize },
    #[error("device {0:?} appears twice in device_map")]
    DuplicateMappedDevice(String),
    #[error("malformed pattern {0:?}: use a literal id or a prefix followed by a single trailing '*'")]
    BadPattern(String),
    #[error("override for {pattern} has invalid duration {duration}")]
    BadOverride { pattern: String, duration: f64 },
    #[error("op_gap_us must be finite and >= 0, got {0}")]
    BadGap(f64),
    #[error("gradient marker matches {kind} node {node:?}; only compute nodes can be all-reduced")]
    MarkerOnCommNode { node: String, kind: OpKind },
    #[error("gradient node {0:?} produces no bytes to all-reduce")]
    EmptyGradient(String),
    #[error("expansion produced an invalid graph: {0}")]
    Graph(#[from] GraphError),
    #[error("expansion produced a cycle through {0:?}")]
    Cycle(Vec<String>),
}

/// Node-id matcher: a literal id, or a prefix followed by `*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Self, StrategyError> {
        let bad = || StrategyError::BadPattern(text.to_owned());
        if text.is_empty() {
            return Err(bad());
        }
        match text.find('*') {
            None => Ok(Pattern::Exact(text.to_owned())),
            Some(i) if i == text.len() - 1 => Ok(Pattern::Prefix(text[..i].to_owned())),
            Some(_) => Err(bad()),
        }
    }

    pub fn matches(&self, id: &str) -> bool {
        match self {
            Pattern::Exact(s) => s == id,
            Pattern::Prefix(p) => id.starts_with(p.as_str()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Exact(s) => f.write_str(s),
            Pattern::Prefix(p) => write!(f, "{p}*"),
        }
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Pattern::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveConfig {
    #[serde(default)]
    pub algo: CollectiveAlgo,
    #[serde(default = "default_path")]
    pub path: String,
    /// Link used by the ring formula, and by measured mode when no record matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_link: Option<LinkParams>,
}

fn default_path() -> String {
    "PCIeSwitch".to_owned()
}

impl Default for CollectiveConfig {
    fn default() -> Self {
        Self {
            algo: CollectiveAlgo::default(),
            path: default_path(),
            fallback_link: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub pattern: Pattern,
    pub duration_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default = "one")]
    pub format_version: u64,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    /// Compute device of replica `k` is `device_map[k]`.
    #[serde(default)]
    pub device_map: Vec<String>,
    #[serde(default)]
    pub collective: CollectiveConfig,
    #[serde(default)]
    pub gradient_markers: Vec<Pattern>,
    /// Applied in order; the last matching pattern wins.
    #[serde(default)]
    pub overrides: Vec<Override>,
    #[serde(default)]
    pub hardware: String,
    #[serde(default)]
    pub op_gap_us: f64,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            replicas: 1,
            device_map: Vec::new(),
            collective: CollectiveConfig::default(),
            gradient_markers: Vec::new(),
            overrides: Vec::new(),
            hardware: String::new(),
            op_gap_us: 0.0,
        }
    }
}

impl StrategyConfig {
    pub fn check(&self) -> Result<(), StrategyError> {
        if self.format_version != FORMAT_VERSION {
            return Err(StrategyError::UnsupportedVersion(self.format_version));
        }
        if self.replicas == 0 {
            return Err(StrategyError::NoReplicas);
        }
        if !(self.replicas == 1 && self.device_map.is_empty()) && self.device_map.len() != self.replicas {
            return Err(StrategyError::DeviceMapLength {
                replicas: self.replicas,
                got: self.device_map.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for d in &self.device_map {
            if !seen.insert(d) {
                return Err(StrategyError::DuplicateMappedDevice(d.clone()));
            }
        }
        for o in &self.overrides {
            if !(o.duration_us.is_finite() && o.duration_us >= 0.0) {
                return Err(StrategyError::BadOverride {
                    pattern: o.pattern.to_string(),
                    duration: o.duration_us,
                });
            }
        }
        if !(self.op_gap_us.is_finite() && self.op_gap_us >= 0.0) {
            return Err(StrategyError::BadGap(self.op_gap_us));
        }
        Ok(())
    }

    /// Duration of the last override matching `id`, if any.
    pub fn override_for(&self, id: &str) -> Option<f64> {
        self.overrides
            .iter()
            .rev()
            .find(|o| o.pattern.matches(id))
            .map(|o| o.duration_us)
    }
}

pub fn parse_config(text: &str) -> Result<StrategyConfig, StrategyError> {
    let cfg: StrategyConfig = serde_json::from_str(text).map_err(|e| StrategyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.check()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &StrategyConfig) -> String {
    let mut out = serde_json::to_string_pretty(cfg).expect("configs always serialize");
    out.push('\n');
    out
}

#[derive(Debug, Clone)]
pub struct ExpandedGraph {
    pub graph: DataflowGraph,
    /// Clone id to (original id, replica index).
    pub replica_of: BTreeMap<String, (String, usize)>,
    pub collective_nodes: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn replica_id(id: &str, k: usize) -> String {
    format!("{id}@r{k}")
}

pub fn collective_id(gradient: &str) -> String {
    format!("{gradient}/allreduce")
}

/// Replicates `g` once per entry of `cfg.device_map` and inserts one allreduce
/// per gradient node. With one replica the graph is returned unchanged.
pub fn expand_data_parallel(g: &DataflowGraph, cfg: &StrategyConfig) -> Result<ExpandedGraph, StrategyError> {
    cfg.check()?;
    if cfg.replicas == 1 {
        return Ok(ExpandedGraph {
            graph: g.clone(),
            replica_of: g.nodes().iter().map(|n| (n.id.clone(), (n.id.clone(), 0))).collect(),
            collective_nodes: Vec::new(),
            warnings: Vec::new(),
        });
    }

    let mut warnings = Vec::new();
    let mut gradient = vec![false; g.len()];
    for marker in &cfg.gradient_markers {
        let mut hits = 0;
        for (i, n) in g.nodes().iter().enumerate() {
            if marker.matches(&n.id) {
                if n.kind != OpKind::Compute {
                    return Err(StrategyError::MarkerOnCommNode {
                        node: n.id.clone(),
                        kind: n.kind,
                    });
                }
                gradient[i] = true;
                hits += 1;
            }
        }
        if hits == 0 {
            warnings.push(format!("gradient marker {marker} matches no node"));
        }
    }

    let original_compute: BTreeSet<&str> = g
        .devices()
        .iter()
        .filter(|d| d.kind == DeviceKind::Compute)
        .map(|d| d.id.as_str())
        .collect();
    let hardware = g
        .nodes()
        .iter()
        .filter(|n| n.kind == OpKind::Compute)
        .find_map(|n| g.device(&n.device))
        .map(|d| d.hardware.clone())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| cfg.hardware.clone());

    let mut devices: Vec<DeviceSpec> = cfg
        .device_map
        .iter()
        .map(|id| match g.device(id) {
            Some(d) if d.kind == DeviceKind::Compute => d.clone(),
            _ => DeviceSpec::compute(id.clone(), hardware.clone()),
        })
        .collect();
    let used_comm: BTreeSet<&str> = g
        .nodes()
        .iter()
        .filter(|n| n.kind != OpKind::Compute)
        .map(|n| n.device.as_str())
        .collect();
    for k in 0..cfg.replicas {
        for d in g.devices().iter().filter(|d| used_comm.contains(d.id.as_str())) {
            let mut d = d.clone();
            d.id = replica_id(&d.id, k);
            devices.push(d);
        }
    }
    let fabric = format!("{}[{}]", cfg.collective.path, cfg.device_map.join(","));
    if gradient.iter().any(|&x| x) {
        devices.push(DeviceSpec::collective(fabric.clone(), cfg.collective.fallback_link));
    }

    let mut nodes = Vec::with_capacity(cfg.replicas * g.len() + g.len());
    let mut replica_of = BTreeMap::new();
    for k in 0..cfg.replicas {
        let local = &cfg.device_map[k];
        for n in g.nodes() {
            let mut c = n.clone();
            c.id = replica_id(&n.id, k);
            c.device = if n.kind == OpKind::Compute {
                local.clone()
            } else {
                replica_id(&n.device, k)
            };
            for key in ["src_device", "dst_device"] {
                if let Some(AttrValue::Str(dev)) = c.attrs.get_mut(key) {
                    if original_compute.contains(dev.as_str()) {
                        *dev = local.clone();
                    }
                }
            }
            c.inputs = n
                .inputs
                .iter()
                .map(|input| {
                    let p = g.index_of(&input.node).expect("graph inputs resolve");
                    if gradient[p] {
                        let width = g.nodes()[p].output_shapes.len();
                        InputRef::new(collective_id(&input.node), k * width + input.slot)
                    } else {
                        InputRef::new(replica_id(&input.node, k), input.slot)
                    }
                })
                .collect();
            replica_of.insert(c.id.clone(), (n.id.clone(), k));
            nodes.push(c);
        }
    }

    let mut collective_nodes = Vec::new();
    for n in g.nodes().iter().zip(&gradient).filter(|(_, &m)| m).map(|(n, _)| n) {
        let bytes = n.output_bytes().unwrap_or(0);
        if bytes == 0 {
            return Err(StrategyError::EmptyGradient(n.id.clone()));
        }
        let mut c = OpNode::new(collective_id(&n.id), "AllReduce", OpKind::Collective, fabric.clone())
            .with_attr("bytes", bytes as i64)
            .with_attr("group", AttrValue::List(cfg.device_map.clone()))
            .with_attr("gradient", n.id.as_str());
        for k in 0..cfg.replicas {
            for (s, shape) in n.output_shapes.iter().enumerate() {
                c.inputs.push(InputRef::new(replica_id(&n.id, k), s));
                c.output_shapes.push(shape.clone());
            }
        }
        collective_nodes.push(c.id.clone());
        nodes.push(c);
    }

    let graph = DataflowGraph::new(nodes, devices, g.metadata().clone())?;
    if let Some(Finding::Cycle(ids)) = validate(&graph)
        .findings
        .into_iter()
        .find(|f| matches!(f, Finding::Cycle(_)))
    {
        return Err(StrategyError::Cycle(ids));
    }
    Ok(ExpandedGraph {
        graph,
        replica_of,
        collective_nodes,
        warnings,
    })
}

/// Applies `cfg.overrides` in list order. Patterns that match nothing in `g`
/// produce a warning.
pub fn apply_overrides(table: &DurationTable, cfg: &StrategyConfig, g: &DataflowGraph) -> (DurationTable, Vec<String>) {
    let mut out = table.clone();
    let mut warnings = Vec::new();
    for o in &cfg.overrides {
        let mut hits = 0;
        for n in g.nodes().iter().filter(|n| o.pattern.matches(&n.id)) {
            out.insert(n.id.clone(), o.duration_us, DurationSource::Override);
            hits += 1;
        }
        if hits == 0 {
            warnings.push(format!("override pattern {} matches no node", o.pattern));
        }
    }
    (out, warnings)
}
