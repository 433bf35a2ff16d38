//! Unified dataflow-graph model.
//!
//! A [`DataflowGraph`] is immutable once built. Structural problems that make a
//! graph unusable (duplicate ids, dangling input references) are rejected at
//! construction; semantic problems (cycles, unknown devices, malformed
//! communication attrs) are reported as data by [`validate`].

mod algo;
mod format;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use algo::{critical_path, topological_order, validate, CriticalPath, Finding, ValidationReport};
pub use format::{parse_graph, serialize_graph, ParsedGraph, FORMAT_VERSION};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("node {node:?} references missing producer {producer:?}")]
    DanglingInput { node: String, producer: String },
    #[error("node {node:?} reads slot {slot} of {producer:?}, which has {available} outputs")]
    BadSlot {
        node: String,
        producer: String,
        slot: usize,
        available: usize,
    },
    #[error("malformed input reference {0:?} (expected \"nodeId:slot\")")]
    BadInputRef(String),
    #[error("graph contains a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("no duration for node {0:?}")]
    MissingDuration(String),
    #[error("negative or non-finite duration {value} for node {node:?}")]
    BadDuration { node: String, value: f64 },
}

/// Shape of one output tensor. Only sizes are tracked, never data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub dims: Vec<u64>,
    pub dtype_bytes: u64,
}

impl TensorShape {
    pub fn new(dims: Vec<u64>, dtype_bytes: u64) -> Self {
        Self { dims, dtype_bytes }
    }

    pub fn elements(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    /// `dtype_bytes * product(dims)`; `None` on u64 overflow.
    pub fn byte_size(&self) -> Option<u64> {
        self.elements()?.checked_mul(self.dtype_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Compute,
    Transfer,
    Collective,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Compute => "Compute",
            OpKind::Transfer => "Transfer",
            OpKind::Collective => "Collective",
        };
        f.write_str(s)
    }
}

/// Scalar attribute value. `List` exists for collective participant groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<String>),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            AttrValue::Int(i) => Some(i as f64),
            AttrValue::Float(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            AttrValue::Int(i) if i >= 0 => Some(i as u64),
            AttrValue::Float(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Some(x as u64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            AttrValue::List(v) => Some(v),
            _ => None,
        }
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<u64> for AttrValue {
    fn from(v: u64) -> Self {
        i64::try_from(v).map_or(AttrValue::Float(v as f64), AttrValue::Int)
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Float(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_owned())
    }
}

impl From<Vec<String>> for AttrValue {
    fn from(v: Vec<String>) -> Self {
        AttrValue::List(v)
    }
}

/// Reference to output `slot` of node `node`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputRef {
    pub node: String,
    pub slot: usize,
}

impl InputRef {
    pub fn new(node: impl Into<String>, slot: usize) -> Self {
        Self {
            node: node.into(),
            slot,
        }
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.slot)
    }
}

impl std::str::FromStr for InputRef {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (node, slot) = s
            .rsplit_once(':')
            .ok_or_else(|| GraphError::BadInputRef(s.to_owned()))?;
        if node.is_empty() {
            return Err(GraphError::BadInputRef(s.to_owned()));
        }
        let slot = slot.parse().map_err(|_| GraphError::BadInputRef(s.to_owned()))?;
        Ok(InputRef::new(node, slot))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub id: String,
    pub op_type: String,
    pub kind: OpKind,
    pub device: String,
    pub attrs: BTreeMap<String, AttrValue>,
    pub inputs: Vec<InputRef>,
    pub output_shapes: Vec<TensorShape>,
}

impl OpNode {
    pub fn new(id: impl Into<String>, op_type: impl Into<String>, kind: OpKind, device: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            op_type: op_type.into(),
            kind,
            device: device.into(),
            attrs: BTreeMap::new(),
            inputs: Vec::new(),
            output_shapes: Vec::new(),
        }
    }

    pub fn with_attr(mut self, name: &str, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(name.to_owned(), value.into());
        self
    }

    pub fn with_input(mut self, node: &str, slot: usize) -> Self {
        self.inputs.push(InputRef::new(node, slot));
        self
    }

    pub fn with_output(mut self, shape: TensorShape) -> Self {
        self.output_shapes.push(shape);
        self
    }

    /// Sum of all output tensor sizes in bytes.
    pub fn output_bytes(&self) -> Option<u64> {
        self.output_shapes
            .iter()
            .try_fold(0u64, |acc, s| acc.checked_add(s.byte_size()?))
    }

    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    Compute,
    Link,
    CollectiveResource,
}

/// Bandwidth and fixed latency of a link-like device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// MB/s, where one MB is 2^20 bytes.
    pub throughput: f64,
    #[serde(default)]
    pub latency: f64,
}

/// An independently executing resource: a processor, a link, or a collective fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    #[serde(default)]
    pub hardware: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
}

impl DeviceSpec {
    pub fn compute(id: impl Into<String>, hardware: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: DeviceKind::Compute,
            hardware: hardware.into(),
            throughput: None,
            latency: None,
        }
    }

    pub fn link(id: impl Into<String>, throughput: f64, latency: f64) -> Self {
        Self {
            id: id.into(),
            kind: DeviceKind::Link,
            hardware: String::new(),
            throughput: Some(throughput),
            latency: Some(latency),
        }
    }

    pub fn collective(id: impl Into<String>, link: Option<LinkParams>) -> Self {
        Self {
            id: id.into(),
            kind: DeviceKind::CollectiveResource,
            hardware: String::new(),
            throughput: link.map(|l| l.throughput),
            latency: link.map(|l| l.latency),
        }
    }

    pub fn link_params(&self) -> Option<LinkParams> {
        self.throughput.map(|throughput| LinkParams {
            throughput,
            latency: self.latency.unwrap_or(0.0),
        })
    }

    pub fn is_communication(&self) -> bool {
        self.kind != DeviceKind::Compute
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u64>,
}

/// Immutable DAG of ops. Shapes live on producer nodes.
#[derive(Debug, Clone)]
pub struct DataflowGraph {
    nodes: Vec<OpNode>,
    devices: Vec<DeviceSpec>,
    metadata: GraphMetadata,
    index: HashMap<String, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl PartialEq for DataflowGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.devices == other.devices && self.metadata == other.metadata
    }
}

impl DataflowGraph {
    /// Builds a graph, rejecting duplicate ids and dangling or out-of-range inputs.
    pub fn new(nodes: Vec<OpNode>, devices: Vec<DeviceSpec>, metadata: GraphMetadata) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let mut preds = vec![Vec::new(); nodes.len()];
        let mut succs = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for input in &n.inputs {
                let &p = index.get(&input.node).ok_or_else(|| GraphError::DanglingInput {
                    node: n.id.clone(),
                    producer: input.node.clone(),
                })?;
                let available = nodes[p].output_shapes.len();
                if input.slot >= available {
                    return Err(GraphError::BadSlot {
                        node: n.id.clone(),
                        producer: input.node.clone(),
                        slot: input.slot,
                        available,
                    });
                }
                if !preds[i].contains(&p) {
                    preds[i].push(p);
                    succs[p].push(i);
                }
            }
        }
        Ok(Self {
            nodes,
            devices,
            metadata,
            index,
            preds,
            succs,
        })
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    pub fn metadata(&self) -> &GraphMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&OpNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    /// Distinct predecessor indices of node `i`, in first-input order.
    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    /// Decomposes the graph back into its parts.
    pub fn into_parts(self) -> (Vec<OpNode>, Vec<DeviceSpec>, GraphMetadata) {
        (self.nodes, self.devices, self.metadata)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> TensorShape {
        TensorShape::new(vec![], 4)
    }

    #[test]
    fn byte_size_handles_scalars_and_large_products() {
        assert_eq!(scalar().byte_size(), Some(4));
        assert_eq!(TensorShape::new(vec![64, 32, 32, 3], 4).byte_size(), Some(786_432));
        assert_eq!(TensorShape::new(vec![1 << 26, 1 << 27], 8).byte_size(), Some(1 << 56));
        assert_eq!(TensorShape::new(vec![0, 7], 4).byte_size(), Some(0));
        assert_eq!(TensorShape::new(vec![u64::MAX, 2], 1).byte_size(), None);
    }

    #[test]
    fn input_ref_parsing() {
        let r: InputRef = "conv1/w:2".parse().unwrap();
        assert_eq!(r, InputRef::new("conv1/w", 2));
        assert_eq!(r.to_string(), "conv1/w:2");
        let r: InputRef = "a:b:0".parse().unwrap();
        assert_eq!(r.node, "a:b");
        assert!("nocolon".parse::<InputRef>().is_err());
        assert!(":0".parse::<InputRef>().is_err());
        assert!("a:x".parse::<InputRef>().is_err());
    }

    #[test]
    fn construction_rejects_structural_errors() {
        let dev = vec![DeviceSpec::compute("gpu0", "")];
        let a = OpNode::new("A", "X", OpKind::Compute, "gpu0").with_output(scalar());
        let dup = DataflowGraph::new(vec![a.clone(), a.clone()], dev.clone(), Default::default());
        assert_eq!(dup.unwrap_err(), GraphError::DuplicateNode("A".into()));

        let b = OpNode::new("B", "X", OpKind::Compute, "gpu0").with_input("C", 0);
        let err = DataflowGraph::new(vec![a.clone(), b], dev.clone(), Default::default()).unwrap_err();
        assert!(matches!(err, GraphError::DanglingInput { ref producer, .. } if producer == "C"));

        let b = OpNode::new("B", "X", OpKind::Compute, "gpu0").with_input("A", 1);
        let err = DataflowGraph::new(vec![a, b], dev, Default::default()).unwrap_err();
        assert!(matches!(
            err,
            GraphError::BadSlot {
                slot: 1,
                available: 1,
                ..
            }
        ));
    }

    #[test]
    fn repeated_inputs_from_one_producer_form_one_edge() {
        let a = OpNode::new("A", "X", OpKind::Compute, "gpu0")
            .with_output(scalar())
            .with_output(scalar());
        let b = OpNode::new("B", "X", OpKind::Compute, "gpu0")
            .with_input("A", 0)
            .with_input("A", 1);
        let g = DataflowGraph::new(vec![a, b], vec![DeviceSpec::compute("gpu0", "")], Default::default()).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.preds(1), &[0]);
    }
}
