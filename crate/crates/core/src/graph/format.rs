//! JSON encoding of the unified graph format.
//!
//! ```json
//! { "format_version": 1,
//!   "metadata": { "model": "vgg", "framework": "tf-1.13", "batch_size": 64 },
//!   "devices": [ { "id": "gpu0", "kind": "Compute", "hardware": "V100" } ],
//!   "nodes": [ { "id": "conv1", "op": "Conv2D", "kind": "Compute", "device": "gpu0",
//!                "attrs": { "stride": 1 }, "inputs": ["data:0"],
//!                "output_shapes": [ { "dims": [64, 32, 32, 64], "dtype_bytes": 4 } ] } ] }
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AttrValue, DataflowGraph, DeviceKind, DeviceSpec, GraphError, GraphMetadata, InputRef, OpKind, OpNode, TensorShape,
};

pub const FORMAT_VERSION: u64 = 1;

/// A parsed graph plus the unknown fields that were skipped.
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: DataflowGraph,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<Value>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    format_version: u64,
    #[serde(default)]
    metadata: MetadataDoc,
    devices: Vec<DeviceDoc>,
    nodes: Vec<NodeDoc>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

#[derive(Default, Serialize, Deserialize)]
struct MetadataDoc {
    #[serde(flatten)]
    known: GraphMetadata,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct DeviceDoc {
    id: String,
    kind: DeviceKind,
    #[serde(default)]
    hardware: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    throughput: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency: Option<f64>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    op: String,
    kind: OpKind,
    device: String,
    #[serde(default)]
    attrs: BTreeMap<String, AttrValue>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    output_shapes: Vec<TensorShape>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, Value>,
}

fn positioned(e: serde_json::Error) -> GraphError {
    let (line, column, message) = (e.line(), e.column(), e.to_string());
    if e.is_data() {
        GraphError::Schema { line, column, message }
    } else {
        GraphError::Syntax { line, column, message }
    }
}

fn note_extra(warnings: &mut Vec<String>, location: &str, extra: &BTreeMap<String, Value>) {
    for key in extra.keys() {
        warnings.push(format!("ignoring unknown field {key:?} in {location}"));
    }
}

/// Parses a unified-format document. Unknown fields are skipped and reported.
pub fn parse_graph(text: &str) -> Result<ParsedGraph, GraphError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(positioned)?;
    match probe.format_version {
        Some(Value::Number(n)) if n.as_u64() == Some(FORMAT_VERSION) => {}
        Some(Value::Number(n)) => {
            let major = n.as_f64().map(|v| v.trunc() as u64).unwrap_or(u64::MAX);
            return Err(GraphError::UnsupportedVersion(major));
        }
        _ => {
            return Err(GraphError::Schema {
                line: 1,
                column: 1,
                message: "missing or non-integer field `format_version`".into(),
            })
        }
    }

    let doc: GraphDoc = serde_json::from_str(text).map_err(positioned)?;
    let mut warnings = Vec::new();
    note_extra(&mut warnings, "document", &doc.extra);
    note_extra(&mut warnings, "metadata", &doc.metadata.extra);

    let devices = doc
        .devices
        .into_iter()
        .map(|d| {
            note_extra(&mut warnings, &format!("device {:?}", d.id), &d.extra);
            DeviceSpec {
                id: d.id,
                kind: d.kind,
                hardware: d.hardware,
                throughput: d.throughput,
                latency: d.latency,
            }
        })
        .collect();

    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for n in doc.nodes {
        note_extra(&mut warnings, &format!("node {:?}", n.id), &n.extra);
        let inputs = n
            .inputs
            .iter()
            .map(|s| s.parse::<InputRef>())
            .collect::<Result<Vec<_>, _>>()?;
        nodes.push(OpNode {
            id: n.id,
            op_type: n.op,
            kind: n.kind,
            device: n.device,
            attrs: n.attrs,
            inputs,
            output_shapes: n.output_shapes,
        });
    }

    let graph = DataflowGraph::new(nodes, devices, doc.metadata.known)?;
    Ok(ParsedGraph { graph, warnings })
}

/// Renders a graph as a pretty-printed unified-format document. Output is a pure
/// function of the graph.
pub fn serialize_graph(g: &DataflowGraph) -> String {
    let doc = GraphDoc {
        format_version: FORMAT_VERSION,
        metadata: MetadataDoc {
            known: g.metadata().clone(),
            extra: BTreeMap::new(),
        },
        devices: g
            .devices()
            .iter()
            .map(|d| DeviceDoc {
                id: d.id.clone(),
                kind: d.kind,
                hardware: d.hardware.clone(),
                throughput: d.throughput,
                latency: d.latency,
                extra: BTreeMap::new(),
            })
            .collect(),
        nodes: g
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                op: n.op_type.clone(),
                kind: n.kind,
                device: n.device.clone(),
                attrs: n.attrs.clone(),
                inputs: n.inputs.iter().map(ToString::to_string).collect(),
                output_shapes: n.output_shapes.clone(),
                extra: BTreeMap::new(),
            })
            .collect(),
        extra: BTreeMap::new(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("graph documents always serialize");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
      "format_version": 1,
      "metadata": {"model": "toy", "batch_size": 8},
      "devices": [{"id": "gpu0", "kind": "Compute", "hardware": "V100"}],
      "nodes": [
        {"id": "A", "op": "MatMul", "kind": "Compute", "device": "gpu0",
         "attrs": {"units": 16, "alpha": 0.5, "layout": "NHWC"},
         "output_shapes": [{"dims": [8, 16], "dtype_bytes": 4}]},
        {"id": "B", "op": "Relu", "kind": "Compute", "device": "gpu0", "inputs": ["A:0"],
         "output_shapes": [{"dims": [8, 16], "dtype_bytes": 4}]}
      ]
    }"#;

    #[test]
    fn parses_minimal_chain() {
        let parsed = parse_graph(CHAIN).unwrap();
        let g = &parsed.graph;
        assert_eq!(g.len(), 2);
        assert_eq!(g.edge_count(), 1);
        assert!(parsed.warnings.is_empty());
        let a = g.node("A").unwrap();
        assert_eq!(a.attr("units"), Some(&AttrValue::Int(16)));
        assert_eq!(a.attr("alpha"), Some(&AttrValue::Float(0.5)));
        assert_eq!(a.attr("layout"), Some(&AttrValue::Str("NHWC".into())));
        assert_eq!(g.metadata().batch_size, Some(8));
    }

    #[test]
    fn dangling_reference_names_missing_node() {
        let text = CHAIN.replace("\"A:0\"", "\"C:0\"");
        let err = parse_graph(&text).unwrap_err();
        assert!(matches!(err, GraphError::DanglingInput { ref producer, .. } if producer == "C"));
        assert!(err.to_string().contains("\"C\""));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = CHAIN.replace("\"id\": \"B\"", "\"id\": \"A\"");
        assert_eq!(parse_graph(&text).unwrap_err(), GraphError::DuplicateNode("A".into()));
    }

    #[test]
    fn syntax_error_is_positioned() {
        let text = "{\n  \"format_version\": 1,\n  \"nodes\": [ oops ]\n}";
        match parse_graph(text).unwrap_err() {
            GraphError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_required_field_is_reported() {
        let text = CHAIN.replace("\"op\": \"Relu\", ", "");
        let err = parse_graph(&text).unwrap_err();
        assert!(matches!(err, GraphError::Schema { .. }));
        assert!(err.to_string().contains("`op`"), "{err}");
    }

    #[test]
    fn unknown_major_version_rejected() {
        let text = CHAIN.replace("\"format_version\": 1", "\"format_version\": 2");
        assert_eq!(parse_graph(&text).unwrap_err(), GraphError::UnsupportedVersion(2));
        let text = CHAIN.replace("\"format_version\": 1,", "");
        assert!(matches!(parse_graph(&text).unwrap_err(), GraphError::Schema { .. }));
    }

    #[test]
    fn unknown_fields_warn_without_failing() {
        let text = CHAIN
            .replace("\"format_version\": 1,", "\"format_version\": 1, \"producer\": \"x\",")
            .replace("\"id\": \"B\",", "\"id\": \"B\", \"color\": \"red\",");
        let parsed = parse_graph(&text).unwrap();
        assert_eq!(parsed.warnings.len(), 2);
        assert!(parsed
            .warnings
            .iter()
            .any(|w| w.contains("color") && w.contains("\"B\"")));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let g = parse_graph(CHAIN).unwrap().graph;
        let text = serialize_graph(&g);
        let back = parse_graph(&text).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.graph, g);
        assert_eq!(serialize_graph(&back.graph), text);
    }
}
