use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;

use super::{DataflowGraph, DeviceKind, GraphError, OpKind};

/// One broken invariant. Findings are data; validation itself never fails.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    Cycle(Vec<String>),
    UnknownDevice { node: String, device: String },
    DuplicateDevice(String),
    BadDevice { device: String, reason: String },
    BadCommAttrs { node: String, reason: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Cycle(ids) => write!(f, "cycle: {}", ids.join(" -> ")),
            Finding::UnknownDevice { node, device } => {
                write!(f, "node {node:?} placed on unknown device {device:?}")
            }
            Finding::DuplicateDevice(d) => write!(f, "device {d:?} declared more than once"),
            Finding::BadDevice { device, reason } => write!(f, "device {device:?}: {reason}"),
            Finding::BadCommAttrs { node, reason } => write!(f, "node {node:?}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate(g: &DataflowGraph) -> ValidationReport {
    let mut findings = Vec::new();

    let mut seen = HashSet::new();
    for d in g.devices() {
        if !seen.insert(d.id.as_str()) {
            findings.push(Finding::DuplicateDevice(d.id.clone()));
        }
        let bad = |reason: &str| Finding::BadDevice {
            device: d.id.clone(),
            reason: reason.to_owned(),
        };
        match (d.kind, d.throughput) {
            (DeviceKind::Compute, Some(_)) => findings.push(bad("compute devices carry no throughput")),
            (DeviceKind::Link, None) => findings.push(bad("link devices need a throughput")),
            (_, Some(t)) if !(t.is_finite() && t > 0.0) => findings.push(bad("throughput must be finite and positive")),
            _ => {}
        }
        if let Some(l) = d.latency {
            if !(l.is_finite() && l >= 0.0) {
                findings.push(bad("latency must be finite and non-negative"));
            }
        }
    }

    for n in g.nodes() {
        if !seen.contains(n.device.as_str()) {
            findings.push(Finding::UnknownDevice {
                node: n.id.clone(),
                device: n.device.clone(),
            });
        }
        let comm = |reason: &str| Finding::BadCommAttrs {
            node: n.id.clone(),
            reason: reason.to_owned(),
        };
        let positive_bytes = n.attr("bytes").and_then(|b| b.as_u64()).is_some_and(|b| b > 0);
        match n.kind {
            OpKind::Compute => {}
            OpKind::Collective => {
                match n.attr("group").and_then(|v| v.as_list()) {
                    Some(group) if group.len() >= 2 => {}
                    _ => findings.push(comm("collective needs attr \"group\" with at least 2 devices")),
                }
                if !positive_bytes {
                    findings.push(comm("collective needs integer attr \"bytes\" > 0"));
                }
            }
            OpKind::Transfer => {
                let src = n.attr("src_device").and_then(|v| v.as_str());
                let dst = n.attr("dst_device").and_then(|v| v.as_str());
                match (src, dst) {
                    (Some(s), Some(d)) if s != d => {}
                    (Some(_), Some(_)) => findings.push(comm("transfer src_device equals dst_device")),
                    _ => findings.push(comm("transfer needs attrs \"src_device\" and \"dst_device\"")),
                }
                if !positive_bytes {
                    findings.push(comm("transfer needs integer attr \"bytes\" > 0"));
                }
            }
        }
    }

    if let Some(cycle) = find_cycle(g) {
        findings.push(Finding::Cycle(cycle));
    }
    ValidationReport { findings }
}

/// Iterative three-colour DFS; returns the node ids of the first back-edge cycle.
fn find_cycle(g: &DataflowGraph) -> Option<Vec<String>> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; g.len()];
    for root in 0..g.len() {
        if color[root] != WHITE {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = GREY;
        while let Some(top) = stack.last_mut() {
            let v = top.0;
            if let Some(&s) = g.succs(v).get(top.1) {
                top.1 += 1;
                match color[s] {
                    WHITE => {
                        color[s] = GREY;
                        stack.push((s, 0));
                    }
                    GREY => {
                        let start = stack.iter().position(|&(u, _)| u == s).unwrap();
                        return Some(stack[start..].iter().map(|&(u, _)| g.nodes()[u].id.clone()).collect());
                    }
                    _ => {}
                }
            } else {
                color[v] = BLACK;
                stack.pop();
            }
        }
    }
    None
}

/// Kahn's algorithm with a min-heap on node id. On a cycle, returns the
/// indices that could not be ordered.
pub(crate) fn topo_indices(g: &DataflowGraph) -> Result<Vec<usize>, Vec<usize>> {
    let nodes = g.nodes();
    let mut indeg: Vec<usize> = (0..g.len()).map(|i| g.preds(i).len()).collect();
    let mut heap: BinaryHeap<Reverse<(&str, usize)>> = indeg
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d == 0)
        .map(|(i, _)| Reverse((nodes[i].id.as_str(), i)))
        .collect();
    let mut order = Vec::with_capacity(g.len());
    while let Some(Reverse((_, v))) = heap.pop() {
        order.push(v);
        for &s in g.succs(v) {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse((nodes[s].id.as_str(), s)));
            }
        }
    }
    if order.len() == g.len() {
        Ok(order)
    } else {
        Err((0..g.len()).filter(|&i| indeg[i] > 0).collect())
    }
}

/// Deterministic topological order; ready ties go to the lexicographically
/// smallest id.
pub fn topological_order(g: &DataflowGraph) -> Result<Vec<String>, GraphError> {
    let ids = |idx: Vec<usize>| idx.into_iter().map(|i| g.nodes()[i].id.clone()).collect();
    match topo_indices(g) {
        Ok(order) => Ok(ids(order)),
        Err(rest) => Err(GraphError::Cycle(ids(rest))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPath {
    pub length: f64,
    pub path: Vec<String>,
}

pub fn critical_path(g: &DataflowGraph, durations: &BTreeMap<String, f64>) -> Result<CriticalPath, GraphError> {
    let mut dur = Vec::with_capacity(g.len());
    for n in g.nodes() {
        let d = *durations
            .get(&n.id)
            .ok_or_else(|| GraphError::MissingDuration(n.id.clone()))?;
        if !(d.is_finite() && d >= 0.0) {
            return Err(GraphError::BadDuration {
                node: n.id.clone(),
                value: d,
            });
        }
        dur.push(d);
    }
    critical_path_by_index(g, &dur)
}

pub(crate) fn critical_path_by_index(g: &DataflowGraph, dur: &[f64]) -> Result<CriticalPath, GraphError> {
    let order = topo_indices(g)
        .map_err(|rest| GraphError::Cycle(rest.into_iter().map(|i| g.nodes()[i].id.clone()).collect()))?;
    let id = |i: usize| g.nodes()[i].id.as_str();

    // tail[v]: longest path weight starting at v and ending at a sink.
    let mut tail = vec![0.0f64; g.len()];
    for &v in order.iter().rev() {
        let best = g.succs(v).iter().map(|&s| tail[s]).fold(0.0, f64::max);
        tail[v] = dur[v] + best;
    }

    let start = (0..g.len())
        .filter(|&v| g.preds(v).is_empty())
        .min_by(|&a, &b| tail[b].total_cmp(&tail[a]).then_with(|| id(a).cmp(id(b))));
    let Some(mut v) = start else {
        return Ok(CriticalPath {
            length: 0.0,
            path: Vec::new(),
        });
    };
    let length = tail[v];
    let mut path = vec![id(v).to_owned()];
    loop {
        let next = g
            .succs(v)
            .iter()
            .copied()
            .filter(|&s| dur[v] + tail[s] == tail[v])
            .min_by(|&a, &b| id(a).cmp(id(b)));
        match next {
            Some(s) => {
                path.push(id(s).to_owned());
                v = s;
            }
            None => break,
        }
    }
    Ok(CriticalPath { length, path })
}
