//! Trace files, bottleneck summaries, and measured-vs-simulated tables.

mod compare;
mod trace;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::graph::{critical_path, CriticalPath, DataflowGraph, DeviceKind, GraphError};
use crate::sim::Schedule;

pub use compare::{compare, render_comparison, Comparison, ComparisonRow};
pub use trace::{read_trace, to_trace, trace_us, TraceInterval};

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("scheduled node {0:?} is not in the graph")]
    UnknownNode(String),
    #[error("node {node:?} is scheduled on {scheduled:?} but placed on {placed:?}")]
    DeviceMismatch {
        node: String,
        scheduled: String,
        placed: String,
    },
    #[error("node {0:?} is scheduled more than once")]
    Duplicate(String),
    #[error("schedule has {scheduled} nodes, graph has {graph}")]
    Count { scheduled: usize, graph: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceUsage {
    pub device: String,
    pub kind: DeviceKind,
    pub busy_us: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpShare {
    pub op_type: String,
    pub total_us: f64,
    /// Fraction of the summed duration of all scheduled nodes.
    pub share: f64,
}

/// Wall-clock coverage: `compute_us` is the time at least one compute device is
/// busy, `comm_us` the same for link and collective devices, and `overlap_us`
/// the time both hold at once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ComputeVsComm {
    pub compute_us: f64,
    pub comm_us: f64,
    pub overlap_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub makespan: f64,
    pub devices: Vec<DeviceUsage>,
    pub top_ops: Vec<OpShare>,
    pub compute_vs_comm: ComputeVsComm,
    pub critical_path: Vec<String>,
    pub critical_path_us: f64,
}

pub fn summarize(s: &Schedule, g: &DataflowGraph, top_k: usize) -> Result<SummaryReport, ReportError> {
    let mut seen = HashSet::new();
    for e in &s.entries {
        let n = g
            .node(&e.node)
            .ok_or_else(|| ReportError::UnknownNode(e.node.clone()))?;
        if n.device != e.device {
            return Err(ReportError::DeviceMismatch {
                node: e.node.clone(),
                scheduled: e.device.clone(),
                placed: n.device.clone(),
            });
        }
        if !seen.insert(e.node.as_str()) {
            return Err(ReportError::Duplicate(e.node.clone()));
        }
    }
    if s.entries.len() != g.len() {
        return Err(ReportError::Count {
            scheduled: s.entries.len(),
            graph: g.len(),
        });
    }

    let mut busy: BTreeMap<&str, f64> = g.devices().iter().map(|d| (d.id.as_str(), 0.0)).collect();
    let mut by_op: BTreeMap<&str, f64> = BTreeMap::new();
    let mut total = 0.0;
    // entries in a canonical order so float sums do not depend on input order
    let mut sorted: Vec<_> = s.entries.iter().collect();
    sorted.sort_by(|a, b| a.node.cmp(&b.node));
    for e in &sorted {
        let d = e.duration();
        *busy.entry(e.device.as_str()).or_default() += d;
        *by_op.entry(e.op_type.as_str()).or_default() += d;
        total += d;
    }

    let devices = g
        .devices()
        .iter()
        .map(|d| {
            let b = busy[d.id.as_str()];
            DeviceUsage {
                device: d.id.clone(),
                kind: d.kind,
                busy_us: b,
                utilization: if s.makespan > 0.0 { b / s.makespan } else { 0.0 },
            }
        })
        .collect();

    let mut top_ops: Vec<OpShare> = by_op
        .into_iter()
        .map(|(op, t)| OpShare {
            op_type: op.to_owned(),
            total_us: t,
            share: if total > 0.0 { t / total } else { 0.0 },
        })
        .collect();
    top_ops.sort_by(|a, b| {
        b.total_us
            .total_cmp(&a.total_us)
            .then_with(|| a.op_type.cmp(&b.op_type))
    });
    top_ops.truncate(top_k);

    let durations: BTreeMap<String, f64> = s.entries.iter().map(|e| (e.node.clone(), e.duration())).collect();
    let CriticalPath { length, path } = critical_path(g, &durations)?;

    Ok(SummaryReport {
        makespan: s.makespan,
        devices,
        top_ops,
        compute_vs_comm: compute_vs_comm(s, g),
        critical_path: path,
        critical_path_us: length,
    })
}

/// Interval sweep over start/finish events.
pub fn compute_vs_comm(s: &Schedule, g: &DataflowGraph) -> ComputeVsComm {
    let mut events: Vec<(f64, bool, i32)> = Vec::with_capacity(2 * s.entries.len());
    for e in s.entries.iter().filter(|e| e.finish > e.start) {
        let comm = g.device(&e.device).is_some_and(|d| d.is_communication());
        events.push((e.start, comm, 1));
        events.push((e.finish, comm, -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out = ComputeVsComm::default();
    let (mut compute, mut comm) = (0i32, 0i32);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            let (_, is_comm, delta) = events[i];
            if is_comm {
                comm += delta;
            } else {
                compute += delta;
            }
            i += 1;
        }
        if let Some(&(next, _, _)) = events.get(i) {
            let span = next - t;
            if compute > 0 {
                out.compute_us += span;
            }
            if comm > 0 {
                out.comm_us += span;
            }
            if compute > 0 && comm > 0 {
                out.overlap_us += span;
            }
        }
    }
    out
}

pub fn render_text(r: &SummaryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "makespan: {:.2} ms ({} us)", r.makespan / 1000.0, r.makespan);
    let _ = writeln!(out, "\ndevices:");
    for d in &r.devices {
        let _ = writeln!(
            out,
            "  {:<24} {:<18} busy {:>14.3} us  util {:>6.2}%",
            d.device,
            format!("{:?}", d.kind),
            d.busy_us,
            d.utilization * 100.0
        );
    }
    let _ = writeln!(out, "\ntop ops:");
    for op in &r.top_ops {
        let _ = writeln!(
            out,
            "  {:<24} {:>14.3} us  {:>6.2}%",
            op.op_type,
            op.total_us,
            op.share * 100.0
        );
    }
    let c = r.compute_vs_comm;
    let _ = writeln!(out, "\ncompute: {:.3} us", c.compute_us);
    let _ = writeln!(out, "communication: {:.3} us", c.comm_us);
    let _ = writeln!(out, "overlap: {:.3} us", c.overlap_us);
    let _ = writeln!(
        out,
        "\ncritical path: {:.3} us over {} nodes",
        r.critical_path_us,
        r.critical_path.len()
    );
    for id in &r.critical_path {
        let _ = writeln!(out, "  {id}");
    }
    out
}

/// One row per device: `device,kind,busy_us,utilization`.
pub fn render_csv(r: &SummaryReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["device", "kind", "busy_us", "utilization"])
        .expect("in-memory write");
    for d in &r.devices {
        w.write_record([
            d.device.clone(),
            format!("{:?}", d.kind),
            d.busy_us.to_string(),
            d.utilization.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
