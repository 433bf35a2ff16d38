//! Deterministic replay of a dataflow graph on per-device FIFO queues.
//!
//! Every node starts with a dependency counter equal to its number of distinct
//! predecessors. Nodes whose counter is zero sit in the ready list and are
//! appended to their device's queue in ready order, ties broken by node id.
//! A device runs one node at a time, without preemption. When a node finishes,
//! its successors' counters drop; those reaching zero become ready at that
//! finish time. All finish events at one instant are handled as a batch
//! before any device is dispatched.

mod naive;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::cost::{DurationSource, DurationTable};
use crate::graph::{DataflowGraph, OpKind};

pub use naive::naive_simulate;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("no duration for node {0:?}")]
    MissingDuration(String),
    #[error("negative or non-finite duration {value} for node {node:?}")]
    BadDuration { node: String, value: f64 },
    #[error("node {node:?} is placed on unknown device {device:?}")]
    UnknownDevice { node: String, device: String },
    #[error("graph has a cycle; {} node(s) never became ready", .0.len())]
    Cycle(Vec<String>),
    #[error("tick must be finite and > 0, got {0}")]
    BadTick(f64),
    #[error("duration {duration} of node {node:?} is not a multiple of tick {tick}")]
    NotTickAligned { node: String, duration: f64, tick: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledNode {
    pub node: String,
    pub op_type: String,
    pub kind: OpKind,
    pub device: String,
    pub start: f64,
    pub finish: f64,
    pub source: DurationSource,
}

impl ScheduledNode {
    pub fn duration(&self) -> f64 {
        self.finish - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Sorted by (start, node id).
    pub entries: Vec<ScheduledNode>,
    pub makespan: f64,
    /// Busy microseconds for every device of the graph, including idle ones.
    pub per_device_busy: BTreeMap<String, f64>,
}

impl Schedule {
    pub fn total_duration(&self) -> f64 {
        self.entries.iter().map(|e| e.finish - e.start).sum()
    }

    pub fn entry(&self, node: &str) -> Option<&ScheduledNode> {
        self.entries.iter().find(|e| e.node == node)
    }
}

/// Per-node inputs resolved to indices once, shared by both simulators.
pub(crate) struct Prepared {
    pub dur: Vec<f64>,
    pub source: Vec<DurationSource>,
    pub device: Vec<usize>,
    /// Position of each node in lexicographic id order.
    pub rank: Vec<usize>,
    pub device_ids: Vec<String>,
}

pub(crate) fn prepare(g: &DataflowGraph, durations: &DurationTable) -> Result<Prepared, SimError> {
    let device_ids: Vec<String> = g.devices().iter().map(|d| d.id.clone()).collect();
    let dev_index: BTreeMap<&str, usize> = device_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let mut dur = Vec::with_capacity(g.len());
    let mut source = Vec::with_capacity(g.len());
    let mut device = Vec::with_capacity(g.len());
    for n in g.nodes() {
        let e = durations
            .get(&n.id)
            .ok_or_else(|| SimError::MissingDuration(n.id.clone()))?;
        if !(e.duration.is_finite() && e.duration >= 0.0) {
            return Err(SimError::BadDuration {
                node: n.id.clone(),
                value: e.duration,
            });
        }
        dur.push(e.duration);
        source.push(e.source);
        device.push(
            *dev_index
                .get(n.device.as_str())
                .ok_or_else(|| SimError::UnknownDevice {
                    node: n.id.clone(),
                    device: n.device.clone(),
                })?,
        );
    }
    let mut by_id: Vec<usize> = (0..g.len()).collect();
    by_id.sort_by(|&a, &b| g.nodes()[a].id.cmp(&g.nodes()[b].id));
    let mut rank = vec![0; g.len()];
    for (r, &i) in by_id.iter().enumerate() {
        rank[i] = r;
    }
    Ok(Prepared {
        dur,
        source,
        device,
        rank,
        device_ids,
    })
}

pub(crate) fn assemble(g: &DataflowGraph, prep: &Prepared, start: &[f64], finish: &[f64]) -> Schedule {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| start[a].total_cmp(&start[b]).then(prep.rank[a].cmp(&prep.rank[b])));
    let mut per_device_busy: BTreeMap<String, f64> = prep.device_ids.iter().map(|d| (d.clone(), 0.0)).collect();
    let mut makespan = 0.0f64;
    let entries = order
        .into_iter()
        .map(|i| {
            let n = &g.nodes()[i];
            *per_device_busy.get_mut(&prep.device_ids[prep.device[i]]).unwrap() += finish[i] - start[i];
            makespan = makespan.max(finish[i]);
            ScheduledNode {
                node: n.id.clone(),
                op_type: n.op_type.clone(),
                kind: n.kind,
                device: n.device.clone(),
                start: start[i],
                finish: finish[i],
                source: prep.source[i],
            }
        })
        .collect();
    Schedule {
        entries,
        makespan,
        per_device_busy,
    }
}

pub(crate) fn unfinished(g: &DataflowGraph, done: &[bool]) -> Vec<String> {
    g.nodes()
        .iter()
        .zip(done)
        .filter(|(_, &d)| !d)
        .map(|(n, _)| n.id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Finish {
    time: f64,
    rank: usize,
    node: usize,
}

impl PartialEq for Finish {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Finish {}

impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Finish {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.rank.cmp(&other.rank))
    }
}

struct Running<'a> {
    busy: Vec<bool>,
    start: &'a mut [f64],
    finish: &'a mut [f64],
    events: &'a mut BinaryHeap<Reverse<Finish>>,
}

impl Running<'_> {
    fn dispatch(&mut self, now: f64, prep: &Prepared, queues: &mut [VecDeque<usize>]) {
        for (d, q) in queues.iter_mut().enumerate() {
            if self.busy[d] {
                continue;
            }
            if let Some(v) = q.pop_front() {
                self.busy[d] = true;
                self.start[v] = now;
                self.finish[v] = now + prep.dur[v];
                self.events.push(Reverse(Finish {
                    time: self.finish[v],
                    rank: prep.rank[v],
                    node: v,
                }));
            }
        }
    }
}

/// Event-driven list scheduling. Identical inputs give bit-identical schedules.
pub fn simulate(g: &DataflowGraph, durations: &DurationTable) -> Result<Schedule, SimError> {
    let prep = prepare(g, durations)?;
    let n = g.len();
    let mut pending: Vec<usize> = (0..n).map(|i| g.preds(i).len()).collect();
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); prep.device_ids.len()];
    let busy = vec![false; prep.device_ids.len()];
    let mut start = vec![0.0; n];
    let mut finish = vec![0.0; n];
    let mut done = vec![false; n];
    let mut events: BinaryHeap<Reverse<Finish>> = BinaryHeap::new();

    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    ready.sort_by_key(|&i| prep.rank[i]);
    for &v in &ready {
        queues[prep.device[v]].push_back(v);
    }

    let mut run = Running {
        busy,
        start: &mut start,
        finish: &mut finish,
        events: &mut events,
    };
    run.dispatch(0.0, &prep, &mut queues);

    let mut batch = Vec::new();
    while let Some(Reverse(first)) = run.events.pop() {
        let now = first.time;
        batch.clear();
        batch.push(first.node);
        while let Some(Reverse(next)) = run.events.peek() {
            if next.time != now {
                break;
            }
            batch.push(next.node);
            run.events.pop();
        }
        ready.clear();
        for &v in &batch {
            done[v] = true;
            run.busy[prep.device[v]] = false;
            for &s in g.succs(v) {
                pending[s] -= 1;
                if pending[s] == 0 {
                    ready.push(s);
                }
            }
        }
        ready.sort_by_key(|&i| prep.rank[i]);
        for &v in &ready {
            queues[prep.device[v]].push_back(v);
        }
        run.dispatch(now, &prep, &mut queues);
    }

    if done.iter().any(|&d| !d) {
        return Err(SimError::Cycle(unfinished(g, &done)));
    }
    Ok(assemble(g, &prep, &start, &finish))
}

/// Busy fraction per device. A zero makespan gives zero for every device.
pub fn utilization(s: &Schedule) -> BTreeMap<String, f64> {
    s.per_device_busy
        .iter()
        .map(|(d, &busy)| {
            let u = if s.makespan > 0.0 { busy / s.makespan } else { 0.0 };
            (d.clone(), u)
        })
        .collect()
}
