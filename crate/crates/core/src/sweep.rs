//! Batches of independent simulations, for what-if sweeps.
//!
//! Jobs share no mutable state, so the parallel and sequential runners return
//! identical results in job order.

use crate::cost::{DurationSource, DurationTable};
use crate::graph::DataflowGraph;
use crate::par;
use crate::sim::{simulate, Schedule, SimError};

#[derive(Debug, Clone)]
pub struct SimJob<'a> {
    pub name: String,
    pub graph: &'a DataflowGraph,
    pub durations: DurationTable,
}

/// Runs every job on the rayon pool when the `parallel` feature is enabled,
/// sequentially otherwise.
pub fn run_parallel(jobs: &[SimJob<'_>]) -> Vec<Result<Schedule, SimError>> {
    par::map(jobs, |j| simulate(j.graph, &j.durations))
}

pub fn run_sequential(jobs: &[SimJob<'_>]) -> Vec<Result<Schedule, SimError>> {
    par::map_sequential(jobs, |j| simulate(j.graph, &j.durations))
}

/// Every duration multiplied by `factor`, sources kept.
pub fn scale_durations(table: &DurationTable, factor: f64) -> DurationTable {
    let mut out = DurationTable::new();
    for (id, e) in table.iter() {
        out.insert(id, e.duration * factor, e.source);
    }
    out
}

/// `table` with the named nodes inflated by `factor`. Inflated entries are
/// marked as overrides.
pub fn inflate(table: &DurationTable, nodes: &[&str], factor: f64) -> DurationTable {
    let mut out = table.clone();
    for &id in nodes {
        if let Some(d) = table.duration(id) {
            out.insert(id, d * factor, DurationSource::Override);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_durations, gen_graph, DurationLaw, GraphKind, SynthSpec};

    #[test]
    fn parallel_matches_sequential() {
        let mut spec = SynthSpec::new(
            GraphKind::RandomDag { n: 60, density: 0.1 },
            5,
            DurationLaw::Uniform { lo: 1.0, hi: 20.0 },
        );
        spec.devices = 3;
        let g = gen_graph(&spec).unwrap();
        let base = gen_durations(&spec, &g);
        let jobs: Vec<SimJob> = (1..=8)
            .map(|k| SimJob {
                name: format!("x{k}"),
                graph: &g,
                durations: scale_durations(&base, k as f64),
            })
            .collect();
        let a = run_parallel(&jobs);
        assert_eq!(a, run_sequential(&jobs));
        let m1 = a[0].as_ref().unwrap().makespan;
        assert_eq!(a[3].as_ref().unwrap().makespan, 4.0 * m1);
    }

    #[test]
    fn inflate_touches_only_named_nodes() {
        let mut t = DurationTable::new();
        t.insert("a", 2.0, DurationSource::ExactRecord);
        t.insert("b", 3.0, DurationSource::ExactRecord);
        let u = inflate(&t, &["b", "zz"], 2.0);
        assert_eq!(u.duration("a"), Some(2.0));
        assert_eq!(u.duration("b"), Some(6.0));
        assert_eq!(u.get("b").unwrap().source, DurationSource::Override);
        assert_eq!(u.len(), 2);
    }
}
