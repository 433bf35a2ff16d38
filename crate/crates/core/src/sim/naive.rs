//! Fixed-tick reference simulator. Slow, simple, and used as the oracle for
//! [`super::simulate`].

use std::collections::VecDeque;

use super::{assemble, prepare, unfinished, Schedule, SimError};
use crate::cost::DurationTable;
use crate::graph::DataflowGraph;

/// Advances a global clock in steps of `tick`, applying at each step the same
/// ready/FIFO/tie-break rules as the event-driven engine. Every duration must
/// be a whole number of ticks.
pub fn naive_simulate(g: &DataflowGraph, durations: &DurationTable, tick: f64) -> Result<Schedule, SimError> {
    if !(tick.is_finite() && tick > 0.0) {
        return Err(SimError::BadTick(tick));
    }
    let prep = prepare(g, durations)?;
    let n = g.len();
    let mut ticks = Vec::with_capacity(n);
    for (i, &d) in prep.dur.iter().enumerate() {
        let q = d / tick;
        if q.fract() != 0.0 || q > (1u64 << 53) as f64 {
            return Err(SimError::NotTickAligned {
                node: g.nodes()[i].id.clone(),
                duration: d,
                tick,
            });
        }
        ticks.push(q as u64);
    }

    let devices = prep.device_ids.len();
    let mut waiting_on: Vec<usize> = (0..n).map(|i| g.preds(i).len()).collect();
    let mut queue: Vec<VecDeque<usize>> = vec![VecDeque::new(); devices];
    // (node, finish tick) currently occupying each device
    let mut running: Vec<Option<(usize, u64)>> = vec![None; devices];
    let mut start_tick = vec![0u64; n];
    let mut finish_tick = vec![0u64; n];
    let mut done = vec![false; n];
    let mut completed = 0;

    let mut initial: Vec<usize> = (0..n).filter(|&i| waiting_on[i] == 0).collect();
    initial.sort_by_key(|&i| prep.rank[i]);
    for i in initial {
        queue[prep.device[i]].push_back(i);
    }

    let mut now: u64 = 0;
    loop {
        // several rounds per tick: zero-length nodes finish in the round after they start
        loop {
            let mut finished: Vec<usize> = running
                .iter()
                .flatten()
                .filter(|&&(_, f)| f == now)
                .map(|&(v, _)| v)
                .collect();
            finished.sort_by_key(|&v| prep.rank[v]);

            let mut newly_ready = Vec::new();
            for &v in &finished {
                running[prep.device[v]] = None;
                done[v] = true;
                completed += 1;
                for &s in g.succs(v) {
                    waiting_on[s] -= 1;
                    if waiting_on[s] == 0 {
                        newly_ready.push(s);
                    }
                }
            }
            newly_ready.sort_by_key(|&v| prep.rank[v]);
            for v in newly_ready {
                queue[prep.device[v]].push_back(v);
            }

            let mut started = false;
            for d in 0..devices {
                if running[d].is_none() {
                    if let Some(v) = queue[d].pop_front() {
                        start_tick[v] = now;
                        finish_tick[v] = now + ticks[v];
                        running[d] = Some((v, finish_tick[v]));
                        started = true;
                    }
                }
            }
            if finished.is_empty() && !started {
                break;
            }
        }

        if completed == n {
            break;
        }
        if running.iter().all(Option::is_none) {
            return Err(SimError::Cycle(unfinished(g, &done)));
        }
        now += 1;
    }

    let start: Vec<f64> = start_tick.iter().map(|&k| k as f64 * tick).collect();
    let finish: Vec<f64> = (0..n).map(|i| start[i] + prep.dur[i]).collect();
    Ok(assemble(g, &prep, &start, &finish))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::DurationSource;
    use crate::graph::{DeviceSpec, OpKind, OpNode, TensorShape};
    use crate::sim::simulate;

    fn node(id: &str, device: &str, inputs: &[&str]) -> OpNode {
        let mut n = OpNode::new(id, "X", OpKind::Compute, device).with_output(TensorShape::new(vec![], 4));
        for i in inputs {
            n = n.with_input(i, 0);
        }
        n
    }

    fn graph(nodes: Vec<OpNode>) -> DataflowGraph {
        DataflowGraph::new(
            nodes,
            vec![DeviceSpec::compute("gpu0", ""), DeviceSpec::compute("gpu1", "")],
            Default::default(),
        )
        .unwrap()
    }

    fn table(pairs: &[(&str, f64)]) -> DurationTable {
        DurationTable::from_durations(pairs.iter().map(|&(k, v)| (k, v)), DurationSource::ExactRecord)
    }

    #[test]
    fn chain_matches_event_engine() {
        let g = graph(vec![
            node("A", "gpu0", &[]),
            node("B", "gpu0", &["A"]),
            node("C", "gpu0", &["B"]),
        ]);
        let t = table(&[("A", 2.0), ("B", 3.0), ("C", 5.0)]);
        assert_eq!(naive_simulate(&g, &t, 1.0).unwrap(), simulate(&g, &t).unwrap());
    }

    #[test]
    fn parallel_matches_event_engine() {
        let g = graph(vec![node("A", "gpu0", &[]), node("B", "gpu1", &[])]);
        let t = table(&[("A", 3.0), ("B", 5.0)]);
        let s = naive_simulate(&g, &t, 1.0).unwrap();
        assert_eq!(s, simulate(&g, &t).unwrap());
        assert_eq!(s.makespan, 5.0);
    }

    #[test]
    fn half_ticks_and_zero_durations() {
        let g = graph(vec![
            node("A", "gpu0", &[]),
            node("B", "gpu1", &["A"]),
            node("C", "gpu0", &["B"]),
            node("D", "gpu1", &["A"]),
        ]);
        let t = table(&[("A", 1.5), ("B", 0.0), ("C", 2.5), ("D", 0.5)]);
        assert_eq!(naive_simulate(&g, &t, 0.5).unwrap(), simulate(&g, &t).unwrap());
    }

    #[test]
    fn rejects_misaligned_durations_and_bad_ticks() {
        let g = graph(vec![node("A", "gpu0", &[])]);
        assert!(matches!(
            naive_simulate(&g, &table(&[("A", 1.5)]), 1.0).unwrap_err(),
            SimError::NotTickAligned { .. }
        ));
        assert_eq!(
            naive_simulate(&g, &table(&[("A", 1.0)]), 0.0).unwrap_err(),
            SimError::BadTick(0.0)
        );
    }

    #[test]
    fn detects_cycles() {
        let g = graph(vec![node("A", "gpu0", &["B"]), node("B", "gpu0", &["A"])]);
        assert!(matches!(
            naive_simulate(&g, &table(&[("A", 1.0), ("B", 1.0)]), 1.0).unwrap_err(),
            SimError::Cycle(_)
        ));
    }
}
