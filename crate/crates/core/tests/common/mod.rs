#![allow(dead_code)]

use dfsim_core::cost::DurationTable;
use dfsim_core::graph::DataflowGraph;
use dfsim_core::synth::{gen_durations, gen_graph, DurationLaw, GraphKind, SynthSpec};
use proptest::prelude::*;

pub fn random_spec(n: usize, density: f64, devices: usize, seed: u64, max_dur: f64) -> SynthSpec {
    let mut spec = SynthSpec::new(
        GraphKind::RandomDag { n, density },
        seed,
        DurationLaw::Uniform { lo: 0.0, hi: max_dur },
    );
    spec.devices = devices;
    spec
}

pub fn instance(n: usize, density: f64, devices: usize, seed: u64) -> (DataflowGraph, DurationTable) {
    let spec = random_spec(n, density, devices, seed, 20.0);
    let g = gen_graph(&spec).unwrap();
    let t = gen_durations(&spec, &g);
    (g, t)
}

/// Random DAG with integer durations in 0..=20.
pub fn instances(max_nodes: usize, max_devices: usize) -> impl Strategy<Value = (DataflowGraph, DurationTable)> {
    (1..=max_nodes, 0.0..0.3f64, 1..=max_devices, any::<u64>()).prop_map(|(n, d, k, s)| instance(n, d, k, s))
}
