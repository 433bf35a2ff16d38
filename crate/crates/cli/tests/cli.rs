use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dfsim_core::graph::{serialize_graph, DataflowGraph, DeviceSpec, OpKind, OpNode, TensorShape};
use dfsim_core::profile::{save_profiles, Feature, OpSignature, ProfileDb, ProfileRecord};
use dfsim_core::report::read_trace;
use dfsim_core::strategy::{parse_config, serialize_config, Override, Pattern, StrategyConfig};

fn samples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn dfsim(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(s: &str) -> &Path {
    Path::new(s)
}

fn node(id: &str, op: &str, inputs: &[&str]) -> OpNode {
    inputs.iter().fold(
        OpNode::new(id, op, OpKind::Compute, "gpu0").with_output(TensorShape::new(vec![8], 4)),
        |n, i| n.with_input(i, 0),
    )
}

fn write_graph(dir: &Path, nodes: Vec<OpNode>) -> PathBuf {
    let g = DataflowGraph::new(nodes, vec![DeviceSpec::compute("gpu0", "V100")], Default::default()).unwrap();
    let path = dir.join("graph.json");
    std::fs::write(&path, serialize_graph(&g)).unwrap();
    path
}

fn chain(dir: &Path) -> PathBuf {
    write_graph(
        dir,
        vec![node("A", "X", &[]), node("B", "X", &["A"]), node("C", "X", &["B"])],
    )
}

fn chain_config(dir: &Path) -> PathBuf {
    let cfg = StrategyConfig {
        overrides: [("A", 2000.0), ("B", 3000.0), ("C", 5000.0)]
            .iter()
            .map(|&(id, d)| Override {
                pattern: Pattern::Exact(id.into()),
                duration_us: d,
            })
            .collect(),
        ..StrategyConfig::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, serialize_config(&cfg)).unwrap();
    path
}

#[test]
fn validate_reports_ok_cycles_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dfsim(&[p("validate"), p("--graph"), &chain(dir.path())]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert_eq!(stdout(&ok).trim(), "ok: 3 nodes, 2 edges, 1 devices");

    let cyclic = write_graph(dir.path(), vec![node("A", "X", &["B"]), node("B", "X", &["A"])]);
    let bad = dfsim(&[p("validate"), p("--graph"), &cyclic]);
    assert_eq!(bad.status.code(), Some(1));
    let err = stderr(&bad);
    assert!(
        err.contains('A') && err.contains('B') && err.to_lowercase().contains("cycle"),
        "{err}"
    );

    let missing = dfsim(&[p("validate"), p("--graph"), &dir.path().join("nope.json")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn syntax_errors_exit_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"format_version\": 1,\n  oops\n}\n").unwrap();
    let o = dfsim(&[p("validate"), p("--graph"), &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn simulate_chain_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = dfsim(&[
        p("simulate"),
        p("--graph"),
        &chain(dir.path()),
        p("--config"),
        &chain_config(dir.path()),
        p("--out"),
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "makespan: 10.00 ms");
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("device,kind,busy_us,utilization"));
    assert!(csv.contains("gpu0,Compute,10000"), "{csv}");
    let trace = read_trace(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    let starts: Vec<f64> = trace.iter().map(|t| t.start).collect();
    assert_eq!(starts, [0.0, 2000.0, 5000.0]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert!(out.join("summary.txt").exists());
}

#[test]
fn unknown_ops_exit_three_with_override_template() {
    let dir = tempfile::tempdir().unwrap();
    let g = write_graph(dir.path(), vec![node("mine", "CustomOp", &[])]);
    let o = dfsim(&[p("simulate"), p("--graph"), &g, p("--out"), &dir.path().join("run")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("mine"));
    let template = parse_config(&stdout(&o)).unwrap();
    assert_eq!(template.overrides.len(), 1);
    assert_eq!(template.overrides[0].pattern, Pattern::Exact("mine".into()));

    std::fs::write(dir.path().join("filled.json"), stdout(&o).replace("0.0", "7.5")).unwrap();
    let filled = dfsim(&[
        p("estimate"),
        p("--graph"),
        &g,
        p("--config"),
        &dir.path().join("filled.json"),
    ]);
    assert_eq!(filled.status.code(), Some(0), "{}", stderr(&filled));
    let table: serde_json::Value = serde_json::from_str(&stdout(&filled)).unwrap();
    assert_eq!(table["mine"]["duration"], 7.5);
}

#[test]
fn simulate_data_parallel_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r2");
    let s = samples();
    let o = dfsim(&[
        p("simulate"),
        p("--graph"),
        &s.join("vgg_like/graph.json"),
        p("--profiles"),
        &s.join("vgg_like/profiles.profdb"),
        p("--profiles"),
        &s.join("v100_table1.profdb"),
        p("--config"),
        &s.join("vgg_like.r2.json"),
        p("--out"),
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = read_trace(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace.len(), 2 * 107 + 16);
    assert!(trace.iter().any(|t| t.node.ends_with("/allreduce")));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.starts_with("makespan: "), "{summary}");
}

fn conv_db(points: &[(f64, f64)]) -> ProfileDb {
    let mut db = ProfileDb::new();
    for &(c, mean) in points {
        let sig = OpSignature::new("Conv2D", "V100", vec![Feature::new("in_channels", c)]).unwrap();
        db.insert_op(ProfileRecord::new(sig, mean, 0.0, 1000)).unwrap();
    }
    db
}

#[test]
fn fit_prints_nine_significant_digits_and_flags_underdetermined_grids() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.profdb");
    let pts: Vec<(f64, f64)> = (1..=16).map(|c| (f64::from(c), 12.5 * f64::from(c) + 40.0)).collect();
    std::fs::write(&good, save_profiles(&conv_db(&pts))).unwrap();
    let o = dfsim(&[
        p("fit"),
        p("--profiles"),
        &good,
        p("--op"),
        p("Conv2D"),
        p("--hardware"),
        p("V100"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("intercept: 4.00000000e1"), "{text}");
    assert!(text.contains("coef in_channels: 1.25000000e1"), "{text}");
    assert!(text.contains("n_points: 16"));

    let thin = dir.path().join("thin.profdb");
    std::fs::write(&thin, save_profiles(&conv_db(&[(3.0, 77.5)]))).unwrap();
    let o = dfsim(&[
        p("fit"),
        p("--profiles"),
        &thin,
        p("--op"),
        p("Conv2D"),
        p("--hardware"),
        p("V100"),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn compare_handles_empty_and_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let s = dir.path().join("s.csv");
    std::fs::write(&m, "model,measured_us\n").unwrap();
    std::fs::write(&s, "model,simulated_us\n").unwrap();
    let o = dfsim(&[p("compare"), p("--measured"), &m, p("--simulated"), &s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    std::fs::write(&m, "model,measured_us\nA,100\nB,200\n").unwrap();
    std::fs::write(&s, "model,simulated_us\nA,99\nC,5\n").unwrap();
    let o = dfsim(&[p("compare"), p("--measured"), &m, p("--simulated"), &s]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1.00%"), "{}", stdout(&o));
    let warn = stderr(&o);
    assert!(warn.contains('B') && warn.contains('C'), "{warn}");
}

#[test]
fn gen_then_sweep_over_replica_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let o = dfsim(&[
        p("gen"),
        p("--spec"),
        &samples().join("vgg_like.synth.json"),
        p("--seed"),
        p("3"),
        p("--out"),
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("graph.json: 107 nodes"));

    let one = dir.path().join("r1.json");
    std::fs::write(&one, serialize_config(&StrategyConfig::default())).unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = dfsim(&[
        p("sweep"),
        p("--graph"),
        &out.join("graph.json"),
        p("--profiles"),
        &out.join("profiles.profdb"),
        p("--profiles"),
        &samples().join("v100_table1.profdb"),
        p("--config"),
        &one,
        p("--config"),
        &samples().join("vgg_like.r2.json"),
        p("--out"),
        &csv,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<String> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    assert_eq!(rows[0], "config,nodes,makespan_us");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",107,") && rows[2].contains(",230,"), "{rows:?}");
}
