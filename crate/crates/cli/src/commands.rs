use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use dfsim_core::cost::{estimate_all, fit_linear, CostError, Estimate, UnresolvedNode};
use dfsim_core::graph::{self, parse_graph, serialize_graph, DataflowGraph};
use dfsim_core::profile::{load_profiles, save_profiles, ProfileDb};
use dfsim_core::report::{self, compare as compare_rows, render_comparison};
use dfsim_core::sim::simulate as run_sim;
use dfsim_core::strategy::{expand_data_parallel, parse_config, serialize_config, Override, Pattern, StrategyConfig};
use dfsim_core::sweep::{run_parallel, SimJob};
use dfsim_core::synth::{default_grid, gen_graph, gen_profiles, parse_spec, DurationLaw};

use crate::exit::{self, Exit, Outcome};
use crate::manifest::{FileHash, ManifestInputs, RunManifest};
use crate::Inputs;

struct Loaded {
    graph: DataflowGraph,
    db: ProfileDb,
    cfg: StrategyConfig,
    hashes: ManifestInputs,
}

fn load_graph(path: &Path) -> Result<(DataflowGraph, Vec<u8>), Exit> {
    let bytes = exit::read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Exit::new(exit::IO, format!("{}: {e}", path.display())))?;
    let parsed = parse_graph(&text).map_err(|e| exit::graph(path, e))?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok((parsed.graph, bytes))
}

fn load_db(paths: &[std::path::PathBuf]) -> Result<(ProfileDb, Vec<FileHash>), Exit> {
    let mut db = ProfileDb::new();
    let mut hashes = Vec::new();
    for p in paths {
        let text = exit::read_text(p)?;
        let part = load_profiles(&text).map_err(|e| exit::profile(p, e))?;
        db.merge(&part);
        hashes.push(FileHash::new(p, text.as_bytes()));
    }
    if db.replacements() > 0 {
        log::info!("{} duplicate profile record(s) replaced", db.replacements());
    }
    Ok((db, hashes))
}

fn load_config(path: Option<&Path>) -> Result<(StrategyConfig, Option<FileHash>), Exit> {
    match path {
        None => Ok((StrategyConfig::default(), None)),
        Some(p) => {
            let text = exit::read_text(p)?;
            let cfg = parse_config(&text).map_err(|e| exit::config(p, e))?;
            Ok((cfg, Some(FileHash::new(p, text.as_bytes()))))
        }
    }
}

fn load(inputs: &Inputs) -> Result<Loaded, Exit> {
    let (graph, graph_bytes) = load_graph(&inputs.graph)?;
    let (db, profiles) = load_db(&inputs.profiles)?;
    let (cfg, config) = load_config(inputs.config.as_deref())?;
    Ok(Loaded {
        graph,
        db,
        cfg,
        hashes: ManifestInputs {
            graph: FileHash::new(&inputs.graph, &graph_bytes),
            profiles,
            config,
        },
    })
}

fn check_findings(g: &DataflowGraph) -> Outcome {
    let report = graph::validate(g);
    if report.is_clean() {
        return Ok(());
    }
    for f in &report.findings {
        eprintln!("{f}");
    }
    Err(Exit::new(
        exit::FINDINGS,
        format!("{} validation finding(s)", report.findings.len()),
    ))
}

fn override_template(cfg: &StrategyConfig, nodes: &[UnresolvedNode]) -> String {
    let mut t = cfg.clone();
    for n in nodes {
        t.overrides.push(Override {
            pattern: Pattern::Exact(n.node.clone()),
            duration_us: 0.0,
        });
    }
    serialize_config(&t)
}

/// Expands the graph for the strategy, then resolves every node's duration.
fn prepare(
    g: &DataflowGraph,
    db: &ProfileDb,
    cfg: &StrategyConfig,
    config_path: Option<&Path>,
) -> Result<(DataflowGraph, Estimate), Exit> {
    check_findings(g)?;
    let cfg_path = config_path.unwrap_or(Path::new("<default config>"));
    let expanded = expand_data_parallel(g, cfg).map_err(|e| exit::config(cfg_path, e))?;
    for w in &expanded.warnings {
        log::warn!("{w}");
    }
    let graph = expanded.graph;
    match estimate_all(&graph, db, cfg) {
        Ok(est) => {
            for w in &est.warnings {
                log::warn!("{w}");
            }
            Ok((graph, est))
        }
        Err(CostError::UnknownOp(nodes)) => {
            eprintln!("no duration for {} node(s):", nodes.len());
            for n in &nodes {
                eprintln!("  {} ({}) on {:?}: {}", n.node, n.op_type, n.hardware, n.reason);
            }
            eprintln!("override template (fill in duration_us and pass with --config):");
            print!("{}", override_template(cfg, &nodes));
            Err(Exit::new(exit::UNKNOWN_OP, "unknown op(s)"))
        }
        Err(e) => Err(Exit::new(exit::FIT, e.to_string())),
    }
}

pub fn validate(path: &Path) -> Outcome {
    let (g, _) = load_graph(path)?;
    check_findings(&g)?;
    println!(
        "ok: {} nodes, {} edges, {} devices",
        g.len(),
        g.edge_count(),
        g.devices().len()
    );
    Ok(())
}

pub fn estimate(inputs: &Inputs, out: Option<&Path>) -> Outcome {
    let l = load(inputs)?;
    let (_, est) = prepare(&l.graph, &l.db, &l.cfg, inputs.config.as_deref())?;
    let mut text = serde_json::to_string_pretty(&est.table).expect("tables always serialize");
    text.push('\n');
    match out {
        Some(p) => exit::write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn simulate(inputs: &Inputs, out: &Path, top_k: usize) -> Outcome {
    let l = load(inputs)?;
    let (graph, est) = prepare(&l.graph, &l.db, &l.cfg, inputs.config.as_deref())?;
    let schedule = run_sim(&graph, &est.table).map_err(|e| Exit::new(exit::FINDINGS, e.to_string()))?;
    let summary = report::summarize(&schedule, &graph, top_k).map_err(|e| Exit::new(exit::FINDINGS, e.to_string()))?;

    exit::create_dir(out)?;
    let mut manifest = RunManifest::new("simulate", l.hashes);
    manifest.options.insert("top_k", json!(top_k));
    manifest.options.insert("replicas", json!(l.cfg.replicas));
    let files = [
        ("trace.json", report::to_trace(&schedule)),
        ("summary.txt", report::render_text(&summary)),
        ("summary.csv", report::render_csv(&summary)),
    ];
    for (name, body) in &files {
        exit::write(&out.join(name), body.as_bytes())?;
        manifest
            .outputs
            .insert((*name).to_owned(), crate::manifest::sha256(body.as_bytes()));
    }
    exit::write(&out.join("manifest.json"), manifest.to_json().as_bytes())?;
    println!("makespan: {:.2} ms", schedule.makespan / 1000.0);
    Ok(())
}

pub fn fit(profiles: &[std::path::PathBuf], op: &str, hardware: &str) -> Outcome {
    let (db, _) = load_db(profiles)?;
    let m = fit_linear(db.query_grid(op, hardware)).map_err(|e| Exit::new(exit::FIT, e.to_string()))?;
    let mut s = String::new();
    let _ = writeln!(s, "op_type: {}", m.op_type);
    let _ = writeln!(s, "hardware: {}", m.hardware);
    let _ = writeln!(s, "intercept: {:.8e}", m.intercept);
    for (name, c) in m.feature_names.iter().zip(&m.coefficients) {
        let _ = writeln!(s, "coef {name}: {c:.8e}");
    }
    let _ = writeln!(s, "r_squared: {:.8e}", m.fit_stats.r_squared);
    let _ = writeln!(s, "max_rel_residual: {:.8e}", m.fit_stats.max_rel_residual);
    let _ = writeln!(s, "n_points: {}", m.fit_stats.n_points);
    print!("{s}");
    if !m.is_linear_enough() {
        log::warn!("r^2 below {}", dfsim_core::cost::R_SQUARED_WARN);
    }
    Ok(())
}

pub fn gen(spec_path: &Path, seed: Option<u64>, grid: Option<Vec<f64>>, out: &Path) -> Outcome {
    let mut spec = parse_spec(&exit::read_text(spec_path)?).map_err(|e| exit::synth(spec_path, e))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let g = gen_graph(&spec).map_err(|e| exit::synth(spec_path, e))?;
    exit::create_dir(out)?;
    exit::write(&out.join("graph.json"), serialize_graph(&g).as_bytes())?;
    println!("graph.json: {} nodes, {} edges", g.len(), g.edge_count());
    if !matches!(spec.law, DurationLaw::Uniform { .. }) {
        let grid = grid.unwrap_or_else(default_grid);
        let db = gen_profiles(&spec, &grid).map_err(|e| exit::synth(spec_path, e))?;
        exit::write(&out.join("profiles.profdb"), save_profiles(&db).as_bytes())?;
        println!("profiles.profdb: {} records", db.op_record_count());
    }
    Ok(())
}

#[derive(Deserialize)]
struct MeasuredRow {
    model: String,
    measured_us: f64,
}

#[derive(Deserialize)]
struct SimulatedRow {
    model: String,
    simulated_us: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Exit> {
    let bytes = exit::read(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| Exit::new(exit::IO, format!("{}: {e}", path.display())))
}

pub fn compare(measured: &Path, simulated: &Path) -> Outcome {
    let m: Vec<(String, f64)> = read_csv::<MeasuredRow>(measured)?
        .into_iter()
        .map(|r| (r.model, r.measured_us))
        .collect();
    let s: BTreeMap<String, f64> = read_csv::<SimulatedRow>(simulated)?
        .into_iter()
        .map(|r| (r.model, r.simulated_us))
        .collect();
    let c = compare_rows(&m, &s);
    for w in &c.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_comparison(&c.rows));
    Ok(())
}

pub fn sweep(
    graph: &Path,
    profiles: &[std::path::PathBuf],
    configs: &[std::path::PathBuf],
    jobs: usize,
    out: Option<&Path>,
) -> Outcome {
    let (g, _) = load_graph(graph)?;
    let (db, _) = load_db(profiles)?;
    let mut prepared = Vec::new();
    for c in configs {
        let (cfg, _) = load_config(Some(c))?;
        prepared.push((c.display().to_string(), prepare(&g, &db, &cfg, Some(c))?));
    }
    let sim_jobs: Vec<SimJob> = prepared
        .iter()
        .map(|(name, (graph, est))| SimJob {
            name: name.clone(),
            graph,
            durations: est.table.clone(),
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Exit::new(exit::IO, format!("thread pool: {e}")))?;
    let results = pool.install(|| run_parallel(&sim_jobs));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "nodes", "makespan_us"])
        .expect("in-memory write");
    for (job, r) in sim_jobs.iter().zip(results) {
        let s = r.map_err(|e| Exit::new(exit::FINDINGS, format!("{}: {e}", job.name)))?;
        w.write_record([job.name.clone(), job.graph.len().to_string(), s.makespan.to_string()])
            .expect("in-memory write");
    }
    let table = w.into_inner().expect("in-memory flush");
    print!("{}", String::from_utf8_lossy(&table));
    if let Some(p) = out {
        exit::write(p, &table)?;
    }
    Ok(())
}
