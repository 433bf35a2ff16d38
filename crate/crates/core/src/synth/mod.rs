//! Seeded synthetic graphs, profile databases and duration tables.
//!
//! Every output is a pure function of the [`SynthSpec`]. Graph structure,
//! profile noise and random durations draw from separate [`SynthRng`]
//! streams seeded with `seed`, `seed ^ PROFILE_STREAM` and
//! `seed ^ DURATION_STREAM`.

mod cnn;
mod rng;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cost::{node_features, DurationSource, DurationTable};
use crate::graph::{DataflowGraph, DeviceSpec, GraphError, GraphMetadata, OpKind, OpNode, TensorShape};
use crate::profile::{Feature, OpSignature, ProfileDb, ProfileError, ProfileRecord};

pub use cnn::GRADIENT_PREFIX;
pub use rng::SynthRng;

pub const FORMAT_VERSION: u64 = 1;
pub const PROFILE_STREAM: u64 = 0x5052_4F46_494C_4553;
pub const DURATION_STREAM: u64 = 0x4455_5241_5449_4F4E;
/// Sample count written on every generated record.
pub const SAMPLES: u64 = 1000;

const WORK_OP: &str = "Work";
const MAX_WORK_SIZE: u64 = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
    #[error("edge density must lie in [0, 1], got {0}")]
    BadDensity(f64),
    #[error("profile generation needs a constant or planted-linear law")]
    NeedsPlantedLaw,
    #[error("grid must be non-empty with finite values")]
    BadGrid,
    #[error("synth spec: line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum GraphKind {
    Chain {
        n: usize,
    },
    /// One source, `width` parallel middle nodes, one sink.
    Diamond {
        width: usize,
    },
    LayeredCnn {
        conv_layers: usize,
        fc_layers: usize,
        #[serde(default = "default_batch")]
        batch: u64,
        #[serde(default = "default_image")]
        image: u64,
        #[serde(default = "default_channels")]
        base_channels: u64,
    },
    /// Edge `i -> j` for `i < j` with probability `density`.
    RandomDag {
        n: usize,
        density: f64,
    },
}

fn default_batch() -> u64 {
    64
}

fn default_image() -> u64 {
    224
}

fn default_channels() -> u64 {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum DurationLaw {
    Constant {
        value: f64,
    },
    /// `intercept + sum_f coef(f) * x_f`, where `coef(f)` is `per_feature[f]`
    /// if present and `slope` otherwise.
    PlantedLinear {
        intercept: f64,
        slope: f64,
        #[serde(default)]
        per_feature: BTreeMap<String, f64>,
    },
    /// Integer microseconds drawn uniformly from `ceil(lo)..=floor(hi)`.
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl DurationLaw {
    pub fn eval(&self, features: &[Feature]) -> Option<f64> {
        match self {
            DurationLaw::Constant { value } => Some(*value),
            DurationLaw::PlantedLinear {
                intercept,
                slope,
                per_feature,
            } => Some(features.iter().fold(*intercept, |acc, f| {
                acc + per_feature.get(&f.name).unwrap_or(slope) * f.value
            })),
            DurationLaw::Uniform { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "one")]
    pub format_version: u64,
    pub kind: GraphKind,
    pub seed: u64,
    /// Compute devices `gpu0..gpu{devices-1}`. Layered CNNs place every node on `gpu0`.
    #[serde(default = "one_usize")]
    pub devices: usize,
    pub law: DurationLaw,
    #[serde(default = "default_hardware")]
    pub hardware: String,
    /// Relative Gaussian noise on generated profile means; 0 gives exact records.
    #[serde(default)]
    pub noise: f64,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_hardware() -> String {
    "V100".to_owned()
}

impl SynthSpec {
    pub fn new(kind: GraphKind, seed: u64, law: DurationLaw) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            seed,
            devices: 1,
            law,
            hardware: default_hardware(),
            noise: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_owned()));
        if self.format_version != FORMAT_VERSION {
            return bad("unsupported format_version");
        }
        if self.devices == 0 {
            return bad("devices must be >= 1");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and >= 0");
        }
        match self.kind {
            GraphKind::Chain { n: 0 } | GraphKind::RandomDag { n: 0, .. } => return bad("n must be >= 1"),
            GraphKind::Diamond { width: 0 } => return bad("width must be >= 1"),
            GraphKind::RandomDag { density, .. } if !(0.0..=1.0).contains(&density) => {
                return Err(SynthError::BadDensity(density))
            }
            GraphKind::LayeredCnn {
                conv_layers,
                batch,
                image,
                base_channels,
                ..
            } if conv_layers == 0 || batch == 0 || image == 0 || base_channels == 0 => {
                return bad("layered CNN sizes must be >= 1")
            }
            _ => {}
        }
        match self.law {
            DurationLaw::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                bad("constant duration must be finite and >= 0")
            }
            DurationLaw::Uniform { lo, hi }
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo.ceil() <= hi.floor()) =>
            {
                bad("uniform range must contain an integer >= 0")
            }
            DurationLaw::PlantedLinear {
                intercept,
                slope,
                ref per_feature,
            } if !(intercept.is_finite() && slope.is_finite() && per_feature.values().all(|c| c.is_finite())) => {
                bad("planted coefficients must be finite")
            }
            _ => Ok(()),
        }
    }
}

pub fn parse_spec(text: &str) -> Result<SynthSpec, SynthError> {
    let spec: SynthSpec = serde_json::from_str(text).map_err(|e| SynthError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.check()?;
    Ok(spec)
}

pub fn serialize_spec(spec: &SynthSpec) -> String {
    let mut s = serde_json::to_string_pretty(spec).expect("spec always serializes");
    s.push('\n');
    s
}

/// Powers of two from 1 to 32768.
pub fn default_grid() -> Vec<f64> {
    (0..16).map(|k| f64::from(1u32 << k)).collect()
}

fn work_ids(n: usize) -> impl Fn(usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(4);
    move |i| format!("n{i:0width$}")
}

fn work_node(id: String, device: String, rng: &mut SynthRng) -> OpNode {
    OpNode::new(id, WORK_OP, OpKind::Compute, device)
        .with_attr("size", rng.int_in(1, MAX_WORK_SIZE))
        .with_output(TensorShape::new(vec![], 4))
}

pub fn gen_graph(spec: &SynthSpec) -> Result<DataflowGraph, SynthError> {
    spec.check()?;
    let mut rng = SynthRng::new(spec.seed);
    let dev = |i: usize| format!("gpu{}", i % spec.devices);
    let devices: Vec<DeviceSpec> = (0..spec.devices)
        .map(|i| DeviceSpec::compute(format!("gpu{i}"), spec.hardware.clone()))
        .collect();
    let mut metadata = GraphMetadata {
        model: None,
        framework: Some("synth".to_owned()),
        batch_size: None,
    };

    let nodes = match spec.kind {
        GraphKind::Chain { n } => {
            let id = work_ids(n);
            (0..n)
                .map(|i| {
                    let node = work_node(id(i), dev(i), &mut rng);
                    if i == 0 {
                        node
                    } else {
                        node.with_input(&id(i - 1), 0)
                    }
                })
                .collect()
        }
        GraphKind::Diamond { width } => {
            let id = work_ids(width + 2);
            let mut nodes = vec![work_node(id(0), dev(0), &mut rng)];
            for i in 1..=width {
                nodes.push(work_node(id(i), dev(i), &mut rng).with_input(&id(0), 0));
            }
            let mut sink = work_node(id(width + 1), dev(width + 1), &mut rng);
            for i in 1..=width {
                sink = sink.with_input(&id(i), 0);
            }
            nodes.push(sink);
            nodes
        }
        GraphKind::RandomDag { n, density } => {
            let id = work_ids(n);
            let mut nodes = Vec::with_capacity(n);
            for j in 0..n {
                let device = format!("gpu{}", rng.below(spec.devices as u64));
                let mut node = work_node(id(j), device, &mut rng);
                for i in 0..j {
                    if rng.chance(density) {
                        node = node.with_input(&id(i), 0);
                    }
                }
                nodes.push(node);
            }
            nodes
        }
        GraphKind::LayeredCnn {
            conv_layers,
            fc_layers,
            batch,
            image,
            base_channels,
        } => {
            metadata.model = Some(format!("cnn-{}", conv_layers + fc_layers));
            metadata.batch_size = Some(batch);
            cnn::layered_cnn(
                &cnn::CnnShape {
                    conv_layers,
                    fc_layers,
                    batch,
                    image,
                    base_channels,
                },
                "gpu0",
            )
        }
    };
    Ok(DataflowGraph::new(nodes, devices, metadata)?)
}

/// Sweeps each feature of every distinct (op type, feature names) signature in
/// the generated graph across `grid`, holding the others at `grid[0]`.
pub fn gen_profiles(spec: &SynthSpec, grid: &[f64]) -> Result<ProfileDb, SynthError> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(SynthError::BadGrid);
    }
    if matches!(spec.law, DurationLaw::Uniform { .. }) {
        return Err(SynthError::NeedsPlantedLaw);
    }
    let g = gen_graph(spec)?;
    let mut shapes: BTreeSet<(String, Vec<String>)> = BTreeSet::new();
    for n in g.nodes() {
        let names = node_features(&g, n).into_iter().map(|f| f.name).collect();
        shapes.insert((n.op_type.clone(), names));
    }

    let mut rng = SynthRng::new(spec.seed ^ PROFILE_STREAM);
    let mut db = ProfileDb::new();
    db.add_hardware_tag(spec.hardware.clone());
    db.set_provenance(format!(
        "synthetic: {} records per swept feature, seed {}, {} samples per record",
        grid.len(),
        spec.seed,
        SAMPLES
    ));
    for (op, names) in &shapes {
        let mut points: BTreeSet<Vec<Feature>> = BTreeSet::new();
        let base: Vec<Feature> = names.iter().map(|n| Feature::new(n.clone(), grid[0])).collect();
        points.insert(base.clone());
        for k in 0..names.len() {
            for &v in grid {
                let mut p = base.clone();
                p[k].value = v;
                points.insert(p);
            }
        }
        for p in points {
            let exact = spec.law.eval(&p).ok_or(SynthError::NeedsPlantedLaw)?;
            let (mean, stderr) = if spec.noise > 0.0 {
                let m = exact * (1.0 + spec.noise * rng.gaussian());
                (m, spec.noise * m.abs() / (SAMPLES as f64).sqrt())
            } else {
                (exact, 0.0)
            };
            let sig = OpSignature::new(op.clone(), spec.hardware.clone(), p)?;
            db.insert_op(ProfileRecord::new(sig, mean, stderr, SAMPLES))?;
        }
    }
    Ok(db)
}

/// Duration per node of `g` under the spec's law. Uniform laws give integers.
pub fn gen_durations(spec: &SynthSpec, g: &DataflowGraph) -> DurationTable {
    let mut rng = SynthRng::new(spec.seed ^ DURATION_STREAM);
    let mut t = DurationTable::new();
    for n in g.nodes() {
        let d = match spec.law {
            DurationLaw::Uniform { lo, hi } => rng.int_in(lo.ceil() as u64, hi.floor() as u64) as f64,
            ref law => law
                .eval(&node_features(g, n))
                .expect("non-uniform laws always evaluate")
                .max(0.0),
        };
        t.insert(n.id.clone(), d, DurationSource::ExactRecord);
    }
    t
}
