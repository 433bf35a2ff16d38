//! File-backed store of offline profiling results.
//!
//! Op timings are keyed by `(op_type, hardware)` and then by the canonical
//! (name-sorted) argument feature vector. Link and collective throughputs are
//! keyed by `(scenario, path, participants)`. Absent keys are absent: a
//! missing measurement is never stored as zero.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("malformed signature: {0}")]
    Signature(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

/// One named numeric argument of an op invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: f64,
}

impl Feature {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

// Values are finite with -0.0 folded to 0.0, so total_cmp agrees with ==.
impl PartialEq for Feature {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Feature {}

impl PartialOrd for Feature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Feature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name
            .cmp(&other.name)
            .then_with(|| self.value.total_cmp(&other.value))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct OpSignature {
    pub op_type: String,
    pub hardware: String,
    pub arg_features: Vec<Feature>,
}

impl OpSignature {
    /// Canonicalizes features (sorted by name, `-0.0` folded) and rejects
    /// duplicate names or non-finite values.
    pub fn new(
        op_type: impl Into<String>,
        hardware: impl Into<String>,
        mut arg_features: Vec<Feature>,
    ) -> Result<Self, ProfileError> {
        let op_type = op_type.into();
        if op_type.is_empty() {
            return Err(ProfileError::Signature("empty op_type".into()));
        }
        for f in &mut arg_features {
            if !f.value.is_finite() {
                return Err(ProfileError::Signature(format!(
                    "{op_type}: feature {:?} is not finite",
                    f.name
                )));
            }
            if f.value == 0.0 {
                f.value = 0.0;
            }
        }
        arg_features.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = arg_features.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(ProfileError::Signature(format!(
                "{op_type}: duplicate feature {:?}",
                w[0].name
            )));
        }
        Ok(Self {
            op_type,
            hardware: hardware.into(),
            arg_features,
        })
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.arg_features.iter().map(|f| f.name.as_str())
    }

    pub fn feature_values(&self) -> Vec<f64> {
        self.arg_features.iter().map(|f| f.value).collect()
    }
}

impl<'de> Deserialize<'de> for OpSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            op_type: String,
            hardware: String,
            #[serde(default)]
            arg_features: Vec<Feature>,
        }
        let raw = Raw::deserialize(d)?;
        OpSignature::new(raw.op_type, raw.hardware, raw.arg_features).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub signature: OpSignature,
    /// Microseconds.
    pub mean_duration: f64,
    #[serde(default)]
    pub stderr: f64,
    pub samples: u64,
}

impl ProfileRecord {
    pub fn new(signature: OpSignature, mean_duration: f64, stderr: f64, samples: u64) -> Self {
        Self {
            signature,
            mean_duration,
            stderr,
            samples,
        }
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        let sig = &self.signature;
        let bad = |what: &str| {
            Err(ProfileError::InvalidRecord(format!(
                "{} on {:?}: {what}",
                sig.op_type, sig.hardware
            )))
        };
        if !(self.mean_duration.is_finite() && self.mean_duration > 0.0) {
            return bad("mean_duration must be finite and > 0");
        }
        if !(self.stderr.is_finite() && self.stderr >= 0.0) {
            return bad("stderr must be finite and >= 0");
        }
        if self.samples == 0 {
            return bad("samples must be >= 1");
        }
        Ok(())
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.mean_duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub scenario: String,
    pub path: String,
    pub participants: u32,
    /// MB/s with MB = 2^20 bytes.
    pub throughput: f64,
    #[serde(default)]
    pub latency: f64,
}

impl LinkRecord {
    pub fn new(scenario: &str, path: &str, participants: u32, throughput: f64) -> Self {
        Self {
            scenario: scenario.to_owned(),
            path: path.to_owned(),
            participants,
            throughput,
            latency: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        let bad = |what: &str| {
            Err(ProfileError::InvalidRecord(format!(
                "{}/{}/{}: {what}",
                self.scenario, self.path, self.participants
            )))
        };
        if self.participants == 0 {
            return bad("participants must be >= 1");
        }
        if !(self.throughput.is_finite() && self.throughput > 0.0) {
            return bad("throughput must be finite and > 0");
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return bad("latency must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Record {
    Op(ProfileRecord),
    Link(LinkRecord),
}

type OpKey = (String, String);
type LinkKey = (String, String, u32);

/// Immutable-by-convention snapshot of profiling data. Mutation goes through
/// `&mut self` (so a shared snapshot cannot change underneath readers) or
/// through [`ProfileDb::with_record`], which copies.
#[derive(Debug, Clone, Default)]
pub struct ProfileDb {
    ops: BTreeMap<OpKey, BTreeMap<Vec<Feature>, ProfileRecord>>,
    links: BTreeMap<LinkKey, LinkRecord>,
    hardware_tags: BTreeSet<String>,
    provenance: String,
    replacements: usize,
}

impl PartialEq for ProfileDb {
    fn eq(&self, other: &Self) -> bool {
        self.ops == other.ops
            && self.links == other.links
            && self.hardware_tags == other.hardware_tags
            && self.provenance == other.provenance
    }
}

impl ProfileDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, text: impl Into<String>) {
        self.provenance = text.into();
    }

    pub fn hardware_tags(&self) -> impl Iterator<Item = &str> {
        self.hardware_tags.iter().map(String::as_str)
    }

    pub fn add_hardware_tag(&mut self, tag: impl Into<String>) {
        self.hardware_tags.insert(tag.into());
    }

    /// Number of inserts that replaced an existing record with the same key.
    pub fn replacements(&self) -> usize {
        self.replacements
    }

    pub fn op_record_count(&self) -> usize {
        self.ops.values().map(BTreeMap::len).sum()
    }

    pub fn link_record_count(&self) -> usize {
        self.links.len()
    }

    /// Inserts or replaces a record. Returns whether a record was replaced.
    pub fn insert(&mut self, record: Record) -> Result<bool, ProfileError> {
        let replaced = match record {
            Record::Op(rec) => {
                rec.check()?;
                let sig = &rec.signature;
                self.hardware_tags.insert(sig.hardware.clone());
                self.ops
                    .entry((sig.op_type.clone(), sig.hardware.clone()))
                    .or_default()
                    .insert(sig.arg_features.clone(), rec)
                    .is_some()
            }
            Record::Link(rec) => {
                rec.check()?;
                let key = (rec.scenario.clone(), rec.path.clone(), rec.participants);
                self.links.insert(key, rec).is_some()
            }
        };
        if replaced {
            self.replacements += 1;
        }
        Ok(replaced)
    }

    pub fn insert_op(&mut self, record: ProfileRecord) -> Result<bool, ProfileError> {
        self.insert(Record::Op(record))
    }

    pub fn insert_link(&mut self, record: LinkRecord) -> Result<bool, ProfileError> {
        self.insert(Record::Link(record))
    }

    /// Copy-on-write insert: returns a new snapshot, leaving `self` untouched.
    pub fn with_record(&self, record: Record) -> Result<ProfileDb, ProfileError> {
        let mut next = self.clone();
        next.insert(record)?;
        Ok(next)
    }

    /// Folds every record of `other` into `self`; later records replace earlier ones.
    pub fn merge(&mut self, other: &ProfileDb) {
        for rec in other.op_records() {
            self.insert_op(rec.clone()).expect("records in a db are valid");
        }
        for rec in other.link_records() {
            self.insert_link(rec.clone()).expect("records in a db are valid");
        }
        self.hardware_tags.extend(other.hardware_tags.iter().cloned());
        if !other.provenance.is_empty() {
            if !self.provenance.is_empty() {
                self.provenance.push('\n');
            }
            self.provenance.push_str(&other.provenance);
        }
    }

    pub fn query_exact(&self, sig: &OpSignature) -> Option<&ProfileRecord> {
        self.ops
            .get(&(sig.op_type.clone(), sig.hardware.clone()))?
            .get(&sig.arg_features)
    }

    /// All records for `(op_type, hardware)`, sorted by feature vector.
    pub fn query_grid(&self, op_type: &str, hardware: &str) -> Vec<&ProfileRecord> {
        self.ops
            .get(&(op_type.to_owned(), hardware.to_owned()))
            .map(|grid| grid.values().collect())
            .unwrap_or_default()
    }

    pub fn query_link(&self, scenario: &str, path: &str, participants: u32) -> Option<&LinkRecord> {
        self.links.get(&(scenario.to_owned(), path.to_owned(), participants))
    }

    /// Op records in key order.
    pub fn op_records(&self) -> impl Iterator<Item = &ProfileRecord> {
        self.ops.values().flat_map(BTreeMap::values)
    }

    pub fn link_records(&self) -> impl Iterator<Item = &LinkRecord> {
        self.links.values()
    }
}

#[derive(Serialize, Deserialize)]
struct DbDoc {
    format_version: u64,
    #[serde(default)]
    hardware_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    provenance: String,
    #[serde(default)]
    op_records: Vec<ProfileRecord>,
    #[serde(default)]
    link_records: Vec<LinkRecord>,
}

fn positioned(e: serde_json::Error) -> ProfileError {
    let (line, column, message) = (e.line(), e.column(), e.to_string());
    if e.is_data() {
        ProfileError::Schema { line, column, message }
    } else {
        ProfileError::Syntax { line, column, message }
    }
}

/// Loads a profile-db document. Records with duplicate keys collapse to the
/// last one; [`ProfileDb::replacements`] reports how many were replaced.
pub fn load_profiles(text: &str) -> Result<ProfileDb, ProfileError> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: Option<serde_json::Value>,
    }
    let probe: Probe = serde_json::from_str(text).map_err(positioned)?;
    match probe.format_version.as_ref().and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(ProfileError::UnsupportedVersion(v)),
        None => {
            return Err(ProfileError::Schema {
                line: 1,
                column: 1,
                message: "missing or non-integer field `format_version`".into(),
            })
        }
    }
    let doc: DbDoc = serde_json::from_str(text).map_err(positioned)?;
    let mut db = ProfileDb::new();
    db.hardware_tags.extend(doc.hardware_tags);
    db.provenance = doc.provenance;
    for rec in doc.op_records {
        db.insert_op(rec)?;
    }
    for rec in doc.link_records {
        db.insert_link(rec)?;
    }
    Ok(db)
}

pub fn save_profiles(db: &ProfileDb) -> String {
    let doc = DbDoc {
        format_version: FORMAT_VERSION,
        hardware_tags: db.hardware_tags.iter().cloned().collect(),
        provenance: db.provenance.clone(),
        op_records: db.op_records().cloned().collect(),
        link_records: db.link_records().cloned().collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("profile documents always serialize");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(op: &str, hw: &str, feats: &[(&str, f64)]) -> OpSignature {
        OpSignature::new(op, hw, feats.iter().map(|&(n, v)| Feature::new(n, v)).collect()).unwrap()
    }

    fn rec(op: &str, feats: &[(&str, f64)], mean: f64) -> ProfileRecord {
        ProfileRecord::new(sig(op, "V100", feats), mean, 0.0, 1000)
    }

    #[test]
    fn signatures_are_canonical() {
        let a = sig("Conv2D", "hw", &[("stride", 1.0), ("in_channels", 3.0)]);
        let b = sig("Conv2D", "hw", &[("in_channels", 3.0), ("stride", 1.0)]);
        assert_eq!(a, b);
        assert_eq!(a.feature_names().collect::<Vec<_>>(), ["in_channels", "stride"]);
        assert_eq!(sig("X", "", &[("z", -0.0)]), sig("X", "", &[("z", 0.0)]));
        assert!(OpSignature::new("X", "", vec![Feature::new("a", 1.0), Feature::new("a", 2.0)]).is_err());
        assert!(OpSignature::new("X", "", vec![Feature::new("a", f64::NAN)]).is_err());
    }

    #[test]
    fn link_record_loads_and_is_queryable() {
        let text = r#"{"format_version": 1, "link_records": [
            {"scenario": "nccl-allreduce", "path": "PCIeSwitch", "participants": 2, "throughput": 11598.12}
        ]}"#;
        let db = load_profiles(text).unwrap();
        let rec = db.query_link("nccl-allreduce", "PCIeSwitch", 2).unwrap();
        assert_eq!(rec.throughput, 11598.12);
        assert_eq!(rec.latency, 0.0);
        assert!(db.query_link("nccl-allreduce", "PCIeSwitch", 4).is_none());
    }

    #[test]
    fn empty_document_is_an_empty_db() {
        let db = load_profiles(r#"{"format_version": 1, "op_records": [], "link_records": []}"#).unwrap();
        assert_eq!(db.op_record_count(), 0);
        assert_eq!(db.link_record_count(), 0);
    }

    #[test]
    fn duplicate_signature_keeps_last() {
        let mut db = ProfileDb::new();
        db.insert_op(rec("Relu", &[("n", 4.0)], 10.0)).unwrap();
        assert!(db.insert_op(rec("Relu", &[("n", 4.0)], 12.0)).unwrap());
        assert_eq!(db.replacements(), 1);
        assert_eq!(
            db.query_exact(&sig("Relu", "V100", &[("n", 4.0)]))
                .unwrap()
                .mean_duration,
            12.0
        );

        let text = save_profiles(&db).replace(
            "\"op_records\": [",
            "\"op_records\": [{\"signature\": {\"op_type\": \"Relu\", \"hardware\": \"V100\", \
             \"arg_features\": [{\"name\": \"n\", \"value\": 4.0}]}, \"mean_duration\": 10.0, \"samples\": 3},",
        );
        let loaded = load_profiles(&text).unwrap();
        assert_eq!(loaded.replacements(), 1);
        assert_eq!(loaded.op_record_count(), 1);
        // the later (original) record wins
        assert_eq!(loaded.op_records().next().unwrap().mean_duration, 12.0);
    }

    #[test]
    fn exact_query_misses_on_any_feature_difference() {
        let mut db = ProfileDb::new();
        db.insert_op(rec("Conv2D", &[("c", 16.0), ("k", 3.0)], 50.0)).unwrap();
        assert!(db
            .query_exact(&sig("Conv2D", "V100", &[("c", 16.0), ("k", 3.0)]))
            .is_some());
        assert!(db
            .query_exact(&sig("Conv2D", "V100", &[("c", 16.0), ("k", 5.0)]))
            .is_none());
        assert!(db
            .query_exact(&sig("Conv2D", "T4", &[("c", 16.0), ("k", 3.0)]))
            .is_none());
    }

    #[test]
    fn grid_query_sorts_by_features() {
        let mut db = ProfileDb::new();
        for c in [8.0, 1.0, 16.0, 2.0, 4.0] {
            db.insert_op(rec("Conv2D", &[("in_channels", c)], 10.0 * c)).unwrap();
        }
        let grid = db.query_grid("Conv2D", "V100");
        let cs: Vec<f64> = grid.iter().map(|r| r.signature.arg_features[0].value).collect();
        assert_eq!(cs, [1.0, 2.0, 4.0, 8.0, 16.0]);
        assert!(db.query_grid("Nope", "V100").is_empty());
    }

    #[test]
    fn invalid_records_rejected() {
        let mut db = ProfileDb::new();
        assert!(db.insert_op(rec("Relu", &[], 0.0)).is_err());
        assert!(db
            .insert_op(ProfileRecord::new(sig("Relu", "", &[]), 1.0, 0.0, 0))
            .is_err());
        assert!(db.insert_link(LinkRecord::new("h2d", "QPI", 1, -5.0)).is_err());
        assert!(db.insert_link(LinkRecord::new("h2d", "QPI", 0, 5.0)).is_err());
        let err = load_profiles(
            r#"{"format_version": 1, "link_records": [{"scenario": "a", "path": "b", "participants": 1, "throughput": 0}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::InvalidRecord(_)));
        let err = load_profiles(
            r#"{"format_version": 1, "op_records": [{"signature": {"op_type": "X", "hardware": "h",
                "arg_features": [{"name": "a", "value": 1}, {"name": "a", "value": 2}]},
                "mean_duration": 1, "samples": 1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::Schema { .. }), "{err:?}");
        assert!(matches!(
            load_profiles("{ nope").unwrap_err(),
            ProfileError::Syntax { .. }
        ));
        assert_eq!(
            load_profiles(r#"{"format_version": 3}"#).unwrap_err(),
            ProfileError::UnsupportedVersion(3)
        );
    }

    #[test]
    fn with_record_leaves_original_untouched() {
        let db = ProfileDb::new();
        let next = db.with_record(Record::Op(rec("Relu", &[], 1.0))).unwrap();
        assert_eq!(db.op_record_count(), 0);
        assert_eq!(next.op_record_count(), 1);
    }
}
