//! Chrome trace event output, JSON-array variant.
//!
//! `ts` and `dur` are integer microseconds rounded half-to-even:
//! `ts = round(start)`, `dur = round(finish) - round(start)`, so adjacent
//! events on a track never overlap after rounding. Exact floating-point
//! bounds are kept in `args.start_us` and `args.finish_us`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::sim::Schedule;

/// Integer microseconds as written to a trace.
pub fn trace_us(t: f64) -> i64 {
    t.round_ties_even() as i64
}

pub fn to_trace(s: &Schedule) -> String {
    let tids: Vec<&str> = s.per_device_busy.keys().map(String::as_str).collect();
    let mut events: Vec<Value> = tids
        .iter()
        .enumerate()
        .map(|(tid, name)| json!({"name": "thread_name", "ph": "M", "pid": 0, "tid": tid, "args": {"name": name}}))
        .collect();
    for e in &s.entries {
        let tid = tids.binary_search(&e.device.as_str()).unwrap_or(tids.len());
        let ts = trace_us(e.start);
        events.push(json!({
            "name": e.op_type,
            "ph": "X",
            "ts": ts,
            "dur": trace_us(e.finish) - ts,
            "pid": 0,
            "tid": tid,
            "args": {"id": e.node, "start_us": e.start, "finish_us": e.finish, "source": e.source},
        }));
    }
    let mut out = serde_json::to_string_pretty(&Value::Array(events)).expect("json values always serialize");
    out.push('\n');
    out
}

/// One complete event read back from a trace, with its device resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInterval {
    pub device: String,
    pub node: String,
    pub op_type: String,
    pub start: f64,
    pub finish: f64,
}

#[derive(Deserialize)]
struct RawEvent {
    name: String,
    ph: String,
    tid: usize,
    #[serde(default)]
    args: Value,
}

/// Reads a trace written by [`to_trace`] back into intervals.
pub fn read_trace(text: &str) -> Result<Vec<TraceInterval>, serde_json::Error> {
    let raw: Vec<RawEvent> = serde_json::from_str(text)?;
    let mut names = std::collections::BTreeMap::new();
    for e in raw.iter().filter(|e| e.ph == "M") {
        if let Some(n) = e.args.get("name").and_then(Value::as_str) {
            names.insert(e.tid, n.to_owned());
        }
    }
    Ok(raw
        .iter()
        .filter(|e| e.ph == "X")
        .map(|e| TraceInterval {
            device: names.get(&e.tid).cloned().unwrap_or_default(),
            node: e.args.get("id").and_then(Value::as_str).unwrap_or_default().to_owned(),
            op_type: e.name.clone(),
            start: e.args.get("start_us").and_then(Value::as_f64).unwrap_or(f64::NAN),
            finish: e.args.get("finish_us").and_then(Value::as_f64).unwrap_or(f64::NAN),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::DurationSource;
    use crate::graph::OpKind;
    use crate::sim::ScheduledNode;
    use std::collections::BTreeMap;

    fn entry(node: &str, device: &str, start: f64, finish: f64) -> ScheduledNode {
        ScheduledNode {
            node: node.into(),
            op_type: "Conv2D".into(),
            kind: OpKind::Compute,
            device: device.into(),
            start,
            finish,
            source: DurationSource::ExactRecord,
        }
    }

    #[test]
    fn two_events_and_track_names() {
        let s = Schedule {
            entries: vec![entry("a", "gpu0", 0.0, 3.0), entry("b", "gpu1", 3.0, 7.0)],
            makespan: 7.0,
            per_device_busy: BTreeMap::from([("gpu0".into(), 3.0), ("gpu1".into(), 4.0)]),
        };
        let v: Vec<Value> = serde_json::from_str(&to_trace(&s)).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[1]["args"]["name"], "gpu1");
        assert_eq!(v[2]["ph"], "X");
        assert_eq!(v[2]["ts"], 0);
        assert_eq!(v[2]["dur"], 3);
        assert_eq!(v[3]["ts"], 3);
        assert_eq!(v[3]["dur"], 4);
        assert_eq!(v[3]["tid"], 1);
        assert_eq!(v[3]["name"], "Conv2D");
    }

    #[test]
    fn empty_schedule_is_an_empty_array() {
        let s = Schedule {
            entries: vec![],
            makespan: 0.0,
            per_device_busy: BTreeMap::new(),
        };
        let v: Vec<Value> = serde_json::from_str(&to_trace(&s)).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn rounding_is_half_to_even_and_lossless_in_args() {
        assert_eq!(trace_us(0.5), 0);
        assert_eq!(trace_us(1.5), 2);
        assert_eq!(trace_us(2.5), 2);
        let s = Schedule {
            entries: vec![entry("a", "gpu0", 0.5, 2.5)],
            makespan: 2.5,
            per_device_busy: BTreeMap::from([("gpu0".into(), 2.0)]),
        };
        let text = to_trace(&s);
        let v: Vec<Value> = serde_json::from_str(&text).unwrap();
        assert_eq!((v[1]["ts"].as_i64(), v[1]["dur"].as_i64()), (Some(0), Some(2)));
        let back = read_trace(&text).unwrap();
        assert_eq!(back[0].start, 0.5);
        assert_eq!(back[0].finish, 2.5);
        assert_eq!(back[0].device, "gpu0");
    }
}
