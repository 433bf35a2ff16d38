use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub measured_us: f64,
    pub simulated_us: f64,
    /// `|measured - simulated| / measured`, as a fraction.
    pub relative_error: f64,
}

impl ComparisonRow {
    pub fn new(model: impl Into<String>, measured_us: f64, simulated_us: f64) -> Self {
        Self {
            model: model.into(),
            measured_us,
            simulated_us,
            relative_error: (measured_us - simulated_us).abs() / measured_us,
        }
    }

    pub fn percent_error(&self) -> f64 {
        self.relative_error * 100.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

/// Pairs measured rows with simulated values by name, in the order of `measured`.
///
/// Unmatched names on either side and non-positive measurements produce a
/// warning instead of a row.
pub fn compare(measured: &[(String, f64)], simulated: &BTreeMap<String, f64>) -> Comparison {
    let mut out = Comparison::default();
    for (name, m) in measured {
        match simulated.get(name) {
            None => out.warnings.push(format!("no simulated value for {name:?}")),
            Some(_) if !(m.is_finite() && *m > 0.0) => out
                .warnings
                .push(format!("measured time for {name:?} must be positive, got {m}")),
            Some(&s) => out.rows.push(ComparisonRow::new(name.clone(), *m, s)),
        }
    }
    for name in simulated.keys() {
        if !measured.iter().any(|(n, _)| n == name) {
            out.warnings.push(format!("no measured value for {name:?}"));
        }
    }
    out
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max("model".len());
    let mut out = format!(
        "{:<width$}  {:>14}  {:>14}  {:>7}\n",
        "model", "measured_us", "simulated_us", "error"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>14.2}  {:>14.2}  {:>6.2}%",
            r.model,
            r.measured_us,
            r.simulated_us,
            r.percent_error()
        );
    }
    out
}
