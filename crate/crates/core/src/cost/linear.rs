use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::CostError;
use crate::profile::ProfileRecord;

/// Fits with an r^2 below this are kept but flagged.
pub const R_SQUARED_WARN: f64 = 0.95;

// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitStats {
    pub r_squared: f64,
    pub max_rel_residual: f64,
    pub n_points: usize,
}

/// `duration = max(0, intercept + coefficients . features)`, per (op type, hardware).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearCostModel {
    pub op_type: String,
    pub hardware: String,
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub fit_stats: FitStats,
}

impl LinearCostModel {
    /// Unclamped linear value.
    pub fn raw(&self, features: &[f64]) -> Result<f64, CostError> {
        if features.len() != self.coefficients.len() {
            return Err(CostError::Arity {
                expected: self.coefficients.len(),
                got: features.len(),
            });
        }
        Ok(self
            .coefficients
            .iter()
            .zip(features)
            .fold(self.intercept, |acc, (c, x)| acc + c * x))
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64, CostError> {
        Ok(self.raw(features)?.max(0.0))
    }

    pub fn is_linear_enough(&self) -> bool {
        self.fit_stats.r_squared >= R_SQUARED_WARN
    }
}

/// Ordinary least squares of `mean_duration` on the signature features.
///
/// The design matrix is centered and scaled per column before an SVD solve, so
/// a constant feature (zero spread) or a linear dependency between features is
/// reported by name instead of producing an arbitrary solution.
pub fn fit_linear<'a, I>(records: I) -> Result<LinearCostModel, CostError>
where
    I: IntoIterator<Item = &'a ProfileRecord>,
{
    let records: Vec<&ProfileRecord> = records.into_iter().collect();
    let first = records.first().ok_or(CostError::NoRecords)?;
    let op_type = first.signature.op_type.clone();
    let hardware = first.signature.hardware.clone();
    let feature_names: Vec<String> = first.signature.feature_names().map(str::to_owned).collect();
    for r in &records[1..] {
        let s = &r.signature;
        if s.op_type != op_type
            || s.hardware != hardware
            || !s.feature_names().eq(feature_names.iter().map(String::as_str))
        {
            return Err(CostError::MixedRecords(format!(
                "{op_type}/{hardware} vs {}/{}",
                s.op_type, s.hardware
            )));
        }
    }

    let n = records.len();
    let p = feature_names.len();
    if n < p + 1 {
        return Err(CostError::Underdetermined {
            op_type,
            hardware,
            needed: p + 1,
            got: n,
        });
    }

    let y = DVector::from_iterator(n, records.iter().map(|r| r.mean_duration));
    let x = DMatrix::from_fn(n, p, |i, j| records[i].signature.arg_features[j].value);
    let y_mean = y.mean();

    let mut col_mean = vec![0.0; p];
    let mut col_scale = vec![0.0; p];
    let mut constant = Vec::new();
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let s = col.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
        if s == 0.0 {
            constant.push(feature_names[j].clone());
        }
        col_mean[j] = m;
        col_scale[j] = s;
    }
    if !constant.is_empty() {
        return Err(CostError::Degenerate {
            op_type,
            hardware,
            features: constant,
        });
    }

    let mut coefficients = vec![0.0; p];
    if p > 0 {
        let z = DMatrix::from_fn(n, p, |i, j| (x[(i, j)] - col_mean[j]) / col_scale[j]);
        let yc = y.add_scalar(-y_mean);
        let svd = z.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let mut collinear: Vec<String> = Vec::new();
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= RANK_TOL * sigma_max {
                for (j, name) in feature_names.iter().enumerate() {
                    if v_t[(k, j)].abs() > 1e-6 && !collinear.contains(name) {
                        collinear.push(name.clone());
                    }
                }
            }
        }
        if !collinear.is_empty() {
            collinear.sort();
            return Err(CostError::Degenerate {
                op_type,
                hardware,
                features: collinear,
            });
        }
        let beta = svd.solve(&yc, RANK_TOL * sigma_max).expect("U and V^T were computed");
        for j in 0..p {
            coefficients[j] = beta[j] / col_scale[j];
        }
    }
    let intercept = y_mean - coefficients.iter().zip(&col_mean).map(|(c, m)| c * m).sum::<f64>();

    let mut model = LinearCostModel {
        op_type,
        hardware,
        feature_names,
        coefficients,
        intercept,
        fit_stats: FitStats {
            r_squared: 1.0,
            max_rel_residual: 0.0,
            n_points: n,
        },
    };

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut max_rel = 0.0f64;
    for r in &records {
        let yhat = model.raw(&r.signature.feature_values())?;
        let resid = yhat - r.mean_duration;
        ss_res += resid * resid;
        ss_tot += (r.mean_duration - y_mean).powi(2);
        max_rel = max_rel.max(resid.abs() / r.mean_duration);
    }
    model.fit_stats.max_rel_residual = max_rel;
    model.fit_stats.r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Feature, OpSignature};

    fn rec(feats: &[(&str, f64)], mean: f64) -> ProfileRecord {
        let sig = OpSignature::new(
            "Conv2D",
            "V100",
            feats.iter().map(|&(n, v)| Feature::new(n, v)).collect(),
        )
        .unwrap();
        ProfileRecord::new(sig, mean, 0.0, 1000)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn exact_line() {
        let recs = [
            rec(&[("x", 1.0)], 3.0),
            rec(&[("x", 2.0)], 5.0),
            rec(&[("x", 3.0)], 7.0),
        ];
        let m = fit_linear(&recs).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert!((m.fit_stats.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(m.fit_stats.n_points, 3);
        assert_eq!(m.feature_names, ["x"]);
    }

    #[test]
    fn predict_and_clamp() {
        let recs = [
            rec(&[("x", 1.0)], 3.0),
            rec(&[("x", 2.0)], 5.0),
            rec(&[("x", 3.0)], 7.0),
        ];
        let m = fit_linear(&recs).unwrap();
        assert!((m.predict(&[10.0]).unwrap() - 21.0).abs() < 1e-9);
        assert_eq!(m.predict(&[-5.0]).unwrap(), 0.0);
        assert!(m.raw(&[-5.0]).unwrap() < 0.0);
        assert_eq!(
            m.predict(&[1.0, 2.0]).unwrap_err(),
            CostError::Arity { expected: 1, got: 2 }
        );
    }

    #[test]
    fn planted_multifeature_plane() {
        // one-at-a-time sweeps around a base point, like the profiler grid
        let law = |c: f64, k: f64| 12.5 * c + 3.25 * k + 40.0;
        let mut recs = Vec::new();
        for v in 1..=16 {
            let v = v as f64;
            recs.push(rec(&[("c", v), ("k", 1.0)], law(v, 1.0)));
            recs.push(rec(&[("c", 1.0), ("k", v)], law(1.0, v)));
        }
        let m = fit_linear(&recs).unwrap();
        assert!(rel(m.coefficients[0], 12.5) < 1e-9);
        assert!(rel(m.coefficients[1], 3.25) < 1e-9);
        assert!(rel(m.intercept, 40.0) < 1e-9);
        assert!(m.fit_stats.max_rel_residual < 1e-9);
    }

    #[test]
    fn underdetermined() {
        let recs = [rec(&[("a", 1.0), ("b", 1.0)], 3.0), rec(&[("a", 2.0), ("b", 1.0)], 5.0)];
        assert!(matches!(
            fit_linear(&recs).unwrap_err(),
            CostError::Underdetermined { needed: 3, got: 2, .. }
        ));
        assert_eq!(fit_linear(std::iter::empty()).unwrap_err(), CostError::NoRecords);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let recs: Vec<_> = (1..=5)
            .map(|i| rec(&[("a", i as f64), ("b", 7.0)], 2.0 * i as f64 + 1.0))
            .collect();
        match fit_linear(&recs).unwrap_err() {
            CostError::Degenerate { features, .. } => assert_eq!(features, ["b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collinear_features_are_named() {
        let recs: Vec<_> = (1..=6)
            .map(|i| {
                let i = i as f64;
                rec(&[("a", i), ("b", 2.0 * i), ("c", (i * i) % 5.0)], 3.0 * i + 1.0)
            })
            .collect();
        match fit_linear(&recs).unwrap_err() {
            CostError::Degenerate { features, .. } => assert_eq!(features, ["a", "b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn intercept_only_model() {
        let recs = [rec(&[], 5.0), rec(&[], 7.0)];
        // identical empty signatures would collapse in a db, but fit accepts them as given
        let m = fit_linear(&recs).unwrap();
        assert_eq!(m.intercept, 6.0);
        assert!(m.coefficients.is_empty());
    }

    #[test]
    fn mixed_records_rejected() {
        let a = rec(&[("x", 1.0)], 1.0);
        let mut b = rec(&[("x", 2.0)], 2.0);
        b.signature.hardware = "T4".into();
        assert!(matches!(fit_linear([&a, &b]).unwrap_err(), CostError::MixedRecords(_)));
    }

    #[test]
    fn nonlinear_data_lowers_r_squared() {
        let recs: Vec<_> = (1..=16)
            .map(|i| rec(&[("x", i as f64)], 1.0 + ((i % 4) as f64) * 50.0))
            .collect();
        let m = fit_linear(&recs).unwrap();
        assert!(m.fit_stats.r_squared < R_SQUARED_WARN);
        assert!(!m.is_linear_enough());
    }
}
