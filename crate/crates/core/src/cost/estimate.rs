use std::collections::BTreeMap;

use serde::Serialize;

use super::{allreduce_time, fit_linear, transfer_time, CostError, DurationSource, DurationTable, LinearCostModel};
use crate::graph::{DataflowGraph, OpKind, OpNode};
use crate::par;
use crate::profile::{Feature, OpSignature, ProfileDb, ProfileError};
use crate::strategy::{apply_overrides, StrategyConfig};

/// A node for which every duration source came up empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnresolvedNode {
    pub node: String,
    pub op_type: String,
    pub hardware: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub table: DurationTable,
    /// Fitted models by (op type, hardware, feature names).
    pub models: BTreeMap<(String, String, Vec<String>), LinearCostModel>,
    pub warnings: Vec<String>,
}

/// Numeric attributes plus the flattened dims of every input tensor, named
/// `in<i>.d<j>`, sorted by name.
pub fn node_features(g: &DataflowGraph, node: &OpNode) -> Vec<Feature> {
    let mut out: Vec<Feature> = node
        .attrs
        .iter()
        .filter_map(|(k, v)| v.as_f64().map(|x| Feature::new(k.clone(), x)))
        .collect();
    for (i, input) in node.inputs.iter().enumerate() {
        let shape = g.node(&input.node).and_then(|p| p.output_shapes.get(input.slot));
        if let Some(shape) = shape {
            for (j, &d) in shape.dims.iter().enumerate() {
                out.push(Feature::new(format!("in{i}.d{j}"), d as f64));
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Hardware tag of the node's device, or the config's tag when the device has none.
pub fn node_hardware<'a>(g: &'a DataflowGraph, node: &OpNode, cfg: &'a StrategyConfig) -> &'a str {
    g.device(&node.device)
        .map(|d| d.hardware.as_str())
        .filter(|h| !h.is_empty())
        .unwrap_or(cfg.hardware.as_str())
}

pub fn node_signature(g: &DataflowGraph, node: &OpNode, cfg: &StrategyConfig) -> Result<OpSignature, ProfileError> {
    OpSignature::new(
        node.op_type.clone(),
        node_hardware(g, node, cfg),
        node_features(g, node),
    )
}

type ModelKey = (String, String, Vec<String>);

fn model_key(sig: &OpSignature) -> ModelKey {
    (
        sig.op_type.clone(),
        sig.hardware.clone(),
        sig.feature_names().map(str::to_owned).collect(),
    )
}

fn fit_for(db: &ProfileDb, key: &ModelKey) -> Option<Result<LinearCostModel, CostError>> {
    let (op, hw, names) = key;
    let grid: Vec<_> = db
        .query_grid(op, hw)
        .into_iter()
        .filter(|r| r.signature.feature_names().eq(names.iter().map(String::as_str)))
        .collect();
    if grid.is_empty() {
        None
    } else {
        Some(fit_linear(grid))
    }
}

/// Resolves a duration for every node: override, exact record, fitted model,
/// then communication formula. `op_gap_us` is added to every non-override
/// compute duration.
pub fn estimate_all(g: &DataflowGraph, db: &ProfileDb, cfg: &StrategyConfig) -> Result<Estimate, CostError> {
    enum Pending {
        Done(f64, DurationSource),
        NeedsModel(OpSignature),
        Failed(String),
        Overridden,
    }

    let mut pending = Vec::with_capacity(g.len());
    for n in g.nodes() {
        if cfg.override_for(&n.id).is_some() {
            pending.push(Pending::Overridden);
            continue;
        }
        match node_signature(g, n, cfg) {
            Ok(sig) => match db.query_exact(&sig) {
                Some(rec) => pending.push(Pending::Done(rec.mean_duration, DurationSource::ExactRecord)),
                None => pending.push(Pending::NeedsModel(sig)),
            },
            Err(e) => pending.push(Pending::Failed(e.to_string())),
        }
    }

    // one fit per distinct (op, hardware, feature names), possibly in parallel
    let mut keys: Vec<ModelKey> = pending
        .iter()
        .filter_map(|p| match p {
            Pending::NeedsModel(sig) => Some(model_key(sig)),
            _ => None,
        })
        .collect();
    keys.sort();
    keys.dedup();
    let fits = par::map(&keys, |k| fit_for(db, k));
    let fitted: BTreeMap<&ModelKey, Option<Result<LinearCostModel, CostError>>> = keys.iter().zip(fits).collect();

    let mut warnings = Vec::new();
    let mut models = BTreeMap::new();
    for (key, fit) in &fitted {
        match fit {
            Some(Ok(m)) => {
                if !m.is_linear_enough() {
                    let w = format!(
                        "{} on {:?}: linear fit r^2 = {:.4} is below {}",
                        m.op_type,
                        m.hardware,
                        m.fit_stats.r_squared,
                        super::R_SQUARED_WARN
                    );
                    log::warn!("{w}");
                    warnings.push(w);
                }
                models.insert((*key).clone(), m.clone());
            }
            Some(Err(e)) => warnings.push(format!("cannot fit {}/{}: {e}", key.0, key.1)),
            None => {}
        }
    }

    let mut table = DurationTable::new();
    let mut unresolved = Vec::new();
    for (n, p) in g.nodes().iter().zip(pending) {
        let hardware = node_hardware(g, n, cfg).to_owned();
        let mut fail_reason = None;
        let resolved = match p {
            Pending::Overridden => continue,
            Pending::Done(d, src) => Some((d, src)),
            Pending::Failed(reason) => {
                fail_reason = Some(reason);
                None
            }
            Pending::NeedsModel(sig) => match fitted.get(&model_key(&sig)) {
                Some(Some(Ok(m))) => {
                    let d = m.predict(&sig.feature_values())?;
                    Some((d, DurationSource::FittedModel))
                }
                Some(Some(Err(e))) => {
                    fail_reason = Some(e.to_string());
                    None
                }
                _ => None,
            },
        };
        let resolved = match resolved {
            Some(r) => Ok(r),
            None => comm_duration(g, n, db, cfg)
                .map(|d| (d, DurationSource::CommFormula))
                .map_err(|e| fail_reason.unwrap_or(e)),
        };
        match resolved {
            Ok((d, src)) => {
                let d = if n.kind == OpKind::Compute {
                    d + cfg.op_gap_us
                } else {
                    d
                };
                table.insert(n.id.clone(), d, src);
            }
            Err(reason) => unresolved.push(UnresolvedNode {
                node: n.id.clone(),
                op_type: n.op_type.clone(),
                hardware,
                reason,
            }),
        }
    }
    if !unresolved.is_empty() {
        return Err(CostError::UnknownOp(unresolved));
    }

    let (table, override_warnings) = apply_overrides(&table, cfg, g);
    warnings.extend(override_warnings);
    Ok(Estimate {
        table,
        models,
        warnings,
    })
}

fn comm_duration(g: &DataflowGraph, n: &OpNode, db: &ProfileDb, cfg: &StrategyConfig) -> Result<f64, String> {
    let bytes = || {
        n.attr("bytes")
            .and_then(|b| b.as_u64())
            .ok_or_else(|| "missing integer attr \"bytes\"".to_owned())
    };
    let device = || {
        g.device(&n.device)
            .ok_or_else(|| format!("unknown device {:?}", n.device))
    };
    match n.kind {
        OpKind::Compute => Err("no profile record, no fitted model, no override".to_owned()),
        OpKind::Transfer => transfer_time(bytes()?, device()?).map_err(|e| e.to_string()),
        OpKind::Collective => {
            let group = n
                .attr("group")
                .and_then(|v| v.as_list())
                .ok_or_else(|| "missing attr \"group\"".to_owned())?;
            let fallback = device()?.link_params().or(cfg.collective.fallback_link);
            allreduce_time(
                bytes()?,
                group.len(),
                db,
                cfg.collective.algo,
                &cfg.collective.path,
                fallback,
            )
            .map_err(|e| e.to_string())
        }
    }
}
