//! Closed-form efficiency and variance of the estimators, and the
//! Monte-Carlo harness that validates them.
//!
//! For one observation the Fisher information on `A_k` is
//! `delta / (A_k (1 - A_k delta))` and the attained variance is its
//! reciprocal `A_k (1 - A_k delta) / delta`, where `delta` is
//! `beta_k(x)` for the family-equation estimators (original MLE, RSE,
//! merged MLE) and `psi_k(x)` for the individual-based ones. The
//! block-wise estimator only admits an information range, so its
//! variance is assessed purely by Monte Carlo.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::{estimate_node, EstimatorError, EstimatorTag, Method};
use crate::sim::simulate;
use crate::stats::SubtreeStatistics;
use crate::tree::{descendant_subsets, LossModel, NodeId, Tree, TreeError, TrueRates};

/// Denominators at or below this are reported as singular.
pub const SINGULARITY_EPS: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("information is singular at node {node} (denominator {denom:e})")]
    Singular { node: NodeId, denom: f64 },
    #[error("no closed-form variance for `{0}`; use the information range or Monte Carlo")]
    NoClosedForm(String),
    #[error("node {0} is not an internal node with at least two children")]
    NotInternal(NodeId),
    #[error("{node} is not a child of node {parent}")]
    NotAChild { parent: NodeId, node: NodeId },
    #[error("subset must have at least two members, found {0}")]
    SubsetTooSmall(usize),
    #[error("duplicate member {0} in subset")]
    DuplicateMember(NodeId),
    #[error("groups must partition the children of node {node}: {reason}")]
    BadPartition { node: NodeId, reason: String },
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

fn require_internal(tree: &Tree, k: NodeId) -> Result<&[NodeId], AnalysisError> {
    if !tree.contains(k) {
        return Err(TreeError::UnknownNode(k).into());
    }
    let d = tree.children(k);
    if d.len() < 2 {
        return Err(AnalysisError::NotInternal(k));
    }
    Ok(d)
}

fn canonical_subset(tree: &Tree, k: NodeId, x: &[NodeId]) -> Result<Vec<NodeId>, AnalysisError> {
    let d = require_internal(tree, k)?;
    if x.len() < 2 {
        return Err(AnalysisError::SubsetTooSmall(x.len()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(AnalysisError::DuplicateMember(w[0]));
        }
    }
    for &j in &sorted {
        if !d.contains(&j) {
            return Err(AnalysisError::NotAChild { parent: k, node: j });
        }
    }
    Ok(sorted)
}

fn information(a: f64, delta: f64, node: NodeId) -> Result<f64, AnalysisError> {
    let denom = a * (1.0 - a * delta);
    if denom <= SINGULARITY_EPS {
        return Err(AnalysisError::Singular { node, denom });
    }
    Ok(delta / denom)
}

/// Per-observation Fisher information of the individual-based estimator
/// `Al_k(x)`: `psi_k(x) / (A_k (1 - A_k psi_k(x)))`.
pub fn fisher_ibe(
    tree: &Tree,
    rates: &TrueRates,
    k: NodeId,
    x: &[NodeId],
) -> Result<f64, AnalysisError> {
    let x = canonical_subset(tree, k, x)?;
    information(rates.a(k), rates.psi(&x), k)
}

/// Per-observation Fisher information of the original MLE (`x = d_k`)
/// and the reduce-scaled estimators:
/// `beta_k(x) / (A_k (1 - A_k beta_k(x)))`.
pub fn fisher_mle(
    tree: &Tree,
    rates: &TrueRates,
    k: NodeId,
    x: &[NodeId],
) -> Result<f64, AnalysisError> {
    let x = canonical_subset(tree, k, x)?;
    information(rates.a(k), rates.beta_subset(&x), k)
}

fn variance_from_delta(a: f64, delta: f64, node: NodeId) -> Result<f64, AnalysisError> {
    if delta <= SINGULARITY_EPS {
        return Err(AnalysisError::Singular { node, denom: delta });
    }
    Ok(a * (1.0 - a * delta) / delta)
}

/// Per-observation Cramér-Rao variance `A_k (1 - A_k delta) / delta` of
/// the tagged estimator, evaluated at the model's rates.
///
/// `Direct` uses `delta = 1` (direct measurement of the path); `Bwe` has
/// no closed form and returns [`AnalysisError::NoClosedForm`].
pub fn crb_variance(
    tree: &Tree,
    rates: &TrueRates,
    k: NodeId,
    tag: &EstimatorTag,
) -> Result<f64, AnalysisError> {
    if !tree.contains(k) {
        return Err(TreeError::UnknownNode(k).into());
    }
    let a = rates.a(k);
    match tag {
        EstimatorTag::Direct => variance_from_delta(a, 1.0, k),
        EstimatorTag::Mle => {
            require_internal(tree, k)?;
            variance_from_delta(a, rates.beta(k), k)
        }
        EstimatorTag::Rse(x) => {
            let x = canonical_subset(tree, k, x)?;
            variance_from_delta(a, rates.beta_subset(&x), k)
        }
        EstimatorTag::Ibe(x) => {
            let x = canonical_subset(tree, k, x)?;
            variance_from_delta(a, rates.psi(&x), k)
        }
        EstimatorTag::Merged(g1, g2) => {
            merged_mle_variance(tree, rates, k, &[g1.as_slice(), g2.as_slice()])
        }
        EstimatorTag::Bwe(i) => Err(AnalysisError::NoClosedForm(format!("bwe[{i}]"))),
    }
}

/// Variance of the merged MLE for an arbitrary partition of `d_k` into
/// groups. The pass rate of the regrouped subtree always equals
/// `beta_k`, which is asserted to 1e-12 (a violation is a bug, not a
/// data condition), so the value is partition-independent.
pub fn merged_mle_variance(
    tree: &Tree,
    rates: &TrueRates,
    k: NodeId,
    groups: &[&[NodeId]],
) -> Result<f64, AnalysisError> {
    let d = require_internal(tree, k)?;
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(AnalysisError::BadPartition {
            node: k,
            reason: "need at least two non-empty groups".into(),
        });
    }
    let mut union: Vec<NodeId> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    union.sort_unstable();
    if union.windows(2).any(|w| w[0] == w[1]) || union != d {
        return Err(AnalysisError::BadPartition {
            node: k,
            reason: format!("groups cover {union:?}, children are {d:?}"),
        });
    }
    let beta_regrouped = 1.0
        - groups
            .iter()
            .map(|g| 1.0 - rates.beta_subset(g))
            .product::<f64>();
    assert!(
        (beta_regrouped - rates.beta(k)).abs() <= 1e-12,
        "regrouped subtree rate {beta_regrouped} drifted from beta_k {}",
        rates.beta(k)
    );
    variance_from_delta(rates.a(k), beta_regrouped, k)
}

/// Bounds on the per-observation information of the block-wise
/// estimator `A_k(i)`:
/// `min_x I_ibe(x) <= I(A_k(i)) <= C(|d_k|, i) * max_x I_ibe(x)`
/// over `x` in `S_k(i)`.
pub fn bwe_information_range(
    tree: &Tree,
    rates: &TrueRates,
    k: NodeId,
    degree: usize,
) -> Result<(f64, f64), AnalysisError> {
    let d = require_internal(tree, k)?;
    if degree < 2 || degree > d.len() {
        return Err(EstimatorError::BadDegree {
            degree,
            arity: d.len(),
        }
        .into());
    }
    let mut low = f64::INFINITY;
    let mut high: f64 = 0.0;
    for x in descendant_subsets(tree, k, degree)? {
        let info = fisher_ibe(tree, rates, k, &x)?;
        low = low.min(info);
        high = high.max(info);
    }
    Ok((low, binomial(d.len(), degree) * high))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// One (node, estimator) line of a Monte-Carlo validation run.
///
/// `crb_single_obs` is the closed-form variance for one observation
/// (`None` for BWE, which has no closed form); `crb_n` divides it by the
/// probe count and is the value `mc_variance` is expected to attain.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VarianceReport {
    pub node: NodeId,
    pub estimator: String,
    pub crb_single_obs: Option<f64>,
    pub crb_n: Option<f64>,
    pub mc_mean: f64,
    pub mc_variance: f64,
    pub replications: usize,
    pub excluded: usize,
    pub n: usize,
}

/// Configuration of a Monte-Carlo validation run.
///
/// Replication `r` re-seeds the simulator with `base_seed + r`.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub n: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub methods: Vec<Method>,
}

/// Runs `replications` independent experiments of `n` probes and pairs
/// the sample mean/variance of each (estimable node, method) with its
/// theoretical variance at the true rates.
///
/// Replications run in parallel; per-replication estimates are reduced
/// in replication order, so reports are bitwise reproducible. Degenerate
/// replications are excluded from the moments and counted in `excluded`.
pub fn monte_carlo(
    tree: &Tree,
    model: &LossModel,
    cfg: &McConfig,
) -> Result<Vec<VarianceReport>, AnalysisError> {
    if cfg.replications < 2 {
        return Err(AnalysisError::TooFewReplications(cfg.replications));
    }
    assert!(cfg.n >= 1, "need at least one probe per replication");
    let rates = TrueRates::compute(tree, model);
    let nodes = tree.estimable_nodes();
    let pairs: Vec<(NodeId, &Method)> = nodes
        .iter()
        .flat_map(|&k| cfg.methods.iter().map(move |m| (k, m)))
        .collect();

    let samples: Vec<Vec<Option<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<f64>>, AnalysisError> {
            let seed = cfg.base_seed.wrapping_add(r as u64);
            let (obs, _) = simulate(tree, model, cfg.n, seed);
            let stats = SubtreeStatistics::from_observations(tree, &obs)
                .expect("simulated observations always match the tree");
            pairs
                .iter()
                .map(|&(k, method)| {
                    let est = estimate_node(&stats, k, method)?;
                    Ok(if est.is_degenerate() {
                        None
                    } else {
                        Some(est.value)
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(pairs.len());
    for (idx, &(k, method)) in pairs.iter().enumerate() {
        let tag = method.tag_for(tree.children(k));
        let crb_single_obs = match crb_variance(tree, &rates, k, &tag) {
            Ok(v) => Some(v),
            Err(AnalysisError::NoClosedForm(_)) => None,
            Err(e) => return Err(e),
        };
        let values: Vec<f64> = samples.iter().filter_map(|row| row[idx]).collect();
        let count = values.len();
        let (mean, var) = if count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = values.iter().sum::<f64>() / count as f64;
            let var = if count < 2 {
                f64::NAN
            } else {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
            };
            (mean, var)
        };
        reports.push(VarianceReport {
            node: k,
            estimator: tag.to_string(),
            crb_single_obs,
            crb_n: crb_single_obs.map(|v| v / cfg.n as f64),
            mc_mean: mean,
            mc_variance: var,
            replications: cfg.replications,
            excluded: cfg.replications - count,
            n: cfg.n,
        });
    }
    // Group by node first, keeping the configured method order inside.
    let mut by_node: BTreeMap<NodeId, Vec<VarianceReport>> = BTreeMap::new();
    for r in reports {
        by_node.entry(r.node).or_default().push(r);
    }
    Ok(by_node.into_values().flatten().collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with the fixed columns
/// `node,estimator,crb_single,crb_n,mc_mean,mc_var,excluded`.
pub fn reports_to_csv(reports: &[VarianceReport]) -> String {
    let mut out = String::from("node,estimator,crb_single,crb_n,mc_mean,mc_var,excluded\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.node,
            r.estimator,
            opt(r.crb_single_obs),
            opt(r.crb_n),
            r.mc_mean,
            r.mc_variance,
            r.excluded
        ));
    }
    out
}

pub fn reports_to_json(reports: &[VarianceReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports are serializable")
}

/// One line of the closed-form model analysis.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AnalysisRow {
    pub node: NodeId,
    pub estimator: String,
    pub fisher_low: f64,
    pub fisher_high: f64,
    pub crb_single_obs: Option<f64>,
}

/// Fisher information and CRB variance for the standard estimator roster
/// (original MLE, merged MLE, pairwise IBE, full-family IBE, pairwise
/// BWE range) at every estimable node.
///
/// Where the information is singular (a lossless subtree) the row
/// carries infinity and the variance 0.
pub fn analyze_model(tree: &Tree, rates: &TrueRates) -> Result<Vec<AnalysisRow>, AnalysisError> {
    let mut rows = Vec::new();
    for k in tree.estimable_nodes() {
        let d = tree.children(k).to_vec();
        let mut push = |estimator: String,
                        info: Result<f64, AnalysisError>,
                        crb: Option<f64>|
         -> Result<(), AnalysisError> {
            let info = match info {
                Ok(v) => v,
                Err(AnalysisError::Singular { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            rows.push(AnalysisRow {
                node: k,
                estimator,
                fisher_low: info,
                fisher_high: info,
                crb_single_obs: crb,
            });
            Ok(())
        };

        let mle_tag = EstimatorTag::Mle;
        push(
            mle_tag.to_string(),
            fisher_mle(tree, rates, k, &d),
            Some(crb_variance(tree, rates, k, &mle_tag)?),
        )?;

        let merged_tag = EstimatorTag::Merged(d[..1].to_vec(), d[1..].to_vec());
        push(
            merged_tag.to_string(),
            fisher_mle(tree, rates, k, &d),
            Some(crb_variance(tree, rates, k, &merged_tag)?),
        )?;

        let pair = d[..2].to_vec();
        let pair_tag = EstimatorTag::Ibe(pair.clone());
        push(
            pair_tag.to_string(),
            fisher_ibe(tree, rates, k, &pair),
            Some(crb_variance(tree, rates, k, &pair_tag)?),
        )?;

        let all_tag = EstimatorTag::Ibe(d.clone());
        push(
            all_tag.to_string(),
            fisher_ibe(tree, rates, k, &d),
            Some(crb_variance(tree, rates, k, &all_tag)?),
        )?;

        match bwe_information_range(tree, rates, k, 2) {
            Ok((low, high)) => rows.push(AnalysisRow {
                node: k,
                estimator: EstimatorTag::Bwe(2).to_string(),
                fisher_low: low,
                fisher_high: high,
                crb_single_obs: None,
            }),
            Err(AnalysisError::Singular { .. }) => rows.push(AnalysisRow {
                node: k,
                estimator: EstimatorTag::Bwe(2).to_string(),
                fisher_low: f64::INFINITY,
                fisher_high: f64::INFINITY,
                crb_single_obs: None,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// CSV with the columns `node,estimator,fisher_low,fisher_high,crb_single`.
pub fn analysis_to_csv(rows: &[AnalysisRow]) -> String {
    let mut out = String::from("node,estimator,fisher_low,fisher_high,crb_single\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.node,
            r.estimator,
            r.fisher_low,
            r.fisher_high,
            opt(r.crb_single_obs)
        ));
    }
    out
}

pub fn analysis_to_json(rows: &[AnalysisRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows are serializable")
}
