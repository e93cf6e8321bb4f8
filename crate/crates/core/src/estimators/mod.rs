//! The path-rate estimators and tree-wide estimation.
//!
//! Every estimator targets `A_k`, the pass rate of the path from the
//! source to node `k`, from the statistics of the receivers below `k`:
//!
//! * `mle_original` — the full polynomial likelihood equation over all
//!   correlations of `d_k`;
//! * `rse` — the same equation restricted to a subset of subtrees;
//! * `bwe` — the explicit block estimator over all degree-`i`
//!   correlations;
//! * `ibe` — the explicit single-correlation estimator;
//! * `merged_mle` — the linear equation obtained by merging the
//!   subtrees into two groups.
//!
//! Estimates above 1 are clamped and flagged `CLAMPED`; data that admits
//! no solution yields a flagged `DEGENERATE` value instead of an error,
//! so a single bad node never aborts tree-wide estimation.

pub mod equations;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::stats::{StatsError, SubtreeStatistics};
use crate::tree::{NodeId, Tree, DEFAULT_SUBSET_CAP};

use equations::FamilySolution;

use itertools::Itertools;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("node {0} is a leaf; its path rate is the empirical gamma")]
    LeafNode(NodeId),
    #[error("node {0} has a single child; its incident links are only identifiable as a product")]
    Unidentifiable(NodeId),
    #[error("subset must have at least two members, found {0}")]
    SubsetTooSmall(usize),
    #[error("degree {degree} out of range 2..={arity}")]
    BadDegree { degree: usize, arity: usize },
    #[error("groups must bipartition the children of node {node}: {reason}")]
    BadPartition { node: NodeId, reason: String },
    #[error("method `{0}` not recognised")]
    UnknownMethod(String),
}

/// Estimate quality flags.
#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct Flags(u8);

impl Flags {
    /// The raw value exceeded 1 and was clamped to 1.
    pub const CLAMPED: Flags = Flags(1);
    /// The data admitted no valid estimate.
    pub const DEGENERATE: Flags = Flags(2);
    /// A link estimate spanning a chain through one-child nodes.
    pub const MERGED_PATH: Flags = Flags(4);

    pub fn empty() -> Flags {
        Flags(0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.contains(Flags::CLAMPED) {
            names.push("CLAMPED");
        }
        if self.contains(Flags::DEGENERATE) {
            names.push("DEGENERATE");
        }
        if self.contains(Flags::MERGED_PATH) {
            names.push("MERGED_PATH");
        }
        write!(f, "{}", names.join("|"))
    }
}

/// Which estimator produced a value, with the exact inputs it used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EstimatorTag {
    /// Empirical path rate (leaves and the root).
    Direct,
    Mle,
    Rse(Vec<NodeId>),
    Bwe(usize),
    Ibe(Vec<NodeId>),
    Merged(Vec<NodeId>, Vec<NodeId>),
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(|i| i.to_string()).join(";")
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorTag::Direct => write!(f, "direct"),
            EstimatorTag::Mle => write!(f, "mle"),
            EstimatorTag::Rse(x) => write!(f, "rse[{}]", join_ids(x)),
            EstimatorTag::Bwe(i) => write!(f, "bwe[{i}]"),
            EstimatorTag::Ibe(x) => write!(f, "ibe[{}]", join_ids(x)),
            EstimatorTag::Merged(a, b) => write!(f, "merged[{}|{}]", join_ids(a), join_ids(b)),
        }
    }
}

/// A single path-rate estimate `A_hat_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub node: NodeId,
    pub value: f64,
    pub tag: EstimatorTag,
    pub flags: Flags,
}

impl Estimate {
    pub fn is_degenerate(&self) -> bool {
        self.flags.contains(Flags::DEGENERATE)
    }
}

fn classify(node: NodeId, tag: EstimatorTag, value: f64) -> Estimate {
    let mut flags = Flags::empty();
    let value = if value.is_nan() || value <= 0.0 {
        flags.insert(Flags::DEGENERATE);
        value
    } else if value > 1.0 {
        flags.insert(Flags::CLAMPED);
        1.0
    } else {
        value
    };
    Estimate {
        node,
        value,
        tag,
        flags,
    }
}

fn from_solution(node: NodeId, tag: EstimatorTag, sol: FamilySolution) -> Estimate {
    match sol {
        FamilySolution::Root(v) => classify(node, tag, v),
        FamilySolution::Boundary(v) => {
            let mut e = classify(node, tag, v);
            e.flags.insert(Flags::DEGENERATE);
            e
        }
        FamilySolution::Degenerate => Estimate {
            node,
            value: f64::NAN,
            tag,
            flags: Flags::DEGENERATE,
        },
    }
}

fn family_of(stats: &SubtreeStatistics, k: NodeId) -> Result<Vec<NodeId>, EstimatorError> {
    let d = stats.children(k)?;
    match d.len() {
        0 => Err(EstimatorError::LeafNode(k)),
        1 => Err(EstimatorError::Unidentifiable(k)),
        _ => Ok(d.to_vec()),
    }
}

fn gamma_product(stats: &SubtreeStatistics, x: &[NodeId]) -> Result<f64, EstimatorError> {
    let mut p = 1.0;
    for &j in x {
        p *= stats.gamma_hat(j)?;
    }
    Ok(p)
}

/// The original MLE: the root of
/// `1 - gamma_hat_k/A = prod_{j in d_k} (1 - gamma_hat_j/A)`
/// in `(max_j gamma_hat_j, 1]`. Uses the closed form when `|d_k| = 2`
/// and bisection otherwise.
pub fn mle_original(stats: &SubtreeStatistics, k: NodeId) -> Result<Estimate, EstimatorError> {
    let d = family_of(stats, k)?;
    let gu = stats.gamma_hat(k)?;
    let gs: Vec<f64> = d
        .iter()
        .map(|&j| stats.gamma_hat(j))
        .collect::<Result<_, _>>()?;
    Ok(from_solution(
        k,
        EstimatorTag::Mle,
        equations::solve_family(gu, &gs),
    ))
}

/// Reduce-scaled estimator `Am_k(x)`: the family equation restricted to
/// the subtrees in `x`, with `n_k(x)/n` in place of `gamma_hat_k`.
pub fn rse(stats: &SubtreeStatistics, k: NodeId, x: &[NodeId]) -> Result<Estimate, EstimatorError> {
    family_of(stats, k)?;
    if x.len() < 2 {
        return Err(EstimatorError::SubsetTooSmall(x.len()));
    }
    let gu = stats.n_k_group(k, x)? as f64 / stats.n() as f64;
    let x = {
        let mut v = x.to_vec();
        v.sort_unstable();
        v
    };
    let gs: Vec<f64> = x
        .iter()
        .map(|&j| stats.gamma_hat(j))
        .collect::<Result<_, _>>()?;
    Ok(from_solution(
        k,
        EstimatorTag::Rse(x),
        equations::solve_family(gu, &gs),
    ))
}

/// Block-wise estimator `A_k(i)` over all degree-`i` correlations:
/// `[(sum_x prod_j gamma_hat_j) / (sum_x I_k(x)/n)]^(1/(i-1))`.
pub fn bwe(
    stats: &SubtreeStatistics,
    k: NodeId,
    degree: usize,
) -> Result<Estimate, EstimatorError> {
    bwe_capped(stats, k, degree, DEFAULT_SUBSET_CAP)
}

pub fn bwe_capped(
    stats: &SubtreeStatistics,
    k: NodeId,
    degree: usize,
    cap: usize,
) -> Result<Estimate, EstimatorError> {
    let d = family_of(stats, k)?;
    if d.len() > cap {
        return Err(StatsError::SubsetCap {
            node: k,
            degree: d.len(),
            cap,
        }
        .into());
    }
    if degree < 2 || degree > d.len() {
        return Err(EstimatorError::BadDegree {
            degree,
            arity: d.len(),
        });
    }
    let n = stats.n() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for x in d.iter().copied().combinations(degree) {
        num += gamma_product(stats, &x)?;
        den += stats.intersection_count(k, &x)? as f64 / n;
    }
    Ok(finish_power(k, EstimatorTag::Bwe(degree), num, den, degree))
}

/// Individual-based estimator `Al_k(x)`:
/// `[prod_{j in x} gamma_hat_j / (I_k(x)/n)]^(1/(|x|-1))`.
pub fn ibe(stats: &SubtreeStatistics, k: NodeId, x: &[NodeId]) -> Result<Estimate, EstimatorError> {
    family_of(stats, k)?;
    if x.len() < 2 {
        return Err(EstimatorError::SubsetTooSmall(x.len()));
    }
    let x = {
        let mut v = x.to_vec();
        v.sort_unstable();
        v
    };
    let num = gamma_product(stats, &x)?;
    let den = stats.intersection_count(k, &x)? as f64 / stats.n() as f64;
    let degree = x.len();
    Ok(finish_power(k, EstimatorTag::Ibe(x), num, den, degree))
}

fn finish_power(node: NodeId, tag: EstimatorTag, num: f64, den: f64, degree: usize) -> Estimate {
    if !equations::positive(den) {
        return Estimate {
            node,
            value: f64::NAN,
            tag,
            flags: Flags::DEGENERATE,
        };
    }
    classify(node, tag, equations::power_ratio(num, den, degree))
}

/// Merged MLE: bipartition `d_k` into two groups, merge each group's
/// observation, and solve the resulting linear equation
/// `A = g1*g2 / (g1 + g2 - gamma_hat_k)`.
pub fn merged_mle(
    stats: &SubtreeStatistics,
    k: NodeId,
    group1: &[NodeId],
    group2: &[NodeId],
) -> Result<Estimate, EstimatorError> {
    let d = family_of(stats, k)?;
    let mut g1 = group1.to_vec();
    let mut g2 = group2.to_vec();
    g1.sort_unstable();
    g2.sort_unstable();
    if g1.is_empty() || g2.is_empty() {
        return Err(EstimatorError::BadPartition {
            node: k,
            reason: "both groups must be non-empty".into(),
        });
    }
    if g1.iter().any(|j| g2.contains(j)) {
        return Err(EstimatorError::BadPartition {
            node: k,
            reason: "groups overlap".into(),
        });
    }
    let mut union: Vec<NodeId> = g1.iter().chain(&g2).copied().collect();
    union.sort_unstable();
    if union != d {
        return Err(EstimatorError::BadPartition {
            node: k,
            reason: format!("groups cover {union:?}, children are {d:?}"),
        });
    }
    let n = stats.n() as f64;
    let gu = stats.gamma_hat(k)?;
    let ga = stats.n_k_group(k, &g1)? as f64 / n;
    let gb = stats.n_k_group(k, &g2)? as f64 / n;
    Ok(from_solution(
        k,
        EstimatorTag::Merged(g1, g2),
        equations::closed_form_binary(gu, ga, gb),
    ))
}

/// Tree-wide estimator selector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Method {
    Mle,
    /// RSE on the first `size` children (clamped per node to `|d_k|`).
    Rse {
        size: usize,
    },
    /// BWE of the given degree (clamped per node to `|d_k|`).
    Bwe {
        degree: usize,
    },
    /// IBE on the lexicographically first pair of children.
    IbePair,
    /// IBE on the whole family `d_k`.
    IbeAll,
    /// Merged MLE splitting the children after the first `split` of
    /// them (clamped per node to `|d_k| - 1`); the default split of 1
    /// is first child vs. the rest.
    Merged {
        split: usize,
    },
}

impl Method {
    /// The tag this method produces at a node with the given children.
    pub fn tag_for(&self, children: &[NodeId]) -> EstimatorTag {
        match self {
            Method::Mle => EstimatorTag::Mle,
            Method::Rse { size } => {
                let s = (*size).min(children.len()).max(2);
                EstimatorTag::Rse(children[..s].to_vec())
            }
            Method::Bwe { degree } => EstimatorTag::Bwe((*degree).min(children.len()).max(2)),
            Method::IbePair => EstimatorTag::Ibe(children[..2].to_vec()),
            Method::IbeAll => EstimatorTag::Ibe(children.to_vec()),
            Method::Merged { split } => {
                let s = (*split).min(children.len() - 1).max(1);
                EstimatorTag::Merged(children[..s].to_vec(), children[s..].to_vec())
            }
        }
    }
}

impl FromStr for Method {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let parse_arg =
            |a: Option<&str>, default: usize, min: usize| -> Result<usize, EstimatorError> {
                match a {
                    None => Ok(default),
                    Some(v) => v
                        .parse::<usize>()
                        .ok()
                        .filter(|&x| x >= min)
                        .ok_or_else(|| EstimatorError::UnknownMethod(s.to_string())),
                }
            };
        match name {
            "mle" if arg.is_none() => Ok(Method::Mle),
            "rse" => Ok(Method::Rse {
                size: parse_arg(arg, 2, 2)?,
            }),
            "bwe" => Ok(Method::Bwe {
                degree: parse_arg(arg, 2, 2)?,
            }),
            "ibe" => match arg {
                None | Some("all") => Ok(Method::IbeAll),
                Some("pair") => Ok(Method::IbePair),
                _ => Err(EstimatorError::UnknownMethod(s.to_string())),
            },
            "merged" => Ok(Method::Merged {
                split: parse_arg(arg, 1, 1)?,
            }),
            _ => Err(EstimatorError::UnknownMethod(s.to_string())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Mle => write!(f, "mle"),
            Method::Rse { size } => write!(f, "rse:{size}"),
            Method::Bwe { degree } => write!(f, "bwe:{degree}"),
            Method::IbePair => write!(f, "ibe:pair"),
            Method::IbeAll => write!(f, "ibe:all"),
            Method::Merged { split: 1 } => write!(f, "merged"),
            Method::Merged { split } => write!(f, "merged:{split}"),
        }
    }
}

/// Runs the selected estimator at one internal node, adapting subset
/// sizes and degrees to the node's arity.
pub fn estimate_node(
    stats: &SubtreeStatistics,
    k: NodeId,
    method: &Method,
) -> Result<Estimate, EstimatorError> {
    let d = family_of(stats, k)?;
    match method {
        Method::Mle => mle_original(stats, k),
        Method::Rse { size } => {
            let s = (*size).min(d.len()).max(2);
            rse(stats, k, &d[..s])
        }
        Method::Bwe { degree } => bwe(stats, k, (*degree).min(d.len()).max(2)),
        Method::IbePair => ibe(stats, k, &d[..2]),
        Method::IbeAll => ibe(stats, k, &d),
        Method::Merged { split } => {
            let s = (*split).min(d.len() - 1).max(1);
            merged_mle(stats, k, &d[..s], &d[s..])
        }
    }
}

/// A link-level pass-rate estimate `alpha_hat = A_hat_k / A_hat_f(k)`.
///
/// `spans` lists the links the ratio covers top-down; more than one
/// entry means one-child nodes were folded in (flag `MERGED_PATH`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkEstimate {
    pub link: NodeId,
    pub alpha: f64,
    pub spans: Vec<NodeId>,
    pub flags: Flags,
}

impl LinkEstimate {
    pub fn loss_rate(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Path-rate and link-rate estimates over a whole tree.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EstimateSet {
    a_hat: BTreeMap<NodeId, Estimate>,
    alpha_hat: BTreeMap<NodeId, LinkEstimate>,
}

#[derive(Serialize)]
struct EstimateRow {
    node: NodeId,
    estimator: String,
    a_hat: f64,
    alpha_hat: Option<f64>,
    flags: String,
}

impl EstimateSet {
    pub fn a_hat(&self) -> &BTreeMap<NodeId, Estimate> {
        &self.a_hat
    }

    pub fn alpha_hat(&self) -> &BTreeMap<NodeId, LinkEstimate> {
        &self.alpha_hat
    }

    fn rows(&self) -> Vec<EstimateRow> {
        self.a_hat
            .values()
            .map(|e| {
                let link = self.alpha_hat.get(&e.node);
                let mut flags = e.flags;
                if let Some(l) = link {
                    flags.insert(l.flags);
                }
                EstimateRow {
                    node: e.node,
                    estimator: e.tag.to_string(),
                    a_hat: e.value,
                    alpha_hat: link.map(|l| l.alpha),
                    flags: flags.to_string(),
                }
            })
            .collect()
    }

    /// CSV with the fixed columns `node,estimator,A_hat,alpha_hat,flags`,
    /// one row per estimated node in id order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,estimator,A_hat,alpha_hat,flags\n");
        for r in self.rows() {
            let alpha = r.alpha_hat.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.node, r.estimator, r.a_hat, alpha, r.flags
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows()).expect("rows are serializable")
    }
}

/// Estimates the whole tree: leaves get their empirical path rate, the
/// root is 1 by definition, internal nodes use `method`, and link rates
/// are the ratios of consecutive estimates.
///
/// One-child internal nodes are skipped; the link below such a node is
/// folded into its child's link estimate and flagged `MERGED_PATH`.
/// Degenerate nodes are flagged and propagate through the ratios, never
/// aborting the rest of the tree.
pub fn estimate_tree(
    tree: &Tree,
    stats: &SubtreeStatistics,
    method: &Method,
) -> Result<EstimateSet, EstimatorError> {
    assert_eq!(
        stats.node_count(),
        tree.node_count(),
        "stats do not match the tree"
    );
    let mut a_hat: BTreeMap<NodeId, Estimate> = BTreeMap::new();
    a_hat.insert(
        0,
        Estimate {
            node: 0,
            value: 1.0,
            tag: EstimatorTag::Direct,
            flags: Flags::empty(),
        },
    );
    for k in 1..tree.node_count() {
        if tree.is_leaf(k) {
            let gamma = stats.gamma_hat(k)?;
            a_hat.insert(k, classify(k, EstimatorTag::Direct, gamma));
        } else if tree.children(k).len() >= 2 {
            a_hat.insert(k, estimate_node(stats, k, method)?);
        }
        // One-child internal nodes are intentionally absent.
    }

    let mut alpha_hat = BTreeMap::new();
    for k in 1..tree.node_count() {
        let Some(est) = a_hat.get(&k) else { continue };
        let mut spans = vec![k];
        let mut p = tree.parent(k).unwrap();
        while !a_hat.contains_key(&p) {
            spans.push(p);
            p = tree.parent(p).unwrap();
        }
        spans.reverse();
        let ancestor = &a_hat[&p];
        let ratio = est.value / ancestor.value;
        let mut flags = Flags::empty();
        if spans.len() > 1 {
            flags.insert(Flags::MERGED_PATH);
        }
        let alpha = if ratio.is_nan() || ratio <= 0.0 {
            flags.insert(Flags::DEGENERATE);
            ratio
        } else if ratio > 1.0 {
            flags.insert(Flags::CLAMPED);
            1.0
        } else {
            ratio
        };
        alpha_hat.insert(
            k,
            LinkEstimate {
                link: k,
                alpha,
                spans,
                flags,
            },
        );
    }
    Ok(EstimateSet { a_hat, alpha_hat })
}
