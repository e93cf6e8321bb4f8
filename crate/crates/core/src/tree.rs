//! Multicast tree topology, per-link loss model, and the exact rates
//! they induce.
//!
//! Nodes are dense ids `0..=m`; node 0 is the source and by convention
//! has exactly one child. Link `k` (for `k >= 1`) connects `f(k)` to
//! node `k`, so links are identified by their lower endpoint. Leaves
//! are the receivers.
//!
//! The text format is one line per non-root node:
//!
//! ```text
//! # node  parent  pass-rate
//! 1 0 0.99
//! 2 1 0.95
//! ```

use std::fmt::Write as _;

use itertools::Itertools;
use thiserror::Error;

pub type NodeId = usize;

/// Default cap on the family size `|d_k|` for operations that enumerate
/// subsets of a node's children (those are exponential in `|d_k|`).
pub const DEFAULT_SUBSET_CAP: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {0} is defined more than once")]
    DuplicateNode(NodeId),
    #[error("node 0 is the root and cannot be given a parent")]
    RootWithParent,
    #[error("node ids must be dense 0..=m: node {0} is missing")]
    MissingNode(NodeId),
    #[error("node {node} references undefined parent {parent}")]
    OrphanNode { node: NodeId, parent: NodeId },
    #[error("cycle detected through node {0}")]
    Cycle(NodeId),
    #[error("node 0 must have exactly one child, found {0}")]
    RootDegree(usize),
    #[error("tree must contain at least one link")]
    Empty,
    #[error("node {node} has {degree} children, above the subset cap {cap}")]
    SubsetCap {
        node: NodeId,
        degree: usize,
        cap: usize,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is a leaf")]
    LeafNode(NodeId),
    #[error("subset size {size} out of range 1..={degree}")]
    BadSubsetSize { size: usize, degree: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: pass rate {value} outside [0, 1]")]
    RateOutOfRange { line: usize, value: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A rooted multicast tree with dense node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    parent: Vec<NodeId>, // parent[0] is unused
    children: Vec<Vec<NodeId>>,
    receivers: Vec<NodeId>,
    preorder: Vec<NodeId>,
    subtree_receivers: Vec<Vec<NodeId>>,
}

impl Tree {
    /// Builds a tree from `(node, parent)` links and validates every
    /// structural invariant: dense ids, single parent, acyclic,
    /// connected, root with exactly one child.
    pub fn from_links(links: &[(NodeId, NodeId)]) -> Result<Self, TreeError> {
        if links.is_empty() {
            return Err(TreeError::Empty);
        }
        let m = links.len();
        let mut parent = vec![usize::MAX; m + 1];
        for &(node, par) in links {
            if node == 0 {
                return Err(TreeError::RootWithParent);
            }
            if node > m {
                // Ids exceed the record count, so some smaller id is absent.
                let missing = (1..=m)
                    .find(|&i| !links.iter().any(|&(n, _)| n == i))
                    .unwrap_or(node);
                return Err(TreeError::MissingNode(missing));
            }
            if parent[node] != usize::MAX {
                return Err(TreeError::DuplicateNode(node));
            }
            if par > m {
                return Err(TreeError::OrphanNode { node, parent: par });
            }
            parent[node] = par;
        }

        let mut children = vec![Vec::new(); m + 1];
        for k in 1..=m {
            children[parent[k]].push(k);
        }
        for c in &mut children {
            c.sort_unstable();
        }
        if children[0].len() != 1 {
            return Err(TreeError::RootDegree(children[0].len()));
        }

        // Every node must be reachable from the root. Each non-root node
        // has exactly one defined parent, so an unreachable node implies
        // a cycle among its ancestors.
        let mut preorder = Vec::with_capacity(m + 1);
        let mut seen = vec![false; m + 1];
        let mut stack = vec![0usize];
        while let Some(k) = stack.pop() {
            seen[k] = true;
            preorder.push(k);
            for &c in children[k].iter().rev() {
                stack.push(c);
            }
        }
        if let Some(k) = (0..=m).find(|&k| !seen[k]) {
            return Err(TreeError::Cycle(k));
        }

        let receivers: Vec<NodeId> = (0..=m).filter(|&k| children[k].is_empty()).collect();

        let mut subtree_receivers = vec![Vec::new(); m + 1];
        for &k in preorder.iter().rev() {
            if children[k].is_empty() {
                subtree_receivers[k] = vec![k];
            } else {
                let mut rs = Vec::new();
                for &c in &children[k] {
                    rs.extend_from_slice(&subtree_receivers[c]);
                }
                rs.sort_unstable();
                subtree_receivers[k] = rs;
            }
        }

        Ok(Tree {
            parent,
            children,
            receivers,
            preorder,
            subtree_receivers,
        })
    }

    /// Number of nodes, `m + 1`.
    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// Number of links, `m`.
    pub fn link_count(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn parent(&self, k: NodeId) -> Option<NodeId> {
        if k == 0 || k >= self.parent.len() {
            None
        } else {
            Some(self.parent[k])
        }
    }

    pub fn children(&self, k: NodeId) -> &[NodeId] {
        &self.children[k]
    }

    pub fn is_leaf(&self, k: NodeId) -> bool {
        self.children[k].is_empty()
    }

    pub fn contains(&self, k: NodeId) -> bool {
        k < self.parent.len()
    }

    /// The receiver set `R` (all leaves), sorted.
    pub fn receivers(&self) -> &[NodeId] {
        &self.receivers
    }

    /// The receivers beneath node `k` (`R(k)`), sorted. For a leaf this
    /// is the leaf itself.
    pub fn receivers_under(&self, k: NodeId) -> &[NodeId] {
        &self.subtree_receivers[k]
    }

    /// Depth-first preorder, root first, children in ascending id order.
    /// This is the traversal order the probe simulator commits to.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// Internal nodes with at least two children, in id order. These are
    /// the nodes whose path rate the estimators can identify.
    pub fn estimable_nodes(&self) -> Vec<NodeId> {
        (0..self.node_count())
            .filter(|&k| self.children[k].len() >= 2)
            .collect()
    }

    /// Non-root internal nodes with exactly one child, in id order.
    ///
    /// The parser accepts them but estimation refuses them: from receiver
    /// data the two incident links are only identifiable as a product, so
    /// `estimate_tree` folds them into the next link down and flags it.
    pub fn single_child_nodes(&self) -> Vec<NodeId> {
        (1..self.node_count())
            .filter(|&k| self.children[k].len() == 1)
            .collect()
    }
}

/// Per-link Bernoulli pass rates.
///
/// Rates live in `[0, 1]`; a rate of exactly zero cuts the link, which
/// the simulator supports even though estimation on such data is
/// degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    pass: Vec<f64>, // pass[0] unused, fixed at 1
}

impl LossModel {
    /// The same pass rate on every link.
    pub fn uniform(tree: &Tree, alpha: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&alpha),
            "pass rate {alpha} outside [0, 1]"
        );
        let mut pass = vec![alpha; tree.node_count()];
        pass[0] = 1.0;
        LossModel { pass }
    }

    /// Rates listed per link id `1..=m`.
    pub fn from_rates(tree: &Tree, rates: &[f64]) -> Self {
        assert_eq!(rates.len(), tree.link_count(), "one rate per link required");
        for (i, &r) in rates.iter().enumerate() {
            assert!(
                (0.0..=1.0).contains(&r),
                "pass rate {r} on link {} outside [0, 1]",
                i + 1
            );
        }
        let mut pass = Vec::with_capacity(tree.node_count());
        pass.push(1.0);
        pass.extend_from_slice(rates);
        LossModel { pass }
    }

    /// Pass rate of link `k` (`alpha_k`).
    pub fn pass_rate(&self, k: NodeId) -> f64 {
        self.pass[k]
    }

    /// Loss rate of link `k`, `1 - alpha_k`.
    pub fn loss_rate(&self, k: NodeId) -> f64 {
        1.0 - self.pass[k]
    }

    pub fn link_count(&self) -> usize {
        self.pass.len() - 1
    }
}

/// Exact model-level rates: path rates `A_k`, subtree rates `beta_k`,
/// end-to-end rates `gamma_k = A_k * beta_k`, and the subset products
/// `psi` / `beta` used by the estimator analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueRates {
    a: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    alpha_beta: Vec<f64>, // alpha_k * beta_k per node, 1.0 at the root
}

impl TrueRates {
    /// Evaluates the recursions
    /// `A_k = A_f(k) * alpha_k` (top down) and
    /// `1 - beta_k = prod_{j in d_k} (1 - alpha_j beta_j)` (bottom up),
    /// with `beta_j = 1` at receivers.
    pub fn compute(tree: &Tree, model: &LossModel) -> Self {
        assert_eq!(
            model.link_count(),
            tree.link_count(),
            "model does not cover the tree"
        );
        let n = tree.node_count();
        let mut a = vec![1.0; n];
        for &k in tree.preorder() {
            if k != 0 {
                a[k] = a[tree.parent(k).unwrap()] * model.pass_rate(k);
            }
        }
        let mut beta = vec![1.0; n];
        for &k in tree.preorder().iter().rev() {
            if !tree.is_leaf(k) {
                let miss: f64 = tree
                    .children(k)
                    .iter()
                    .map(|&j| 1.0 - model.pass_rate(j) * beta[j])
                    .product();
                beta[k] = 1.0 - miss;
            }
        }
        let gamma = (0..n).map(|k| a[k] * beta[k]).collect();
        let alpha_beta = (0..n).map(|k| model.pass_rate(k) * beta[k]).collect();
        TrueRates {
            a,
            beta,
            gamma,
            alpha_beta,
        }
    }

    /// Path pass rate from the root to node `k`.
    pub fn a(&self, k: NodeId) -> f64 {
        self.a[k]
    }

    /// Pass rate of the subtree below `k` (1 for receivers).
    pub fn beta(&self, k: NodeId) -> f64 {
        self.beta[k]
    }

    /// End-to-end pass rate `gamma_k = A_k * beta_k`.
    pub fn gamma(&self, k: NodeId) -> f64 {
        self.gamma[k]
    }

    /// `alpha_k * beta_k`, the chance a probe at `f(k)` is observed
    /// somewhere under `k`.
    pub fn alpha_beta(&self, k: NodeId) -> f64 {
        self.alpha_beta[k]
    }

    /// `psi(x) = prod_{j in x} alpha_j beta_j` for siblings `x`.
    pub fn psi(&self, x: &[NodeId]) -> f64 {
        x.iter().map(|&j| self.alpha_beta[j]).product()
    }

    /// `beta_k(x) = 1 - prod_{j in x} (1 - alpha_j beta_j)` for a subset
    /// `x` of some node's children.
    pub fn beta_subset(&self, x: &[NodeId]) -> f64 {
        1.0 - x.iter().map(|&j| 1.0 - self.alpha_beta[j]).product::<f64>()
    }
}

/// All size-`size` subsets of `d_k`, in lexicographic order.
///
/// Uses [`DEFAULT_SUBSET_CAP`]; see [`descendant_subsets_capped`] to
/// override the cap.
pub fn descendant_subsets(
    tree: &Tree,
    k: NodeId,
    size: usize,
) -> Result<Vec<Vec<NodeId>>, TreeError> {
    descendant_subsets_capped(tree, k, size, DEFAULT_SUBSET_CAP)
}

pub fn descendant_subsets_capped(
    tree: &Tree,
    k: NodeId,
    size: usize,
    cap: usize,
) -> Result<Vec<Vec<NodeId>>, TreeError> {
    if !tree.contains(k) {
        return Err(TreeError::UnknownNode(k));
    }
    let d = tree.children(k);
    if d.is_empty() {
        return Err(TreeError::LeafNode(k));
    }
    if d.len() > cap {
        return Err(TreeError::SubsetCap {
            node: k,
            degree: d.len(),
            cap,
        });
    }
    if size == 0 || size > d.len() {
        return Err(TreeError::BadSubsetSize {
            size,
            degree: d.len(),
        });
    }
    Ok(d.iter().copied().combinations(size).collect())
}

/// Parses the tree-spec text format into a topology and its loss model.
///
/// One line per non-root node: `<node-id> <parent-id> <pass-rate>`,
/// whitespace separated; `#` starts a comment.
pub fn parse_tree_spec(text: &str) -> Result<(Tree, LossModel), ParseError> {
    let mut links = Vec::new();
    let mut rates = Vec::new(); // (line_no, node, rate)
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(ParseError::Malformed {
                line: line_no,
                reason: format!(
                    "expected `<node> <parent> <rate>`, found {} field(s)",
                    fields.len()
                ),
            });
        }
        let node: NodeId = fields[0].parse().map_err(|_| ParseError::Malformed {
            line: line_no,
            reason: format!("invalid node id `{}`", fields[0]),
        })?;
        let parent: NodeId = fields[1].parse().map_err(|_| ParseError::Malformed {
            line: line_no,
            reason: format!("invalid parent id `{}`", fields[1]),
        })?;
        let rate: f64 = fields[2].parse().map_err(|_| ParseError::Malformed {
            line: line_no,
            reason: format!("invalid pass rate `{}`", fields[2]),
        })?;
        if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
            return Err(ParseError::RateOutOfRange {
                line: line_no,
                value: rate,
            });
        }
        links.push((node, parent));
        rates.push((node, rate));
    }
    let tree = Tree::from_links(&links)?;
    let mut per_link = vec![1.0; tree.link_count()];
    for (node, rate) in rates {
        per_link[node - 1] = rate;
    }
    let model = LossModel::from_rates(&tree, &per_link);
    Ok((tree, model))
}

/// Emits the canonical tree-spec form: one line per non-root node,
/// sorted by node id. `parse_tree_spec(dump_tree_spec(t, m))` round-trips.
pub fn dump_tree_spec(tree: &Tree, model: &LossModel) -> String {
    let mut out = String::new();
    for k in 1..tree.node_count() {
        writeln!(
            out,
            "{} {} {}",
            k,
            tree.parent(k).unwrap(),
            model.pass_rate(k)
        )
        .unwrap();
    }
    out
}
