//! Sufficient statistics of an observation matrix.
//!
//! For every node `k` the statistics keep the subtree indicator: a bit
//! per probe that is set when at least one receiver under `k` observed
//! it. Unions (`n_k(x)`), intersections (`I_k(x)`) and the empirical
//! rates all reduce to popcounts over those columns. Counts are exact
//! integers; ratios are derived lazily.

use std::collections::HashMap;
use std::sync::RwLock;

use itertools::Itertools;
use thiserror::Error;

use crate::bits::BitVec;
use crate::sim::ObservationMatrix;
use crate::tree::{NodeId, Tree, DEFAULT_SUBSET_CAP};

/// Entries kept in the intersection memo before it stops growing;
/// recomputation is a bitset AND, so eviction is harmless.
const MEMO_CAP: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{node} is not a child of node {parent}")]
    NotAChild { parent: NodeId, node: NodeId },
    #[error("subset must be non-empty")]
    EmptySubset,
    #[error("duplicate member {0} in subset")]
    DuplicateMember(NodeId),
    #[error("node {node} has {degree} children, above the subset cap {cap}")]
    SubsetCap {
        node: NodeId,
        degree: usize,
        cap: usize,
    },
    #[error("observations cover receivers {observed:?} but the tree has {expected:?}")]
    ReceiverMismatch {
        observed: Vec<NodeId>,
        expected: Vec<NodeId>,
    },
}

/// Per-node subtree indicators plus a memo for intersection counts.
///
/// Construction is single-threaded; afterwards the structure is
/// read-only and safe to query concurrently (the memo sits behind a
/// lock).
#[derive(Debug)]
pub struct SubtreeStatistics {
    n: usize,
    children: Vec<Vec<NodeId>>,
    indicators: Vec<BitVec>,
    counts: Vec<u64>,
    memo: RwLock<HashMap<(NodeId, Vec<NodeId>), u64>>,
}

impl SubtreeStatistics {
    /// Folds an observation matrix up the tree: a leaf's indicator is
    /// its own column, an internal node's is the OR of its children's.
    pub fn from_observations(tree: &Tree, obs: &ObservationMatrix) -> Result<Self, StatsError> {
        let mut observed = obs.receiver_ids().to_vec();
        observed.sort_unstable();
        if observed != tree.receivers() {
            return Err(StatsError::ReceiverMismatch {
                observed,
                expected: tree.receivers().to_vec(),
            });
        }

        let n = obs.n();
        let mut indicators = vec![BitVec::zeros(n); tree.node_count()];
        for &k in tree.preorder().iter().rev() {
            if tree.is_leaf(k) {
                let idx = obs.receiver_index(k).unwrap();
                indicators[k] = obs.column(idx).clone();
            } else {
                let mut acc = BitVec::zeros(n);
                for &c in tree.children(k) {
                    acc.or_assign(&indicators[c]);
                }
                indicators[k] = acc;
            }
        }
        let counts = indicators.iter().map(BitVec::count_ones).collect();
        Ok(SubtreeStatistics {
            n,
            children: (0..tree.node_count())
                .map(|k| tree.children(k).to_vec())
                .collect(),
            indicators,
            counts,
            memo: RwLock::new(HashMap::new()),
        })
    }

    /// Probe count `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_count(&self) -> usize {
        self.indicators.len()
    }

    pub fn children(&self, k: NodeId) -> Result<&[NodeId], StatsError> {
        self.children
            .get(k)
            .map(Vec::as_slice)
            .ok_or(StatsError::UnknownNode(k))
    }

    pub fn subtree_indicator(&self, k: NodeId) -> Result<&BitVec, StatsError> {
        self.indicators.get(k).ok_or(StatsError::UnknownNode(k))
    }

    /// `n_k(d_k)`: probes observed by at least one receiver under `k`.
    pub fn n_k(&self, k: NodeId) -> Result<u64, StatsError> {
        self.counts
            .get(k)
            .copied()
            .ok_or(StatsError::UnknownNode(k))
    }

    /// `gamma_hat_k = n_k(d_k) / n`.
    pub fn gamma_hat(&self, k: NodeId) -> Result<f64, StatsError> {
        Ok(self.n_k(k)? as f64 / self.n as f64)
    }

    /// Checks that `x` is a non-empty duplicate-free subset of `d_k` and
    /// returns it sorted (the canonical memo key order).
    fn validate_subset(&self, k: NodeId, x: &[NodeId]) -> Result<Vec<NodeId>, StatsError> {
        let d = self.children(k)?;
        if x.is_empty() {
            return Err(StatsError::EmptySubset);
        }
        let mut sorted = x.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(StatsError::DuplicateMember(w[0]));
            }
        }
        for &j in &sorted {
            if !d.contains(&j) {
                return Err(StatsError::NotAChild { parent: k, node: j });
            }
        }
        Ok(sorted)
    }

    /// `n_k(x)`: probes observed by the union of the receiver sets of
    /// the subtrees in `x`.
    pub fn n_k_group(&self, k: NodeId, x: &[NodeId]) -> Result<u64, StatsError> {
        let x = self.validate_subset(k, x)?;
        let cols: Vec<&BitVec> = x.iter().map(|&j| &self.indicators[j]).collect();
        Ok(BitVec::union_count(&cols))
    }

    /// `I_k(x)`: probes observed simultaneously by every subtree in `x`
    /// (each through at least one of its receivers). Memoized.
    pub fn intersection_count(&self, k: NodeId, x: &[NodeId]) -> Result<u64, StatsError> {
        let x = self.validate_subset(k, x)?;
        let key = (k, x);
        if let Some(&v) = self.memo.read().unwrap().get(&key) {
            return Ok(v);
        }
        let cols: Vec<&BitVec> = key.1.iter().map(|&j| &self.indicators[j]).collect();
        let v = BitVec::intersection_count(&cols);
        let mut memo = self.memo.write().unwrap();
        if memo.len() < MEMO_CAP {
            memo.insert(key, v);
        }
        Ok(v)
    }

    /// Verifies the inclusion-exclusion identity
    /// `n_k(d_k) = sum_i (-1)^(i-1) sum_{x in S_k(i)} I_k(x)`
    /// in exact integer arithmetic.
    pub fn inclusion_exclusion_check(&self, k: NodeId) -> Result<bool, StatsError> {
        self.inclusion_exclusion_check_capped(k, DEFAULT_SUBSET_CAP)
    }

    pub fn inclusion_exclusion_check_capped(
        &self,
        k: NodeId,
        cap: usize,
    ) -> Result<bool, StatsError> {
        let d = self.children(k)?.to_vec();
        if d.len() > cap {
            return Err(StatsError::SubsetCap {
                node: k,
                degree: d.len(),
                cap,
            });
        }
        let mut signed: i128 = 0;
        for size in 1..=d.len() {
            let sign: i128 = if size % 2 == 1 { 1 } else { -1 };
            for x in d.iter().copied().combinations(size) {
                signed += sign * i128::from(self.intersection_count(k, &x)?);
            }
        }
        Ok(signed == i128::from(self.n_k(k)?))
    }

    #[cfg(test)]
    fn corrupt_memo(&self, k: NodeId, x: &[NodeId], delta: i64) {
        let mut sorted = x.to_vec();
        sorted.sort_unstable();
        let cols: Vec<&BitVec> = sorted.iter().map(|&j| &self.indicators[j]).collect();
        let v = BitVec::intersection_count(&cols) as i64 + delta;
        self.memo.write().unwrap().insert((k, sorted), v as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;
    use crate::tree::LossModel;

    /// 4-node binary tree (0 -> 1 -> {2, 3}) with the hand-built 5-probe
    /// matrix: receiver columns (1,1,0,1,0) and (1,0,0,1,1).
    fn hand_example() -> (Tree, SubtreeStatistics) {
        let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1)]).unwrap();
        let rows = vec![
            vec![true, true],
            vec![true, false],
            vec![false, false],
            vec![true, true],
            vec![false, true],
        ];
        let obs = ObservationMatrix::from_rows(vec![2, 3], &rows);
        let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
        (tree, stats)
    }

    #[test]
    fn hand_counts() {
        let (_, stats) = hand_example();
        assert_eq!(stats.n_k(1).unwrap(), 4); // union of the two columns
        assert_eq!(stats.n_k(2).unwrap(), 3);
        assert_eq!(stats.n_k(3).unwrap(), 3);
        assert_eq!(stats.n_k_group(1, &[2]).unwrap(), 3);
        assert_eq!(stats.n_k_group(1, &[2, 3]).unwrap(), 4);
        assert_eq!(stats.n_k_group(1, &[2, 3]).unwrap(), stats.n_k(1).unwrap());
        // Probes 1 and 4 hit both subtrees.
        assert_eq!(stats.intersection_count(1, &[2, 3]).unwrap(), 2);
        assert_eq!(
            stats.intersection_count(1, &[2]).unwrap(),
            stats.n_k(2).unwrap()
        );
        assert!((stats.gamma_hat(1).unwrap() - 0.8).abs() < 1e-15);
        assert!(stats.inclusion_exclusion_check(1).unwrap());
    }

    #[test]
    fn lossless_counts() {
        let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1), (4, 1)]).unwrap();
        let model = LossModel::uniform(&tree, 1.0);
        let (obs, _) = simulate(&tree, &model, 64, 0);
        let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
        for k in 0..tree.node_count() {
            assert_eq!(stats.n_k(k).unwrap(), 64);
            assert_eq!(stats.gamma_hat(k).unwrap(), 1.0);
        }
        assert_eq!(stats.intersection_count(1, &[2, 3, 4]).unwrap(), 64);
    }

    #[test]
    fn zero_column_gamma() {
        let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1)]).unwrap();
        let rows = vec![vec![true, false], vec![true, false]];
        let obs = ObservationMatrix::from_rows(vec![2, 3], &rows);
        let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
        assert_eq!(stats.gamma_hat(3).unwrap(), 0.0);
        assert_eq!(stats.intersection_count(1, &[2, 3]).unwrap(), 0);
    }

    #[test]
    fn subset_validation() {
        let (_, stats) = hand_example();
        assert_eq!(stats.n_k(9).unwrap_err(), StatsError::UnknownNode(9));
        assert_eq!(
            stats.n_k_group(1, &[7]).unwrap_err(),
            StatsError::NotAChild { parent: 1, node: 7 }
        );
        assert_eq!(
            stats.n_k_group(1, &[]).unwrap_err(),
            StatsError::EmptySubset
        );
        assert_eq!(
            stats.intersection_count(1, &[2, 2]).unwrap_err(),
            StatsError::DuplicateMember(2)
        );
        // Subset order does not matter.
        assert_eq!(
            stats.intersection_count(1, &[3, 2]).unwrap(),
            stats.intersection_count(1, &[2, 3]).unwrap()
        );
    }

    #[test]
    fn receiver_mismatch_rejected() {
        let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1)]).unwrap();
        let obs = ObservationMatrix::from_rows(vec![2, 4], &[vec![true, true]]);
        assert!(matches!(
            SubtreeStatistics::from_observations(&tree, &obs),
            Err(StatsError::ReceiverMismatch { .. })
        ));
    }

    #[test]
    fn inclusion_exclusion_on_simulated_data() {
        let links: Vec<(NodeId, NodeId)> = vec![
            (1, 0),
            (2, 1),
            (3, 1),
            (4, 2),
            (5, 2),
            (6, 3),
            (7, 3),
            (8, 4),
            (9, 4),
            (10, 5),
            (11, 5),
            (12, 6),
            (13, 6),
            (14, 7),
            (15, 7),
        ];
        let tree = Tree::from_links(&links).unwrap();
        let model = LossModel::uniform(&tree, 0.8);
        let (obs, _) = simulate(&tree, &model, 5_000, 21);
        let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
        for k in 0..tree.node_count() {
            if !stats.children(k).unwrap().is_empty() {
                assert!(stats.inclusion_exclusion_check(k).unwrap(), "node {k}");
            }
        }
    }

    #[test]
    fn corrupted_cache_is_detected() {
        let (_, stats) = hand_example();
        stats.corrupt_memo(1, &[2, 3], 1);
        assert!(!stats.inclusion_exclusion_check(1).unwrap());
    }

    #[test]
    fn cap_is_enforced() {
        let (_, stats) = hand_example();
        assert_eq!(
            stats.inclusion_exclusion_check_capped(1, 1).unwrap_err(),
            StatsError::SubsetCap {
                node: 1,
                degree: 2,
                cap: 1
            }
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// x subset of y implies I(y) <= I(x) and n(x) <= n(y); the
            /// identity holds on arbitrary data.
            #[test]
            fn monotonicity_and_identity(seed in any::<u64>(), n in 1usize..200) {
                let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1), (4, 1), (5, 1)]).unwrap();
                let model = LossModel::uniform(&tree, 0.6);
                let (obs, _) = simulate(&tree, &model, n, seed);
                let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
                let d = [2usize, 3, 4, 5];
                for xs in 1..=d.len() {
                    for x in d.iter().copied().combinations(xs) {
                        let ix = stats.intersection_count(1, &x).unwrap();
                        let nx = stats.n_k_group(1, &x).unwrap();
                        prop_assert!(ix <= nx);
                        prop_assert!(nx <= stats.n_k(1).unwrap());
                        for ys in xs..=d.len() {
                            for y in d.iter().copied().combinations(ys) {
                                if x.iter().all(|j| y.contains(j)) {
                                    prop_assert!(stats.intersection_count(1, &y).unwrap() <= ix);
                                    prop_assert!(nx <= stats.n_k_group(1, &y).unwrap());
                                }
                            }
                        }
                    }
                }
                prop_assert!(stats.inclusion_exclusion_check(1).unwrap());
            }
        }
    }
}
