//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each suite uses its own subset

use losstomo::tree::{LossModel, NodeId, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The 15-link binary tree used throughout: receivers 8..=15,
/// internal nodes 1..=7, all of degree two.
pub fn binary_tree() -> Tree {
    Tree::from_links(&[
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
    ])
    .unwrap()
}

/// The symmetric worked example: a source link and a node with three
/// leaf children, every link at the same rate.
pub fn three_leaf_tree() -> Tree {
    Tree::from_links(&[(1, 0), (2, 1), (3, 1), (4, 1)]).unwrap()
}

/// A node with four leaf children under the source link.
pub fn four_leaf_tree() -> Tree {
    Tree::from_links(&[(1, 0), (2, 1), (3, 1), (4, 1), (5, 1)]).unwrap()
}

/// A seeded random topology with `links` links: node 1 under the root,
/// every later node under a uniformly chosen earlier non-root node.
pub fn random_tree(rng: &mut ChaCha8Rng, links: usize) -> Tree {
    assert!(links >= 2);
    let mut edges: Vec<(NodeId, NodeId)> = vec![(1, 0)];
    for k in 2..=links {
        edges.push((k, rng.gen_range(1..k)));
    }
    Tree::from_links(&edges).unwrap()
}

/// Independent per-link rates drawn uniformly from `[lo, hi]`.
pub fn random_model(rng: &mut ChaCha8Rng, tree: &Tree, lo: f64, hi: f64) -> LossModel {
    let rates: Vec<f64> = (0..tree.link_count())
        .map(|_| rng.gen_range(lo..=hi))
        .collect();
    LossModel::from_rates(tree, &rates)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
