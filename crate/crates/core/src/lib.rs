//! Loss tomography over multicast trees.
//!
//! The crate simulates Bernoulli link losses on a rooted multicast tree,
//! computes the sufficient statistics of the receiver observations, and
//! estimates per-path and per-link pass rates with five estimator
//! families: the original polynomial MLE, reduce-scaled (RSE),
//! block-wise (BWE), individual-based (IBE), and merged MLE. The
//! [`analysis`] module carries the matching finite-sample theory —
//! Fisher information, Cramér-Rao variances, efficiency orderings — and
//! a Monte-Carlo harness that validates it.
//!
//! A typical round trip:
//!
//! ```
//! use losstomo::tree::{parse_tree_spec, TrueRates};
//! use losstomo::sim::simulate;
//! use losstomo::stats::SubtreeStatistics;
//! use losstomo::estimators::{estimate_tree, Method};
//!
//! let (tree, model) = parse_tree_spec("1 0 0.95\n2 1 0.95\n3 1 0.95\n").unwrap();
//! let (obs, _hidden) = simulate(&tree, &model, 10_000, 42);
//! let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
//! let set = estimate_tree(&tree, &stats, &Method::Mle).unwrap();
//! let a1 = set.a_hat()[&1].value;
//! assert!((a1 - 0.95).abs() < 0.02);
//! ```

pub mod analysis;
pub mod bits;
pub mod estimators;
pub mod sim;
pub mod stats;
pub mod tree;

pub use analysis::{monte_carlo, McConfig, VarianceReport};
pub use estimators::{estimate_tree, Estimate, EstimateSet, EstimatorTag, Flags, Method};
pub use sim::{exact_outcome_distribution, simulate, ObservationMatrix};
pub use stats::SubtreeStatistics;
pub use tree::{parse_tree_spec, LossModel, NodeId, Tree, TrueRates};
