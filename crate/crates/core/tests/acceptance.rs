//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them all).

mod common;

use common::*;
use itertools::Itertools;
use losstomo::analysis::{crb_variance, fisher_ibe, merged_mle_variance, monte_carlo, McConfig};
use losstomo::estimators::equations::{
    closed_form_binary, power_ratio, solve_family, solve_family_bisection, FamilySolution,
};
use losstomo::estimators::{bwe, ibe, mle_original, rse, EstimatorTag, Method};
use losstomo::sim::{exact_outcome_distribution, simulate};
use losstomo::stats::SubtreeStatistics;
use losstomo::tree::{descendant_subsets, LossModel, NodeId, Tree, TrueRates};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)*));
        }
    };
}

fn report(id: u32, name: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("ACCEPTANCE {id} ({name}): PASS"),
        Err(msg) => {
            println!("ACCEPTANCE {id} ({name}): FAIL - {msg}");
            panic!("acceptance criterion {id} failed: {msg}");
        }
    }
}

fn root_of(sol: FamilySolution) -> Result<f64, String> {
    match sol {
        FamilySolution::Root(v) => Ok(v),
        other => Err(format!("expected a root, got {other:?}")),
    }
}

/// Criterion 1: the worked-example variances at alpha = 0.99 equal the
/// independently coded closed forms to 1e-12 and round to
/// 0.0099 / 0.0099 / 0.0300 / 0.0402.
#[test]
fn criterion_1_worked_example_variances() {
    report(1, "worked example closed forms", || {
        let alpha: f64 = 0.99;
        let tree = three_leaf_tree();
        let rates = TrueRates::compute(&tree, &LossModel::uniform(&tree, alpha));

        let computed = [
            crb_variance(&tree, &rates, 1, &EstimatorTag::Direct),
            crb_variance(&tree, &rates, 1, &EstimatorTag::Mle),
            crb_variance(&tree, &rates, 1, &EstimatorTag::Ibe(vec![2, 3])),
            crb_variance(&tree, &rates, 1, &EstimatorTag::Ibe(vec![2, 3, 4])),
        ];
        // Independent oracle: the four formulas coded directly.
        let expected = [
            alpha - alpha * alpha,
            1.0 / (3.0 * (1.0 - alpha) + alpha * alpha) - alpha * alpha,
            1.0 / alpha - alpha * alpha,
            1.0 / (alpha * alpha) - alpha * alpha,
        ];
        let rounded = [0.0099, 0.0099, 0.0300, 0.0402];
        for ((got, want), disp) in computed.iter().zip(expected).zip(rounded) {
            let got = got.as_ref().map_err(|e| e.to_string())?;
            ensure!(
                (got - want).abs() <= 1e-12,
                "variance {got} differs from formula {want}"
            );
            ensure!(
                ((got * 1e4).round() / 1e4 - disp).abs() < 1e-12,
                "variance {got} does not round to {disp}"
            );
        }
        Ok(())
    });
}

/// Feeds exact population statistics through each estimator's equation
/// and demands the true path rate back.
fn plug_in_all_estimators(tree: &Tree, rates: &TrueRates, tol: f64) -> Result<(), String> {
    for k in tree.estimable_nodes() {
        let d = tree.children(k).to_vec();
        let a = rates.a(k);
        let gammas: Vec<f64> = d.iter().map(|&j| rates.gamma(j)).collect();

        // Original MLE on the full family.
        let mle = root_of(solve_family(rates.gamma(k), &gammas))?;
        ensure!((mle - a).abs() <= tol, "mle at node {k}: {mle} vs {a}");

        for size in 2..=d.len() {
            for x in descendant_subsets(tree, k, size).map_err(|e| e.to_string())? {
                let gs: Vec<f64> = x.iter().map(|&j| rates.gamma(j)).collect();
                // RSE: population n_k(x)/n is A_k * beta_k(x).
                let rse_val = root_of(solve_family(a * rates.beta_subset(&x), &gs))?;
                ensure!(
                    (rse_val - a).abs() <= tol,
                    "rse at node {k} x={x:?}: {rse_val}"
                );
                // IBE: population I_k(x)/n is A_k * psi_k(x).
                let ibe_val = power_ratio(gs.iter().product(), a * rates.psi(&x), x.len());
                ensure!(
                    (ibe_val - a).abs() <= tol,
                    "ibe at node {k} x={x:?}: {ibe_val}"
                );
            }
            // BWE of this degree.
            let (mut num, mut den) = (0.0, 0.0);
            for x in descendant_subsets(tree, k, size).map_err(|e| e.to_string())? {
                num += x.iter().map(|&j| rates.gamma(j)).product::<f64>();
                den += a * rates.psi(&x);
            }
            let bwe_val = power_ratio(num, den, size);
            ensure!(
                (bwe_val - a).abs() <= tol,
                "bwe({size}) at node {k}: {bwe_val}"
            );
        }

        // Merged MLE over every bipartition with the first child pinned.
        for mask in 0u32..(1u32 << (d.len() - 1)) - 1 {
            let mut g1 = vec![d[0]];
            let mut g2 = Vec::new();
            for (i, &j) in d[1..].iter().enumerate() {
                if mask >> i & 1 == 1 {
                    g1.push(j);
                } else {
                    g2.push(j);
                }
            }
            let merged = root_of(closed_form_binary(
                rates.gamma(k),
                a * rates.beta_subset(&g1),
                a * rates.beta_subset(&g2),
            ))?;
            ensure!(
                (merged - a).abs() <= tol,
                "merged at node {k} {g1:?}|{g2:?}: {merged} vs {a}"
            );
        }
    }
    Ok(())
}

/// Criterion 2: Fisher consistency of all five estimators on ten
/// randomized models over the binary tree (and a wider node for the
/// proper-subset routes).
#[test]
fn criterion_2_fisher_consistency() {
    report(2, "Fisher-consistency plug-in oracle", || {
        let mut rng = seeded(0x5EED);
        let tree = binary_tree();
        for _ in 0..10 {
            let model = random_model(&mut rng, &tree, 0.7, 1.0);
            let rates = TrueRates::compute(&tree, &model);
            plug_in_all_estimators(&tree, &rates, 1e-10)?;
        }
        // Degree-two nodes only exercise x = d_k; repeat on a 4-child
        // node so proper subsets and higher block degrees run too.
        let tree = four_leaf_tree();
        for _ in 0..10 {
            let model = random_model(&mut rng, &tree, 0.7, 1.0);
            let rates = TrueRates::compute(&tree, &model);
            plug_in_all_estimators(&tree, &rates, 1e-10)?;
        }
        Ok(())
    });
}

/// Criterion 3: the exhaustive outcome distribution reproduces the model
/// recursions exactly.
#[test]
fn criterion_3_brute_force_distribution_oracle() {
    report(3, "exhaustive distribution oracle", || {
        let mut rng = seeded(0xACC3);
        let mut cases: Vec<(Tree, LossModel)> = Vec::new();

        let two = Tree::from_links(&[(1, 0)]).unwrap();
        let two_model = LossModel::from_rates(&two, &[0.37]);
        cases.push((two, two_model));

        let small = Tree::from_links(&[(1, 0), (2, 1), (3, 1)]).unwrap();
        let small_model = LossModel::from_rates(&small, &[0.9, 0.6, 0.8]);
        cases.push((small, small_model));

        let binary = binary_tree();
        let binary_model = random_model(&mut rng, &binary, 0.5, 1.0);
        cases.push((binary, binary_model));

        for _ in 0..3 {
            let tree = random_tree(&mut rng, 10);
            let model = random_model(&mut rng, &tree, 0.3, 1.0);
            cases.push((tree, model));
        }

        // A tree at the 24-link enumeration cap: node 1 fans out into
        // three branches of mixed stars and chains.
        let cap_links: Vec<(NodeId, NodeId)> = vec![
            (1, 0),
            (2, 1),
            (3, 1),
            (4, 1),
            (5, 2),
            (6, 2),
            (7, 3),
            (8, 3),
            (9, 4),
            (10, 4),
            (11, 5),
            (12, 5),
            (13, 6),
            (14, 7),
            (15, 8),
            (16, 9),
            (17, 10),
            (18, 11),
            (19, 12),
            (20, 13),
            (21, 14),
            (22, 15),
            (23, 16),
            (24, 17),
        ];
        let cap_tree = Tree::from_links(&cap_links).unwrap();
        let cap_model = random_model(&mut rng, &cap_tree, 0.6, 1.0);
        cases.push((cap_tree, cap_model));

        for (tree, model) in &cases {
            assert!(tree.link_count() <= 24);
            let rates = TrueRates::compute(tree, model);
            let dist = exact_outcome_distribution(tree, model).map_err(|e| e.to_string())?;
            ensure!(
                (dist.total() - 1.0).abs() <= 1e-12,
                "probabilities sum to {}",
                dist.total()
            );
            for k in 0..tree.node_count() {
                let got = dist.gamma(k);
                ensure!(
                    (got - rates.gamma(k)).abs() <= 1e-12,
                    "gamma at node {k}: {got} vs {}",
                    rates.gamma(k)
                );
                let d = tree.children(k);
                for size in 1..=d.len() {
                    for x in d.iter().copied().combinations(size) {
                        let got = dist.intersection_probability(&x);
                        let want = rates.a(k) * rates.psi(&x);
                        ensure!(
                            (got - want).abs() <= 1e-12,
                            "E[I_{k}({x:?})/n] = {got} vs {want}"
                        );
                    }
                }
            }
        }
        Ok(())
    });
}

/// Criterion 4: the inclusion-exclusion identity holds exactly on 100
/// simulated datasets over randomized trees.
#[test]
fn criterion_4_inclusion_exclusion_identity() {
    report(4, "inclusion-exclusion identity", || {
        let mut rng = seeded(0x1E4);
        for ds in 0..100 {
            let tree = random_tree(&mut rng, 2 + (ds % 11));
            let model = random_model(&mut rng, &tree, 0.2, 1.0);
            let n = 1 + (ds * 7) % 400;
            let (obs, _) = simulate(&tree, &model, n, ds as u64);
            let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();
            for k in 0..tree.node_count() {
                if !tree.is_leaf(k) {
                    ensure!(
                        stats
                            .inclusion_exclusion_check(k)
                            .map_err(|e| e.to_string())?,
                        "identity violated at node {k} of dataset {ds}"
                    );
                }
            }
        }
        Ok(())
    });
}

const UNBIASEDNESS_METHODS: [Method; 4] = [
    Method::IbePair,
    Method::IbeAll,
    Method::Bwe { degree: 2 },
    Method::Merged { split: 1 },
];

/// Criterion 5: finite-sample unbiasedness of IBE/BWE/merged MLE within
/// four standard errors of the replication mean at node 1.
#[test]
fn criterion_5_unbiasedness() {
    report(5, "finite-sample unbiasedness", || {
        let tree = binary_tree();
        let model = LossModel::uniform(&tree, 0.95);
        let a1 = TrueRates::compute(&tree, &model).a(1);
        let cfg = McConfig {
            n: 1000,
            replications: 2000,
            base_seed: 0xB1A5,
            methods: UNBIASEDNESS_METHODS.to_vec(),
        };
        let reports = monte_carlo(&tree, &model, &cfg).unwrap();
        let node1: Vec<_> = reports.iter().filter(|r| r.node == 1).collect();
        ensure!(
            node1.len() == 4,
            "expected 4 reports at node 1, got {}",
            node1.len()
        );
        for r in node1 {
            let valid = (r.replications - r.excluded) as f64;
            ensure!(valid >= 2.0, "{}: everything excluded", r.estimator);
            let band = 4.0 * (r.mc_variance / valid).sqrt();
            ensure!(
                (r.mc_mean - a1).abs() <= band,
                "{}: mean {} vs A_1 {} exceeds band {band}",
                r.estimator,
                r.mc_mean,
                a1
            );
        }
        Ok(())
    });
}

/// Criterion 6a: the original MLE attains its closed-form variance —
/// n * mc_variance within 20% of `A_1 (1 - A_1 beta_1) / beta_1`.
#[test]
fn criterion_6a_mle_attains_crb() {
    report(6, "MLE CRB attainment (part a)", || {
        let tree = binary_tree();
        let model = LossModel::uniform(&tree, 0.95);
        let cfg = McConfig {
            n: 1000,
            replications: 2000,
            base_seed: 0xC6B,
            methods: vec![Method::Mle],
        };
        let reports = monte_carlo(&tree, &model, &cfg).unwrap();
        let r = reports.iter().find(|r| r.node == 1).unwrap();
        let crb = r.crb_single_obs.unwrap();
        let scaled = r.mc_variance * cfg.n as f64;
        ensure!(
            (scaled / crb - 1.0).abs() <= 0.20,
            "n*var {scaled} vs CRB {crb} off by {:.1}%",
            (scaled / crb - 1.0) * 100.0
        );
        Ok(())
    });
}

/// Criterion 6b: the closed-form prediction that full-family IBE carries
/// about 4x the MLE's variance on the symmetric 3-child configuration.
///
/// This criterion does not hold empirically and the test is expected to
/// stay red: the closed form is the information bound of the reduced
/// observation model with the subtree rate treated as known, whereas the
/// actual estimator re-estimates that rate from the same probes. The
/// numerator/denominator correlation cancels almost all of the extra
/// spread, and the measured ratio sits near 1 (delta-method value 1.008
/// at alpha = 0.99; see `variance_reality` in the statistical suite,
/// which pins down the true behaviour and passes).
#[test]
fn criterion_6b_ibe_to_mle_variance_ratio() {
    report(6, "IBE(d_k)/MLE variance ratio (part b)", || {
        let tree = three_leaf_tree();
        let model = LossModel::uniform(&tree, 0.99);
        let cfg = McConfig {
            n: 10_000,
            replications: 2000,
            base_seed: 0xC6C,
            methods: vec![Method::Mle, Method::IbeAll],
        };
        let reports = monte_carlo(&tree, &model, &cfg).unwrap();
        let var_of = |tag: &str| {
            reports
                .iter()
                .find(|r| r.node == 1 && r.estimator == tag)
                .map(|r| r.mc_variance * cfg.n as f64)
                .unwrap()
        };
        let ratio = var_of("ibe[2;3;4]") / var_of("mle");
        ensure!(
            (3.0..=5.0).contains(&ratio),
            "IBE/MLE variance ratio {ratio:.4} outside [3, 5]; the plug-in estimator's \
             sampling variance tracks the MLE's, not the reduced-model bound"
        );
        Ok(())
    });
}

/// Criterion 7: the structural equalities across estimator routes.
#[test]
fn criterion_7_structural_equalities() {
    report(7, "structural equalities", || {
        let tree = four_leaf_tree();
        let model = LossModel::from_rates(&tree, &[0.9, 0.85, 0.8, 0.9, 0.7]);
        for seed in 0..5u64 {
            let (obs, _) = simulate(&tree, &model, 1200, seed);
            let stats = SubtreeStatistics::from_observations(&tree, &obs).unwrap();

            // bwe(k, |d_k|) is bit-for-bit ibe(k, d_k).
            let b = bwe(&stats, 1, 4).unwrap();
            let i = ibe(&stats, 1, &[2, 3, 4, 5]).unwrap();
            ensure!(
                b.value.to_bits() == i.value.to_bits() && b.flags == i.flags,
                "bwe(4) {} != ibe(d_k) {} at seed {seed}",
                b.value,
                i.value
            );

            // rse(k, d_k) matches the original MLE.
            let r = rse(&stats, 1, &[2, 3, 4, 5]).unwrap();
            let m = mle_original(&stats, 1).unwrap();
            ensure!(
                (r.value - m.value).abs() <= 1e-9,
                "rse {} vs mle {}",
                r.value,
                m.value
            );

            // Binary closed form agrees with bisection on the same inputs.
            let gu = stats.n_k_group(1, &[2, 3]).unwrap() as f64 / stats.n() as f64;
            let ga = stats.gamma_hat(2).unwrap();
            let gb = stats.gamma_hat(3).unwrap();
            let closed = root_of(closed_form_binary(gu, ga, gb))?;
            let bisected = root_of(solve_family_bisection(gu, &[ga, gb]))?;
            ensure!(
                (closed - bisected).abs() <= 1e-9,
                "closed {closed} vs bisection {bisected}"
            );
        }

        // Merged-MLE variance is identical across every bipartition.
        let rates = TrueRates::compute(&tree, &model);
        let d = tree.children(1).to_vec();
        let mut values = Vec::new();
        for mask in 0u32..(1u32 << (d.len() - 1)) - 1 {
            let mut g1 = vec![d[0]];
            let mut g2 = Vec::new();
            for (i, &j) in d[1..].iter().enumerate() {
                if mask >> i & 1 == 1 {
                    g1.push(j);
                } else {
                    g2.push(j);
                }
            }
            values.push(
                merged_mle_variance(&tree, &rates, 1, &[&g1, &g2]).map_err(|e| e.to_string())?,
            );
        }
        ensure!(
            values.len() == 7,
            "expected 7 bipartitions, got {}",
            values.len()
        );
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        ensure!(spread <= 1e-12, "merged variance spread {spread}");
        Ok(())
    });
}

/// Criterion 8: the IBE efficiency partial order on a 4-child node.
#[test]
fn criterion_8_efficiency_partial_order() {
    report(8, "IBE efficiency partial order", || {
        let tree = four_leaf_tree();
        let model = LossModel::uniform(&tree, 0.9);
        let rates = TrueRates::compute(&tree, &model);
        let d: Vec<NodeId> = tree.children(1).to_vec();

        let mut infos: Vec<(Vec<NodeId>, f64)> = Vec::new();
        for size in 2..=d.len() {
            for x in d.iter().copied().combinations(size) {
                let info = fisher_ibe(&tree, &rates, 1, &x).map_err(|e| e.to_string())?;
                infos.push((x, info));
            }
        }
        // Strict decrease along every inclusion chain.
        for (x, ix) in &infos {
            for (y, iy) in &infos {
                if x.len() < y.len() && x.iter().all(|j| y.contains(j)) {
                    ensure!(ix > iy, "info({x:?})={ix} not above info({y:?})={iy}");
                }
            }
        }
        let (max_x, _) = infos.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        ensure!(
            max_x.len() == 2,
            "maximum not attained at a pairwise set: {max_x:?}"
        );
        let (min_x, _) = infos.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        ensure!(*min_x == d, "minimum not attained at d_k: {min_x:?}");
        Ok(())
    });
}
