//! The likelihood-equation arithmetic, separated from the statistics
//! plumbing so the same code path can be fed either empirical rates or
//! exact population rates (Fisher-consistency checks do the latter).

/// Bracket-width tolerance for the bisection solver.
pub const BISECTION_TOL: f64 = 1e-12;
/// Hard iteration cap; from a unit bracket the tolerance is reached long
/// before this.
pub const MAX_BISECTION_ITERS: usize = 200;
/// Offset applied above the bracket's exclusive lower endpoint.
pub const BRACKET_EPS: f64 = 1e-15;

/// Result of solving a family likelihood equation for `A_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilySolution {
    /// A root inside the bracket.
    Root(f64),
    /// No sign change on the bracket; carries the boundary with the
    /// smaller residual.
    Boundary(f64),
    /// The inputs admit no solution (zero or negative rates, empty
    /// denominator and the like).
    Degenerate,
}

/// Strictly positive and not NaN.
pub(crate) fn positive(v: f64) -> bool {
    v > 0.0
}

/// Residual of `1 - gamma_union/A = prod_j (1 - gamma_j/A)` at `a`.
pub fn family_residual(a: f64, gamma_union: f64, child_gammas: &[f64]) -> f64 {
    let lhs = 1.0 - gamma_union / a;
    let rhs: f64 = child_gammas.iter().map(|&g| 1.0 - g / a).product();
    lhs - rhs
}

/// Solves the family equation by bisection on `(L, 1]` with
/// `L = max(gamma_union, max_j gamma_j)`.
pub fn solve_family_bisection(gamma_union: f64, child_gammas: &[f64]) -> FamilySolution {
    if !positive(gamma_union) || !child_gammas.iter().all(|&g| positive(g)) {
        return FamilySolution::Degenerate;
    }
    if gamma_union >= 1.0 {
        // Every probe was observed; the estimate sits on the boundary
        // and is an exact root there.
        return FamilySolution::Root(1.0);
    }
    let max_child = child_gammas.iter().cloned().fold(0.0, f64::max);
    if max_child >= 1.0 {
        // A child rate above the union rate is inconsistent data.
        return FamilySolution::Degenerate;
    }

    let mut lo = gamma_union.max(max_child) + BRACKET_EPS;
    let mut hi = 1.0;
    let mut f_lo = family_residual(lo, gamma_union, child_gammas);
    let f_hi = family_residual(hi, gamma_union, child_gammas);
    if f_lo == 0.0 {
        return FamilySolution::Root(lo);
    }
    if f_hi == 0.0 {
        return FamilySolution::Root(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return FamilySolution::Boundary(if f_lo.abs() <= f_hi.abs() { lo } else { hi });
    }
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let f_mid = family_residual(mid, gamma_union, child_gammas);
        if f_mid == 0.0 {
            return FamilySolution::Root(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL {
            break;
        }
    }
    FamilySolution::Root(0.5 * (lo + hi))
}

/// Closed form for a two-member family:
/// `A = g_a * g_b / (g_a + g_b - gamma_union)`.
///
/// This is also the merged-MLE solution with the two groups playing the
/// role of the members.
pub fn closed_form_binary(gamma_union: f64, g_a: f64, g_b: f64) -> FamilySolution {
    if !positive(gamma_union) || !positive(g_a) || !positive(g_b) {
        return FamilySolution::Degenerate;
    }
    let denom = g_a + g_b - gamma_union;
    if !positive(denom) {
        return FamilySolution::Degenerate;
    }
    FamilySolution::Root(g_a * g_b / denom)
}

/// Family equation dispatch: the closed form for two members, bisection
/// otherwise.
pub fn solve_family(gamma_union: f64, child_gammas: &[f64]) -> FamilySolution {
    assert!(
        child_gammas.len() >= 2,
        "a family needs at least two members"
    );
    if child_gammas.len() == 2 {
        closed_form_binary(gamma_union, child_gammas[0], child_gammas[1])
    } else {
        solve_family_bisection(gamma_union, child_gammas)
    }
}

/// `(numerator / denominator)^(1/(degree - 1))`, the shape shared by the
/// block-wise and individual-based estimators.
pub fn power_ratio(numerator: f64, denominator: f64, degree: usize) -> f64 {
    debug_assert!(degree >= 2);
    (numerator / denominator).powf(1.0 / (degree - 1) as f64)
}
