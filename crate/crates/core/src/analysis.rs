//! Grid-level checks of the super-differential of `½ W_2²(·, ν)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{minimal_image, norm, Coords, GridMeasure};
use crate::transport::{exact_ot, Coupling, SpeedDistribution, TransportPlan};

/// A base measure with a per-site distribution of covectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperDiffCandidate {
    pub base_measure: GridMeasure,
    pub covectors: SpeedDistribution,
    /// Largest covector norm in the support.
    pub support_bound: f64,
}

/// Disintegrates an optimal quadratic plan `γ` from `µ`: at every occupied
/// source site `x`, the conditional law of the minimal-image vector `x - y`.
pub fn candidate_from_optimal_plan(plan: &TransportPlan) -> Result<SuperDiffCandidate> {
    if !plan.is_exact() || plan.cost_exponent() != 2.0 {
        return Err(Error::param("plan", "candidate needs an exact quadratic plan"));
    }
    let grid = plan.source().grid();
    let mut per_site: Vec<Vec<(Coords, f64)>> = vec![Vec::new(); grid.sites()];
    for atom in plan.atoms() {
        let d = atom.displacement;
        per_site[atom.from].push(([minimal_image(-d[0]), minimal_image(-d[1])], atom.mass));
    }
    let covectors = SpeedDistribution::from_masses(&grid, per_site)?;
    Ok(SuperDiffCandidate {
        base_measure: plan.source().clone(),
        support_bound: covectors.support_bound(),
        covectors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperDiffCheck {
    /// `W_2²(µ', ν) - W_2²(µ, ν)`
    pub lhs: f64,
    /// `first_order + second_order`
    pub rhs: f64,
    /// `2 ∫∫ z · (y - x) ψ(x, dz) γ(dx, dy)`
    pub first_order: f64,
    /// `∫ |y - x|² γ(dx, dy)`
    pub second_order: f64,
    pub holds: bool,
}

/// Slack allowed when comparing the two sides.
pub const SUPERDIFF_SLACK: f64 = 1e-9;

/// Evaluates `2Φ(µ') - 2Φ(µ) <= 2∫∫ z·(y - x) ψ(x, dz) γ(dx, dy) + ∫|y - x|² γ`
/// for `Φ = ½ W_2²(·, ν)`, with `γ` a coupling of `(µ, µ')`.
pub fn check_superdiff_inequality(
    cand: &SuperDiffCandidate,
    nu_ref: &GridMeasure,
    mu_prime: &GridMeasure,
    gamma: &Coupling,
) -> Result<SuperDiffCheck> {
    let mu = &cand.base_measure;
    mu.ensure_same_grid(nu_ref)?;
    mu.ensure_same_grid(mu_prime)?;
    gamma.check_marginals(mu, mu_prime)?;
    let grid = mu.grid();
    let lhs = exact_ot(mu_prime, nu_ref, 2.0)?.total_cost() - exact_ot(mu, nu_ref, 2.0)?.total_cost();
    let mut first_order = 0.0;
    let mut second_order = 0.0;
    gamma.for_each_entry(|x, y, mass| {
        let step = grid.displacement(x, y);
        let pairing: f64 = cand
            .covectors
            .at(x)
            .iter()
            .map(|(z, p)| p * (z[0] * step[0] + z[1] * step[1]))
            .sum();
        first_order += 2.0 * mass * pairing;
        second_order += mass * (step[0] * step[0] + step[1] * step[1]);
    });
    let rhs = first_order + second_order;
    Ok(SuperDiffCheck {
        lhs,
        rhs,
        first_order,
        second_order,
        holds: lhs <= rhs + SUPERDIFF_SLACK,
    })
}

/// `(∫∫ |z|² ψ(x, dz) µ(dx), ∫ |mean ψ(x)|² µ(dx))`; the second never exceeds the first.
pub fn mean_covector_reduction(cand: &SuperDiffCandidate) -> (f64, f64) {
    let full = cand
        .covectors
        .integrate(&cand.base_measure, |z| z[0] * z[0] + z[1] * z[1]);
    let reduced = cand
        .base_measure
        .support()
        .map(|x| {
            let m = cand.covectors.mean(x);
            cand.base_measure.weight(x) * norm(&m).powi(2)
        })
        .sum();
    (full, reduced)
}
