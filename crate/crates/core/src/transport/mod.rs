//! Optimal transport between grid measures under periodic power costs.

mod exact;
mod sinkhorn;

pub use exact::exact_ot;
pub use sinkhorn::{sinkhorn, SinkhornOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Coords, GridMeasure, TorusGrid};

/// Tolerance used when checking plan marginals and dual feasibility.
pub const PLAN_TOLERANCE: f64 = 1e-9;

/// Cost matrix `d(x_i, y_j)^k` for every pair of grid sites.
pub fn cost_matrix(grid: &TorusGrid, k: f64) -> Vec<f64> {
    let n = grid.sites();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = power_cost(grid.distance(i, j), k);
        }
    }
    c
}

#[inline]
/// `distance^k`, with the common exponents special-cased.
pub fn power_cost(distance: f64, k: f64) -> f64 {
    if k == 2.0 {
        distance * distance
    } else if k == 1.0 {
        distance
    } else {
        distance.powf(k)
    }
}

/// A joint measure on pairs of sites, stored row-major (`mass[i * n + j]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    sites: usize,
    mass: Vec<f64>,
}

impl Coupling {
    pub fn from_matrix(sites: usize, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != sites * sites {
            return Err(Error::param(
                "coupling",
                format!("expected {} entries, got {}", sites * sites, mass.len()),
            ));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::param("coupling", "entries must be finite and >= 0"));
        }
        Ok(Self { sites, mass })
    }

    /// Independent coupling `a ⊗ b`.
    pub fn product(a: &GridMeasure, b: &GridMeasure) -> Result<Self> {
        a.ensure_same_grid(b)?;
        let n = a.weights().len();
        let mut mass = vec![0.0; n * n];
        for (i, wa) in a.weights().iter().enumerate() {
            for (j, wb) in b.weights().iter().enumerate() {
                mass[i * n + j] = wa * wb;
            }
        }
        Ok(Self { sites: n, mass })
    }

    /// Coupling concentrated on the diagonal.
    pub fn diagonal(a: &GridMeasure) -> Self {
        let n = a.weights().len();
        let mut mass = vec![0.0; n * n];
        for (i, w) in a.weights().iter().enumerate() {
            mass[i * n + i] = *w;
        }
        Self { sites: n, mass }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.sites + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mass.chunks(self.sites).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.sites];
        for row in self.mass.chunks(self.sites) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m;
            }
        }
        out
    }

    /// Visits every entry with positive mass in row-major order.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        for (idx, m) in self.mass.iter().enumerate() {
            if *m > 0.0 {
                f(idx / self.sites, idx % self.sites, *m);
            }
        }
    }

    /// Checks that the marginals match `(a, b)` within [`PLAN_TOLERANCE`].
    pub fn check_marginals(&self, a: &GridMeasure, b: &GridMeasure) -> Result<()> {
        a.ensure_same_grid(b)?;
        if a.weights().len() != self.sites {
            return Err(Error::param("coupling", "size does not match the grid"));
        }
        let rows = self.row_sums();
        let cols = self.col_sums();
        let bad_row = rows
            .iter()
            .zip(a.weights())
            .any(|(r, w)| (r - w).abs() > PLAN_TOLERANCE);
        let bad_col = cols
            .iter()
            .zip(b.weights())
            .any(|(c, w)| (c - w).abs() > PLAN_TOLERANCE);
        if bad_row || bad_col {
            return Err(Error::param("coupling", "marginals do not match"));
        }
        Ok(())
    }

    /// True when every source site sends its mass to a single target site.
    pub fn is_monge(&self) -> bool {
        self.mass
            .chunks(self.sites)
            .all(|row| row.iter().filter(|m| **m > 0.0).count() <= 1)
    }
}

/// A coupling between two grid measures together with its cost and
/// Kantorovich potentials `(phi, psi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    source: GridMeasure,
    target: GridMeasure,
    coupling: Coupling,
    cost_exponent: f64,
    total_cost: f64,
    dual_source: Vec<f64>,
    dual_target: Vec<f64>,
    exact: bool,
}

impl TransportPlan {
    pub(crate) fn assemble(
        source: GridMeasure,
        target: GridMeasure,
        coupling: Coupling,
        cost_exponent: f64,
        dual_source: Vec<f64>,
        dual_target: Vec<f64>,
        exact: bool,
    ) -> Self {
        let grid = source.grid();
        let mut total_cost = 0.0;
        coupling.for_each_entry(|i, j, m| {
            total_cost += m * power_cost(grid.distance(i, j), cost_exponent);
        });
        Self {
            source,
            target,
            coupling,
            cost_exponent,
            total_cost,
            dual_source,
            dual_target,
            exact,
        }
    }

    pub fn source(&self) -> &GridMeasure {
        &self.source
    }

    pub fn target(&self) -> &GridMeasure {
        &self.target
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn cost_exponent(&self) -> f64 {
        self.cost_exponent
    }

    /// `Σ π_ij d(x_i, y_j)^k`, the transport part only.
    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn dual_source(&self) -> &[f64] {
        &self.dual_source
    }

    pub fn dual_target(&self) -> &[f64] {
        &self.dual_target
    }

    /// Whether the plan came from the exact solver.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// `Σ φ_i µ_i + Σ ψ_j ν_j`.
    pub fn dual_objective(&self) -> f64 {
        let a: f64 = self
            .dual_source
            .iter()
            .zip(self.source.weights())
            .map(|(p, w)| p * w)
            .sum();
        let b: f64 = self
            .dual_target
            .iter()
            .zip(self.target.weights())
            .map(|(p, w)| p * w)
            .sum();
        a + b
    }

    /// Mass-weighted minimal-image displacements of every atom `(i, j)`.
    pub fn atoms(&self) -> Vec<PlanAtom> {
        let grid = self.source.grid();
        let mut out = Vec::new();
        self.coupling.for_each_entry(|i, j, mass| {
            out.push(PlanAtom {
                from: i,
                to: j,
                mass,
                displacement: grid.displacement(i, j),
            })
        });
        out
    }

    /// Serializable view; the full matrix is included only on request.
    pub fn summary(&self, include_coupling: bool) -> PlanSummary {
        PlanSummary {
            cost_exponent: self.cost_exponent,
            total_cost: self.total_cost,
            exact: self.exact,
            source_marginal: self.coupling.row_sums(),
            target_marginal: self.coupling.col_sums(),
            dual_source: self.dual_source.clone(),
            dual_target: self.dual_target.clone(),
            coupling: include_coupling.then(|| {
                self.coupling
                    .as_slice()
                    .chunks(self.coupling.sites())
                    .map(<[f64]>::to_vec)
                    .collect()
            }),
        }
    }
}

/// One positive entry of a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanAtom {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
    pub displacement: Coords,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub cost_exponent: f64,
    pub total_cost: f64,
    pub exact: bool,
    pub source_marginal: Vec<f64>,
    pub target_marginal: Vec<f64>,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coupling: Option<Vec<Vec<f64>>>,
}

/// `W_k(µ, ν) = (min Σ π d^k)^{1/k}`.
pub fn wasserstein(mu: &GridMeasure, nu: &GridMeasure, k: f64) -> Result<f64> {
    let plan = exact_ot(mu, nu, k)?;
    Ok(plan.total_cost().powf(1.0 / k))
}

/// Per-site speed distributions: `ψ(x)` is a finite list of `(velocity, probability)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedDistribution {
    dim: usize,
    sites: Vec<Vec<(Coords, f64)>>,
}

impl SpeedDistribution {
    /// An empty distribution on every site.
    pub fn empty(grid: &TorusGrid) -> Self {
        Self {
            dim: grid.dim(),
            sites: vec![Vec::new(); grid.sites()],
        }
    }

    /// Builds from per-site `(velocity, mass)` lists, normalizing masses to
    /// probabilities. Sites with no entries stay empty.
    pub fn from_masses(grid: &TorusGrid, masses: Vec<Vec<(Coords, f64)>>) -> Result<Self> {
        if masses.len() != grid.sites() {
            return Err(Error::param("speed distribution", "wrong number of sites"));
        }
        let sites = masses
            .into_iter()
            .map(|entries| {
                let total: f64 = entries.iter().map(|(_, m)| m).sum();
                if total > 0.0 {
                    entries
                        .into_iter()
                        .filter(|(_, m)| *m > 0.0)
                        .map(|(v, m)| (v, m / total))
                        .collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        Ok(Self {
            dim: grid.dim(),
            sites,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, site: usize) -> &[(Coords, f64)] {
        &self.sites[site]
    }

    pub fn sites(&self) -> usize {
        self.sites.len()
    }

    /// Largest velocity norm in the support.
    pub fn support_bound(&self) -> f64 {
        self.sites
            .iter()
            .flatten()
            .map(|(v, _)| crate::measure::norm(v))
            .fold(0.0, f64::max)
    }

    /// Mean velocity at a site, zero when the site is empty.
    pub fn mean(&self, site: usize) -> Coords {
        self.sites[site].iter().fold([0.0, 0.0], |acc, (v, p)| {
            [acc[0] + p * v[0], acc[1] + p * v[1]]
        })
    }

    /// `Σ_x m(x) Σ_z ψ(x, z) f(z)`.
    pub fn integrate(&self, m: &GridMeasure, f: impl Fn(&Coords) -> f64) -> f64 {
        self.sites
            .iter()
            .zip(m.weights())
            .map(|(entries, w)| w * entries.iter().map(|(v, p)| p * f(v)).sum::<f64>())
            .sum()
    }

    /// Checks that each nonempty site carries unit probability.
    pub fn check_normalized(&self) -> Result<()> {
        for (site, entries) in self.sites.iter().enumerate() {
            if entries.is_empty() {
                continue;
            }
            let total: f64 = entries.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(
                    "speed distribution",
                    format!("site {site} has total probability {total}"),
                ));
            }
        }
        Ok(())
    }
}

/// Drift realizing the quadratic geodesic in `remaining_time`: at every
/// occupied source site, the barycentric displacement to its plan targets
/// divided by the remaining time. Empty sites get zero velocity.
pub fn optimal_velocity_field(plan: &TransportPlan, remaining_time: f64) -> Result<Vec<Coords>> {
    if !(remaining_time > 0.0) {
        return Err(Error::param(
            "remaining_time",
            format!("must be > 0, got {remaining_time}"),
        ));
    }
    if !plan.is_exact() || plan.cost_exponent() != 2.0 {
        return Err(Error::param(
            "plan",
            "velocity field needs an exact quadratic plan",
        ));
    }
    let mut v = vec![[0.0; 2]; plan.source().weights().len()];
    for atom in plan.atoms() {
        let w = &mut v[atom.from];
        w[0] += atom.mass * atom.displacement[0];
        w[1] += atom.mass * atom.displacement[1];
    }
    for (site, w) in v.iter_mut().enumerate() {
        let m = plan.source().weight(site);
        if m > 0.0 {
            w[0] /= m * remaining_time;
            w[1] /= m * remaining_time;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn velocity_field_examples() {
        let g = g1(4);
        let u = GridMeasure::uniform(g);
        let plan = exact_ot(&u, &u, 2.0).unwrap();
        let v = optimal_velocity_field(&plan, 1.0).unwrap();
        assert!(v.iter().all(|w| *w == [0.0, 0.0]));

        let a = GridMeasure::dirac(g, 0).unwrap();
        let b = GridMeasure::dirac(g, 2).unwrap();
        let plan = exact_ot(&a, &b, 2.0).unwrap();
        let v = optimal_velocity_field(&plan, 0.5).unwrap();
        assert_eq!(v[0], [1.0, 0.0]);
        assert!(optimal_velocity_field(&plan, 0.0).is_err());

        let mu = GridMeasure::new(g, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let nu = GridMeasure::new(g, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let plan = exact_ot(&mu, &nu, 2.0).unwrap();
        let v = optimal_velocity_field(&plan, 1.0).unwrap();
        assert!((v[0][0] + 0.25).abs() < 1e-12);
        assert!((v[1][0] - 0.25).abs() < 1e-12);
        assert_eq!(v[2], [0.0, 0.0]);
    }

    #[test]
    fn wasserstein_examples() {
        let g = g1(4);
        let m = GridMeasure::new(g, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(wasserstein(&m, &m, 2.0).unwrap(), 0.0);
        let a = GridMeasure::dirac(g, 0).unwrap();
        let b = GridMeasure::dirac(g, 2).unwrap();
        assert!((wasserstein(&a, &b, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((wasserstein(&a, &b, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coupling_helpers() {
        let g = g1(2);
        let a = GridMeasure::new(g, vec![0.25, 0.75]).unwrap();
        let b = GridMeasure::new(g, vec![0.5, 0.5]).unwrap();
        let p = Coupling::product(&a, &b).unwrap();
        p.check_marginals(&a, &b).unwrap();
        assert!(!p.is_monge());
        assert!(Coupling::diagonal(&a).is_monge());
        assert!(Coupling::diagonal(&a).check_marginals(&a, &b).is_err());
    }

    #[test]
    fn plan_summary_gates_matrix() {
        let g = g1(2);
        let a = GridMeasure::dirac(g, 0).unwrap();
        let plan = exact_ot(&a, &a, 2.0).unwrap();
        assert!(plan.summary(false).coupling.is_none());
        assert_eq!(
            plan.summary(true).coupling.unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 0.0]]
        );
    }
}
