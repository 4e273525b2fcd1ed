//! Exact Kantorovich solver: successive shortest augmenting paths on the
//! bipartite transport network, with Johnson potentials so every Dijkstra
//! pass runs on nonnegative reduced costs. The final node potentials are the
//! dual variables.

use crate::error::{Error, Result};
use crate::measure::GridMeasure;
use crate::transport::{power_cost, Coupling, TransportPlan};

/// Residual masses below this are treated as exhausted.
const EMPTY: f64 = 1e-14;

struct FlowSolution {
    flow: Vec<f64>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

/// Solves the balanced transportation problem `min Σ c_ij f_ij` with row sums
/// `supply` and column sums `demand`. `cost` is `rows × cols`, row-major.
fn min_cost_flow(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<FlowSolution> {
    let m = supply.len();
    let p = demand.len();
    // node layout: 0 = hub source, 1..=m rows, m+1..=m+p columns, m+p+1 = hub sink
    let hub_s = 0;
    let hub_t = m + p + 1;
    let nodes = m + p + 2;
    let row = |i: usize| 1 + i;
    let col = |j: usize| 1 + m + j;

    let mut flow = vec![0.0; m * p];
    let mut rem_supply = supply.to_vec();
    let mut rem_demand = demand.to_vec();
    let mut pot = vec![0.0; nodes];

    let mut dist = vec![f64::INFINITY; nodes];
    let mut pred = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    let max_iters = 50 * (m + p) * (m + p) + 1000;
    let mut iterations = 0;

    loop {
        if rem_supply.iter().all(|r| *r <= EMPTY) || rem_demand.iter().all(|r| *r <= EMPTY) {
            break;
        }
        iterations += 1;
        if iterations > max_iters {
            return Err(Error::NonConvergence { iterations });
        }

        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        pred.iter_mut().for_each(|q| *q = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[hub_s] = 0.0;

        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == hub_t {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |v: usize, c: f64, dist: &mut [f64], pred: &mut [usize]| {
                let rc = (c + pot[u] - pot[v]).max(0.0);
                let cand = du + rc;
                if cand < dist[v] {
                    dist[v] = cand;
                    pred[v] = u;
                }
            };
            if u == hub_s {
                for i in 0..m {
                    if rem_supply[i] > EMPTY && !done[row(i)] {
                        relax(row(i), 0.0, &mut dist, &mut pred);
                    }
                }
            } else if u <= m {
                let i = u - 1;
                for j in 0..p {
                    if !done[col(j)] {
                        relax(col(j), cost[i * p + j], &mut dist, &mut pred);
                    }
                }
            } else {
                let j = u - 1 - m;
                for i in 0..m {
                    if flow[i * p + j] > EMPTY && !done[row(i)] {
                        relax(row(i), -cost[i * p + j], &mut dist, &mut pred);
                    }
                }
                if rem_demand[j] > EMPTY && !done[hub_t] {
                    relax(hub_t, 0.0, &mut dist, &mut pred);
                }
            }
        }

        if !dist[hub_t].is_finite() {
            // the smaller side is exhausted up to rounding
            break;
        }

        // bottleneck along hub_t <- col <- row <- ... <- row <- hub_s
        let last_col = pred[hub_t] - 1 - m;
        let mut delta = rem_demand[last_col];
        let mut v = pred[hub_t];
        let first_row;
        loop {
            let r = pred[v];
            let i = r - 1;
            let u = pred[r];
            if u == hub_s {
                first_row = i;
                break;
            }
            let j = u - 1 - m;
            delta = delta.min(flow[i * p + j]);
            v = u;
        }
        delta = delta.min(rem_supply[first_row]);

        // augment
        let mut v = pred[hub_t];
        loop {
            let j = v - 1 - m;
            let r = pred[v];
            let i = r - 1;
            flow[i * p + j] += delta;
            let u = pred[r];
            if u == hub_s {
                break;
            }
            let j2 = u - 1 - m;
            let f = &mut flow[i * p + j2];
            *f -= delta;
            if *f <= EMPTY {
                *f = 0.0;
            }
            v = u;
        }
        rem_supply[first_row] -= delta;
        if rem_supply[first_row] <= EMPTY {
            rem_supply[first_row] = 0.0;
        }
        rem_demand[last_col] -= delta;
        if rem_demand[last_col] <= EMPTY {
            rem_demand[last_col] = 0.0;
        }

        let cap = dist[hub_t];
        for v in 0..nodes {
            pot[v] += dist[v].min(cap);
        }
    }

    Ok(FlowSolution {
        flow,
        row_potential: (0..m).map(|i| -pot[row(i)]).collect(),
        col_potential: (0..p).map(|j| pot[col(j)]).collect(),
    })
}

/// Exact optimal plan for the cost `d(x, y)^k` together with complementary
/// Kantorovich potentials. The source potential is zero at the first
/// occupied source site; potentials on empty sites are c-transforms.
pub fn exact_ot(mu: &GridMeasure, nu: &GridMeasure, k: f64) -> Result<TransportPlan> {
    mu.ensure_same_grid(nu)?;
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::param("k", format!("must be >= 1, got {k}")));
    }
    let grid = mu.grid();
    let n = grid.sites();
    let rows: Vec<usize> = mu.support().collect();
    let cols: Vec<usize> = nu.support().collect();
    let supply: Vec<f64> = rows.iter().map(|&i| mu.weight(i)).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| nu.weight(j)).collect();
    let full_cost = |i: usize, j: usize| power_cost(grid.distance(i, j), k);
    let mut cost = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            cost.push(full_cost(i, j));
        }
    }

    let sol = min_cost_flow(&supply, &demand, &cost)?;

    let mut mass = vec![0.0; n * n];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            mass[i * n + j] = sol.flow[a * cols.len() + b];
        }
    }

    let shift = sol.row_potential[0];
    let mut phi = vec![f64::NAN; n];
    let mut psi = vec![f64::NAN; n];
    for (a, &i) in rows.iter().enumerate() {
        phi[i] = sol.row_potential[a] - shift;
    }
    for (b, &j) in cols.iter().enumerate() {
        psi[j] = sol.col_potential[b] + shift;
    }
    for i in 0..n {
        if phi[i].is_nan() {
            phi[i] = cols
                .iter()
                .map(|&j| full_cost(i, j) - psi[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..n {
        if psi[j].is_nan() {
            psi[j] = (0..n)
                .map(|i| full_cost(i, j) - phi[i])
                .fold(f64::INFINITY, f64::min);
        }
    }

    Ok(TransportPlan::assemble(
        mu.clone(),
        nu.clone(),
        Coupling::from_matrix(n, mass)?,
        k,
        phi,
        psi,
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::TorusGrid;
    use crate::transport::PLAN_TOLERANCE;

    fn check_plan(plan: &TransportPlan) {
        let mu = plan.source();
        let nu = plan.target();
        plan.coupling().check_marginals(mu, nu).unwrap();
        let grid = mu.grid();
        let n = grid.sites();
        let k = plan.cost_exponent();
        for i in 0..n {
            for j in 0..n {
                let c = power_cost(grid.distance(i, j), k);
                let s = plan.dual_source()[i] + plan.dual_target()[j];
                assert!(s <= c + PLAN_TOLERANCE, "dual infeasible at ({i},{j})");
                if plan.coupling().get(i, j) > 0.0 {
                    assert!((s - c).abs() <= PLAN_TOLERANCE, "slackness at ({i},{j})");
                }
            }
        }
        assert!((plan.dual_objective() - plan.total_cost()).abs() <= 1e-7);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let g = TorusGrid::new(1, 4).unwrap();
        let m = GridMeasure::new(g, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let plan = exact_ot(&m, &m, 2.0).unwrap();
        assert_eq!(plan.total_cost(), 0.0);
        check_plan(&plan);
    }

    #[test]
    fn antipodal_diracs() {
        let g = TorusGrid::new(1, 4).unwrap();
        let a = GridMeasure::dirac(g, 0).unwrap();
        let b = GridMeasure::dirac(g, 2).unwrap();
        let plan = exact_ot(&a, &b, 2.0).unwrap();
        assert!((plan.total_cost() - 0.25).abs() < 1e-15);
        check_plan(&plan);
        assert_eq!(plan.dual_source()[0], 0.0);
    }

    #[test]
    fn two_atom_instance() {
        let g = TorusGrid::new(1, 4).unwrap();
        let mu = GridMeasure::new(g, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let nu = GridMeasure::new(g, vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let plan = exact_ot(&mu, &nu, 2.0).unwrap();
        // 0 -> 0.75 and 0.25 -> 0.5, each a quarter-turn: 0.5 * 0.0625 * 2
        assert!((plan.total_cost() - 0.0625).abs() < 1e-15);
        check_plan(&plan);
    }

    #[test]
    fn split_mass_plan_satisfies_slackness() {
        let g = TorusGrid::new(2, 3).unwrap();
        let mu = GridMeasure::from_unnormalized(g, vec![3.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0])
            .unwrap();
        let nu = GridMeasure::from_unnormalized(g, vec![0.0, 1.0, 1.0, 2.0, 0.0, 1.0, 0.5, 0.5, 2.0])
            .unwrap();
        for k in [1.0, 1.5, 2.0, 3.0] {
            check_plan(&exact_ot(&mu, &nu, k).unwrap());
        }
    }

    #[test]
    fn rejects_bad_exponent_and_grids() {
        let g = TorusGrid::new(1, 4).unwrap();
        let h = TorusGrid::new(1, 5).unwrap();
        let a = GridMeasure::uniform(g);
        assert!(exact_ot(&a, &a, 0.5).is_err());
        assert!(exact_ot(&a, &GridMeasure::uniform(h), 2.0).is_err());
    }
}
