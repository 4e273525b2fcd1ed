//! Entropic transport in the log domain with epsilon scaling.

use crate::error::{Error, Result};
use crate::measure::GridMeasure;
use crate::transport::{power_cost, Coupling, TransportPlan};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Exit threshold on the L1 marginal violation.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            max_iters: 100_000,
            tol: 1e-9,
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic plan restricted to the supports of `mu` and `nu`. The reported
/// `total_cost` is `⟨π, C⟩` without the entropy term.
pub fn sinkhorn(
    mu: &GridMeasure,
    nu: &GridMeasure,
    k: f64,
    opts: SinkhornOptions,
) -> Result<TransportPlan> {
    mu.ensure_same_grid(nu)?;
    if !(opts.epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be > 0"));
    }
    if !(k >= 1.0) {
        return Err(Error::param("k", format!("must be >= 1, got {k}")));
    }
    let grid = mu.grid();
    let n = grid.sites();
    let rows: Vec<usize> = mu.support().collect();
    let cols: Vec<usize> = nu.support().collect();
    let (m, p) = (rows.len(), cols.len());
    let log_a: Vec<f64> = rows.iter().map(|&i| mu.weight(i).ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| nu.weight(j).ln()).collect();
    let mut cost = Vec::with_capacity(m * p);
    for &i in &rows {
        for &j in &cols {
            cost.push(power_cost(grid.distance(i, j), k));
        }
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; p];
    let mut iterations = 0;
    let mut violation;

    // geometric schedule from the cost scale down to the requested epsilon
    let mut eps = max_cost.max(opts.epsilon);
    loop {
        let last = eps <= opts.epsilon;
        let stage_tol = if last { opts.tol } else { opts.tol.max(1e-4) };
        loop {
            for a in 0..m {
                let row = &cost[a * p..(a + 1) * p];
                let lse = log_sum_exp(g.iter().zip(row).map(|(gj, c)| (gj - c) / eps));
                f[a] = eps * (log_a[a] - lse);
            }
            for b in 0..p {
                let lse = log_sum_exp((0..m).map(|a| (f[a] - cost[a * p + b]) / eps));
                g[b] = eps * (log_b[b] - lse);
            }
            iterations += 1;
            violation = (0..m)
                .map(|a| {
                    let row = &cost[a * p..(a + 1) * p];
                    let s: f64 = g
                        .iter()
                        .zip(row)
                        .map(|(gj, c)| ((f[a] + gj - c) / eps).exp())
                        .sum();
                    (s - log_a[a].exp()).abs()
                })
                .sum();
            if violation <= stage_tol || iterations >= opts.max_iters {
                break;
            }
        }
        if last || iterations >= opts.max_iters {
            break;
        }
        eps = (eps * 0.5).max(opts.epsilon);
    }
    if !(violation <= opts.tol) || eps > opts.epsilon {
        return Err(Error::SinkhornNotConverged {
            iterations,
            violation,
        });
    }

    let mut mass = vec![0.0; n * n];
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            mass[i * n + j] = ((f[a] + g[b] - cost[a * p + b]) / eps).exp();
        }
    }
    let full_cost = |i: usize, j: usize| power_cost(grid.distance(i, j), k);
    let mut phi = vec![f64::NAN; n];
    let mut psi = vec![f64::NAN; n];
    for (a, &i) in rows.iter().enumerate() {
        phi[i] = f[a];
    }
    for (b, &j) in cols.iter().enumerate() {
        psi[j] = g[b];
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
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::TorusGrid;

    fn opts(epsilon: f64) -> SinkhornOptions {
        SinkhornOptions {
            epsilon,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_cost_shrinks_with_epsilon() {
        let u = GridMeasure::uniform(TorusGrid::new(1, 8).unwrap());
        let costs: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&e| sinkhorn(&u, &u, 2.0, opts(e)).unwrap().total_cost())
            .collect();
        assert!(costs[0] > costs[1] && costs[1] > costs[2], "{costs:?}");
        assert!(costs[2] < 1e-3);
    }

    #[test]
    fn dirac_pair_is_exact_for_any_epsilon() {
        let g = TorusGrid::new(1, 4).unwrap();
        let a = GridMeasure::dirac(g, 0).unwrap();
        let b = GridMeasure::dirac(g, 2).unwrap();
        for e in [1.0, 0.1, 1e-3] {
            let plan = sinkhorn(&a, &b, 2.0, opts(e)).unwrap();
            assert!((plan.total_cost() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let g = TorusGrid::new(1, 8).unwrap();
        let a = GridMeasure::from_unnormalized(g, (1..=8).map(f64::from).collect()).unwrap();
        let b = GridMeasure::uniform(g);
        let err = sinkhorn(
            &a,
            &b,
            2.0,
            SinkhornOptions {
                epsilon: 1e-3,
                max_iters: 2,
                tol: 1e-12,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::SinkhornNotConverged { iterations: 2, .. }));
    }
}
