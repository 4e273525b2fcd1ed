//! Deterministic value function for power costs `L(α) = c |α|^k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{GridMeasure, TorusGrid};
use crate::transport::exact_ot;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerCost {
    exponent: f64,
    scale: f64,
}

impl PowerCost {
    pub fn new(exponent: f64, scale: f64) -> Result<Self> {
        if !(exponent > 1.0) || !exponent.is_finite() {
            return Err(Error::param("exponent", format!("must be > 1, got {exponent}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::param("scale", format!("must be > 0, got {scale}")));
        }
        Ok(Self { exponent, scale })
    }

    /// `L(p) = ½|p|²`.
    pub fn quadratic() -> Self {
        Self {
            exponent: 2.0,
            scale: 0.5,
        }
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_quadratic(&self) -> bool {
        self.exponent == 2.0
    }

    /// Running cost of a single velocity.
    pub fn eval(&self, speed: f64) -> f64 {
        self.scale * crate::transport::power_cost(speed, self.exponent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon(f64);

impl Horizon {
    pub fn new(t_end: f64) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::param("T", format!("must be > 0, got {t_end}")));
        }
        Ok(Self(t_end))
    }

    pub fn end(&self) -> f64 {
        self.0
    }

    /// `T - t`, or an error at and beyond the terminal time.
    pub fn remaining(&self, t: f64) -> Result<f64> {
        if !(t < self.0) {
            return Err(Error::SingularTime { t, horizon: self.0 });
        }
        Ok(self.0 - t)
    }
}

/// `c · W_k^k / (T - t)^{k-1}` from a precomputed transport cost `W_k^k`.
pub fn u_det_from_transport_cost(
    t: f64,
    transport_cost: f64,
    cost: &PowerCost,
    horizon: &Horizon,
) -> Result<f64> {
    let tau = horizon.remaining(t)?;
    Ok(cost.scale * transport_cost / tau.powf(cost.exponent - 1.0))
}

pub fn u_det(
    t: f64,
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &PowerCost,
    horizon: &Horizon,
) -> Result<f64> {
    let tau = horizon.remaining(t)?;
    let plan = exact_ot(mu, nu, cost.exponent)?;
    Ok(cost.scale * plan.total_cost() / tau.powf(cost.exponent - 1.0))
}

/// Analytic `∂_t U_det = (k-1) c W_k^k / (T-t)^k`.
pub fn du_det_dt(
    t: f64,
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &PowerCost,
    horizon: &Horizon,
) -> Result<f64> {
    let tau = horizon.remaining(t)?;
    let plan = exact_ot(mu, nu, cost.exponent)?;
    Ok((cost.exponent - 1.0) * cost.scale * plan.total_cost() / tau.powf(cost.exponent))
}

/// Largest `W_k` between probability measures on the torus: `√d / 2`.
pub fn torus_diameter(grid: &TorusGrid) -> f64 {
    (grid.dim() as f64).sqrt() / 2.0
}

/// `ω(t) = sup_{s ≤ t, µ, ν} U_det(s, µ, ν) = c (√d/2)^k / (T-t)^{k-1}`.
pub fn omega_envelope(t: f64, grid: &TorusGrid, cost: &PowerCost, horizon: &Horizon) -> Result<f64> {
    let tau = horizon.remaining(t)?;
    let diam = torus_diameter(grid);
    Ok(cost.scale * diam.powf(cost.exponent) / tau.powf(cost.exponent - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbResidual {
    pub t: f64,
    /// `∂_t U`
    pub time_derivative: f64,
    /// `½ ∫ |D_µ U|² dµ`
    pub hamiltonian: f64,
    pub residual: f64,
    /// Whether the exact plan sends each source atom to a single target.
    pub monge: bool,
}

/// Residual of `-∂_t U + ½ ∫ |D_µ U|² dµ = 0` for `U = W_2² / (2 (T - t))`,
/// with `D_µ U` taken as the plan's barycentric displacement over `T - t`.
/// The identity is exact only for Monge plans.
pub fn hjb_residual_quadratic(
    t: f64,
    mu: &GridMeasure,
    nu: &GridMeasure,
    horizon: &Horizon,
) -> Result<HjbResidual> {
    let tau = horizon.remaining(t)?;
    let plan = exact_ot(mu, nu, 2.0)?;
    let time_derivative = plan.total_cost() / (2.0 * tau * tau);
    let velocity = crate::transport::optimal_velocity_field(&plan, tau)?;
    let hamiltonian = 0.5
        * velocity
            .iter()
            .zip(mu.weights())
            .map(|(v, w)| w * (v[0] * v[0] + v[1] * v[1]))
            .sum::<f64>();
    Ok(HjbResidual {
        t,
        time_derivative,
        hamiltonian,
        residual: -time_derivative + hamiltonian,
        monge: plan.coupling().is_monge(),
    })
}

/// Largest deviation of `U_det(t) (T-t)^{k-1}` from its value at the first time.
pub fn time_rescale_check(
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &PowerCost,
    horizon: &Horizon,
    t_list: &[f64],
) -> Result<f64> {
    let mut reference = None;
    let mut worst: f64 = 0.0;
    for &t in t_list {
        let tau = horizon.remaining(t)?;
        let scaled = u_det(t, mu, nu, cost, horizon)? * tau.powf(cost.exponent - 1.0);
        match reference {
            None => reference = Some(scaled),
            Some(r) => worst = worst.max((scaled - r).abs()),
        }
    }
    Ok(worst)
}
