//! Monte Carlo estimation of the stochastic value by averaging rollout
//! costs of an explicit policy over sampled target paths.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{
    geodesic_rollout, replanning_rollout, steer_rollout, transport_phase_length, ControlPolicy,
    ControlledTrajectory,
};
use crate::error::{Error, Result};
use crate::measure::GridMeasure;
use crate::quad;
use crate::rng::{path_seed, rng_from_seed};
use crate::targets::{sample_path_with, JumpOperator, RateSpec, TargetPath, TargetProcess};
use crate::timegrid::TimeGrid;
use crate::transport::{exact_ot, wasserstein};
use crate::value_det::{u_det, Horizon, PowerCost};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// State at `t0`.
    pub initial: GridMeasure,
    pub target: TargetProcess,
    pub policy: ControlPolicy,
    pub t0: f64,
    pub horizon: Horizon,
    pub cost: PowerCost,
    pub n_paths: usize,
    pub base_seed: u64,
    pub dt_coarse: f64,
    pub dt_min: f64,
    pub refine_ratio: f64,
    /// Time steps recorded per geodesic segment.
    pub steps_per_segment: usize,
    /// Keep every path's cost in the report.
    pub keep_per_path: bool,
}

impl SimConfig {
    /// Quadratic cost, 1000 paths, seed 0, `dt_coarse = (T - t0) / 200`,
    /// `dt_min = 1e-6 T`, refine ratio ½.
    pub fn new(
        initial: GridMeasure,
        target: TargetProcess,
        policy: ControlPolicy,
        t0: f64,
        horizon: Horizon,
    ) -> Self {
        let span = horizon.end() - t0;
        Self {
            initial,
            target,
            policy,
            t0,
            horizon,
            cost: PowerCost::quadratic(),
            n_paths: 1000,
            base_seed: 0,
            dt_coarse: span / 200.0,
            dt_min: (1e-6 * horizon.end()).min(span / 200.0),
            refine_ratio: 0.5,
            steps_per_segment: 1,
            keep_per_path: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let span = self.horizon.remaining(self.t0)?;
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be >= 1"));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_coarse && self.dt_coarse < span) {
            return Err(Error::param(
                "dt",
                format!(
                    "need 0 < dt_min <= dt_coarse < T - t0 = {span}, got dt_min = {}, dt_coarse = {}",
                    self.dt_min, self.dt_coarse
                ),
            ));
        }
        if !(self.refine_ratio > 0.0 && self.refine_ratio < 1.0) {
            return Err(Error::param("refine_ratio", "must lie in (0, 1)"));
        }
        if self.steps_per_segment == 0 {
            return Err(Error::param("steps_per_segment", "must be >= 1"));
        }
        self.target.validate()?;
        self.initial.ensure_same_grid(&self.target.initial_measure())?;
        check_policy(self)
    }

    /// Shared simulation grid; the steering policy's phase switch is a node.
    pub fn time_grid(&self) -> Result<TimeGrid> {
        let mut breaks = Vec::new();
        if let ControlPolicy::TransportThenSteer { theta } = self.policy {
            breaks.push(self.t0 + transport_phase_length(self.t0, &self.horizon, theta)?);
        }
        TimeGrid::refined(
            self.t0,
            self.horizon.end(),
            self.dt_coarse,
            self.dt_min,
            self.refine_ratio,
            &breaks,
        )
    }
}

fn incompatible(cfg: &SimConfig) -> Error {
    Error::IncompatiblePolicy {
        policy: cfg.policy.name(),
        target: cfg.target.name(),
    }
}

/// Exponent `γ` of a steering volatility, `None` when it vanishes.
fn volatility_exponent(sigma: &RateSpec) -> Option<f64> {
    match *sigma {
        _ if sigma.is_zero() => None,
        RateSpec::Constant(_) => Some(0.0),
        RateSpec::Power { gamma, .. } => Some(gamma),
    }
}

fn check_policy(cfg: &SimConfig) -> Result<()> {
    match (&cfg.policy, &cfg.target) {
        (ControlPolicy::DeterministicGeodesic, TargetProcess::Constant { .. }) => Ok(()),
        (ControlPolicy::DeterministicGeodesic, TargetProcess::PoissonJump(j))
            if j.intensity.is_zero() || matches!(j.jump, JumpOperator::Identity) =>
        {
            Ok(())
        }
        (ControlPolicy::Replanning, TargetProcess::DiffusionTranslate(_)) => Err(incompatible(cfg)),
        (ControlPolicy::Replanning, _) => Ok(()),
        (ControlPolicy::TransportThenSteer { theta }, TargetProcess::DiffusionTranslate(d)) => {
            if !cfg.cost.is_quadratic() {
                return Err(Error::param("cost", "steering needs the quadratic cost"));
            }
            transport_phase_length(cfg.t0, &cfg.horizon, *theta)?;
            if let Some(gamma) = volatility_exponent(&d.sigma) {
                if !(*theta > 2.0 && *theta < 1.0 + 2.0 * gamma) {
                    return Err(Error::param(
                        "theta",
                        format!("must lie in (2, 1 + 2γ) = (2, {}), got {theta}", 1.0 + 2.0 * gamma),
                    ));
                }
            }
            Ok(())
        }
        (ControlPolicy::Idle, _) => Ok(()),
        _ => Err(incompatible(cfg)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct PathOutcome {
    cost: f64,
    gap: f64,
    jumps: usize,
}

fn rollout(cfg: &SimConfig, path: &TargetPath) -> Result<ControlledTrajectory> {
    let t_end = cfg.horizon.end();
    match cfg.policy {
        ControlPolicy::DeterministicGeodesic => geodesic_rollout(
            &cfg.initial,
            &path.measure_at(cfg.t0),
            cfg.t0,
            t_end,
            cfg.steps_per_segment,
            &cfg.cost,
        ),
        ControlPolicy::Replanning => replanning_rollout(
            &cfg.initial,
            path,
            cfg.t0,
            &cfg.horizon,
            &cfg.cost,
            cfg.steps_per_segment,
        ),
        ControlPolicy::TransportThenSteer { theta } => {
            steer_rollout(&cfg.initial, path, cfg.t0, &cfg.horizon, &cfg.cost, theta)
        }
        ControlPolicy::Idle => {
            if path.terminal().max_abs_diff(&cfg.initial) > 1e-12 {
                return Err(Error::param("policy", "idle state never reaches this target"));
            }
            // a still geodesic records zero velocity on every occupied site
            geodesic_rollout(&cfg.initial, &cfg.initial, cfg.t0, t_end, cfg.steps_per_segment, &cfg.cost)
        }
    }
}

fn run_paths(cfg: &SimConfig, grid: &TimeGrid, range: std::ops::Range<usize>) -> Result<Vec<PathOutcome>> {
    let results: Vec<Result<PathOutcome>> = range
        .clone()
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(path_seed(cfg.base_seed, i as u64));
            let path = sample_path_with(&cfg.target, &cfg.horizon, grid, &mut rng)?;
            let tr = rollout(cfg, &path)?;
            Ok(PathOutcome {
                cost: tr.running_cost(),
                gap: tr.terminal_gap(),
                jumps: path.jump_count(),
            })
        })
        .collect();
    results
        .into_iter()
        .zip(range)
        .map(|(r, i)| {
            r.map_err(|e| Error::Rollout {
                path: i,
                seed: path_seed(cfg.base_seed, i as u64),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Sum by recursive halving, so the result depends only on the order of
/// the inputs and not on how the work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest terminal correction over all paths.
    pub terminal_snap_gap: f64,
    /// `jump_count_histogram[k]` paths saw `k` target events.
    pub jump_count_histogram: Vec<u64>,
    /// Wall time; not serialized, so reports stay reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mean_cost: f64,
    /// Sample standard deviation over `√n_paths`; zero for a single path.
    pub std_error: f64,
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_path_costs: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

fn summarize(outcomes: &[PathOutcome], keep: bool, started: Instant) -> SimReport {
    let n = outcomes.len();
    let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    let mean = pairwise_sum(&costs) / n as f64;
    let std_error = if n > 1 {
        let sq: Vec<f64> = costs.iter().map(|c| (c - mean) * (c - mean)).collect();
        (pairwise_sum(&sq) / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    let max_jumps = outcomes.iter().map(|o| o.jumps).max().unwrap_or(0);
    let mut histogram = vec![0u64; max_jumps + 1];
    for o in outcomes {
        histogram[o.jumps] += 1;
    }
    SimReport {
        mean_cost: mean,
        std_error,
        n_paths: n,
        per_path_costs: keep.then_some(costs),
        diagnostics: Diagnostics {
            terminal_snap_gap: outcomes.iter().map(|o| o.gap).fold(0.0, f64::max),
            jump_count_histogram: histogram,
            runtime_seconds: started.elapsed().as_secs_f64(),
        },
    }
}

/// Mean rollout cost of the configured policy over `n_paths` sampled target
/// paths: an upper estimate of the stochastic value.
pub fn estimate_value(cfg: &SimConfig) -> Result<SimReport> {
    let started = Instant::now();
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let outcomes = run_paths(cfg, &grid, 0..cfg.n_paths)?;
    Ok(summarize(&outcomes, cfg.keep_per_path, started))
}

/// Grow the path count until `std_error <= rel_std_error · |gap|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTarget {
    pub rel_std_error: f64,
    pub max_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: f64,
    pub remaining: f64,
    pub mean_cost: f64,
    pub std_error: f64,
    pub u_det: f64,
    pub gap: f64,
    pub n_paths: usize,
}

/// For every start time, the policy estimate against the deterministic value
/// toward the target observed at that time. The coarse step is capped at half
/// the remaining time; `dt_min` is capped at the coarse step.
pub fn value_gap_curve(
    template: &SimConfig,
    t_list: &[f64],
    precision: Option<PrecisionTarget>,
) -> Result<Vec<GapPoint>> {
    if t_list.is_empty() {
        return Err(Error::param("t_list", "must not be empty"));
    }
    if !t_list.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::param("t_list", "must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let started = Instant::now();
        let remaining = template.horizon.remaining(t)?;
        let mut cfg = template.clone();
        cfg.t0 = t;
        cfg.dt_coarse = cfg.dt_coarse.min(0.5 * remaining);
        cfg.dt_min = cfg.dt_min.min(cfg.dt_coarse);
        cfg.validate()?;
        let grid = cfg.time_grid()?;
        let value = u_det(t, &cfg.initial, &cfg.target.initial_measure(), &cfg.cost, &cfg.horizon)?;

        let mut outcomes = run_paths(&cfg, &grid, 0..cfg.n_paths)?;
        let mut report = summarize(&outcomes, false, started);
        if let Some(p) = precision {
            // a zero gap with zero spread only means no path has seen a jump yet
            while !(report.std_error <= p.rel_std_error * (report.mean_cost - value).abs()
                && report.mean_cost != value)
                && outcomes.len() < p.max_paths
            {
                let next = (2 * outcomes.len()).min(p.max_paths);
                outcomes.extend(run_paths(&cfg, &grid, outcomes.len()..next)?);
                report = summarize(&outcomes, false, started);
            }
        }
        out.push(GapPoint {
            t,
            remaining,
            mean_cost: report.mean_cost,
            std_error: report.std_error,
            u_det: value,
            gap: report.mean_cost - value,
            n_paths: report.n_paths,
        });
    }
    Ok(out)
}

/// Least-squares fit of `y = prefactor · x^exponent` in log-log coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::param("fit", "need at least two paired points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::param("fit", "log-log fit needs positive data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param("fit", "abscissae must not all coincide"));
    }
    let exponent = sxy / sxx;
    Ok(PowerFit {
        exponent,
        prefactor: (my - exponent * mx).exp(),
    })
}

/// Inputs of the terminal blow-up probe for a constant jump intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct BlowupConfig {
    pub intensity: f64,
    pub nu: GridMeasure,
    pub jump: JumpOperator,
    /// State at each start time; defaults to `nu`.
    pub initial: Option<GridMeasure>,
    pub horizon: Horizon,
    pub t_list: Vec<f64>,
    pub cutoffs: Vec<f64>,
    /// Midpoint nodes per unit of `-ln(T - s)`.
    pub nodes_per_unit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupPoint {
    pub t: f64,
    pub remaining: f64,
    pub epsilon: f64,
    pub p_one_jump: f64,
    pub lower_bound: f64,
}

/// Lower bound on the cost of any deterministic geodesic strategy when the
/// target may jump once before `T`:
/// `P(n = 1) ∫_t^{T-ε} [W_2²(µ_s, ν) + W_2²(µ_s, 𝒯ν)] ρ(s) / (T - s) ds`,
/// with `ρ = 1/(T - t)` the law of the single jump time and `µ_s` the
/// geodesic from the initial state to `ν`. Uses `s = T - e^{-u}` so that
/// `ds / (T - s) = du`. Cutoffs are integrated cumulatively, so the
/// returned values grow as `ε` shrinks.
pub fn blowup_probe(cfg: &BlowupConfig) -> Result<Vec<BlowupPoint>> {
    if !(cfg.intensity > 0.0) || !cfg.intensity.is_finite() {
        return Err(Error::param("intensity", "must be > 0"));
    }
    if cfg.nodes_per_unit == 0 {
        return Err(Error::param("nodes_per_unit", "must be >= 1"));
    }
    let jumped = cfg.jump.apply(&cfg.nu)?;
    if jumped.max_abs_diff(&cfg.nu) <= 1e-15 {
        return Err(Error::BlowupHypothesis);
    }
    let mu = cfg.initial.clone().unwrap_or_else(|| cfg.nu.clone());
    mu.ensure_same_grid(&cfg.nu)?;
    let plan = exact_ot(&mu, &cfg.nu, 2.0)?;
    let t_end = cfg.horizon.end();
    let mut cutoffs = cfg.cutoffs.clone();
    cutoffs.sort_by(|a, b| b.total_cmp(a));

    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut pair_cost = |state: GridMeasure| -> Result<f64> {
        let key: Vec<u64> = state.weights().iter().map(|w| w.to_bits()).collect();
        if let Some(v) = cache.get(&key) {
            return Ok(*v);
        }
        let v = wasserstein(&state, &cfg.nu, 2.0)?.powi(2) + wasserstein(&state, &jumped, 2.0)?.powi(2);
        cache.insert(key, v);
        Ok(v)
    };

    let mut out = Vec::new();
    for &t in &cfg.t_list {
        let remaining = cfg.horizon.remaining(t)?;
        let lambda_total = cfg.intensity * remaining;
        let p_one = lambda_total * (-lambda_total).exp();
        let density = 1.0 / remaining;
        let mut acc = 0.0;
        let mut u_lo = -remaining.ln();
        for &eps in &cutoffs {
            if !(eps > 0.0 && eps < remaining) {
                return Err(Error::param(
                    "cutoffs",
                    format!("each cutoff must lie in (0, {remaining}), got {eps}"),
                ));
            }
            let u_hi = -eps.ln();
            let nodes = ((u_hi - u_lo) * cfg.nodes_per_unit as f64).ceil().max(1.0) as usize;
            let du = (u_hi - u_lo) / nodes as f64;
            for i in 0..nodes {
                let u = u_lo + (i as f64 + 0.5) * du;
                let s = t_end - (-u).exp();
                let fraction = ((s - t) / remaining).clamp(0.0, 1.0);
                let state = crate::measure::displacement_interpolate(&plan, fraction)?;
                acc += p_one * density * pair_cost(state)? * du;
            }
            u_lo = u_hi;
            out.push(BlowupPoint {
                t,
                remaining,
                epsilon: eps,
                p_one_jump: p_one,
                lower_bound: acc,
            });
        }
    }
    Ok(out)
}

/// Inputs of the Monte Carlo check of the steering energy identity in one
/// dimension, with the target offset starting at zero and the state at
/// `x0_offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringCheckConfig {
    pub sigma: RateSpec,
    pub t0: f64,
    pub horizon: Horizon,
    pub n_paths: usize,
    pub x0_offset: f64,
    pub base_seed: u64,
    pub dt_coarse: f64,
    pub dt_min: f64,
    pub refine_ratio: f64,
}

impl SteeringCheckConfig {
    /// `dt_coarse = (T - t0) / 2000`, `dt_min = 1e-6 T`, ratio ½.
    pub fn new(sigma: RateSpec, t0: f64, horizon: Horizon, n_paths: usize, x0_offset: f64) -> Self {
        Self {
            sigma,
            t0,
            horizon,
            n_paths,
            x0_offset,
            base_seed: 0,
            dt_coarse: (horizon.end() - t0) / 2000.0,
            dt_min: 1e-6 * horizon.end(),
            refine_ratio: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringCheck {
    /// Monte Carlo mean of `∫ |dX/dt|² dt`.
    pub lhs_mc: f64,
    pub std_error: f64,
    /// `|x0|² / (T - t0) + ∫ σ² / (T - s) ds`.
    pub rhs_analytic: f64,
    /// `(lhs - rhs) / std_error`; absent when the estimate has no noise.
    pub z_score: Option<f64>,
    pub n_paths: usize,
}

/// `∫_{t0}^T σ(s)² / (T - s) ds`, or an error when it diverges.
pub fn steering_energy_integral(sigma: &RateSpec, t0: f64, horizon: &Horizon) -> Result<f64> {
    match volatility_exponent(sigma) {
        None => {
            horizon.remaining(t0)?;
            Ok(0.0)
        }
        Some(gamma) if gamma <= 0.0 => Err(Error::DivergentIdentity(format!(
            "∫ σ²/(T - s) diverges for volatility exponent {gamma}"
        ))),
        Some(_) => {
            let t_end = horizon.remaining(t0).map(|_| horizon.end())?;
            Ok(quad::integrate(
                |s| {
                    let v = sigma.eval(s, horizon);
                    v * v / (t_end - s)
                },
                t0,
                t_end,
                1e-12,
            ))
        }
    }
}

/// Euler paths of `dX = (W - X) / (T - t) dt` against `dW = σ dB`, stopped at
/// the last node before `T`, compared with the closed-form energy.
pub fn steering_identity_check(cfg: &SteeringCheckConfig) -> Result<SteeringCheck> {
    if cfg.n_paths == 0 {
        return Err(Error::param("n_paths", "must be >= 1"));
    }
    cfg.sigma.validate()?;
    let tau = cfg.horizon.remaining(cfg.t0)?;
    let rhs = cfg.x0_offset * cfg.x0_offset / tau + steering_energy_integral(&cfg.sigma, cfg.t0, &cfg.horizon)?;
    let grid = TimeGrid::refined(
        cfg.t0,
        cfg.horizon.end(),
        cfg.dt_coarse,
        cfg.dt_min,
        cfg.refine_ratio,
        &[],
    )?;
    let times = grid.times();
    let t_end = cfg.horizon.end();
    let vol: Vec<f64> = times
        .windows(2)
        .map(|w| cfg.sigma.eval(w[0], &cfg.horizon) * (w[1] - w[0]).sqrt())
        .collect();
    let energies: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(path_seed(cfg.base_seed, i as u64));
            let (mut w, mut x) = (0.0f64, cfg.x0_offset);
            let mut energy = 0.0;
            let last = times.len() - 1;
            for k in 0..last - 1 {
                let dt = times[k + 1] - times[k];
                let v = (w - x) / (t_end - times[k]);
                energy += v * v * dt;
                x += v * dt;
                let z: f64 = rng.sample(StandardNormal);
                w += vol[k] * z;
            }
            energy
        })
        .collect();
    let n = energies.len();
    let mean = pairwise_sum(&energies) / n as f64;
    let std_error = if n > 1 {
        let sq: Vec<f64> = energies.iter().map(|e| (e - mean) * (e - mean)).collect();
        (pairwise_sum(&sq) / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Ok(SteeringCheck {
        lhs_mc: mean,
        std_error,
        rhs_analytic: rhs,
        z_score: (std_error > 0.0).then(|| (mean - rhs) / std_error),
        n_paths: n,
    })
}
