//! Explicit admissible controls: geodesic transport, replanning after target
//! jumps, and transport followed by Brownian-bridge steering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{norm, Coords, GridMeasure, TorusGrid};
use crate::targets::TargetPath;
use crate::transport::{exact_ot, PlanAtom, SpeedDistribution, TransportPlan};
use crate::value_det::{u_det, Horizon, PowerCost};

/// Which control to play against a target path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlPolicy {
    /// One geodesic toward the initial target over the whole horizon.
    DeterministicGeodesic,
    /// Follow the geodesic toward the currently observed target and restart
    /// it after every jump.
    Replanning,
    /// Transport onto the translated target, then steer the translation.
    TransportThenSteer { theta: f64 },
    /// Zero velocity everywhere.
    Idle,
}

impl ControlPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ControlPolicy::DeterministicGeodesic => "deterministic-geodesic",
            ControlPolicy::Replanning => "replanning",
            ControlPolicy::TransportThenSteer { .. } => "transport-then-steer",
            ControlPolicy::Idle => "idle",
        }
    }
}

/// A discretized state path with the velocities applied on each step.
///
/// `velocities[i]` acts on `states[i]` during `[times[i], times[i + 1]]`.
/// An empty speed distribution on a step marks an uncontrolled terminal jump.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlledTrajectory {
    cost: PowerCost,
    times: Vec<f64>,
    states: Vec<GridMeasure>,
    velocities: Vec<SpeedDistribution>,
    step_costs: Vec<f64>,
    segment_costs: Vec<f64>,
    running_cost: f64,
    terminal_gap: f64,
}

impl ControlledTrajectory {
    pub fn cost_model(&self) -> PowerCost {
        self.cost
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[GridMeasure] {
        &self.states
    }

    pub fn velocities(&self) -> &[SpeedDistribution] {
        &self.velocities
    }

    pub fn step_costs(&self) -> &[f64] {
        &self.step_costs
    }

    pub fn segment_costs(&self) -> &[f64] {
        &self.segment_costs
    }

    pub fn running_cost(&self) -> f64 {
        self.running_cost
    }

    /// Distance the state had to jump at the end to meet the target exactly
    /// (zero when the control lands on it by itself).
    pub fn terminal_gap(&self) -> f64 {
        self.terminal_gap
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("trajectory has a node")
    }

    pub fn initial_state(&self) -> &GridMeasure {
        &self.states[0]
    }

    pub fn terminal_state(&self) -> &GridMeasure {
        self.states.last().expect("trajectory has a node")
    }

    /// `Σ_i Δt_i Σ_x m_i(x) Σ_z ψ_i(x, z) L(z)` from the stored states and velocities.
    pub fn recomputed_cost(&self) -> f64 {
        let mut total = 0.0;
        for (i, psi) in self.velocities.iter().enumerate() {
            let dt = self.times[i + 1] - self.times[i];
            total += dt * psi.integrate(&self.states[i], |v| self.cost.eval(norm(v)));
        }
        total
    }

    /// Appends `next`, which must start where `self` ends.
    pub fn concat(mut self, next: ControlledTrajectory) -> Result<Self> {
        self.terminal_state().ensure_same_grid(next.initial_state())?;
        if next.start() != self.end() {
            return Err(Error::param(
                "trajectory",
                format!("next segment starts at {} but this one ends at {}", next.start(), self.end()),
            ));
        }
        if self.terminal_state().max_abs_diff(next.initial_state()) > 1e-12 {
            return Err(Error::param("trajectory", "segments do not share the junction state"));
        }
        if self.cost != next.cost {
            return Err(Error::param("trajectory", "segments use different running costs"));
        }
        self.times.extend_from_slice(&next.times[1..]);
        self.states.extend(next.states.into_iter().skip(1));
        self.velocities.extend(next.velocities);
        self.step_costs.extend(next.step_costs);
        self.segment_costs.extend(next.segment_costs);
        self.running_cost += next.running_cost;
        self.terminal_gap = next.terminal_gap;
        Ok(self)
    }
}

fn atom_site(grid: &TorusGrid, atom: &PlanAtom, fraction: f64) -> usize {
    if fraction == 0.0 {
        atom.from
    } else if fraction == 1.0 {
        atom.to
    } else {
        let x = grid.coords(atom.from);
        let d = atom.displacement;
        grid.snap(&[x[0] + fraction * d[0], x[1] + fraction * d[1]])
    }
}

/// Moves every plan atom at the constant velocity that would bring it to its
/// target at `t_aim`, sampling the snapped state at each of `times`. The last
/// node may come before `t_aim`, in which case the state is cut short there.
fn follow_plan(
    plan: &TransportPlan,
    times: &[f64],
    t_aim: f64,
    cost: &PowerCost,
) -> Result<ControlledTrajectory> {
    let start = times[0];
    let stop = *times.last().expect("nonempty");
    let duration = t_aim - start;
    if times.len() < 2 || !(duration > 0.0) || stop > t_aim || !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::param("times", "need at least one increasing step ending by the aim time"));
    }
    let grid = plan.source().grid();
    let atoms = plan.atoms();
    let speed_cost: f64 = atoms
        .iter()
        .map(|a| a.mass * cost.eval(norm(&a.displacement) / duration))
        .sum();

    let state_at = |t: f64| -> Result<GridMeasure> {
        if t == start {
            return Ok(plan.source().clone());
        }
        if t == t_aim {
            return Ok(plan.target().clone());
        }
        let fraction = (t - start) / duration;
        let mut weights = vec![0.0; grid.sites()];
        for a in &atoms {
            weights[atom_site(&grid, a, fraction)] += a.mass;
        }
        GridMeasure::new(grid, weights)
    };

    let mut states = Vec::with_capacity(times.len());
    let mut velocities = Vec::with_capacity(times.len() - 1);
    let mut step_costs = Vec::with_capacity(times.len() - 1);
    let mut running_cost = 0.0;
    for (i, &t) in times.iter().enumerate() {
        states.push(state_at(t)?);
        if i + 1 == times.len() {
            break;
        }
        let fraction = (t - start) / duration;
        let mut per_site = vec![Vec::new(); grid.sites()];
        for a in &atoms {
            let v = [a.displacement[0] / duration, a.displacement[1] / duration];
            per_site[atom_site(&grid, a, fraction)].push((v, a.mass));
        }
        velocities.push(SpeedDistribution::from_masses(&grid, per_site)?);
        let c = (times[i + 1] - t) * speed_cost;
        step_costs.push(c);
        running_cost += c;
    }
    Ok(ControlledTrajectory {
        cost: *cost,
        times: times.to_vec(),
        states,
        velocities,
        step_costs,
        segment_costs: vec![running_cost],
        running_cost,
        terminal_gap: 0.0,
    })
}

fn uniform_nodes(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..steps)
        .map(|i| t0 + (t1 - t0) * i as f64 / steps as f64)
        .collect();
    out.push(t1);
    out
}

/// Displacement interpolation of the exact `k`-plan from `mu` to `nu`,
/// traversed at uniform speed over `[t0, t1]` in `steps` equal steps.
pub fn geodesic_rollout(
    mu: &GridMeasure,
    nu: &GridMeasure,
    t0: f64,
    t1: f64,
    steps: usize,
    cost: &PowerCost,
) -> Result<ControlledTrajectory> {
    if !(t0 < t1) {
        return Err(Error::param("t1", format!("must exceed t0 = {t0}, got {t1}")));
    }
    if steps == 0 {
        return Err(Error::param("steps", "must be >= 1"));
    }
    let plan = exact_ot(mu, nu, cost.exponent())?;
    follow_plan(&plan, &uniform_nodes(t0, t1, steps), t1, cost)
}

/// Plays the geodesic aimed at the horizon toward the currently observed
/// target, and restarts it from the reached state after every jump. After
/// the last jump the geodesic runs to completion, so the terminal state is
/// the path's final target.
pub fn replanning_rollout(
    mu: &GridMeasure,
    path: &TargetPath,
    t0: f64,
    horizon: &Horizon,
    cost: &PowerCost,
    steps_per_segment: usize,
) -> Result<ControlledTrajectory> {
    if path.diffusion().is_some() {
        return Err(Error::IncompatiblePolicy {
            policy: ControlPolicy::Replanning.name(),
            target: "diffusion-translate",
        });
    }
    if steps_per_segment == 0 {
        return Err(Error::param("steps_per_segment", "must be >= 1"));
    }
    let t_end = horizon.end();
    horizon.remaining(t0)?;
    let jumps: Vec<f64> = path
        .event_times()
        .iter()
        .copied()
        .filter(|s| *s > t0 && *s < t_end)
        .collect();

    let mut state = mu.clone();
    let mut t = t0;
    let mut out: Option<ControlledTrajectory> = None;
    for &s in &jumps {
        let target = path.measure_at(t);
        let plan = exact_ot(&state, &target, cost.exponent())?;
        let seg = follow_plan(&plan, &uniform_nodes(t, s, steps_per_segment), t_end, cost)?;
        state = seg.terminal_state().clone();
        out = Some(match out {
            None => seg,
            Some(prev) => prev.concat(seg)?,
        });
        t = s;
    }
    let plan = exact_ot(&state, &path.terminal(), cost.exponent())?;
    let last = follow_plan(&plan, &uniform_nodes(t, t_end, steps_per_segment), t_end, cost)?;
    match out {
        None => Ok(last),
        Some(prev) => prev.concat(last),
    }
}

/// Duration of the transport phase, `δ = τ - τ^θ` with `τ = T - t0`.
pub fn transport_phase_length(t0: f64, horizon: &Horizon, theta: f64) -> Result<f64> {
    let tau = horizon.remaining(t0)?;
    if !(theta > 1.0) || !theta.is_finite() {
        return Err(Error::param("theta", format!("must be > 1, got {theta}")));
    }
    let delta = tau - tau.powf(theta);
    if !(delta > 0.0 && delta < tau) {
        return Err(Error::param(
            "theta",
            format!("transport phase δ = {delta} must lie in (0, {tau})"),
        ));
    }
    Ok(delta)
}

/// Phase 1: geodesic from `mu` onto the target translated by its offset at
/// `t0`, ending at the first path node at or after `t0 + δ`. Phase 2: the
/// whole state moves with the common velocity `(W_t - X_t) / (T - t)`,
/// starting from `X = W_{t0}`, integrated by explicit Euler on the path
/// nodes up to the last node before `T`. The final interval is an
/// uncontrolled jump onto the exact terminal target; its size is reported
/// as the terminal gap.
pub fn steer_rollout(
    mu: &GridMeasure,
    diffusion_path: &TargetPath,
    t0: f64,
    horizon: &Horizon,
    cost: &PowerCost,
    theta: f64,
) -> Result<ControlledTrajectory> {
    if !cost.is_quadratic() {
        return Err(Error::param("cost", "steering needs the quadratic cost"));
    }
    let trace = diffusion_path.diffusion().ok_or(Error::IncompatiblePolicy {
        policy: "transport-then-steer",
        target: "jump",
    })?;
    let delta = transport_phase_length(t0, horizon, theta)?;
    let times = &trace.times;
    if times[0] != t0 || *times.last().expect("nonempty") != horizon.end() {
        return Err(Error::param("diffusion_path", "path must span [t0, T]"));
    }
    let switch = times.partition_point(|s| *s < t0 + delta - 1e-12);
    if switch + 1 >= times.len() {
        return Err(Error::param(
            "diffusion_path",
            "no room for a steering phase on this time grid",
        ));
    }
    let base = diffusion_path.base();
    let grid = mu.grid();
    let anchor = trace.offsets[0];
    let landing = base.translate_snapped(&anchor);
    let plan = exact_ot(mu, &landing, 2.0)?;
    let t_switch = times[switch];
    let phase_one = follow_plan(&plan, &times[..=switch], t_switch, cost)?;

    let last = times.len() - 1;
    let mut x = anchor;
    let mut states = vec![landing.clone()];
    let mut velocities = Vec::new();
    let mut step_costs = Vec::new();
    let mut running_cost = 0.0;
    for i in switch..last {
        let dt = times[i + 1] - times[i];
        if i + 1 == last {
            velocities.push(SpeedDistribution::empty(&grid));
            step_costs.push(0.0);
            states.push(diffusion_path.terminal());
            break;
        }
        let w = trace.offsets[i];
        let remaining = horizon.end() - times[i];
        let v: Coords = [(w[0] - x[0]) / remaining, (w[1] - x[1]) / remaining];
        let per_site = states[states.len() - 1]
            .support()
            .map(|site| (site, v))
            .fold(vec![Vec::new(); grid.sites()], |mut acc, (site, v)| {
                acc[site].push((v, 1.0));
                acc
            });
        velocities.push(SpeedDistribution::from_masses(&grid, per_site)?);
        let c = dt * cost.eval(norm(&v));
        step_costs.push(c);
        running_cost += c;
        x = [x[0] + v[0] * dt, x[1] + v[1] * dt];
        states.push(base.translate_snapped(&x));
    }
    let w_end = trace.offsets[last];
    let phase_two = ControlledTrajectory {
        cost: *cost,
        times: times[switch..].to_vec(),
        states,
        velocities,
        step_costs,
        segment_costs: vec![running_cost],
        running_cost,
        terminal_gap: norm(&[w_end[0] - x[0], w_end[1] - x[1]]),
    };
    phase_one.concat(phase_two)
}

/// Jensen projection: the deterministic value from the shared initial state
/// to the averaged terminal state. The averaged flux of the family is an
/// admissible deterministic control, so this never exceeds the family's
/// mean cost.
pub fn lower_bound_projection(trajectories: &[ControlledTrajectory], cost: &PowerCost) -> Result<f64> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::param("trajectories", "need at least one trajectory"))?;
    let grid = first.initial_state().grid();
    let mut mean = vec![0.0; grid.sites()];
    for tr in trajectories {
        first.initial_state().ensure_same_grid(tr.initial_state())?;
        if tr.start() != first.start() || tr.end() != first.end() {
            return Err(Error::param("trajectories", "time spans differ"));
        }
        if tr.initial_state().max_abs_diff(first.initial_state()) > 1e-12 {
            return Err(Error::param("trajectories", "initial states differ"));
        }
        for (acc, w) in mean.iter_mut().zip(tr.terminal_state().weights()) {
            *acc += w;
        }
    }
    let averaged = GridMeasure::from_unnormalized(grid, mean)?;
    let horizon = Horizon::new(first.end())?;
    u_det(first.start(), first.initial_state(), &averaged, cost, &horizon)
}
