//! Stochastic target processes and their sample paths.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Coords, GridMeasure, TorusDisplacement};
use crate::quad;
use crate::rng::{rng_from_seed, PathRng};
use crate::timegrid::TimeGrid;
use crate::value_det::Horizon;

/// A nonnegative function of time given either as a constant or as
/// `K (T - t)^gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSpec {
    Constant(f64),
    Power {
        #[serde(rename = "K")]
        k: f64,
        gamma: f64,
    },
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RateSpec::Constant(v) if v >= 0.0 && v.is_finite() => Ok(()),
            RateSpec::Power { k, gamma } if k >= 0.0 && k.is_finite() && gamma.is_finite() => Ok(()),
            _ => Err(Error::param("rate", format!("{self:?} is not a nonnegative rate"))),
        }
    }

    pub fn eval(&self, t: f64, horizon: &Horizon) -> f64 {
        match *self {
            RateSpec::Constant(v) => v,
            RateSpec::Power { k, gamma } => {
                if k == 0.0 {
                    0.0
                } else {
                    k * (horizon.end() - t).powf(gamma)
                }
            }
        }
    }

    /// Supremum on `[t0, T]`; infinite when the rate blows up at `T`.
    pub fn sup_on(&self, t0: f64, horizon: &Horizon) -> f64 {
        match *self {
            RateSpec::Constant(v) => v,
            RateSpec::Power { k: 0.0, .. } => 0.0,
            RateSpec::Power { k, gamma } if gamma >= 0.0 => k * (horizon.end() - t0).powf(gamma),
            RateSpec::Power { .. } => f64::INFINITY,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, RateSpec::Constant(v) if v == 0.0) || matches!(*self, RateSpec::Power { k, .. } if k == 0.0)
    }

    /// `∫_{t0}^{T} rate(s) ds` by adaptive quadrature.
    pub fn integral(&self, t0: f64, horizon: &Horizon) -> f64 {
        match *self {
            RateSpec::Constant(v) => v * (horizon.end() - t0),
            _ if self.is_zero() => 0.0,
            _ => quad::integrate(|s| self.eval(s, horizon), t0, horizon.end(), 1e-10),
        }
    }
}

/// How the target measure changes at a jump.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpOperator {
    Identity,
    /// Grid-aligned translation.
    Translate(TorusDisplacement),
    /// Pushforward by a site map.
    Permute(Vec<usize>),
}

impl JumpOperator {
    pub fn apply(&self, m: &GridMeasure) -> Result<GridMeasure> {
        match self {
            JumpOperator::Identity => Ok(m.clone()),
            JumpOperator::Translate(shift) => m.pushforward_translate(shift),
            JumpOperator::Permute(map) => m.pushforward_sites(map),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliTarget {
    /// Value before the switch at `T/2`.
    pub nu_pre: GridMeasure,
    pub nu1: GridMeasure,
    pub nu2: GridMeasure,
    /// Probability of revealing `nu1`.
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpTarget {
    pub nu0: GridMeasure,
    pub intensity: RateSpec,
    pub jump: JumpOperator,
    /// Dominating rate for thinning.
    pub lambda_max: f64,
}

impl JumpTarget {
    /// `Λ = ∫_{t0}^T λ`.
    pub fn expected_jump_count(&self, t0: f64, horizon: &Horizon) -> f64 {
        self.intensity.integral(t0, horizon)
    }

    pub fn jump_count_law(&self, t0: f64, horizon: &Horizon, k_max: usize) -> JumpCountLaw {
        JumpCountLaw::poisson(self.expected_jump_count(t0, horizon), k_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTarget {
    pub nu0: GridMeasure,
    pub sigma: RateSpec,
    /// `W` at the start of the path.
    pub initial_offset: Coords,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetProcess {
    Constant { nu: GridMeasure },
    Bernoulli(BernoulliTarget),
    PoissonJump(JumpTarget),
    DiffusionTranslate(DiffusionTarget),
}

impl TargetProcess {
    pub fn name(&self) -> &'static str {
        match self {
            TargetProcess::Constant { .. } => "constant",
            TargetProcess::Bernoulli(_) => "bernoulli",
            TargetProcess::PoissonJump(_) => "poisson-jump",
            TargetProcess::DiffusionTranslate(_) => "diffusion-translate",
        }
    }

    /// Observed target at the start time.
    pub fn initial_measure(&self) -> GridMeasure {
        match self {
            TargetProcess::Constant { nu } => nu.clone(),
            TargetProcess::Bernoulli(b) => b.nu_pre.clone(),
            TargetProcess::PoissonJump(j) => j.nu0.clone(),
            TargetProcess::DiffusionTranslate(d) => d.nu0.translate_snapped(&d.initial_offset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetProcess::Constant { .. } => Ok(()),
            TargetProcess::Bernoulli(b) => {
                b.nu_pre.ensure_same_grid(&b.nu1)?;
                b.nu_pre.ensure_same_grid(&b.nu2)?;
                if !(0.0..=1.0).contains(&b.p) {
                    return Err(Error::param("p", format!("must lie in [0, 1], got {}", b.p)));
                }
                Ok(())
            }
            TargetProcess::PoissonJump(j) => {
                j.intensity.validate()?;
                if !(j.lambda_max >= 0.0) || !j.lambda_max.is_finite() {
                    return Err(Error::param("lambda_max", "must be finite and >= 0"));
                }
                j.jump.apply(&j.nu0).map(|_| ())
            }
            TargetProcess::DiffusionTranslate(d) => d.sigma.validate(),
        }
    }
}

/// Poisson probabilities `P(n = k)` for `k ≤ k_max` plus the remaining tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpCountLaw {
    pub mean: f64,
    pub probabilities: Vec<f64>,
    pub tail: f64,
}

impl JumpCountLaw {
    pub fn poisson(mean: f64, k_max: usize) -> Self {
        let mut probabilities = Vec::with_capacity(k_max + 1);
        let mut p = (-mean).exp();
        for k in 0..=k_max {
            if k > 0 {
                p *= mean / k as f64;
            }
            probabilities.push(p);
        }
        let tail = (1.0 - probabilities.iter().sum::<f64>()).max(0.0);
        Self {
            mean,
            probabilities,
            tail,
        }
    }
}

/// Brownian translation offsets on a time grid. Offsets are lifted to
/// `R^d` (not reduced mod 1).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrace {
    pub times: Vec<f64>,
    pub offsets: Vec<Coords>,
    pub increments: Vec<Coords>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetPath {
    t0: f64,
    horizon: Horizon,
    event_times: Vec<f64>,
    /// `measures[0]` holds on `[t0, event_times[0])`, `measures[i]` from `event_times[i-1]` on.
    measures: Vec<GridMeasure>,
    diffusion: Option<DiffusionTrace>,
    base: GridMeasure,
}

impl TargetPath {
    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn measures(&self) -> &[GridMeasure] {
        &self.measures
    }

    pub fn jump_count(&self) -> usize {
        self.event_times.len()
    }

    /// The untranslated measure for diffusion paths, the initial target otherwise.
    pub fn base(&self) -> &GridMeasure {
        &self.base
    }

    pub fn diffusion(&self) -> Option<&DiffusionTrace> {
        self.diffusion.as_ref()
    }

    /// Right-continuous value of the target at time `t`.
    pub fn measure_at(&self, t: f64) -> GridMeasure {
        if let Some(d) = &self.diffusion {
            let idx = d.times.partition_point(|s| *s <= t).saturating_sub(1);
            return self.base.translate_snapped(&d.offsets[idx]);
        }
        let idx = self.event_times.partition_point(|s| *s <= t);
        self.measures[idx].clone()
    }

    pub fn terminal(&self) -> GridMeasure {
        self.measure_at(self.horizon.end())
    }
}

/// Samples a path on a uniform `dt` grid from a 64-bit seed.
pub fn sample_path(
    tp: &TargetProcess,
    t0: f64,
    horizon: &Horizon,
    dt: f64,
    rng_seed: u64,
) -> Result<TargetPath> {
    horizon.remaining(t0)?;
    let grid = TimeGrid::uniform(t0, horizon.end(), dt)?;
    sample_path_with(tp, horizon, &grid, &mut rng_from_seed(rng_seed))
}

/// Samples a path whose diffusion part, if any, lives on `grid`. Jump times
/// are exact and do not depend on the grid.
pub fn sample_path_with(
    tp: &TargetProcess,
    horizon: &Horizon,
    grid: &TimeGrid,
    rng: &mut PathRng,
) -> Result<TargetPath> {
    let t0 = grid.start();
    let t_end = horizon.end();
    horizon.remaining(t0)?;
    tp.validate()?;
    let mut event_times = Vec::new();
    let mut diffusion = None;
    let measures = match tp {
        TargetProcess::Constant { nu } => vec![nu.clone()],
        TargetProcess::Bernoulli(b) => {
            let switch = 0.5 * t_end;
            if !(t0 < switch) {
                return Err(Error::param(
                    "t0",
                    format!("Bernoulli target needs t0 < T/2 = {switch}, got {t0}"),
                ));
            }
            let u: f64 = rng.random();
            event_times.push(switch);
            let chosen = if u < b.p { &b.nu1 } else { &b.nu2 };
            vec![b.nu_pre.clone(), chosen.clone()]
        }
        TargetProcess::PoissonJump(j) => {
            let mut out = vec![j.nu0.clone()];
            if j.lambda_max > 0.0 {
                let mut t = t0;
                loop {
                    let e: f64 = rng.sample(Exp1);
                    t += e / j.lambda_max;
                    if t >= t_end {
                        break;
                    }
                    let rate = j.intensity.eval(t, horizon);
                    if rate > j.lambda_max * (1.0 + 1e-12) {
                        return Err(Error::IntensityBound {
                            t,
                            value: rate,
                            lambda_max: j.lambda_max,
                        });
                    }
                    let u: f64 = rng.random();
                    if u * j.lambda_max < rate {
                        event_times.push(t);
                        let next = j.jump.apply(out.last().expect("nonempty"))?;
                        out.push(next);
                    }
                }
            } else if !j.intensity.is_zero() {
                return Err(Error::IntensityBound {
                    t: t0,
                    value: j.intensity.eval(t0, horizon),
                    lambda_max: 0.0,
                });
            }
            out
        }
        TargetProcess::DiffusionTranslate(d) => {
            let dim = d.nu0.grid().dim();
            let times = grid.times().to_vec();
            let mut offsets = Vec::with_capacity(times.len());
            let mut increments = Vec::with_capacity(times.len() - 1);
            let mut w = d.initial_offset;
            offsets.push(w);
            for pair in times.windows(2) {
                let dt = pair[1] - pair[0];
                let scale = d.sigma.eval(pair[0], horizon) * dt.sqrt();
                let mut inc = [0.0; 2];
                for c in inc.iter_mut().take(dim) {
                    let z: f64 = rng.sample(StandardNormal);
                    *c = scale * z;
                }
                w = [w[0] + inc[0], w[1] + inc[1]];
                increments.push(inc);
                offsets.push(w);
            }
            diffusion = Some(DiffusionTrace {
                times,
                offsets,
                increments,
            });
            vec![d.nu0.translate_snapped(&d.initial_offset)]
        }
    };
    let base = match tp {
        TargetProcess::DiffusionTranslate(d) => d.nu0.clone(),
        _ => measures[0].clone(),
    };
    Ok(TargetPath {
        t0,
        horizon: *horizon,
        event_times,
        measures,
        diffusion,
        base,
    })
}
