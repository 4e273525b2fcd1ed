//! TOML experiment configuration and its conversion into library types.
//!
//! ```toml
//! seed = 7
//! output = "report.json"
//!
//! [experiment.simulate]
//! grid = { dim = 1, n = 4 }
//! mu = { dirac = 0 }
//! target = { constant = { nu = "uniform" } }
//! policy = "deterministic-geodesic"
//! t0 = 0.0
//! horizon = 1.0
//! n_paths = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sotlab::targets::{BernoulliTarget, DiffusionTarget, JumpTarget};
use sotlab::{ControlPolicy, GridMeasure, Horizon, JumpOperator, PowerCost, RateSpec, TargetProcess, TorusGrid};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Wasserstein(WassersteinParams),
    DetValue(DetValueParams),
    Simulate(SimulateParams),
    GapCurve(GapCurveParams),
    BlowupProbe(BlowupParams),
    SteeringCheck(SteeringParams),
    HjbResidual(HjbParams),
    SuperdiffTest(SuperdiffParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Wasserstein(_) => "wasserstein",
            Experiment::DetValue(_) => "det-value",
            Experiment::Simulate(_) => "simulate",
            Experiment::GapCurve(_) => "gap-curve",
            Experiment::BlowupProbe(_) => "blowup-probe",
            Experiment::SteeringCheck(_) => "steering-check",
            Experiment::HjbResidual(_) => "hjb-residual",
            Experiment::SuperdiffTest(_) => "superdiff-test",
        }
    }

    /// Whether the experiment writes a CSV table (otherwise JSON).
    pub fn writes_csv(&self) -> bool {
        matches!(self, Experiment::GapCurve(_) | Experiment::BlowupProbe(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<TorusGrid, CliError> {
        Ok(TorusGrid::new(self.dim, self.n)?)
    }
}

/// A measure preset or explicit weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureSpec {
    Dirac(usize),
    Uniform,
    /// Half the mass on each of two sites.
    TwoAtoms([usize; 2]),
    /// Nonnegative weights, normalized on load.
    Weights(Vec<f64>),
}

impl MeasureSpec {
    pub fn build(&self, grid: TorusGrid) -> Result<GridMeasure, CliError> {
        let m = match self {
            MeasureSpec::Dirac(site) => GridMeasure::dirac(grid, *site)?,
            MeasureSpec::Uniform => GridMeasure::uniform(grid),
            MeasureSpec::TwoAtoms([a, b]) => {
                let mut w = vec![0.0; grid.sites()];
                for s in [*a, *b] {
                    if s >= w.len() {
                        return Err(sotlab::Error::SiteOutOfRange { index: s, sites: w.len() }.into());
                    }
                    w[s] += 0.5;
                }
                GridMeasure::new(grid, w)?
            }
            MeasureSpec::Weights(w) => GridMeasure::from_unnormalized(grid, w.clone())?,
        };
        Ok(m)
    }
}

fn default_exponent() -> f64 {
    2.0
}

fn default_scale() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            exponent: default_exponent(),
            scale: default_scale(),
        }
    }
}

impl CostSpec {
    pub fn build(&self) -> Result<PowerCost, CliError> {
        Ok(PowerCost::new(self.exponent, self.scale)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    #[default]
    Exact,
    Sinkhorn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinParams {
    pub grid: GridSpec,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    #[serde(default = "default_exponent")]
    pub k: f64,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub include_plan: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetValueParams {
    pub grid: GridSpec,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub t: f64,
    pub horizon: f64,
    #[serde(default)]
    pub cost: CostSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSpec {
    Identity,
    Translate(Vec<f64>),
    Permute(Vec<usize>),
}

impl JumpSpec {
    pub fn build(&self) -> Result<JumpOperator, CliError> {
        Ok(match self {
            JumpSpec::Identity => JumpOperator::Identity,
            JumpSpec::Translate(v) => JumpOperator::Translate(sotlab::TorusDisplacement::new(v)?),
            JumpSpec::Permute(map) => JumpOperator::Permute(map.clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Constant {
        nu: MeasureSpec,
    },
    Bernoulli {
        nu_pre: MeasureSpec,
        nu1: MeasureSpec,
        nu2: MeasureSpec,
        p: f64,
    },
    PoissonJump {
        nu0: MeasureSpec,
        intensity: RateSpec,
        jump: JumpSpec,
        /// Defaults to the supremum of the intensity on `[t0, T]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_max: Option<f64>,
    },
    DiffusionTranslate {
        nu0: MeasureSpec,
        sigma: RateSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_offset: Option<Vec<f64>>,
    },
}

impl TargetSpec {
    /// `t0` is the earliest start time, used to bound the jump intensity.
    pub fn build(&self, grid: TorusGrid, t0: f64, horizon: &Horizon) -> Result<TargetProcess, CliError> {
        Ok(match self {
            TargetSpec::Constant { nu } => TargetProcess::Constant { nu: nu.build(grid)? },
            TargetSpec::Bernoulli { nu_pre, nu1, nu2, p } => TargetProcess::Bernoulli(BernoulliTarget {
                nu_pre: nu_pre.build(grid)?,
                nu1: nu1.build(grid)?,
                nu2: nu2.build(grid)?,
                p: *p,
            }),
            TargetSpec::PoissonJump {
                nu0,
                intensity,
                jump,
                lambda_max,
            } => {
                intensity.validate()?;
                let bound = match lambda_max {
                    Some(v) => *v,
                    None => {
                        let sup = intensity.sup_on(t0, horizon);
                        if !sup.is_finite() {
                            return Err(CliError::invalid(
                                "lambda_max",
                                "intensity is unbounded near T; give lambda_max explicitly",
                            ));
                        }
                        sup
                    }
                };
                TargetProcess::PoissonJump(JumpTarget {
                    nu0: nu0.build(grid)?,
                    intensity: *intensity,
                    jump: jump.build()?,
                    lambda_max: bound,
                })
            }
            TargetSpec::DiffusionTranslate {
                nu0,
                sigma,
                initial_offset,
            } => {
                let mut offset = [0.0; 2];
                if let Some(v) = initial_offset {
                    if v.len() != grid.dim() {
                        return Err(sotlab::Error::DimensionMismatch {
                            expected: grid.dim(),
                            got: v.len(),
                        }
                        .into());
                    }
                    offset[..v.len()].copy_from_slice(v);
                }
                TargetProcess::DiffusionTranslate(DiffusionTarget {
                    nu0: nu0.build(grid)?,
                    sigma: *sigma,
                    initial_offset: offset,
                })
            }
        })
    }
}

fn default_refine_ratio() -> f64 {
    0.5
}

fn default_steps() -> usize {
    1
}

/// Declares a parameter struct with the Monte Carlo settings shared by
/// `simulate` and `gap-curve`, followed by its own fields.
macro_rules! monte_carlo_params {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* pub $field:ident: $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fmeta])* pub $field: $ty,)*
            pub grid: GridSpec,
            pub mu: MeasureSpec,
            pub target: TargetSpec,
            pub policy: ControlPolicy,
            pub horizon: f64,
            #[serde(default)]
            pub cost: CostSpec,
            pub n_paths: usize,
            /// Defaults to `(T - t0) / 200`.
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub dt_coarse: Option<f64>,
            /// Defaults to `1e-6 T`.
            #[serde(default, skip_serializing_if = "Option::is_none")]
            pub dt_min: Option<f64>,
            #[serde(default = "default_refine_ratio")]
            pub refine_ratio: f64,
            #[serde(default = "default_steps")]
            pub steps_per_segment: usize,
        }

        impl $name {
            /// Simulation settings for a start time `t0`.
            pub fn sim_config(&self, t0: f64, seed: u64) -> Result<sotlab::SimConfig, CliError> {
                let grid = self.grid.build()?;
                let horizon = Horizon::new(self.horizon)?;
                let target = self.target.build(grid, t0, &horizon)?;
                let mut cfg = sotlab::SimConfig::new(self.mu.build(grid)?, target, self.policy, t0, horizon);
                cfg.cost = self.cost.build()?;
                cfg.n_paths = self.n_paths;
                cfg.base_seed = seed;
                if let Some(dt) = self.dt_coarse {
                    cfg.dt_coarse = dt;
                }
                cfg.dt_min = self.dt_min.unwrap_or(1e-6 * self.horizon).min(cfg.dt_coarse);
                cfg.refine_ratio = self.refine_ratio;
                cfg.steps_per_segment = self.steps_per_segment;
                Ok(cfg)
            }
        }
    };
}

monte_carlo_params!(SimulateParams {
    pub t0: f64,
    #[serde(default)]
    pub keep_per_path: bool,
});

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionSpec {
    pub rel_std_error: f64,
    pub max_paths: usize,
}

monte_carlo_params!(
    /// The intensity bound, when derived, is taken on `[min t_list, T]`.
    GapCurveParams {
        pub t_list: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub precision: Option<PrecisionSpec>,
    }
);

fn default_cutoffs() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5]
}

fn default_nodes_per_unit() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupParams {
    pub grid: GridSpec,
    pub nu: MeasureSpec,
    pub jump: JumpSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<MeasureSpec>,
    pub intensity: f64,
    pub horizon: f64,
    pub t_list: Vec<f64>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<f64>,
    #[serde(default = "default_nodes_per_unit")]
    pub nodes_per_unit: usize,
}

impl BlowupParams {
    pub fn build(&self) -> Result<sotlab::simulate::BlowupConfig, CliError> {
        let grid = self.grid.build()?;
        Ok(sotlab::simulate::BlowupConfig {
            intensity: self.intensity,
            nu: self.nu.build(grid)?,
            jump: self.jump.build()?,
            initial: self.mu.as_ref().map(|m| m.build(grid)).transpose()?,
            horizon: Horizon::new(self.horizon)?,
            t_list: self.t_list.clone(),
            cutoffs: self.cutoffs.clone(),
            nodes_per_unit: self.nodes_per_unit,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringParams {
    pub sigma: RateSpec,
    pub t0: f64,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub x0_offset: f64,
    /// Defaults to `(T - t0) / 2000`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_coarse: Option<f64>,
    /// Defaults to `1e-6 T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    #[serde(default = "default_refine_ratio")]
    pub refine_ratio: f64,
}

impl SteeringParams {
    pub fn build(&self, seed: u64) -> Result<sotlab::simulate::SteeringCheckConfig, CliError> {
        let horizon = Horizon::new(self.horizon)?;
        let mut cfg =
            sotlab::simulate::SteeringCheckConfig::new(self.sigma, self.t0, horizon, self.n_paths, self.x0_offset);
        cfg.base_seed = seed;
        if let Some(dt) = self.dt_coarse {
            cfg.dt_coarse = dt;
        }
        if let Some(dt) = self.dt_min {
            cfg.dt_min = dt;
        }
        cfg.refine_ratio = self.refine_ratio;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbParams {
    pub grid: GridSpec,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub horizon: f64,
    pub times: Vec<f64>,
}

fn default_instances() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperdiffParams {
    pub grid: GridSpec,
    #[serde(default = "default_instances")]
    pub instances: usize,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization without the seed, which is
    /// reported separately.
    pub fn hash(&self) -> Result<String, CliError> {
        let mut canonical = self.clone();
        canonical.seed = None;
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
