//! Executes a parsed configuration and writes its output file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sotlab::analysis::{candidate_from_optimal_plan, check_superdiff_inequality};
use sotlab::rng::{path_seed, rng_from_seed};
use sotlab::simulate::{blowup_probe, fit_power_law, steering_identity_check, value_gap_curve, PrecisionTarget};
use sotlab::value_det::{du_det_dt, hjb_residual_quadratic, omega_envelope, u_det};
use sotlab::{estimate_value, exact_ot, sinkhorn, Coupling, GridMeasure, Horizon, SinkhornOptions, TorusGrid};

use crate::config::{Experiment, RunConfig, Solver};
use crate::error::CliError;

/// Command-line overrides.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub output: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub output: PathBuf,
    pub summary: String,
}

enum Rendered {
    Csv { header: &'static str, rows: Vec<String> },
    Json(serde_json::Value),
}

/// One row per experiment: name, description, required fields.
pub const EXPERIMENTS: [(&str, &str, &str); 8] = [
    ("wasserstein", "transport cost and plan between two measures", "grid, mu, nu [k, solver, epsilon, include_plan]"),
    ("det-value", "closed-form deterministic value and its time derivative", "grid, mu, nu, t, horizon [cost]"),
    ("simulate", "Monte Carlo value of a policy against a target process", "grid, mu, target, policy, t0, horizon, n_paths [cost, dt_coarse, dt_min, refine_ratio, steps_per_segment, keep_per_path]"),
    ("gap-curve", "policy estimate minus deterministic value over start times", "grid, mu, target, policy, horizon, n_paths, t_list [precision, cost, dt_coarse, dt_min, refine_ratio]"),
    ("blowup-probe", "terminal lower bound for a jumping target over shrinking cutoffs", "grid, nu, jump, intensity, horizon, t_list [mu, cutoffs, nodes_per_unit]"),
    ("steering-check", "Monte Carlo check of the bridge-steering energy identity", "sigma, t0, horizon, n_paths [x0_offset, dt_coarse, dt_min, refine_ratio]"),
    ("hjb-residual", "residual of the quadratic HJB equation along the exact plan", "grid, mu, nu, horizon, times"),
    ("superdiff-test", "randomized super-differential inequality suite", "grid [instances]"),
];

/// The experiment table printed by `list` and `--help`.
pub fn list_experiments() -> String {
    let width = EXPERIMENTS.iter().map(|e| e.0.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (name, description, fields) in EXPERIMENTS {
        let _ = writeln!(out, "{name:<width$}  {description}");
        let _ = writeln!(out, "{:<width$}  [experiment.{name}] {fields}", "");
    }
    out
}

fn default_output(cfg: &RunConfig) -> PathBuf {
    let ext = if cfg.experiment.writes_csv() { "csv" } else { "json" };
    PathBuf::from(format!("{}.{ext}", cfg.experiment.name()))
}

/// Loads, runs and writes one experiment.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    run_config(&RunConfig::load(path)?, opts)
}

pub fn run_config(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    let output = opts
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| default_output(cfg));
    let hash = cfg.hash()?;
    let (rendered, summary) = match opts.threads {
        Some(n) => {
            if n == 0 {
                return Err(CliError::invalid("threads", "must be >= 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| execute(&cfg.experiment, seed))?
        }
        None => execute(&cfg.experiment, seed)?,
    };
    let text = match rendered {
        Rendered::Csv { header, rows } => {
            let mut s = String::new();
            s.push_str(header);
            s.push('\n');
            for r in rows {
                s.push_str(&r);
                s.push('\n');
            }
            let _ = writeln!(s, "# config_hash={hash} seed={seed}");
            s
        }
        Rendered::Json(result) => {
            let doc = json!({
                "experiment": cfg.experiment.name(),
                "config_hash": hash,
                "seed": seed,
                "result": result,
            });
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            s
        }
    };
    std::fs::write(&output, text).map_err(|e| CliError::Write {
        path: output.clone(),
        source: e,
    })?;
    Ok(RunOutcome {
        summary: format!("{}: {summary} -> {}", cfg.experiment.name(), output.display()),
        output,
    })
}

fn to_json(v: impl Serialize) -> Result<serde_json::Value, CliError> {
    Ok(serde_json::to_value(v)?)
}

fn execute(exp: &Experiment, seed: u64) -> Result<(Rendered, String), CliError> {
    match exp {
        Experiment::Wasserstein(p) => {
            let grid = p.grid.build()?;
            let (mu, nu) = (p.mu.build(grid)?, p.nu.build(grid)?);
            let plan = match p.solver {
                Solver::Exact => exact_ot(&mu, &nu, p.k)?,
                Solver::Sinkhorn => {
                    let mut opts = SinkhornOptions::default();
                    if let Some(e) = p.epsilon {
                        opts.epsilon = e;
                    }
                    sinkhorn(&mu, &nu, p.k, opts)?
                }
            };
            let distance = plan.total_cost().powf(1.0 / p.k);
            let result = json!({
                "distance": distance,
                "transport_cost": plan.total_cost(),
                "k": p.k,
                "plan": to_json(plan.summary(p.include_plan))?,
            });
            Ok((Rendered::Json(result), format!("W_{} = {distance}", p.k)))
        }
        Experiment::DetValue(p) => {
            let grid = p.grid.build()?;
            let (mu, nu) = (p.mu.build(grid)?, p.nu.build(grid)?);
            let cost = p.cost.build()?;
            let h = Horizon::new(p.horizon)?;
            let value = u_det(p.t, &mu, &nu, &cost, &h)?;
            let result = json!({
                "u_det": value,
                "du_dt": du_det_dt(p.t, &mu, &nu, &cost, &h)?,
                "transport_cost": exact_ot(&mu, &nu, cost.exponent())?.total_cost(),
                "omega": omega_envelope(p.t, &grid, &cost, &h)?,
            });
            Ok((Rendered::Json(result), format!("u_det = {value}")))
        }
        Experiment::Simulate(p) => {
            let mut cfg = p.sim_config(p.t0, seed)?;
            cfg.keep_per_path = p.keep_per_path;
            let r = estimate_value(&cfg)?;
            let summary = format!(
                "mean {} ± {} over {} paths in {:.2}s",
                r.mean_cost, r.std_error, r.n_paths, r.diagnostics.runtime_seconds
            );
            Ok((Rendered::Json(to_json(&r)?), summary))
        }
        Experiment::GapCurve(p) => {
            let t_min = p.t_list.iter().copied().fold(f64::INFINITY, f64::min);
            if !t_min.is_finite() {
                return Err(CliError::invalid("t_list", "must not be empty"));
            }
            let cfg = p.sim_config(t_min, seed)?;
            let precision = p.precision.map(|q| PrecisionTarget {
                rel_std_error: q.rel_std_error,
                max_paths: q.max_paths,
            });
            let points = value_gap_curve(&cfg, &p.t_list, precision)?;
            let rows = points
                .iter()
                .map(|g| format!("{},{},{},{},{},{}", g.t, g.remaining, g.mean_cost, g.std_error, g.u_det, g.gap))
                .collect();
            let xs: Vec<f64> = points.iter().map(|g| g.remaining).collect();
            let ys: Vec<f64> = points.iter().map(|g| g.gap).collect();
            let summary = match fit_power_law(&xs, &ys) {
                Ok(f) => format!("{} points, fitted exponent {}", points.len(), f.exponent),
                Err(_) => format!("{} points", points.len()),
            };
            Ok((
                Rendered::Csv {
                    header: "t,T_minus_t,mc_mean,mc_stderr,u_det,gap",
                    rows,
                },
                summary,
            ))
        }
        Experiment::BlowupProbe(p) => {
            let points = blowup_probe(&p.build()?)?;
            let rows = points
                .iter()
                .map(|b| format!("{},{},{},{},{}", b.t, b.remaining, b.epsilon, b.p_one_jump, b.lower_bound))
                .collect();
            let last = points.last().map(|b| b.lower_bound).unwrap_or(0.0);
            Ok((
                Rendered::Csv {
                    header: "t,T_minus_t,epsilon,p_one_jump,lower_bound",
                    rows,
                },
                format!("{} rows, last lower bound {last}", points.len()),
            ))
        }
        Experiment::SteeringCheck(p) => {
            let r = steering_identity_check(&p.build(seed)?)?;
            let summary = match r.z_score {
                Some(z) => format!("lhs {} rhs {} z {z}", r.lhs_mc, r.rhs_analytic),
                None => format!("lhs {} rhs {}", r.lhs_mc, r.rhs_analytic),
            };
            Ok((Rendered::Json(to_json(r)?), summary))
        }
        Experiment::HjbResidual(p) => {
            let grid = p.grid.build()?;
            let (mu, nu) = (p.mu.build(grid)?, p.nu.build(grid)?);
            let h = Horizon::new(p.horizon)?;
            let rows = p
                .times
                .iter()
                .map(|&t| hjb_residual_quadratic(t, &mu, &nu, &h))
                .collect::<Result<Vec<_>, _>>()?;
            let worst = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
            Ok((Rendered::Json(to_json(&rows)?), format!("max |residual| {worst}")))
        }
        Experiment::SuperdiffTest(p) => {
            let s = superdiff_suite(p.grid.build()?, p.instances, seed)?;
            let summary = format!("{} checks, {} violations", s.checks, s.violations);
            Ok((Rendered::Json(to_json(&s)?), summary))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuperdiffSummary {
    pub instances: usize,
    /// Two couplings per instance: product and exact plan.
    pub checks: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` seen; negative when every check holds strictly.
    pub max_excess: f64,
}

/// Nonnegative weights with roughly a third of the sites empty.
pub fn random_measure(grid: TorusGrid, rng: &mut impl Rng) -> GridMeasure {
    let mut w: Vec<f64> = (0..grid.sites())
        .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() + 1e-3 })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        let i = rng.random_range(0..w.len());
        w[i] = 1.0;
    }
    GridMeasure::from_unnormalized(grid, w).expect("positive total mass")
}

/// Random `(µ, ν, µ')` triples, each checked with the product coupling and
/// with the exact plan between `µ` and `µ'`.
pub fn superdiff_suite(grid: TorusGrid, instances: usize, seed: u64) -> Result<SuperdiffSummary, CliError> {
    let excesses: Vec<Result<[f64; 2], sotlab::Error>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(path_seed(seed, i as u64));
            let mu = random_measure(grid, &mut rng);
            let nu = random_measure(grid, &mut rng);
            let mu_p = random_measure(grid, &mut rng);
            let cand = candidate_from_optimal_plan(&exact_ot(&mu, &nu, 2.0)?)?;
            let product = Coupling::product(&mu, &mu_p)?;
            let optimal = exact_ot(&mu, &mu_p, 2.0)?;
            let a = check_superdiff_inequality(&cand, &nu, &mu_p, &product)?;
            let b = check_superdiff_inequality(&cand, &nu, &mu_p, optimal.coupling())?;
            Ok([a.lhs - a.rhs, b.lhs - b.rhs])
        })
        .collect();
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for e in excesses {
        for x in e? {
            if x > sotlab::analysis::SUPERDIFF_SLACK {
                violations += 1;
            }
            max_excess = max_excess.max(x);
        }
    }
    Ok(SuperdiffSummary {
        instances,
        checks: 2 * instances,
        violations,
        max_excess,
    })
}
