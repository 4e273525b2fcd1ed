//! End-to-end scenarios combining targets, controls and Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sotlab::controllers::{lower_bound_projection, steer_rollout, transport_phase_length};
use sotlab::measure::TorusDisplacement;
use sotlab::rng::rng_from_seed;
use sotlab::simulate::{steering_identity_check, SteeringCheckConfig};
use sotlab::targets::{sample_path_with, BernoulliTarget, DiffusionTarget, JumpTarget};
use sotlab::timegrid::TimeGrid;
use sotlab::value_det::{hjb_residual_quadratic, u_det};
use sotlab::{
    estimate_value, wasserstein, ControlPolicy, GridMeasure, Horizon, JumpOperator, PowerCost, RateSpec,
    SimConfig, TargetProcess, TorusGrid,
};

fn random_measure(g: TorusGrid, rng: &mut ChaCha8Rng) -> GridMeasure {
    let w: Vec<f64> = (0..g.sites()).map(|_| rng.random::<f64>() + 0.01).collect();
    GridMeasure::from_unnormalized(g, w).unwrap()
}

fn uniform_on_random_subset(g: TorusGrid, m: usize, rng: &mut ChaCha8Rng) -> GridMeasure {
    let mut sites: Vec<usize> = (0..g.sites()).collect();
    for i in (1..sites.len()).rev() {
        sites.swap(i, rng.random_range(0..=i));
    }
    let mut w = vec![0.0; g.sites()];
    for &s in &sites[..m] {
        w[s] = 1.0;
    }
    GridMeasure::from_unnormalized(g, w).unwrap()
}

#[test]
fn bernoulli_value_is_the_mixture_of_revealed_values() {
    let g = TorusGrid::new(1, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mu = random_measure(g, &mut rng);
    let nu1 = GridMeasure::dirac(g, 2).unwrap();
    let nu2 = GridMeasure::dirac(g, 5).unwrap();
    let h = Horizon::new(1.0).unwrap();
    let tp = TargetProcess::Bernoulli(BernoulliTarget {
        nu_pre: mu.clone(),
        nu1: nu1.clone(),
        nu2: nu2.clone(),
        p: 0.3,
    });
    let mut cfg = SimConfig::new(mu.clone(), tp, ControlPolicy::Replanning, 0.5 - 1e-9, h);
    cfg.n_paths = 4000;
    let r = estimate_value(&cfg).unwrap();
    let q = PowerCost::quadratic();
    let expect = 0.3 * u_det(0.5, &mu, &nu1, &q, &h).unwrap() + 0.7 * u_det(0.5, &mu, &nu2, &q, &h).unwrap();
    assert!((r.mean_cost - expect).abs() <= 3.0 * r.std_error, "{} vs {expect} ± {}", r.mean_cost, r.std_error);
}

#[test]
fn constant_targets_are_never_beaten() {
    let g = TorusGrid::new(2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = Horizon::new(2.0).unwrap();
    for _ in 0..5 {
        let mu = random_measure(g, &mut rng);
        let nu = random_measure(g, &mut rng);
        let mut cfg = SimConfig::new(mu.clone(), TargetProcess::Constant { nu: nu.clone() }, ControlPolicy::Replanning, 0.5, h);
        cfg.n_paths = 4;
        let r = estimate_value(&cfg).unwrap();
        let u = u_det(0.5, &mu, &nu, &cfg.cost, &h).unwrap();
        assert!(r.mean_cost + 3.0 * r.std_error >= u * (1.0 - 1e-12));
        assert!((r.mean_cost - u).abs() <= 1e-6 * u);
    }
}

#[test]
fn hjb_residual_vanishes_on_equal_weight_pairs() {
    let g = TorusGrid::new(2, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = Horizon::new(1.0).unwrap();
    let mut monge = 0;
    for _ in 0..20 {
        // equal-weight supports of equal size admit a permutation optimum
        let m = rng.random_range(1..=g.sites());
        let mu = uniform_on_random_subset(g, m, &mut rng);
        let nu = uniform_on_random_subset(g, m, &mut rng);
        for t in [0.0, 0.5, 0.9] {
            let r = hjb_residual_quadratic(t, &mu, &nu, &h).unwrap();
            if r.monge {
                monge += 1;
                assert!(r.residual.abs() <= 1e-7 * r.time_derivative.abs().max(1.0));
            }
        }
    }
    assert_eq!(monge, 60);
}

#[test]
fn half_turn_pair_cost_is_at_least_an_eighth() {
    let g = TorusGrid::new(1, 8).unwrap();
    let nu = GridMeasure::dirac(g, 0).unwrap();
    let jumped = nu
        .pushforward_translate(&TorusDisplacement::new(&[0.5]).unwrap())
        .unwrap();
    let floor = (0..g.sites())
        .map(|s| {
            let m = GridMeasure::dirac(g, s).unwrap();
            wasserstein(&m, &nu, 2.0).unwrap().powi(2) + wasserstein(&m, &jumped, 2.0).unwrap().powi(2)
        })
        .fold(f64::INFINITY, f64::min);
    assert!((floor - 0.125).abs() < 1e-15);
}

#[test]
fn std_error_halves_when_paths_quadruple() {
    let g = TorusGrid::new(1, 4).unwrap();
    let tp = TargetProcess::PoissonJump(JumpTarget {
        nu0: GridMeasure::dirac(g, 0).unwrap(),
        intensity: RateSpec::Constant(1.0),
        jump: JumpOperator::Translate(TorusDisplacement::new(&[0.5]).unwrap()),
        lambda_max: 1.0,
    });
    let mut cfg = SimConfig::new(GridMeasure::dirac(g, 0).unwrap(), tp, ControlPolicy::Replanning, 0.5, Horizon::new(1.0).unwrap());
    cfg.n_paths = 4000;
    let a = estimate_value(&cfg).unwrap();
    cfg.n_paths = 16000;
    let b = estimate_value(&cfg).unwrap();
    let ratio = a.std_error / b.std_error;
    assert!((ratio - 2.0).abs() <= 0.4, "{ratio}");
}

#[test]
fn steering_identity_with_noise() {
    let h = Horizon::new(1.0).unwrap();
    let mut cfg = SteeringCheckConfig::new(RateSpec::Power { k: 1.0, gamma: 1.0 }, 0.0, h, 2000, 0.2);
    cfg.base_seed = 3;
    let r = steering_identity_check(&cfg).unwrap();
    assert!((r.rhs_analytic - (0.5 + 0.04)).abs() < 1e-12);
    assert!(r.z_score.unwrap().abs() <= 4.0, "{r:?}");
}

#[test]
fn steering_family_sits_above_its_projection() {
    let g = TorusGrid::new(1, 16).unwrap();
    let h = Horizon::new(1.0).unwrap();
    let q = PowerCost::quadratic();
    let theta = 2.5;
    let sigma = RateSpec::Power { k: 1.0, gamma: 1.0 };
    let tp = TargetProcess::DiffusionTranslate(DiffusionTarget {
        nu0: GridMeasure::dirac(g, 4).unwrap(),
        sigma,
        initial_offset: [0.0, 0.0],
    });
    let mu = GridMeasure::uniform(g);
    for t0 in [0.2, 0.6] {
        let delta = transport_phase_length(t0, &h, theta).unwrap();
        let grid = TimeGrid::refined(t0, 1.0, 0.005, 1e-6, 0.5, &[t0 + delta]).unwrap();
        let trs: Vec<_> = (0..200)
            .map(|s| {
                let p = sample_path_with(&tp, &h, &grid, &mut rng_from_seed(s)).unwrap();
                steer_rollout(&mu, &p, t0, &h, &q, theta).unwrap()
            })
            .collect();
        let mean = trs.iter().map(|t| t.running_cost()).sum::<f64>() / trs.len() as f64;
        let lb = lower_bound_projection(&trs, &q).unwrap();
        assert!(lb <= mean, "t0 = {t0}: {lb} > {mean}");
        for tr in &trs {
            assert!((tr.recomputed_cost() - tr.running_cost()).abs() <= 1e-9);
        }
    }
}
