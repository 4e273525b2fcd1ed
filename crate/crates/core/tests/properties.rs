//! Invariants of transport, rollouts and the super-differential check over
//! randomly generated grid measures.

use proptest::prelude::*;
use sotlab::analysis::{candidate_from_optimal_plan, check_superdiff_inequality, mean_covector_reduction};
use sotlab::controllers::geodesic_rollout;
use sotlab::measure::TorusDisplacement;
use sotlab::transport::{power_cost, PLAN_TOLERANCE};
use sotlab::value_det::{torus_diameter, u_det};
use sotlab::{exact_ot, periodic_distance, wasserstein, Coupling, GridMeasure, Horizon, PowerCost, TorusGrid};

fn grid() -> impl Strategy<Value = TorusGrid> {
    prop_oneof![
        (2usize..=8).prop_map(|n| TorusGrid::new(1, n).unwrap()),
        (2usize..=4).prop_map(|n| TorusGrid::new(2, n).unwrap()),
    ]
}

/// Nonnegative weights with some exact zeros and at least one positive entry.
fn measure_on(g: TorusGrid) -> impl Strategy<Value = GridMeasure> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.01f64..1.0], g.sites()).prop_map(move |mut w| {
        if w.iter().all(|x| *x == 0.0) {
            w[0] = 1.0;
        }
        GridMeasure::from_unnormalized(g, w).unwrap()
    })
}

fn pair() -> impl Strategy<Value = (GridMeasure, GridMeasure)> {
    grid().prop_flat_map(|g| (measure_on(g), measure_on(g)))
}

fn triple() -> impl Strategy<Value = (GridMeasure, GridMeasure, GridMeasure)> {
    grid().prop_flat_map(|g| (measure_on(g), measure_on(g), measure_on(g)))
}

/// Two equal-weight supports of the same size `m <= 4`.
fn equal_weight_supports() -> impl Strategy<Value = (TorusGrid, Vec<usize>, Vec<usize>)> {
    grid().prop_flat_map(|g| {
        let m_max = g.sites().min(4);
        (1..=m_max).prop_flat_map(move |m| {
            let sites: Vec<usize> = (0..g.sites()).collect();
            (
                Just(g),
                prop::sample::subsequence(sites.clone(), m).prop_shuffle(),
                prop::sample::subsequence(sites, m).prop_shuffle(),
            )
        })
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn periodic_distance_is_bounded_and_symmetric(
        x in prop::collection::vec(-3.0f64..3.0, 2),
        y in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let d = periodic_distance(&x, &y).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(d <= 2f64.sqrt() / 2.0 + 1e-15);
        prop_assert_eq!(d, periodic_distance(&y, &x).unwrap());
        let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        prop_assert!((periodic_distance(&shifted, &y).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn exact_plans_are_feasible_and_dual_tight((mu, nu) in pair(), k in prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0)]) {
        let plan = exact_ot(&mu, &nu, k).unwrap();
        plan.coupling().check_marginals(&mu, &nu).unwrap();
        let g = mu.grid();
        for i in 0..g.sites() {
            for j in 0..g.sites() {
                let c = power_cost(g.distance(i, j), k);
                let s = plan.dual_source()[i] + plan.dual_target()[j];
                prop_assert!(s <= c + PLAN_TOLERANCE);
                if plan.coupling().get(i, j) > 0.0 {
                    prop_assert!((s - c).abs() <= PLAN_TOLERANCE);
                }
            }
        }
        prop_assert!((plan.dual_objective() - plan.total_cost()).abs() <= 1e-9);
    }

    #[test]
    fn wasserstein_is_a_bounded_metric((a, b, c) in triple(), k in prop_oneof![Just(1.0), Just(2.0)]) {
        let ab = wasserstein(&a, &b, k).unwrap();
        let bc = wasserstein(&b, &c, k).unwrap();
        let ac = wasserstein(&a, &c, k).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!((ab - wasserstein(&b, &a, k).unwrap()).abs() <= 1e-9);
        prop_assert!(ab <= torus_diameter(&a.grid()) + 1e-12);
        prop_assert_eq!(wasserstein(&a, &a, k).unwrap(), 0.0);
    }

    #[test]
    fn equal_weight_optimum_is_a_permutation((g, xs, ys) in equal_weight_supports()) {
        let m = xs.len();
        let mut wx = vec![0.0; g.sites()];
        let mut wy = vec![0.0; g.sites()];
        for (&x, &y) in xs.iter().zip(&ys) {
            wx[x] = 1.0;
            wy[y] = 1.0;
        }
        let mu = GridMeasure::from_unnormalized(g, wx).unwrap();
        let nu = GridMeasure::from_unnormalized(g, wy).unwrap();
        let brute = permutations(&ys)
            .into_iter()
            .map(|p| xs.iter().zip(&p).map(|(&x, &y)| g.distance(x, y).powi(2)).sum::<f64>() / m as f64)
            .fold(f64::INFINITY, f64::min);
        let plan = exact_ot(&mu, &nu, 2.0).unwrap();
        prop_assert!((plan.total_cost() - brute).abs() <= 1e-9);
    }

    #[test]
    fn common_translation_preserves_cost((mu, nu) in pair(), steps in 0usize..8) {
        let g = mu.grid();
        let shift: Vec<f64> = (0..g.dim()).map(|_| steps as f64 * g.spacing()).collect();
        let shift = TorusDisplacement::new(&shift).unwrap();
        let a = mu.pushforward_translate(&shift).unwrap();
        let b = nu.pushforward_translate(&shift).unwrap();
        let before = exact_ot(&mu, &nu, 2.0).unwrap().total_cost();
        let after = exact_ot(&a, &b, 2.0).unwrap().total_cost();
        prop_assert!((before - after).abs() <= 1e-12);
    }

    #[test]
    fn geodesic_cost_matches_the_deterministic_value(
        (mu, nu) in pair(),
        t0 in 0.0f64..0.9,
        steps in 1usize..6,
        k in prop_oneof![Just(2.0), Just(3.0)],
    ) {
        let cost = PowerCost::new(k, 0.5).unwrap();
        let h = Horizon::new(1.0).unwrap();
        let tr = geodesic_rollout(&mu, &nu, t0, 1.0, steps, &cost).unwrap();
        let u = u_det(t0, &mu, &nu, &cost, &h).unwrap();
        prop_assert!((tr.running_cost() - u).abs() <= 1e-9 * u.max(1e-300));
        prop_assert!((tr.recomputed_cost() - tr.running_cost()).abs() <= 1e-9);
        prop_assert_eq!(tr.terminal_state(), &nu);
        for s in tr.states() {
            prop_assert!((s.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn superdiff_inequality_holds((mu, nu, mu_p) in triple()) {
        let cand = candidate_from_optimal_plan(&exact_ot(&mu, &nu, 2.0).unwrap()).unwrap();
        prop_assert!(cand.support_bound <= torus_diameter(&mu.grid()) + 1e-15);
        let (full, reduced) = mean_covector_reduction(&cand);
        prop_assert!(reduced <= full + 1e-15);
        let product = Coupling::product(&mu, &mu_p).unwrap();
        let optimal = exact_ot(&mu, &mu_p, 2.0).unwrap();
        for gamma in [&product, optimal.coupling()] {
            let r = check_superdiff_inequality(&cand, &nu, &mu_p, gamma).unwrap();
            prop_assert!(r.holds, "{:?}", r);
        }
    }
}
