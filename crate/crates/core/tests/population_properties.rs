mod common;

use common::{l1, power_stationary, random_measure, rng};
use mfe_core::dp::StationaryPolicy;
use mfe_core::fixtures::{self, RandomGame};
use mfe_core::model::{validate_assumptions, Criterion, GlobalState, StateActionMeasure};
use mfe_core::population::{aggregate, disintegrate, invariant_measure, lift, lift_all, policy_transition_matrix, PolicyChain};
use proptest::prelude::*;
use rand::Rng;

fn random_policy<R: Rng>(pop: &mfe_core::model::PopulationSpec, r: &mut R) -> StationaryPolicy {
    let rows = (0..pop.num_states())
        .map(|s| {
            let raw: Vec<f64> = pop.feasible(s).iter().map(|_| r.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    StationaryPolicy::new(pop.index(), rows).unwrap()
}

fn random_simplex<R: Rng>(n: usize, r: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lift_preserves_the_state_marginal(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = RandomGame::default().sample(&mut r);
        let pop = g.population(0);
        let f = random_policy(pop, &mut r);
        let mu = random_simplex(pop.num_states(), &mut r);
        let tau = lift(&f, &mu).unwrap();
        prop_assert!((tau.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for s in 0..pop.num_states() {
            let m: f64 = tau[pop.pair_range(s)].iter().sum();
            prop_assert!((m - mu[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn disintegrate_then_lift_round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = RandomGame::default().sample(&mut r);
        let tau = random_measure(g.populations(), &mut r);
        for pop in g.populations() {
            let (f, mu) = disintegrate(pop, tau.population(pop.index())).unwrap();
            let back = lift(&f, &mu).unwrap();
            prop_assert!(l1(&back, tau.population(pop.index())) < 1e-12);
        }
    }

    #[test]
    fn aggregate_returns_probability_measures(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = RandomGame { weight_spread: 0.5, ..RandomGame::default() }.sample(&mut r);
        let tau = random_measure(g.populations(), &mut r);
        let next = aggregate(&g, &tau).unwrap();
        let report = validate_assumptions(&g, Criterion::Discounted { beta: 0.5 }).unwrap();
        for pop in g.populations() {
            let i = pop.index();
            let m = next.population(i);
            prop_assert!(m.iter().all(|&x| x >= 0.0));
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let w = g.weight().population(i);
            let after: f64 = m.iter().zip(w).map(|(a, b)| a * b).sum();
            let before = tau.weighted_mass(pop, w);
            prop_assert!(after <= report.weight_factor * before + 1e-12);
        }
    }

    #[test]
    fn policy_chain_rows_are_stochastic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = RandomGame::default().sample(&mut r);
        let tau = random_measure(g.populations(), &mut r);
        let f = random_policy(g.population(0), &mut r);
        let chain = policy_transition_matrix(&g, 0, &f, &tau).unwrap();
        for s in 0..chain.num_states() {
            prop_assert!((chain.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_measure_matches_power_iteration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(2..7);
        // strictly positive rows: ergodic and aperiodic
        let m: Vec<f64> = (0..n).flat_map(|_| random_simplex(n, &mut r).into_iter().map(|x| 0.9 * x + 0.1 / n as f64).collect::<Vec<_>>()).collect();
        let chain = PolicyChain::new(0, n, m.clone()).unwrap();
        let inv = chain.invariant_measure(None, 1e-12, 100_000).unwrap();
        prop_assert!(inv.converged);
        prop_assert!(l1(&inv.measure, &power_stationary(n, &m)) < 1e-10);
        prop_assert!(chain.residual(&inv.measure) < 1e-12);
    }
}

#[test]
fn swap_chain_has_the_cesaro_limit_of_its_start() {
    let g2 = fixtures::g2();
    let tau = StateActionMeasure::uniform(g2.populations());
    let f = StationaryPolicy::uniform_for(g2.population(0));
    let inv = invariant_measure(&g2, 0, &f, &tau, Some(&[1.0, 0.0]), 1e-12, 10_000).unwrap();
    assert!(l1(&inv.measure, &[0.5, 0.5]) < 1e-12);
}

#[test]
fn reducible_chain_splits_mass_by_absorption() {
    // state 1 and 2 are absorbing, state 0 goes to each with prob 0.3 / 0.7
    let chain = PolicyChain::new(0, 3, vec![0.0, 0.3, 0.7, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let inv = chain.invariant_measure(Some(&[1.0, 0.0, 0.0]), 1e-12, 10_000).unwrap();
    assert!(l1(&inv.measure, &[0.0, 0.3, 0.7]) < 1e-12);
    let inv = chain.invariant_measure(Some(&[0.0, 0.0, 1.0]), 1e-12, 10_000).unwrap();
    assert!(l1(&inv.measure, &[0.0, 0.0, 1.0]) < 1e-12);
}

#[test]
fn large_chain_uses_iteration_and_meets_tolerance() {
    let mut r = rng(9);
    let n = 80;
    let m: Vec<f64> = (0..n).flat_map(|_| random_simplex(n, &mut r)).collect();
    let chain = PolicyChain::new(0, n, m.clone()).unwrap();
    let inv = chain.invariant_measure(None, 1e-10, 100_000).unwrap();
    assert!(inv.converged);
    assert!(inv.residual <= 1e-10);
    assert!(l1(&inv.measure, &power_stationary(n, &m)) < 1e-8);
}

#[test]
fn lift_all_matches_per_population_lift() {
    let g = fixtures::g3_pair(0.5);
    let mu = GlobalState::new(g.populations(), vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
    let f: Vec<_> = g.populations().iter().map(StationaryPolicy::uniform_for).collect();
    let tau = lift_all(&f, &mu).unwrap();
    assert_eq!(tau.population(0), &[0.125, 0.125, 0.375, 0.375]);
    assert_eq!(tau.population(1), &[0.5, 0.5, 0.0, 0.0]);
}

#[test]
fn congestion_aggregate_follows_actions() {
    let g3 = fixtures::g3();
    // all mass in state 0, split stay / move 0.3 / 0.7
    let tau = StateActionMeasure::new(g3.populations(), vec![vec![0.3, 0.7, 0.0, 0.0]]).unwrap();
    let next = aggregate(&g3, &tau).unwrap();
    assert!(l1(next.population(0), &[0.3, 0.7]) < 1e-15);
}

#[test]
fn rejects_mismatched_shapes() {
    let g3 = fixtures::g3();
    let f = StationaryPolicy::uniform_for(g3.population(0));
    assert!(lift(&f, &[1.0]).is_err());
    assert!(disintegrate(g3.population(0), &[1.0]).is_err());
}
