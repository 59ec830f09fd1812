mod common;

use common::{rng, three_state_world};
use semplan::baselines::{greedy1_estimates, select_greedy1, select_random, vanilla_mcts};
use semplan::numcore::argmax;
use semplan::planner::{Budget, ChancePolicy, PlanConfig};
use semplan::world::{benchmark_world, SimLatencyProfile, SlowSim};

#[test]
fn random_choice_is_uniform() {
    let mut r = rng(1);
    let n = 40_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[select_random(&[10, 20, 30, 40], &mut r).unwrap()] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn greedy1_estimates_converge_to_expected_rewards() {
    let w = three_state_world();
    let sim = SlowSim::new(SimLatencyProfile::default()).unwrap();
    let mut r = rng(2);
    for l in 0..3 {
        let est = greedy1_estimates(&w, &sim, l, &[0, 1], 10_000, &mut r).unwrap();
        for a in 0..2 {
            let truth = w.expected_immediate_reward(l, a).unwrap();
            let var: f64 = w
                .kernel_row(l, a)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(n, p)| p * (w.reward(l, a, n).unwrap() - truth).powi(2))
                .sum();
            let tol = 5.0 * (var / 10_000.0).sqrt() + 1e-12;
            assert!(
                (est[a] - truth).abs() < tol,
                "state {l} action {a}: {} vs {truth}",
                est[a]
            );
        }
    }
    assert_eq!(sim.queries(), 3 * 2 * 10_000);
    assert!(greedy1_estimates(&w, &sim, 0, &[0, 1], 0, &mut r).is_err());
    assert!(greedy1_estimates(&w, &sim, 0, &[], 3, &mut r).is_err());
}

#[test]
fn myopic_choice_is_not_optimal_on_the_benchmark_world() {
    let w = benchmark_world(8, 0).unwrap();
    let sim = SlowSim::new(SimLatencyProfile::default()).unwrap();
    let mut r = rng(3);
    let mut disagreements = 0;
    for l in 0..w.num_states() {
        let all: Vec<usize> = (0..w.num_actions(l)).collect();
        let greedy = select_greedy1(&w, &sim, l, &all, 2_000, &mut r).unwrap();
        let exact: Vec<f64> = all
            .iter()
            .map(|&a| w.expected_immediate_reward(l, a).unwrap())
            .collect();
        let ex = w.expectimax(l, 5, 0.9).unwrap();
        if argmax(&exact) != Some(ex.action) {
            disagreements += 1;
            assert!(
                ex.q[greedy] < ex.value,
                "state {l}: the myopic action should lose long-term"
            );
        }
    }
    assert!(disagreements > 0);
}

#[test]
fn vanilla_search_counts_one_query_per_model_step() {
    let w = three_state_world();
    let cfg = PlanConfig {
        depth: 3,
        chance: ChancePolicy::Resample,
        budget: Budget::Iterations(40),
        ..Default::default()
    };
    let r = vanilla_mcts(&w, 0, &[0, 1], &cfg, SimLatencyProfile::default()).unwrap();
    assert_eq!(r.queries, r.plan.stats.model_steps);
    assert_eq!(r.plan.stats.iterations, 40);
    assert_eq!(r.plan.visits.iter().sum::<u64>(), 40);
}

#[test]
fn vanilla_search_with_one_candidate_picks_it() {
    let w = three_state_world();
    let cfg = PlanConfig {
        budget: Budget::Iterations(5),
        ..Default::default()
    };
    let r = vanilla_mcts(&w, 1, &[1], &cfg, SimLatencyProfile::default()).unwrap();
    assert_eq!(r.plan.selected, 0);
    assert_eq!(r.plan.visits, vec![5]);
}

#[test]
fn injected_latency_bounds_vanilla_rollouts() {
    let w = three_state_world();
    let cfg = PlanConfig {
        depth: 6,
        budget: Budget::WallClockMs(1000),
        ..Default::default()
    };
    let r = vanilla_mcts(&w, 0, &[0, 1], &cfg, SimLatencyProfile::fixed(50.0)).unwrap();
    // the first iteration from the root costs six 50 ms queries, and the
    // budget is only checked between iterations
    assert!(r.plan.stats.iterations >= 1);
    assert!(
        r.plan.stats.iterations <= 4,
        "{} iterations",
        r.plan.stats.iterations
    );
    assert!(r.wall_secs >= 1.0);
    assert!(r.wall_secs >= 0.05 * r.queries as f64);
    assert_eq!(r.queries, r.plan.stats.model_steps);
}
