mod common;

use common::world_from;
use semplan::bench::{
    read_csv, run_bench, start_states, summarize, BenchModels, BenchRow, CsvSink, ExperimentConfig,
};
use semplan::planner::{Budget, PlanConfig};
use semplan::world::{benchmark_world, SimLatencyProfile};

fn quick(methods: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        methods: methods.iter().map(|m| m.to_string()).collect(),
        budgets: vec![Budget::Iterations(30)],
        depths: vec![2],
        trials: 2,
        starts: 4,
        turns: 3,
        latency: SimLatencyProfile::default(),
        ..Default::default()
    }
}

#[test]
fn zero_reward_world_scores_zero_everywhere() {
    let w = world_from(
        vec![
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0], vec![0.3, 0.7]],
        ],
        vec![vec![vec![0.0; 2]; 2]; 2],
        3,
        1,
    );
    let cfg = quick(&[
        "random",
        "greedy0",
        "greedy1",
        "vanilla_mcts",
        "scope:exact",
    ]);
    let rows = run_bench(&w, &BenchModels::default(), &cfg, &mut |_| Ok(())).unwrap();
    assert_eq!(rows.len(), 5 * 2 * 4);
    assert!(rows.iter().all(|r| r.cumulative_reward == 0.0));
    for s in summarize(&rows) {
        assert_eq!((s.count, s.mean, s.se), (8, 0.0, 0.0));
    }
}

#[test]
fn summary_matches_a_hand_computation() {
    let row = |method: &str, depth, reward| BenchRow {
        method: method.into(),
        budget: "it:1".into(),
        depth,
        trial: 0,
        episode: 0,
        start: 0,
        cumulative_reward: reward,
        rollouts_per_sec: 10.0,
        sim_queries: 0,
        wall_secs: 0.0,
    };
    let rows = vec![
        row("a", 1, 1.0),
        row("a", 1, 2.0),
        row("b", 1, 5.0),
        row("a", 1, 6.0),
        row("a", 2, 4.0),
    ];
    let s = summarize(&rows);
    assert_eq!(s.len(), 3);
    assert_eq!((s[0].method.as_str(), s[0].depth, s[0].count), ("a", 1, 3));
    assert!((s[0].mean - 3.0).abs() < 1e-12);
    // sample variance of {1, 2, 6} is 7, so se = sqrt(7 / 3)
    assert!((s[0].se - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!((s[1].method.as_str(), s[1].count, s[1].se), ("b", 1, 0.0));
    assert_eq!((s[2].depth, s[2].mean), (2, 4.0));
}

#[test]
fn runs_are_deterministic_and_thread_count_independent() {
    let w = benchmark_world(8, 0).unwrap();
    let cfg = quick(&["random", "greedy1", "scope:exact"]);
    let a = run_bench(&w, &BenchModels::default(), &cfg, &mut |_| Ok(())).unwrap();
    let b = run_bench(&w, &BenchModels::default(), &cfg, &mut |_| Ok(())).unwrap();
    let par = run_bench(
        &w,
        &BenchModels::default(),
        &ExperimentConfig {
            threads: 2,
            ..cfg.clone()
        },
        &mut |_| Ok(()),
    )
    .unwrap();
    let key = |rows: &[BenchRow]| {
        rows.iter()
            .map(|r| {
                (
                    r.method.clone(),
                    r.trial,
                    r.episode,
                    r.start,
                    r.cumulative_reward,
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
    assert_eq!(key(&a), key(&par));
    let other = run_bench(
        &w,
        &BenchModels::default(),
        &ExperimentConfig { seed: 1, ..cfg },
        &mut |_| Ok(()),
    )
    .unwrap();
    assert_ne!(key(&a), key(&other));
}

#[test]
fn every_method_sees_the_same_starts() {
    let w = benchmark_world(8, 0).unwrap();
    let cfg = quick(&["random", "greedy0"]);
    let starts = start_states(&w, &cfg);
    let rows = run_bench(&w, &BenchModels::default(), &cfg, &mut |_| Ok(())).unwrap();
    for r in &rows {
        assert_eq!(r.start, starts[r.episode]);
    }
}

#[test]
fn learned_methods_without_models_fail() {
    let w = benchmark_world(8, 0).unwrap();
    assert!(run_bench(
        &w,
        &BenchModels::default(),
        &quick(&["scope:mdn"]),
        &mut |_| Ok(())
    )
    .is_err());
    assert!(run_bench(
        &w,
        &BenchModels::default(),
        &quick(&["nonsense"]),
        &mut |_| Ok(())
    )
    .is_err());
}

#[test]
fn csv_rows_round_trip() {
    let w = benchmark_world(8, 0).unwrap();
    let cfg = quick(&["random", "scope:exact"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let mut sink = CsvSink::create(&path, &serde_json::to_string(&cfg).unwrap()).unwrap();
    let rows = run_bench(&w, &BenchModels::default(), &cfg, &mut |r| sink.write(r)).unwrap();
    drop(sink);
    let text = std::fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# config: {"));
    let cfg_back: ExperimentConfig =
        serde_json::from_str(first.trim_start_matches("# config: ")).unwrap();
    assert_eq!(cfg_back, cfg);
    let back: Vec<BenchRow> = read_csv(&path).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn scope_with_exact_models_beats_random_on_the_benchmark_world() {
    let w = benchmark_world(8, 0).unwrap();
    let cfg = ExperimentConfig {
        methods: vec!["random".into(), "scope:exact".into()],
        budgets: vec![Budget::Iterations(300)],
        depths: vec![4],
        trials: 2,
        starts: 25,
        plan: PlanConfig {
            lambda: 3.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let s = summarize(&run_bench(&w, &BenchModels::default(), &cfg, &mut |_| Ok(())).unwrap());
    assert!(
        s[1].mean - s[0].mean > (s[0].se.powi(2) + s[1].se.powi(2)).sqrt(),
        "{s:?}"
    );
}
