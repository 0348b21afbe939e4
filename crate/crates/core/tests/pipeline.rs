use dynba::graph::text::{read_graph, read_values, write_graph, write_values};
use dynba::graph::FactorRegistry;
use dynba::simulation::{
    build_graph, generate, perturb_initialization, preset, run_ablation, AblationMode, AblationOptions,
};
use dynba::solver::{solve, PruneConfig, SolverConfig};

#[test]
fn text_round_trip_gives_the_same_solution() {
    let cfg = preset("group1").unwrap().with_seed(11);
    let (truth, dataset) = generate(&cfg).unwrap();
    let init = perturb_initialization(&truth, &dataset, &cfg);
    let graph = build_graph(&dataset, &init, AblationMode::Full).unwrap().unwrap();
    let graph2 = read_graph(&write_graph(&graph), &FactorRegistry::builtin()).unwrap();
    let init2 = read_values(&write_values(&init)).unwrap();
    let (a, ra) = solve(&graph, &init, &SolverConfig::default()).unwrap();
    let (b, rb) = solve(&graph2, &init2, &SolverConfig::default()).unwrap();
    assert_eq!(write_values(&a), write_values(&b));
    assert_eq!(ra.to_text_untimed(), rb.to_text_untimed());
}

fn mean_ate(corrupt: Option<f64>, prune: bool) -> f64 {
    let opts = AblationOptions {
        solver: SolverConfig { prune: prune.then(PruneConfig::default), ..SolverConfig::default() },
        corrupt_motion: corrupt,
        ..AblationOptions::default()
    };
    let seeds: Vec<u64> = (0..20).collect();
    let t = run_ablation(&preset("group1").unwrap(), &[AblationMode::Full.strategy()], &seeds, &opts).unwrap();
    t.summary("full").ate.unwrap().mean
}

#[test]
fn pruning_recovers_from_corrupted_motion_factors() {
    let clean = mean_ate(None, false);
    let corrupted = mean_ate(Some(0.1), false);
    let pruned = mean_ate(Some(0.1), true);
    assert!(pruned <= 2.0 * clean, "clean {clean} pruned {pruned}");
    assert!(pruned <= corrupted, "corrupted {corrupted} pruned {pruned}");
}
