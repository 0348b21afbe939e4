use dynba::simulation::{
    run_ablation, AblationMode, AblationOptions, AblationTable, CellResult, SimConfig, Stat, StrategyRegistry,
};

use crate::args::{load_config, load_preset, parse_seeds, AblateArgs};
use crate::manifest::RunManifest;
use crate::simulate::sim_error;
use crate::units::{cm, cm_stat, num};
use crate::{csv_text, CliError, CliResult};

pub const RESULTS_FILE: &str = "results.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const TIMING_FILE: &str = "timing.csv";

pub const RESULTS_HEADER: [&str; 13] = [
    "scenario",
    "mode",
    "succeeded",
    "failed",
    "ate_cm_mean",
    "ate_cm_std",
    "rpe_trans_cm_mean",
    "rpe_trans_cm_std",
    "rpe_rot_deg_mean",
    "rpe_rot_deg_std",
    "dynamic_ate_cm_mean",
    "dynamic_ate_cm_std",
    "iterations_mean",
];

pub const CELLS_HEADER: [&str; 16] = [
    "scenario",
    "mode",
    "seed",
    "status",
    "ate_cm",
    "rpe_trans_cm",
    "rpe_rot_deg",
    "dynamic_ate_cm",
    "segment_error_cm",
    "iterations",
    "cost_increases",
    "initial_cost",
    "final_cost",
    "injected",
    "removed",
    "error",
];

pub const TIMING_HEADER: [&str; 7] =
    ["scenario", "mode", "solves", "convergence_ms_mean", "convergence_ms_std", "ms_per_iteration_mean", "ms_per_iteration_std"];

fn stat_fields(s: Option<Stat>) -> [String; 2] {
    s.map_or([String::new(), String::new()], |s| [num(s.mean), num(s.std)])
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), num)
}

fn ids<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn result_rows(table: &AblationTable) -> Vec<Vec<String>> {
    table
        .summaries()
        .into_iter()
        .map(|s| {
            let mut row = vec![table.scenario.clone(), s.mode.clone(), s.succeeded.to_string(), s.failed.to_string()];
            row.extend(stat_fields(s.ate.map(cm_stat)));
            row.extend(stat_fields(s.rpe_trans.map(cm_stat)));
            row.extend(stat_fields(s.rpe_rot_deg));
            row.extend(stat_fields(s.dynamic_ate.map(cm_stat)));
            row.push(opt(s.iterations.map(|i| i.mean)));
            row
        })
        .collect()
}

fn cell_row(scenario: &str, c: &CellResult) -> Vec<String> {
    let head = [scenario.to_string(), c.mode.clone(), c.seed.to_string()];
    let rest = match &c.outcome {
        Ok(m) => vec![
            m.status.map_or("not-optimized", |s| s.name()).to_string(),
            num(cm(m.ate)),
            num(cm(m.rpe_trans)),
            num(m.rpe_rot_deg),
            opt(m.dynamic_ate.map(cm)),
            opt(m.segment_error.map(cm)),
            m.iterations.to_string(),
            m.cost_increases.to_string(),
            num(m.initial_cost),
            num(m.final_cost),
            ids(&m.injected),
            ids(&m.removed),
            String::new(),
        ],
        Err(e) => {
            let mut r = vec!["failed".to_string()];
            r.extend(std::iter::repeat_n(String::new(), 11));
            r.push(e.clone());
            r
        }
    };
    head.into_iter().chain(rest).collect()
}

pub fn cell_rows(table: &AblationTable) -> Vec<Vec<String>> {
    table.cells.iter().map(|c| cell_row(&table.scenario, c)).collect()
}

/// Solver wall-clock summary. Modes that run no solver are left out.
pub fn timing_rows(table: &AblationTable) -> Vec<Vec<String>> {
    table
        .summaries()
        .into_iter()
        .filter(|s| s.iterations.is_some_and(|i| i.mean > 0.0))
        .map(|s| {
            let mut row = vec![table.scenario.clone(), s.mode.clone(), s.succeeded.to_string()];
            row.extend(stat_fields(s.solve_ms));
            row.extend(stat_fields(s.ms_per_iteration));
            row
        })
        .collect()
}

fn scenarios(a: &AblateArgs) -> CliResult<Vec<(String, SimConfig)>> {
    let mut out = Vec::new();
    for path in &a.config {
        out.push((path.display().to_string(), load_config(path)?));
    }
    for name in &a.preset {
        out.push((format!("preset:{name}"), load_preset(name)?));
    }
    if out.is_empty() {
        return Err(CliError::Usage("ablate needs at least one --config or --preset".into()));
    }
    Ok(out)
}

pub fn run(a: &AblateArgs) -> CliResult<()> {
    let scenarios = scenarios(a)?;
    let seeds = parse_seeds(&a.seeds)?;
    let names: Vec<String> = match &a.modes {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => AblationMode::ALL.iter().map(|m| m.name().to_string()).collect(),
    };
    let strategies = StrategyRegistry::builtin().resolve(&names).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(f) = a.corrupt_motion {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Usage(format!("--corrupt-motion must be in [0, 1], got {f}")));
        }
    }
    let opts = AblationOptions {
        solver: a.solver.config()?,
        align: a.align.into(),
        rpe_delta: a.rpe_delta,
        corrupt_motion: a.corrupt_motion,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;

    let labels = scenarios.iter().map(|(l, _)| l.clone()).collect();
    let mut m = RunManifest::begin("ablate", &a.out, labels, seeds.clone(), names, &[
        RESULTS_FILE,
        CELLS_FILE,
        TIMING_FILE,
    ])?;
    let (mut results, mut cells, mut timing) = (Vec::new(), Vec::new(), Vec::new());
    let mut failed = 0;
    for (_, config) in &scenarios {
        let clock = std::time::Instant::now();
        let table = pool.install(|| run_ablation(config, &strategies, &seeds, &opts)).map_err(sim_error)?;
        m.time(&format!("ablate:{}", table.scenario), clock.elapsed().as_secs_f64() * 1e3);
        failed += table.failures();
        for c in table.cells.iter() {
            if let Err(e) = &c.outcome {
                log::warn!("{} {} seed {}: {e}", table.scenario, c.mode, c.seed);
            }
        }
        for s in table.summaries() {
            let ate = s.ate.map(cm_stat).map_or("-".to_string(), |s| format!("{} +- {}", num(s.mean), num(s.std)));
            println!("{:<10} {:<18} ate_cm {ate}", table.scenario, s.mode);
        }
        results.extend(result_rows(&table));
        cells.extend(cell_rows(&table));
        timing.extend(timing_rows(&table));
    }
    m.emit(RESULTS_FILE, &csv_text(&RESULTS_HEADER, &results))?;
    m.emit(CELLS_FILE, &csv_text(&CELLS_HEADER, &cells))?;
    m.emit(TIMING_FILE, &csv_text(&TIMING_HEADER, &timing))?;
    if failed > 0 {
        m.finish("partial")?;
        return Err(CliError::Partial(format!("{failed} ablation cells failed; see {CELLS_FILE}")));
    }
    m.finish("complete")
}
