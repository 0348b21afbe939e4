//! The ablation study: every (mode, seed) cell is generated, optimized and
//! scored independently.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rayon::prelude::*;

use super::rng::{stream, Stream};
use super::strategy::{BuildInput, GraphStrategy};
use super::{generate, perturb_initialization, GroundTruth, SimConfig, SimDataset, SimError};
use crate::graph::{FactorGraph, FactorId, FactorKind, MotionFactor, Values, VariableId, VariableKind};
use crate::metrics::{dynamic_point_ate, evaluate, AlignMode, Trajectory};
use crate::solver::{solve_with_pruning, SolveStatus, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOptions {
    pub solver: SolverConfig,
    pub align: AlignMode,
    pub rpe_delta: usize,
    /// Fraction of motion factors given a wrong point association before
    /// solving.
    pub corrupt_motion: Option<f64>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions { solver: SolverConfig::default(), align: AlignMode::Rigid, rpe_delta: 1, corrupt_motion: None }
    }
}

/// Scores of one successful cell. Distances in meters, angles in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub ate: f64,
    pub rpe_rot_deg: f64,
    pub rpe_trans: f64,
    /// `None` when the mode does not estimate dynamic points.
    pub dynamic_ate: Option<f64>,
    /// Largest segment-length error, when the mode estimates segments.
    pub segment_error: Option<f64>,
    /// `None` when nothing was optimized.
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub cost_increases: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub solve_micros: u64,
    pub micros_per_iteration: f64,
    pub injected: Vec<FactorId>,
    pub removed: Vec<FactorId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub mode: String,
    pub seed: u64,
    /// A failed cell carries the reason.
    pub outcome: Result<CellMetrics, String>,
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Stat { mean, std, n: xs.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: String,
    pub succeeded: usize,
    pub failed: usize,
    pub ate: Option<Stat>,
    pub rpe_rot_deg: Option<Stat>,
    pub rpe_trans: Option<Stat>,
    pub dynamic_ate: Option<Stat>,
    pub solve_ms: Option<Stat>,
    pub ms_per_iteration: Option<Stat>,
    pub iterations: Option<Stat>,
}

/// Cells in mode-major order: `cells[mode * seeds.len() + seed]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub scenario: String,
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl AblationTable {
    pub fn cells_of<'a>(&'a self, mode: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.mode == mode)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn summary(&self, mode: &str) -> ModeSummary {
        let ok: Vec<&CellMetrics> = self.cells_of(mode).filter_map(|c| c.outcome.as_ref().ok()).collect();
        let col = |f: &dyn Fn(&CellMetrics) -> Option<f64>| Stat::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
        let solved = |m: &CellMetrics| m.status.is_some();
        ModeSummary {
            mode: mode.to_string(),
            succeeded: ok.len(),
            failed: self.cells_of(mode).count() - ok.len(),
            ate: col(&|m| Some(m.ate)),
            rpe_rot_deg: col(&|m| Some(m.rpe_rot_deg)),
            rpe_trans: col(&|m| Some(m.rpe_trans)),
            dynamic_ate: col(&|m| m.dynamic_ate),
            solve_ms: col(&|m| solved(m).then(|| m.solve_micros as f64 / 1e3)),
            ms_per_iteration: col(&|m| solved(m).then(|| m.micros_per_iteration / 1e3)),
            iterations: col(&|m| solved(m).then_some(m.iterations as f64)),
        }
    }

    pub fn summaries(&self) -> Vec<ModeSummary> {
        self.modes.iter().map(|m| self.summary(m)).collect()
    }
}

struct World {
    config: SimConfig,
    truth: GroundTruth,
    dataset: SimDataset,
    init: Values,
}

/// Replaces a random `fraction` of the motion factors by gross association
/// errors: the factor links the point to the point of the same part that is
/// farthest from it in the next frame (by `values`). Returns the graph and
/// the ids of the replaced factors, which keep their ids.
pub fn corrupt_motion_factors(
    graph: &FactorGraph,
    values: &Values,
    fraction: f64,
    seed: u64,
) -> Result<(FactorGraph, Vec<FactorId>), SimError> {
    let motion: Vec<_> = graph.factors().iter().filter(|e| e.factor.kind() == FactorKind::Motion).collect();
    let count = ((fraction.clamp(0.0, 1.0) * motion.len() as f64).round() as usize).min(motion.len());
    let mut rng = stream(seed, Stream::Corruption);
    let mut picked: Vec<usize> = sample(&mut rng, motion.len(), count).into_vec();
    picked.sort_unstable();
    let mut out = graph.clone();
    let mut injected = Vec::new();
    for idx in picked {
        let e = motion[idx];
        let keys = e.factor.keys();
        let (prev, next, mot) = (keys[0], keys[1], keys[2]);
        let VariableId::DynamicPoint { object, part, point, frame } = next else { continue };
        let others: Vec<VariableId> = graph
            .variables()
            .iter()
            .filter(|v| matches!(v, VariableId::DynamicPoint { object: o, part: r, point: p, frame: f }
                if *o == object && *r == part && *p != point && *f == frame))
            .copied()
            .collect();
        let at = |v: &VariableId| values.point(v).copied();
        let here = at(&next)?;
        let mut wrong = None;
        let mut far = -1.0;
        for o in others {
            let d = (at(&o)? - here).norm();
            if d > far {
                (wrong, far) = (Some(o), d);
            }
        }
        let Some(wrong) = wrong else { continue };
        let c = e.factor.covariance();
        let cov = Matrix3::from_fn(|i, j| c[(i, j)]);
        let bad = MotionFactor::with_association_error(prev, wrong, mot, cov)?;
        out.remove_factors(&[e.id].into_iter().collect());
        out.insert_factor(e.id, Arc::new(bad))?;
        injected.push(e.id);
    }
    Ok((out, injected))
}

fn dynamic_map(values: &Values, keep: impl Fn(&VariableId) -> bool) -> BTreeMap<(u32, u32, u32, u32), nalgebra::Vector3<f64>> {
    values
        .iter()
        .filter_map(|(id, v)| match *id {
            VariableId::DynamicPoint { object, part, point, frame } if keep(id) => {
                Some(((object, part, point, frame), *v.as_point()?))
            }
            _ => None,
        })
        .collect()
}

fn run_cell(strategy: &dyn GraphStrategy, world: &World, opts: &AblationOptions) -> Result<CellMetrics, String> {
    let graph = strategy
        .build(&BuildInput { dataset: &world.dataset, init: &world.init })
        .map_err(|e| e.to_string())?;
    let mut cell = CellMetrics {
        ate: 0.0,
        rpe_rot_deg: 0.0,
        rpe_trans: 0.0,
        dynamic_ate: None,
        segment_error: None,
        status: None,
        iterations: 0,
        cost_increases: 0,
        initial_cost: 0.0,
        final_cost: 0.0,
        solve_micros: 0,
        micros_per_iteration: 0.0,
        injected: Vec::new(),
        removed: Vec::new(),
    };
    let values = match &graph {
        None => world.init.clone(),
        Some(g) => {
            let g = match opts.corrupt_motion {
                Some(f) if g.count_factors(FactorKind::Motion) > 0 => {
                    let (g, ids) = corrupt_motion_factors(g, &world.init, f, world.config.seed).map_err(|e| e.to_string())?;
                    cell.injected = ids;
                    g
                }
                _ => g.clone(),
            };
            let (values, report) = solve_with_pruning(&g, &world.init, &opts.solver).map_err(|e| e.to_string())?;
            if report.status == SolveStatus::Degenerate {
                return Err(format!(
                    "degenerate normal equations ({} under-constrained variables)",
                    report.under_constrained.len()
                ));
            }
            cell.status = Some(report.status);
            cell.iterations = report.iterations.len();
            cell.cost_increases = report.cost_increases();
            cell.initial_cost = report.initial_cost;
            cell.final_cost = report.final_cost;
            cell.solve_micros = report.total_micros();
            cell.micros_per_iteration = report.micros_per_iteration();
            cell.removed = report.removed_factors();
            values
        }
    };
    let est = Trajectory::new(values.camera_poses()).map_err(|e| e.to_string())?;
    let gt = world.truth.trajectory();
    let report = evaluate(&est, &gt, opts.align, opts.rpe_delta).map_err(|e| e.to_string())?;
    cell.ate = report.ate_rmse;
    cell.rpe_rot_deg = report.rpe_rot_rmse_deg;
    cell.rpe_trans = report.rpe_trans_rmse;
    let in_graph = |id: &VariableId| graph.as_ref().is_none_or(|g| g.contains_variable(id));
    let dyn_est = dynamic_map(&values, in_graph);
    if !dyn_est.is_empty() {
        cell.dynamic_ate = dynamic_point_ate(&dyn_est, &world.truth.dynamic_points(), &report.alignment.transform).ok();
    }
    if let Some(g) = &graph {
        let truth = world.truth.values();
        cell.segment_error = g
            .variables()
            .iter()
            .filter(|v| v.kind() == VariableKind::SegmentLength)
            .filter_map(|v| Some((values.scalar(v).ok()? - truth.scalar(v).ok()?).abs()))
            .reduce(f64::max);
    }
    Ok(cell)
}

/// Runs every strategy on every seed. Cells run on the current rayon pool;
/// the table does not depend on its size.
pub fn run_ablation(
    config: &SimConfig,
    strategies: &[Arc<dyn GraphStrategy>],
    seeds: &[u64],
    opts: &AblationOptions,
) -> Result<AblationTable, SimError> {
    if seeds.is_empty() {
        return Err(SimError::Config("at least one seed is required".into()));
    }
    opts.solver.validate().map_err(|e| SimError::Config(e.to_string()))?;
    let worlds: Vec<World> = seeds
        .par_iter()
        .map(|&seed| {
            let config = config.with_seed(seed);
            let (truth, dataset) = generate(&config)?;
            let init = perturb_initialization(&truth, &dataset, &config);
            Ok(World { config, truth, dataset, init })
        })
        .collect::<Result<_, SimError>>()?;
    let n = seeds.len();
    let cells: Vec<CellResult> = (0..strategies.len() * n)
        .into_par_iter()
        .map(|idx| {
            let (s, w) = (&strategies[idx / n], &worlds[idx % n]);
            CellResult { mode: s.name().to_string(), seed: seeds[idx % n], outcome: run_cell(s.as_ref(), w, opts) }
        })
        .collect();
    Ok(AblationTable {
        scenario: config.name.clone(),
        modes: strategies.iter().map(|s| s.name().to_string()).collect(),
        seeds: seeds.to_vec(),
        cells,
    })
}
