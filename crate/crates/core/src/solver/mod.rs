//! Levenberg-Marquardt over a [`FactorGraph`], with chi-square pruning of
//! rigidity and motion factors.
//!
//! Each iteration linearizes every factor, assembles the block-sparse normal
//! equations `H = J^T Omega^-1 J`, `g = J^T Omega^-1 r`, and solves
//! `(H + lambda diag(H)) delta = -g` with a sparse Cholesky factorization.
//! Poses and motions are updated by `exp(delta) * P`, everything else
//! additively. A step is kept only if it lowers the cost.

pub mod sparse;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{
    chi2, Factor, FactorGraph, FactorId, FactorKind, GraphError, Value, VariableId, VariableKind,
    Values,
};
use crate::numfmt::sig;
use sparse::{BlockMatrix, Slot, SymbolicCholesky};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("no camera pose is held constant; the problem has a free gauge")]
    NoGaugeAnchor,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Chi-square thresholds for removing rigidity and motion factors.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    /// 1-DOF threshold (95% quantile by default).
    pub rigidity_threshold: f64,
    /// 3-DOF threshold (95% quantile by default).
    pub motion_threshold: f64,
    pub rounds: usize,
    /// Per round, only remove a factor if no factor sharing a point with it
    /// has a larger chi-square. A gross outlier inflates the residuals of its
    /// neighbours; they are re-judged after the next solve instead.
    pub suppress_neighbors: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { rigidity_threshold: 3.84, motion_threshold: 7.81, rounds: 4, suppress_neighbors: true }
    }
}

impl PruneConfig {
    fn threshold(&self, kind: FactorKind) -> Option<f64> {
        match kind {
            FactorKind::Observation => None,
            FactorKind::Rigidity => Some(self.rigidity_threshold),
            FactorKind::Motion => Some(self.motion_threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop once the update norm falls below this.
    pub step_tolerance: f64,
    /// Give up raising the damping past this value.
    pub max_lambda: f64,
    pub prune: Option<PruneConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            relative_tolerance: 1e-8,
            step_tolerance: 1e-10,
            max_lambda: 1e12,
            prune: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.initial_lambda > 0.0 && self.max_lambda >= self.initial_lambda) {
            return bad("lambda must be positive and below max_lambda");
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return bad("lambda_up must exceed 1 and lambda_down lie in (0, 1)");
        }
        if !(self.relative_tolerance >= 0.0 && self.step_tolerance >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if let Some(p) = &self.prune {
            if !(p.rigidity_threshold >= 0.0 && p.motion_threshold >= 0.0) {
                return bad("prune thresholds must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Degenerate,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::Degenerate => "degenerate",
        }
    }
}

/// One attempted LM step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    /// Cost after the iteration (the trial cost if accepted).
    pub cost: f64,
    /// Damping used for the step.
    pub lambda: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub micros: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneRound {
    pub removed: Vec<FactorId>,
    /// Variables left without factors by the removal, dropped from the problem.
    pub excluded: Vec<VariableId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: Vec<IterationRecord>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub pruned: Vec<PruneRound>,
    /// Variables whose normal-equation block stayed singular.
    pub under_constrained: Vec<VariableId>,
    /// Factors left out of the linearization because their Jacobian was
    /// undefined (coincident rigidity endpoints).
    pub skipped_factors: Vec<FactorId>,
}

impl SolveReport {
    pub fn accepted_costs(&self) -> Vec<f64> {
        let mut costs = vec![self.initial_cost];
        costs.extend(self.iterations.iter().filter(|r| r.accepted).map(|r| r.cost));
        costs
    }

    /// Accepted steps that raised the cost; zero for a correct solve.
    pub fn cost_increases(&self) -> usize {
        let mut count = 0;
        let mut prev = f64::INFINITY;
        for (i, r) in self.iterations.iter().enumerate() {
            if i == 0 || self.iterations[i - 1].index >= r.index {
                // A new solve in a pruning sequence starts on another graph.
                prev = f64::INFINITY;
            }
            if r.accepted {
                if r.cost > prev {
                    count += 1;
                }
                prev = r.cost;
            }
        }
        count
    }

    pub fn removed_factors(&self) -> Vec<FactorId> {
        self.pruned.iter().flat_map(|r| r.removed.iter().copied()).collect()
    }

    pub fn total_micros(&self) -> u64 {
        self.iterations.iter().map(|r| r.micros).sum()
    }

    pub fn micros_per_iteration(&self) -> f64 {
        if self.iterations.is_empty() {
            0.0
        } else {
            self.total_micros() as f64 / self.iterations.len() as f64
        }
    }

    /// Structured text: header fields, then one line per iteration
    /// `iter <index> <cost> <lambda> <step_norm> <accepted> <microseconds>`.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    /// [`SolveReport::to_text`] without the microseconds column. Identical
    /// inputs give identical text.
    pub fn to_text_untimed(&self) -> String {
        self.render(false)
    }

    fn render(&self, timed: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "status {}", self.status.name());
        let _ = writeln!(out, "initial_cost {}", sig(self.initial_cost, 17));
        let _ = writeln!(out, "final_cost {}", sig(self.final_cost, 17));
        let _ = writeln!(out, "iterations {}", self.iterations.len());
        for (k, round) in self.pruned.iter().enumerate() {
            let ids: Vec<String> = round.removed.iter().map(|id| id.to_string()).collect();
            let _ = writeln!(out, "pruned_round {k} removed {}", ids.join(" "));
            for v in &round.excluded {
                let _ = writeln!(out, "pruned_round {k} excluded {v}");
            }
        }
        for v in &self.under_constrained {
            let _ = writeln!(out, "under_constrained {v}");
        }
        for f in &self.skipped_factors {
            let _ = writeln!(out, "skipped_factor {f}");
        }
        let _ = writeln!(out, "# iter index cost lambda step_norm accepted{}", if timed { " microseconds" } else { "" });
        for r in &self.iterations {
            let _ = write!(
                out,
                "iter {} {} {} {} {}",
                r.index,
                sig(r.cost, 17),
                sig(r.lambda, 6),
                sig(r.step_norm, 9),
                u8::from(r.accepted)
            );
            if timed {
                let _ = write!(out, " {}", r.micros);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-factor linearization scratch and assembly targets.
struct FactorWork<'g> {
    id: FactorId,
    factor: &'g dyn Factor,
    vars: Vec<usize>,
    /// Free block of each key.
    blocks: Vec<Option<usize>>,
    /// `(key a, key b, slot)` for every pair of free keys with `a <= b`.
    slots: Vec<(usize, usize, Slot)>,
    r: DVector<f64>,
    jac: Vec<DMatrix<f64>>,
    skipped: bool,
}

/// Linear system layout and the current state of one solve.
struct Problem<'g> {
    ids: Vec<VariableId>,
    state: Vec<Value>,
    /// Variable of each free block.
    var_of_block: Vec<usize>,
    symbolic: SymbolicCholesky,
    factors: Vec<FactorWork<'g>>,
}

impl<'g> Problem<'g> {
    fn new(graph: &'g FactorGraph, values: &Values) -> Result<Self, SolverError> {
        graph.check_values(values)?;
        let ids: Vec<VariableId> = graph.variables().iter().copied().collect();
        let index: HashMap<VariableId, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let state: Vec<Value> = ids.iter().map(|v| values.get(v).copied()).collect::<Result<_, _>>()?;
        let mut block_of = vec![None; ids.len()];
        let mut var_of_block = Vec::new();
        let mut dims = Vec::new();
        for (i, v) in ids.iter().enumerate() {
            if !graph.is_constant(v) {
                block_of[i] = Some(var_of_block.len());
                var_of_block.push(i);
                dims.push(v.kind().tangent_dim());
            }
        }
        let mut edges = Vec::new();
        let mut works = Vec::with_capacity(graph.num_factors());
        for e in graph.factors() {
            let vars: Vec<usize> = e.factor.keys().iter().map(|k| index[k]).collect();
            let blocks: Vec<Option<usize>> = vars.iter().map(|&v| block_of[v]).collect();
            let free: Vec<usize> = blocks.iter().flatten().copied().collect();
            for (a, &ba) in free.iter().enumerate() {
                for &bb in &free[a + 1..] {
                    edges.push((ba, bb));
                }
            }
            let dim = e.factor.dim();
            let jac = e.factor.keys().iter().map(|k| DMatrix::zeros(dim, k.kind().tangent_dim())).collect();
            works.push(FactorWork {
                id: e.id,
                factor: e.factor.as_ref(),
                vars,
                blocks,
                slots: Vec::new(),
                r: DVector::zeros(dim),
                jac,
                skipped: false,
            });
        }
        let symbolic = SymbolicCholesky::new(dims, edges);
        for w in &mut works {
            for a in 0..w.blocks.len() {
                for b in a..w.blocks.len() {
                    if let (Some(ba), Some(bb)) = (w.blocks[a], w.blocks[b]) {
                        let slot = symbolic.locate(ba, bb).expect("pattern covers every factor pair");
                        w.slots.push((a, b, slot));
                    }
                }
            }
        }
        Ok(Problem { ids, state, var_of_block, symbolic, factors: works })
    }

    fn cost_of(&self, state: &[Value]) -> Result<f64, GraphError> {
        let mut total = 0.0;
        let mut vars: Vec<&Value> = Vec::with_capacity(3);
        let mut r = DVector::zeros(3);
        for w in &self.factors {
            vars.clear();
            vars.extend(w.vars.iter().map(|&v| &state[v]));
            if r.len() != w.factor.dim() {
                r = DVector::zeros(w.factor.dim());
            }
            w.factor.residual_into(&vars, &mut r)?;
            total += whitened_norm_squared(w.factor.whitening(), &r);
        }
        Ok(total)
    }

    /// Fills `h` (lower blocks) and `g` at the current state.
    fn linearize(&mut self, h: &mut BlockMatrix, g: &mut [f64]) -> Result<(), GraphError> {
        h.fill_zero();
        g.fill(0.0);
        let sym = &self.symbolic;
        let state = &self.state;
        let mut vars: Vec<&Value> = Vec::with_capacity(3);
        for w in &mut self.factors {
            vars.clear();
            vars.extend(w.vars.iter().map(|&v| &state[v]));
            w.factor.residual_into(&vars, &mut w.r)?;
            match w.factor.jacobians_into(&vars, &mut w.jac) {
                Ok(()) => w.skipped = false,
                Err(GraphError::Degenerate(msg)) => {
                    if !w.skipped {
                        log::warn!("skipping factor {} in linearization: {msg}", w.id);
                    }
                    w.skipped = true;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let wm = w.factor.whitening();
            whiten_in_place(wm, &mut w.r);
            for (k, j) in w.jac.iter_mut().enumerate() {
                if w.blocks[k].is_some() {
                    whiten_columns(wm, j);
                }
            }
            for (k, blk) in w.blocks.iter().enumerate() {
                if let Some(b) = blk {
                    let start = sym.block_start(*b);
                    let j = &w.jac[k];
                    for c in 0..j.ncols() {
                        g[start + c] += j.column(c).dot(&w.r);
                    }
                }
            }
            for &(a, b, slot) in &w.slots {
                let (ja, jb) = (&w.jac[a], &w.jac[b]);
                let diag = a == b;
                for x in 0..ja.ncols() {
                    let ylim = if diag { x + 1 } else { jb.ncols() };
                    for y in 0..ylim {
                        h.add(slot, x, y, ja.column(x).dot(&jb.column(y)));
                    }
                }
            }
        }
        Ok(())
    }

    fn retracted(&self, delta: &[f64]) -> Vec<Value> {
        let mut next = self.state.clone();
        for (b, &v) in self.var_of_block.iter().enumerate() {
            let s = self.symbolic.block_start(b);
            next[v] = next[v].retract(&delta[s..s + self.symbolic.block_dim(b)]);
        }
        next
    }

    fn skipped(&self) -> Vec<FactorId> {
        self.factors.iter().filter(|w| w.skipped).map(|w| w.id).collect()
    }

    fn write_back(&self, values: &mut Values) {
        for (id, v) in self.ids.iter().zip(&self.state) {
            values.insert(*id, *v).expect("state keeps value kinds");
        }
    }

    /// Variables of blocks containing a zero on the diagonal of `H`.
    fn empty_blocks(&self, diag: &[f64]) -> Vec<VariableId> {
        (0..self.var_of_block.len())
            .filter(|&b| {
                let s = self.symbolic.block_start(b);
                diag[s..s + self.symbolic.block_dim(b)].iter().any(|&d| !(d > 0.0))
            })
            .map(|b| self.ids[self.var_of_block[b]])
            .collect()
    }
}

fn whitened_norm_squared(w: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let n = r.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += w[(i, k)] * r[k];
        }
        total += s * s;
    }
    total
}

/// `r <- W r` for lower-triangular `W`.
fn whiten_in_place(w: &DMatrix<f64>, r: &mut DVector<f64>) {
    for i in (0..r.len()).rev() {
        let mut s = 0.0;
        for k in 0..=i {
            s += w[(i, k)] * r[k];
        }
        r[i] = s;
    }
}

fn whiten_columns(w: &DMatrix<f64>, j: &mut DMatrix<f64>) {
    let n = j.nrows();
    for c in 0..j.ncols() {
        let mut col = j.column_mut(c);
        for i in (0..n).rev() {
            let mut s = 0.0;
            for k in 0..=i {
                s += w[(i, k)] * col[k];
            }
            col[i] = s;
        }
    }
}

fn check_gauge(graph: &FactorGraph) -> Result<(), SolverError> {
    if graph.constants().iter().any(|v| v.kind() == VariableKind::CameraPose) {
        Ok(())
    } else {
        Err(SolverError::NoGaugeAnchor)
    }
}

/// Minimizes the graph cost from `initial`. The returned values hold every
/// entry of `initial`, with the graph's free variables optimized.
pub fn solve(
    graph: &FactorGraph,
    initial: &Values,
    config: &SolverConfig,
) -> Result<(Values, SolveReport), SolverError> {
    config.validate()?;
    check_gauge(graph)?;
    let mut problem = Problem::new(graph, initial)?;
    let sym = problem.symbolic.clone();
    let n = sym.size();
    let mut h = sym.zeros();
    let mut work = sym.zeros();
    let mut g = vec![0.0; n];
    let mut cost = problem.cost_of(&problem.state)?;
    let initial_cost = cost;
    let mut lambda = config.initial_lambda;
    let mut records = Vec::new();
    let mut under_constrained = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut stale = true;
    let mut diag = Vec::new();

    for index in 0..config.max_iterations {
        let start = Instant::now();
        if stale {
            problem.linearize(&mut h, &mut g)?;
            diag = sym.diagonal(&h);
            stale = false;
            let empty = problem.empty_blocks(&diag);
            if !empty.is_empty() {
                under_constrained = empty;
                status = SolveStatus::Degenerate;
                break;
            }
        }
        work.copy_from(&h);
        let damping: Vec<f64> = diag.iter().map(|d| lambda * d).collect();
        sym.add_diagonal(&mut work, &damping);
        if let Err(block) = sym.factor(&mut work) {
            let record_lambda = lambda;
            lambda *= config.lambda_up;
            records.push(IterationRecord {
                index,
                cost,
                lambda: record_lambda,
                step_norm: f64::NAN,
                accepted: false,
                micros: start.elapsed().as_micros() as u64,
            });
            if lambda > config.max_lambda {
                under_constrained = vec![problem.ids[problem.var_of_block[block]]];
                status = SolveStatus::Degenerate;
                break;
            }
            continue;
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = sym.solve(&work, &rhs);
        let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !step_norm.is_finite() {
            lambda *= config.lambda_up;
            records.push(IterationRecord {
                index,
                cost,
                lambda: lambda / config.lambda_up,
                step_norm,
                accepted: false,
                micros: start.elapsed().as_micros() as u64,
            });
            continue;
        }
        if step_norm <= config.step_tolerance {
            records.push(IterationRecord {
                index,
                cost,
                lambda,
                step_norm,
                accepted: false,
                micros: start.elapsed().as_micros() as u64,
            });
            status = SolveStatus::Converged;
            break;
        }
        let trial = problem.retracted(&delta);
        let trial_cost = problem.cost_of(&trial)?;
        let used_lambda = lambda;
        if trial_cost < cost {
            let decrease = (cost - trial_cost) / cost;
            problem.state = trial;
            cost = trial_cost;
            lambda = (lambda * config.lambda_down).max(1e-16);
            stale = true;
            records.push(IterationRecord {
                index,
                cost,
                lambda: used_lambda,
                step_norm,
                accepted: true,
                micros: start.elapsed().as_micros() as u64,
            });
            if decrease < config.relative_tolerance {
                status = SolveStatus::Converged;
                break;
            }
        } else {
            lambda *= config.lambda_up;
            records.push(IterationRecord {
                index,
                cost,
                lambda: used_lambda,
                step_norm,
                accepted: false,
                micros: start.elapsed().as_micros() as u64,
            });
            if lambda > config.max_lambda {
                // No damping yields a decrease: a numerical minimum.
                status = SolveStatus::Converged;
                break;
            }
        }
    }

    let mut values = initial.clone();
    problem.write_back(&mut values);
    let report = SolveReport {
        status,
        iterations: records,
        initial_cost,
        final_cost: cost,
        pruned: Vec::new(),
        under_constrained,
        skipped_factors: problem.skipped(),
    };
    Ok((values, report))
}

/// A graph with large-error factors removed.
#[derive(Debug, Clone)]
pub struct Pruned {
    pub graph: FactorGraph,
    pub round: PruneRound,
}

/// Removes rigidity and motion factors whose chi-square exceeds the threshold
/// for their kind (subject to [`PruneConfig::suppress_neighbors`]).
/// Observation factors are kept. A free variable that would
/// be left without any factor is dropped from the problem instead of being
/// left unconstrained.
pub fn prune_outliers(
    graph: &FactorGraph,
    values: &Values,
    config: &PruneConfig,
) -> Result<Pruned, SolverError> {
    let mut candidates: Vec<(f64, FactorId, &[VariableId])> = Vec::new();
    for e in graph.factors() {
        if e.factor.observes_static() {
            continue;
        }
        let Some(threshold) = config.threshold(e.factor.kind()) else { continue };
        let c = chi2(e.factor.as_ref(), values)?;
        if c > threshold {
            candidates.push((c, e.id, e.factor.keys()));
        }
    }
    // Largest first; ties by id.
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut removed = BTreeSet::new();
    let mut claimed: HashSet<VariableId> = HashSet::new();
    for (_, id, keys) in candidates {
        let points = keys.iter().filter(|k| {
            matches!(k.kind(), VariableKind::StaticPoint | VariableKind::DynamicPoint)
        });
        if config.suppress_neighbors {
            let points: Vec<VariableId> = points.copied().collect();
            if points.iter().any(|p| claimed.contains(p)) {
                continue;
            }
            claimed.extend(points);
        }
        removed.insert(id);
    }
    let mut pruned = graph.clone();
    pruned.remove_factors(&removed);
    let used: HashSet<VariableId> =
        pruned.factors().iter().flat_map(|e| e.factor.keys().iter().copied()).collect();
    let before: HashSet<VariableId> =
        graph.factors().iter().flat_map(|e| e.factor.keys().iter().copied()).collect();
    let excluded: Vec<VariableId> = graph
        .variables()
        .iter()
        .filter(|v| !graph.is_constant(v) && before.contains(v) && !used.contains(v))
        .copied()
        .collect();
    for v in &excluded {
        pruned.remove_variable(v);
    }
    Ok(Pruned { graph: pruned, round: PruneRound { removed: removed.into_iter().collect(), excluded } })
}

/// Alternates solving and pruning for `config.prune.rounds` rounds, then
/// solves the last pruned graph. Without a prune config this is [`solve`].
pub fn solve_with_pruning(
    graph: &FactorGraph,
    initial: &Values,
    config: &SolverConfig,
) -> Result<(Values, SolveReport), SolverError> {
    let rounds = config.prune.as_ref().map_or(0, |p| p.rounds);
    if rounds == 0 {
        return solve(graph, initial, config);
    }
    let prune = config.prune.clone().expect("rounds > 0 implies a prune config");
    let mut current = graph.clone();
    let (mut values, mut report) = solve(&current, initial, config)?;
    for _ in 0..rounds {
        if report.status == SolveStatus::Degenerate {
            break;
        }
        let step = prune_outliers(&current, &values, &prune)?;
        let done = step.round.removed.is_empty();
        report.pruned.push(step.round);
        if done {
            break;
        }
        current = step.graph;
        let (v, r) = solve(&current, &values, config)?;
        values = v;
        report.iterations.extend(r.iterations);
        report.status = r.status;
        report.final_cost = r.final_cost;
        report.under_constrained = r.under_constrained;
        report.skipped_factors = r.skipped_factors;
    }
    Ok((values, report))
}

/// Dense `(H, g)` of the undamped normal equations at `values`, with free
/// variables in id order. Intended for inspection and testing.
pub fn dense_normal_equations(
    graph: &FactorGraph,
    values: &Values,
) -> Result<(Vec<VariableId>, DMatrix<f64>, DVector<f64>), SolverError> {
    let mut problem = Problem::new(graph, values)?;
    let mut h = problem.symbolic.zeros();
    let mut g = vec![0.0; problem.symbolic.size()];
    problem.linearize(&mut h, &mut g)?;
    let order = problem.var_of_block.iter().map(|&v| problem.ids[v]).collect();
    Ok((order, problem.symbolic.to_dense(&h), DVector::from_vec(g)))
}
