use std::time::Instant;

use dynba::graph::text::{write_graph, write_values};
use dynba::metrics::{write_tum, Trajectory};
use dynba::simulation::{
    corrupt_motion_factors, generate, perturb_initialization, BuildInput, SimError, StrategyRegistry,
};

use crate::args::SimulateArgs;
use crate::manifest::RunManifest;
use crate::units::num;
use crate::{CliError, CliResult};

pub const GRAPH_FILE: &str = "graph.txt";
pub const INIT_FILE: &str = "init.txt";
pub const TRUTH_FILE: &str = "truth.txt";
pub const TRUTH_TUM: &str = "truth.tum";
pub const INIT_TUM: &str = "init.tum";
pub const INJECTED_FILE: &str = "injected.txt";

pub(crate) fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config(_) | SimError::ModeMismatch { .. } => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn run(a: &SimulateArgs) -> CliResult<()> {
    let (label, mut config) = a.scenario.load()?;
    if let Some(seed) = a.seed {
        config = config.with_seed(seed);
    }
    if let Some(f) = a.corrupt_motion {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Usage(format!("--corrupt-motion must be in [0, 1], got {f}")));
        }
    }
    let registry = StrategyRegistry::builtin();
    let strategy = registry.get(&a.mode).ok_or_else(|| {
        let known: Vec<&str> = registry.names().collect();
        CliError::Usage(format!("unknown mode {:?}; known modes: {}", a.mode, known.join(", ")))
    })?;

    let clock = Instant::now();
    let (truth, dataset) = generate(&config).map_err(sim_error)?;
    for w in &dataset.warnings {
        log::warn!("{w}");
    }
    let init = perturb_initialization(&truth, &dataset, &config);
    let graph = strategy
        .build(&BuildInput { dataset: &dataset, init: &init })
        .map_err(sim_error)?
        .ok_or_else(|| CliError::Usage(format!("mode {} has no factor graph to write", a.mode)))?;
    let (graph, injected) = match a.corrupt_motion {
        Some(f) => {
            let (g, ids) = corrupt_motion_factors(&graph, &init, f, config.seed).map_err(sim_error)?;
            (g, Some(ids))
        }
        None => (graph, None),
    };
    let generate_ms = clock.elapsed().as_secs_f64() * 1e3;

    let mut files = vec![GRAPH_FILE, INIT_FILE, TRUTH_FILE, TRUTH_TUM, INIT_TUM];
    if injected.is_some() {
        files.push(INJECTED_FILE);
    }
    let mut m = RunManifest::begin("simulate", &a.out, vec![label], vec![config.seed], vec![a.mode.clone()], &files)?;
    m.time("generate", generate_ms);
    let cameras = Trajectory::new(init.camera_poses()).map_err(|e| CliError::Runtime(e.to_string()))?;
    m.emit(GRAPH_FILE, &write_graph(&graph))?;
    m.emit(INIT_FILE, &write_values(&init))?;
    m.emit(TRUTH_FILE, &write_values(&truth.values()))?;
    m.emit(TRUTH_TUM, &write_tum(&truth.trajectory()))?;
    m.emit(INIT_TUM, &write_tum(&cameras))?;
    if let Some(ids) = &injected {
        let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
        m.emit(INJECTED_FILE, &text)?;
    }

    let (mut statics, mut dynamics) = (0, 0);
    for k in 0..dataset.num_frames() {
        let (s, d) = dataset.visible_counts(k);
        statics += s;
        dynamics += d;
    }
    println!("scenario {} seed {} frames {}", config.name, config.seed, dataset.num_frames());
    println!("static_observations {statics}");
    println!("dynamic_observations {dynamics}");
    println!("dynamic_per_static {}", num(dataset.dynamic_per_static()));
    println!("graph {} variables {} factors {}", a.mode, graph.variables().len(), graph.num_factors());
    if let Some(ids) = &injected {
        println!("corrupted_motion_factors {}", ids.len());
    }
    m.finish("complete")
}
