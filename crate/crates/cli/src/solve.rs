use dynba::graph::text::{read_graph, read_values, write_values};
use dynba::graph::FactorRegistry;
use dynba::metrics::{write_tum, Trajectory};
use dynba::numfmt::sig;
use dynba::solver::{solve_with_pruning, SolveStatus};

use crate::args::SolveArgs;
use crate::manifest::RunManifest;
use crate::units::num;
use crate::{read_input, CliError, CliResult};

pub const VALUES_FILE: &str = "values.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.tum";

pub fn run(a: &SolveArgs) -> CliResult<()> {
    let config = a.solver.config()?;
    let graph = read_graph(&read_input(&a.graph)?, &FactorRegistry::builtin())
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.graph.display())))?;
    let init =
        read_values(&read_input(&a.init)?).map_err(|e| CliError::Usage(format!("{}: {e}", a.init.display())))?;
    graph.check_values(&init).map_err(|e| CliError::Usage(format!("{}: {e}", a.init.display())))?;

    let inputs = vec![a.graph.display().to_string(), a.init.display().to_string()];
    let mut m = RunManifest::begin("solve", &a.out, inputs, Vec::new(), Vec::new(), &[
        VALUES_FILE,
        REPORT_FILE,
        TRAJECTORY_FILE,
    ])?;
    let (values, report) = solve_with_pruning(&graph, &init, &config).map_err(|e| CliError::Runtime(e.to_string()))?;
    m.time("solve", report.total_micros() as f64 / 1e3);
    m.time("per_iteration", report.micros_per_iteration() / 1e3);
    let cameras = Trajectory::new(values.camera_poses()).map_err(|e| CliError::Runtime(e.to_string()))?;
    m.emit(VALUES_FILE, &write_values(&values))?;
    m.emit(REPORT_FILE, &report.to_text_untimed())?;
    m.emit(TRAJECTORY_FILE, &write_tum(&cameras))?;

    println!("status {}", report.status.name());
    println!("initial_cost {}", sig(report.initial_cost, 17));
    println!("final_cost {}", sig(report.final_cost, 17));
    println!("iterations {}", report.iterations.len());
    let removed: Vec<String> = report.removed_factors().iter().map(|id| id.to_string()).collect();
    println!("pruned {}", removed.join(" "));
    println!("ms_per_iteration {}", num(report.micros_per_iteration() / 1e3));
    if report.status == SolveStatus::Degenerate {
        m.finish("failed")?;
        return Err(CliError::Runtime(format!(
            "normal equations are singular; {} under-constrained variables listed in {REPORT_FILE}",
            report.under_constrained.len()
        )));
    }
    m.finish("complete")
}
