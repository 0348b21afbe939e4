use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynba::metrics::AlignMode;
use dynba::simulation::{preset, SimConfig, PRESET_NAMES};
use dynba::solver::{PruneConfig, SolverConfig};

use crate::{read_input, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dynba", version, about = "Bundle adjustment with articulated dynamic objects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario and write its graph, initial values and ground truth.
    Simulate(SimulateArgs),
    /// Optimize a graph file from an initial values file.
    Solve(SolveArgs),
    /// Run the ablation study and write summary CSVs.
    Ablate(AblateArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
}

impl Cli {
    pub fn execute(self) -> CliResult<()> {
        match self.command {
            Command::Simulate(a) => crate::simulate::run(&a),
            Command::Solve(a) => crate::solve::run(&a),
            Command::Ablate(a) => crate::ablate::run(&a),
            Command::Eval(a) => crate::eval::run(&a),
        }
    }
}

/// A scenario, from a TOML file or a built-in preset.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ScenarioArg {
    /// Scenario config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ScenarioArg {
    pub fn load(&self) -> CliResult<(String, SimConfig)> {
        match (&self.config, &self.preset) {
            (Some(path), _) => Ok((path.display().to_string(), load_config(path)?)),
            (None, Some(name)) => Ok((format!("preset:{name}"), load_preset(name)?)),
            (None, None) => Err(CliError::Usage("either --config or --preset is required".into())),
        }
    }
}

pub fn load_config(path: &Path) -> CliResult<SimConfig> {
    let text = read_input(path)?;
    SimConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn load_preset(name: &str) -> CliResult<SimConfig> {
    preset(name).ok_or_else(|| {
        CliError::Usage(format!("unknown preset {name:?}; known presets: {}", PRESET_NAMES.join(", ")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    Rigid,
    FirstFrame,
}

impl From<AlignArg> for AlignMode {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::Rigid => AlignMode::Rigid,
            AlignArg::FirstFrame => AlignMode::FirstFrame,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Outlier pruning rounds; 0 disables pruning.
    #[arg(long, default_value_t = 0)]
    pub prune_rounds: usize,
    /// Chi-square threshold for rigidity factors.
    #[arg(long)]
    pub rigidity_threshold: Option<f64>,
    /// Chi-square threshold for motion factors.
    #[arg(long)]
    pub motion_threshold: Option<f64>,
}

impl SolverArgs {
    pub fn config(&self) -> CliResult<SolverConfig> {
        let mut c = SolverConfig::default();
        if let Some(n) = self.max_iterations {
            c.max_iterations = n;
        }
        if self.prune_rounds > 0 {
            let mut p = PruneConfig { rounds: self.prune_rounds, ..PruneConfig::default() };
            if let Some(t) = self.rigidity_threshold {
                p.rigidity_threshold = t;
            }
            if let Some(t) = self.motion_threshold {
                p.motion_threshold = t;
            }
            c.prune = Some(p);
        } else if self.rigidity_threshold.is_some() || self.motion_threshold.is_some() {
            return Err(CliError::Usage("pruning thresholds need --prune-rounds > 0".into()));
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Which ablation mode's graph to write.
    #[arg(long, default_value = "full")]
    pub mode: String,
    /// Give this fraction of motion factors a wrong point association.
    #[arg(long)]
    pub corrupt_motion: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Scenario config files; one group of rows each.
    #[arg(long)]
    pub config: Vec<PathBuf>,
    /// Built-in scenarios, after the config files.
    #[arg(long)]
    pub preset: Vec<String>,
    /// Seeds: comma-separated values and half-open ranges, e.g. `0..10,42`.
    #[arg(long)]
    pub seeds: String,
    /// Comma-separated mode names. Defaults to every built-in mode.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub corrupt_motion: Option<f64>,
    #[arg(long, value_enum, default_value_t = AlignArg::Rigid)]
    pub align: AlignArg,
    #[arg(long, default_value_t = 1)]
    pub rpe_delta: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Estimated trajectory (TUM format).
    pub est: PathBuf,
    /// Ground-truth trajectory (TUM format).
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = AlignArg::Rigid)]
    pub align: AlignArg,
    #[arg(long, default_value_t = 1)]
    pub delta: usize,
    /// Also write the report as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `0..3,7,10..12` into `[0, 1, 2, 7, 10, 11]`. Order is kept and
/// duplicates are rejected.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = |part: &str| CliError::Usage(format!("bad seed list entry {part:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad(part))?, b.parse().map_err(|_| bad(part))?);
            if a >= b {
                return Err(bad(part));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!("seed {} is listed twice", w[0])));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3,7").unwrap(), vec![0, 1, 2, 7]);
        assert_eq!(parse_seeds("5").unwrap(), vec![5]);
        assert_eq!(parse_seeds(" 2 , 1 ").unwrap(), vec![2, 1]);
        for bad in ["", "a", "3..3", "1..x", "1,1", "0..2,1", "-1"] {
            assert!(matches!(parse_seeds(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn prune_rounds_zero_is_the_default_solver() {
        let args = SolverArgs { max_iterations: None, prune_rounds: 0, rigidity_threshold: None, motion_threshold: None };
        assert_eq!(args.config().unwrap(), SolverConfig::default());
        let two = SolverArgs { prune_rounds: 2, motion_threshold: Some(9.0), ..args.clone() };
        let c = two.config().unwrap();
        assert_eq!(c.prune.as_ref().unwrap().rounds, 2);
        assert_eq!(c.prune.as_ref().unwrap().motion_threshold, 9.0);
        let orphan = SolverArgs { motion_threshold: Some(9.0), ..args };
        assert!(orphan.config().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
