use std::fmt::Write as _;
use std::path::Path;

use dynba::metrics::{evaluate, read_tum, MetricReport, Trajectory};

use crate::args::EvalArgs;
use crate::units::{cm, num};
use crate::{csv_text, read_input, CliError, CliResult};

pub const CSV_HEADER: [&str; 7] = ["ate_cm", "rpe_rot_deg", "rpe_trans_cm", "frames", "rpe_delta", "alignment", "degenerate"];

fn load(path: &Path) -> CliResult<Trajectory> {
    read_tum(&read_input(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Report fields in output units, in [`CSV_HEADER`] order.
pub fn fields(r: &MetricReport) -> Vec<String> {
    vec![
        num(cm(r.ate_rmse)),
        num(r.rpe_rot_rmse_deg),
        num(cm(r.rpe_trans_rmse)),
        r.ate_series.len().to_string(),
        r.delta.to_string(),
        r.alignment.mode.name().to_string(),
        r.alignment.degenerate.to_string(),
    ]
}

/// Flat `key value` record in output units.
pub fn record(r: &MetricReport) -> String {
    let mut out = String::new();
    for (k, v) in CSV_HEADER.iter().zip(fields(r)) {
        let _ = writeln!(out, "{k} {v}");
    }
    out
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    let est = load(&a.est)?;
    let gt = load(&a.gt)?;
    let report = evaluate(&est, &gt, a.align.into(), a.delta).map_err(|e| CliError::Usage(e.to_string()))?;
    print!("{}", record(&report));
    if let Some(path) = &a.csv {
        std::fs::write(path, csv_text(&CSV_HEADER, &[fields(&report)]))
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
