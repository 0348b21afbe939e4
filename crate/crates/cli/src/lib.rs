//! Command-line driver: `simulate`, `solve`, `ablate` and `eval`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 runtime failure,
//! 3 ablation finished with failed cells.

use std::ffi::OsString;

use clap::Parser;

pub mod ablate;
pub mod args;
pub mod eval;
pub mod manifest;
pub mod simulate;
pub mod solve;
pub mod units;

pub use args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    /// Some ablation cells failed; the outputs were still written.
    #[error("{0}")]
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Partial(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn read_input(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// RFC 4180 text with a header row. Lines end in `\n`.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

/// Parses `argv` and runs the command, printing diagnostics to stderr.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.execute() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
