//! Run manifest: what was asked for, which files were written, and how long
//! it took. It is written before any result file and rewritten at the end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::units::num;
use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub configs: Vec<String>,
    pub seeds: Vec<u64>,
    pub modes: Vec<String>,
    pub output_dir: PathBuf,
    pub version: String,
    /// Every file the command emits, the manifest included.
    pub files: Vec<String>,
    /// Wall-clock durations in milliseconds.
    pub timings: Vec<(String, f64)>,
    pub status: String,
    started_unix_ms: u128,
    clock: Instant,
}

impl RunManifest {
    /// Creates the output directory and writes the manifest with status
    /// `running`.
    pub fn begin(
        command: &str,
        output_dir: &Path,
        configs: Vec<String>,
        seeds: Vec<u64>,
        modes: Vec<String>,
        files: &[&str],
    ) -> CliResult<Self> {
        std::fs::create_dir_all(output_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", output_dir.display())))?;
        let mut all = vec![MANIFEST_FILE.to_string()];
        all.extend(files.iter().map(|f| f.to_string()));
        let m = RunManifest {
            command: command.into(),
            configs,
            seeds,
            modes,
            output_dir: output_dir.to_path_buf(),
            version: env!("CARGO_PKG_VERSION").into(),
            files: all,
            timings: Vec::new(),
            status: "running".into(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            clock: Instant::now(),
        };
        m.save()?;
        Ok(m)
    }

    /// Writes one result file. Only files listed at `begin` may be written.
    pub fn emit(&self, name: &str, contents: &str) -> CliResult<()> {
        if !self.files.iter().any(|f| f == name) || name == MANIFEST_FILE {
            return Err(CliError::Runtime(format!("{name} is not listed in the manifest")));
        }
        write_file(&self.output_dir.join(name), contents)
    }

    pub fn time(&mut self, label: &str, ms: f64) {
        self.timings.push((label.into(), ms));
    }

    /// Rewrites the manifest with the final status and total elapsed time.
    pub fn finish(mut self, status: &str) -> CliResult<()> {
        let total = self.clock.elapsed().as_secs_f64() * 1e3;
        self.time("total", total);
        self.status = status.into();
        self.save()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tool dynba {}", self.version);
        let _ = writeln!(out, "command {}", self.command);
        for c in &self.configs {
            let _ = writeln!(out, "config {c}");
        }
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "seeds {}", seeds.join(" "));
        let _ = writeln!(out, "modes {}", self.modes.join(" "));
        let _ = writeln!(out, "output_dir {}", self.output_dir.display());
        let _ = writeln!(out, "started_unix_ms {}", self.started_unix_ms);
        for f in &self.files {
            let _ = writeln!(out, "file {f}");
        }
        for (label, ms) in &self.timings {
            let _ = writeln!(out, "timing_ms {label} {}", num(*ms));
        }
        let _ = writeln!(out, "status {}", self.status);
        out
    }

    fn save(&self) -> CliResult<()> {
        write_file(&self.output_dir.join(MANIFEST_FILE), &self.to_text())
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
