//! JSON run reports with a stable key order.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::io;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub details: Value,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config: Value,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<String>,
    pub exit_code: i32,
    #[serde(skip)]
    file_stem: String,
    #[serde(skip)]
    timings: bool,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunReport {
    pub fn new(command: &str, config: Value, timings: bool) -> Self {
        RunReport {
            command: command.to_string(),
            config,
            stages: Vec::new(),
            artifacts: Vec::new(),
            exit_code: 0,
            file_stem: command.to_string(),
            timings,
            clock: Some(Instant::now()),
        }
    }

    /// Names the report file `<stem>.json` instead of `<command>.json`.
    pub fn with_file_stem(mut self, stem: &str) -> Self {
        self.file_stem = stem.to_string();
        self
    }

    /// Records a stage, timed from the previous stage (or report creation).
    pub fn stage(&mut self, name: &str, passed: bool, details: Value) {
        let wall_time_s = self
            .timings
            .then(|| self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64()));
        self.clock = Some(Instant::now());
        println!("{name}: {}", if passed { "pass" } else { "FAIL" });
        self.stages.push(StageRecord { name: name.to_string(), passed, wall_time_s, details });
    }

    pub fn all_passed(&self) -> bool {
        self.stages.iter().all(|s| s.passed)
    }

    pub fn write_artifact(&mut self, path: &Path, contents: &str) -> Result<(), CliError> {
        io::write_file(path, contents)?;
        self.artifacts.push(path.display().to_string());
        Ok(())
    }

    /// Writes the report itself into `out_dir` and returns the exit code.
    pub fn finish(mut self, out_dir: &Path, exit_code: i32) -> Result<i32, CliError> {
        let path = io::artifact(out_dir, &format!("{}.json", self.file_stem));
        self.artifacts.push(path.display().to_string());
        self.exit_code = exit_code;
        io::write_file(&path, &io::to_json(&self))?;
        println!("report: {}", path.display());
        Ok(exit_code)
    }
}
