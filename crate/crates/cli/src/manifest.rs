use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::args::Command;
use crate::failure::Failure;

/// Paths and timings collected while a command runs.
#[derive(Debug, Default)]
pub struct Run {
    inputs: Vec<String>,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, f64>,
}

impl Run {
    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub fn time(&mut self, what: &str, d: Duration) {
        *self.timings_ms.entry(what.to_string()).or_default() += d.as_secs_f64() * 1e3;
    }
}

/// Machine-readable record of one invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub version: &'static str,
    pub exit_code: u8,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &Command, run: Run, exit_code: u8, error: Option<&Failure>) -> Self {
        Self {
            command: command.name(),
            config: command.config(),
            inputs: run.inputs,
            outputs: run.outputs,
            timings_ms: run.timings_ms,
            version: qdet::VERSION,
            exit_code,
            error: error.map(|e| e.to_string()),
        }
    }

    /// One JSON line on stderr, or a pretty file when a path is given.
    pub fn emit(&self, path: Option<&Path>) -> std::io::Result<()> {
        match path {
            Some(p) => std::fs::write(p, serde_json::to_string_pretty(self)? + "\n"),
            None => {
                eprintln!("{}", serde_json::to_string(self)?);
                Ok(())
            }
        }
    }
}
