//! Library side of the `qdet` binary: batch front end for model
//! generation, profiling, quantization, detection, evaluation and
//! benchmarking.

pub mod args;
mod commands;
pub mod failure;
pub mod manifest;
mod synth;

use std::ffi::OsString;
use std::io::Write;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use failure::Failure;
use manifest::{Run, RunManifest};

fn dispatch(command: &Command, run: &mut Run) -> Result<String, Failure> {
    match command {
        Command::GenModel(a) => commands::gen_model(a, run),
        Command::Profile(a) => commands::profile(a, run),
        Command::Quantize(a) => commands::quantize(a, run),
        Command::Detect(a) => commands::detect(a, run),
        Command::Eval(a) => commands::eval(a, run),
        Command::Bench(a) => commands::bench(a, run),
        Command::Synth(a) => synth::synth(a, run),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `out`; diagnostics and the run manifest
/// go to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not usage errors
            return if e.use_stderr() { Failure::USAGE } else { 0 };
        }
    };

    let start = Instant::now();
    let mut run = Run::default();
    let result = dispatch(&cli.command, &mut run);
    run.time("total", start.elapsed());

    let code = match &result {
        Ok(report) => {
            let _ = out.write_all(report.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let manifest = RunManifest::new(&cli.command, run, code, result.as_ref().err());
    if let Err(e) = manifest.emit(cli.manifest.as_deref()) {
        eprintln!("warning: could not write run manifest: {e}");
    }
    code
}
