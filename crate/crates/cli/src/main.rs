mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command, DiagnoseCommand, SweepCommand};
use commands::{Run, Summary};
use error::{CliError, CliResult};

fn global_flag<T: serde::de::DeserializeOwned>(
    config: Option<&toml::Table>,
    key: &str,
) -> CliResult<Option<T>> {
    match config.and_then(|c| c.get(key)) {
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e| CliError::usage(format!("config key {key:?}: {e}"))),
    }
}

fn dispatch(cli: &Cli) -> CliResult<Summary> {
    let file = config::load(cli.config.as_deref())?;
    let cfg = file.as_ref();
    let strict = cli.strict || global_flag::<bool>(cfg, "strict")?.unwrap_or(false);
    if let Some(jobs) = cli.jobs.or(global_flag::<usize>(cfg, "jobs")?) {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    let run = Run { strict };
    match &cli.command {
        Command::GenShapes(a) => commands::gen_shapes(&run, &config::merge(a, cfg, &["gen-shapes"])?),
        Command::SynthEmbed(a) => {
            commands::synth_embed(&run, &config::merge(a, cfg, &["synth-embed"])?)
        }
        Command::Import(a) => commands::import(&run, &config::merge(a, cfg, &["import"])?),
        Command::FitMapper(a) => commands::fit_mapper(&run, &config::merge(a, cfg, &["fit-mapper"])?),
        Command::Steer(a) => commands::steer(&run, &config::merge(a, cfg, &["steer"])?),
        Command::Retrieve(a) => commands::retrieve(&run, &config::merge(a, cfg, &["retrieve"])?),
        Command::Rerank(a) => commands::rerank(&run, &config::merge(a, cfg, &["rerank"])?),
        Command::Eval(a) => commands::eval(&run, &config::merge(a, cfg, &["eval"])?),
        Command::Diagnose(d) => match d {
            DiagnoseCommand::Mapper(a) => {
                commands::diagnose_mapper(&run, &config::merge(a, cfg, &["diagnose", "mapper"])?)
            }
            DiagnoseCommand::Correlation(a) => commands::diagnose_correlation(
                &run,
                &config::merge(a, cfg, &["diagnose", "correlation"])?,
            ),
            DiagnoseCommand::Interference(a) => commands::diagnose_interference(
                &run,
                &config::merge(a, cfg, &["diagnose", "interference"])?,
            ),
            DiagnoseCommand::Substitutions(a) => commands::diagnose_substitutions(
                &run,
                &config::merge(a, cfg, &["diagnose", "substitutions"])?,
            ),
        },
        Command::Sweep(s) => match s {
            SweepCommand::K(a) => commands::sweep_k(&run, &config::merge(a, cfg, &["sweep", "k"])?),
            SweepCommand::Alpha(a) => {
                commands::sweep_alpha(&run, &config::merge(a, cfg, &["sweep", "alpha"])?)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match dispatch(&cli) {
        Ok(summary) => {
            let mut line = json!({ "command": name, "status": "ok" });
            if let Value::Object(m) = &mut line {
                m.extend(summary);
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!(
                "{}",
                json!({ "command": name, "status": "error", "exit_code": e.code, "message": e.message })
            );
            ExitCode::from(e.code)
        }
    }
}
