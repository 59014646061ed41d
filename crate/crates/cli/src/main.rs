use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mnb_core::checkpoint;
use mnb_core::experiment::{self, ExperimentConfig};
use mnb_core::Error;

/// Merge-and-bound class-incremental experiments on small MLPs.
#[derive(Debug, Parser)]
#[command(name = "mnb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment. Extra `--key value` pairs override the config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Print tensor names, shapes and norms of a checkpoint.
    InspectCkpt { path: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// Turns `--key value` / `--key=value` tokens into pairs.
fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(tok) = it.next() {
        let Some(key) = tok.strip_prefix("--") else {
            return Err(Failure::Config(format!("expected `--key value`, got `{tok}`")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_owned(), v.to_owned()));
            continue;
        }
        let v = it
            .next()
            .ok_or_else(|| Failure::Config(format!("override `--{key}` has no value")))?;
        out.push((key.to_owned(), v.clone()));
    }
    Ok(out)
}

fn load_config(path: &PathBuf, raw: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut overrides = Vec::new();
    if let Ok(dir) = std::env::var("MNB_OUT") {
        overrides.push(("out_dir".to_owned(), dir));
    }
    overrides.extend(parse_overrides(raw)?);
    Ok(ExperimentConfig::from_file(path, &overrides)?)
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let r = experiment::run(&cfg)?;
            println!("out_dir: {}", cfg.out_dir.display());
            println!("avg_inc_acc: {}", r.summary.avg_inc_acc);
            println!("forgetting: {}", r.summary.forgetting);
            println!("avg_new_acc: {}", r.summary.avg_new_acc);
        }
        Command::Sweep {
            config,
            axis,
            values,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(str::to_owned)
                .collect();
            let rows = experiment::sweep(&cfg, &axis, &values)?;
            print!("{}", experiment::sweep_summary_csv(&axis, &rows));
        }
        Command::InspectCkpt { path } => {
            let ck = checkpoint::read(&path)?;
            print!("{}", ck.describe());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
