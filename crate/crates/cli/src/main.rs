use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chemotaxis_cli::compare::{compare_values, TolSpec};
use chemotaxis_cli::config::{parse_override, ExperimentConfig};
use chemotaxis_cli::error::{CliError, Result};
use chemotaxis_cli::presets;
use chemotaxis_cli::report::{run_and_write, Report};
use clap::{Parser, Subcommand};

/// Simulate velocity-jump chemotaxis models and their diffusion limits.
#[derive(Parser)]
#[command(name = "chemotaxis", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        /// Output directory (overrides `output.dir`).
        #[arg(short, long)]
        out: Option<PathBuf>,
        config: PathBuf,
        /// Config overrides, `--key=value` with dotted keys.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Compare two reports metric by metric; exit code 1 on any failure.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Tolerance file, or inline `abs=..,rel=..`. Exact by default.
        #[arg(default_value = "abs=0,rel=0")]
        tolerance: String,
        /// Print the table as JSON.
        #[arg(long)]
        json: bool,
        /// List passing metrics too.
        #[arg(long)]
        all: bool,
    },
    /// Built-in experiments.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's TOML.
    Show { name: String },
    /// Run a preset.
    Run {
        #[arg(short, long)]
        out: Option<PathBuf>,
        name: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    args.iter().map(|a| parse_override(a)).collect()
}

fn execute(mut cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    if out.is_some() {
        cfg.output.dir = out;
    }
    log::info!("running `{}` ({:?})", cfg.name, cfg.experiment);
    let (_, written) = run_and_write(&cfg)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn compare(a: &Path, b: &Path, tolerance: &str, json: bool, all: bool) -> Result<()> {
    let spec = TolSpec::load(tolerance)?;
    let ra = serde_json::to_value(Report::from_path(a)?)?;
    let rb = serde_json::to_value(Report::from_path(b)?)?;
    let table = compare_values(&ra, &rb, &spec);
    if json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.render(all));
    }
    if table.all_pass() {
        Ok(())
    } else {
        Err(CliError::Comparison(format!("{} of {} metrics out of tolerance", table.failed, table.rows.len())))
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { out, config, overrides: o } => execute(ExperimentConfig::from_path(&config, &overrides(&o)?)?, out),
        Command::Compare { a, b, tolerance, json, all } => compare(&a, &b, &tolerance, json, all),
        Command::Presets { action } => match action {
            PresetAction::List => {
                presets::names().for_each(|n| println!("{n}"));
                Ok(())
            }
            PresetAction::Show { name } => {
                print!("{}", presets::get(&name)?.toml);
                Ok(())
            }
            PresetAction::Run { out, name, overrides: o } => execute(presets::get(&name)?.config(&overrides(&o)?)?, out),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
