use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use oscillator_cli::commands::{self, EvalRange, SweepAxis};
use oscillator_cli::{CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nosc", version, about = "Neural oscillator experiments")]
struct Cli {
    /// JSON experiment config; defaults are used for anything missing.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, `path.to.field=<json>`. Repeatable.
    #[arg(long = "set", global = true)]
    sets: Vec<String>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Range {
    Split,
    All,
}

impl From<Range> for EvalRange {
    fn from(r: Range) -> Self {
        match r {
            Range::Split => EvalRange::Split,
            Range::All => EvalRange::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    N,
    T,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the structure and write a dataset.
    GenData {
        /// Dataset path (default: <out>/dataset.bin).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train an oscillator on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint path (default: <out>/model.bin).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training horizon in seconds (default: the dataset horizon).
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Relative error of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "split")]
        range: Range,
    },
    /// Train and evaluate over a range of N or T, then fit a power law.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma separated, ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Dry run with errors `c*value^e`, given as `c,e`.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        planted: Option<(f64, f64)>,
        /// Reuse an existing dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate bound expressions for a JSON list of constant sets.
    Bounds {
        #[arg(long)]
        input: PathBuf,
    },
    /// Distribution of targets (and predictions) at one time.
    Dist {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Seconds (default: the dataset horizon).
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, value_enum, default_value = "split")]
        range: Range,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `c,e`")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(a)?, num(b)?))
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.sets, cli.seed)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    let manifest = match cli.command {
        Command::GenData { dataset } => {
            let path = dataset.unwrap_or_else(|| cfg.out_dir.join("dataset.bin"));
            commands::gen_data(&cfg, &path)?
        }
        Command::Train { dataset, model, horizon } => {
            let path = model.unwrap_or_else(|| cfg.out_dir.join("model.bin"));
            commands::train(&cfg, &dataset, &path, horizon)?
        }
        Command::Eval { model, dataset, range } => commands::eval(&cfg, &model, &dataset, range.into())?,
        Command::Sweep { axis, values, planted, dataset } => {
            let axis = match axis {
                Axis::N => SweepAxis::N,
                Axis::T => SweepAxis::T,
            };
            commands::sweep(&cfg, axis, &values, planted, dataset.as_deref())?.1
        }
        Command::Bounds { input } => commands::bounds(&cfg, &input)?.1,
        Command::Dist { dataset, model, time, range } => {
            commands::dist(&cfg, &dataset, model.as_deref(), time, range.into())?
        }
    };
    println!("{}", serde_json::to_string(&manifest.summary).map_err(|e| CliError::io("summary", e))?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
