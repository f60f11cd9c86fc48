//! `vigor`: train, ablate, analyze and evaluate gradient-norm reward runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde::Serialize;
use vigor_core::runner::{
    resolve_config, run_ablation_suite, run_analyze, run_eval, run_from_manifest, run_train,
    seed_from_env, DatasetSpec, Provenance,
};
use vigor_core::trainer::TrainerConfig;
use vigor_core::Result;

#[derive(Parser)]
#[command(
    name = "vigor",
    version,
    about = "Verifier-free gradient-norm rewards for GRPO"
)]
#[command(after_help = "The VIGOR_SEED environment variable overrides the seed of every run.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config key, e.g. `--set steps=50 --set model.hidden_dim=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(ConfigArgs),
    /// Re-run the config recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every reward variant on shared seeds and write a comparison report.
    Ablate(ConfigArgs),
    /// Build tables and plots from a finished run.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated: length_bins, rank_accuracy, top_fraction, curves, plots.
        #[arg(long, value_delimiter = ',', required = true)]
        which: Vec<String>,
    },
    /// Evaluate a checkpoint of a finished run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// `train`, `eval`, `file:<path>` or `kind:size:difficulty:seed[:split]`.
        #[arg(long)]
        dataset: String,
        /// `final`, `initial` or a step number.
        #[arg(long)]
        checkpoint: Option<String>,
        /// Also score groups and report per-rank accuracy.
        #[arg(long)]
        rank_probe: bool,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn resolve(args: &ConfigArgs) -> Result<(TrainerConfig, Provenance)> {
    resolve_config(&args.config, &args.overrides, seed_from_env()?)
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let (config, prov) = resolve(&args)?;
            print_json(&run_train(&config, &args.out, prov)?)?;
            Ok(true)
        }
        Command::Replay { manifest, out } => {
            print_json(&run_from_manifest(&manifest, &out)?)?;
            Ok(true)
        }
        Command::Ablate(args) => {
            let (config, prov) = resolve(&args)?;
            let rows = run_ablation_suite(&config, &args.out, prov)?;
            for row in &rows {
                println!(
                    "{:<18} {:<7} acc {} len {}",
                    row.name,
                    row.status,
                    fmt_opt(row.final_accuracy),
                    fmt_opt(row.final_mean_length)
                );
            }
            println!("report: {}", args.out.join("report.csv").display());
            Ok(rows.iter().all(|r| !r.failed()))
        }
        Command::Analyze { run, which } => {
            for path in run_analyze(&run, &which)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Eval {
            run,
            dataset,
            checkpoint,
            rank_probe,
        } => {
            let spec = DatasetSpec::parse(&dataset)?;
            print_json(&run_eval(&run, &spec, checkpoint.as_deref(), rank_probe)?)?;
            Ok(true)
        }
        Command::DefaultConfig => {
            print!("{}", TrainerConfig::default().to_toml_string());
            Ok(true)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            error!("some ablation arms failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
