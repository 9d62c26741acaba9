use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use qsense::commands::{cmd_evaluate, cmd_generate, cmd_train, default_model_paths, TRAINING_SET_FILE};
use qsense::figures::{cmd_figure, run_figure, FIGURE_IDS};
use qsense::output::{write_artifacts, OUT_DIR_ENV};
use qsense::ExperimentConfig;

#[derive(Parser)]
#[command(name = "qsense", version, about = "Train and verify neural-network phase estimators")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress and summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a training set and print its label histogram.
    Generate,
    /// Train the configured replicate networks.
    Train {
        /// Training set (default: <out>/training_set.txt).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue training from these model files instead of fresh networks.
        #[arg(long, num_args = 1..)]
        resume: Vec<PathBuf>,
    },
    /// Evaluate networks and baselines over the configured phases and shot counts.
    Evaluate {
        /// Model files (default: <out>/model_<r>.txt for each replicate).
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
    },
    /// Run a figure experiment (bundled config unless --config is given)
    /// and write its CSVs to <out>/fig<ID>/.
    Figure {
        #[arg(value_parser = parse_figure_id)]
        id: u8,
    },
}

fn parse_figure_id(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(id) if FIGURE_IDS.contains(&id) => Ok(id),
        _ => Err(format!("expected one of {FIGURE_IDS:?}")),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("qsense-out"))
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let say = |msg: &str| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let (path, histogram) = cmd_generate(&cfg, &out)?;
            say(&histogram);
            say(&format!("wrote {}", path.display()));
        }
        Command::Train { data, resume } => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let data = data.clone().unwrap_or_else(|| out.join(TRAINING_SET_FILE));
            for p in cmd_train(&cfg, &data, resume, &out)? {
                say(&format!("wrote {}", p.display()));
            }
        }
        Command::Evaluate { models } => {
            let cfg = load_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let models = if models.is_empty() {
                default_model_paths(&out, cfg.evaluation.replicates)
            } else {
                models.clone()
            };
            for p in cmd_evaluate(&cfg, &models, &out)? {
                say(&format!("wrote {}", p.display()));
            }
        }
        Command::Figure { id } => {
            let written = if cli.config.is_some() {
                let cfg = load_config(cli)?;
                let out = out_dir(cli, Some(&cfg));
                write_artifacts(&out.join(format!("fig{id}")), &run_figure(*id, &cfg)?)?
            } else {
                cmd_figure(*id, cli.seed, &out_dir(cli, None))?
            };
            for p in written {
                say(&format!("wrote {}", p.display()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
