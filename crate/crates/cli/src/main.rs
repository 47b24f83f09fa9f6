mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

/// Train, index, query and evaluate learned spatial keyword retrieval.
#[derive(Debug, Parser)]
#[command(name = "list", version)]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Config overrides, applied after --config.
    #[arg(value_name = "KEY=VALUE")]
    pub pairs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    List,
    Brute,
    Ivf,
    #[value(name = "ivf_s")]
    IvfS,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset into --out.
    Gen {
        #[command(flatten)]
        set: Overrides,
    },
    /// Train the relevance model.
    TrainModel {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Mine pseudo-labels and train the cluster classifier.
    TrainIndex {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Partition the objects into inverted lists.
    Build {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Run queries against an index and write ranked results.
    Query {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Single query latitude (with --lon and --emb).
        #[arg(long, requires_all = ["lon", "emb"])]
        lat: Option<f64>,
        #[arg(long)]
        lon: Option<f64>,
        /// Comma-separated embedding.
        #[arg(long)]
        emb: Option<String>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Evaluate a retrieval system on a query split.
    Eval {
        #[arg(long, value_enum)]
        system: Option<System>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[command(flatten)]
        set: Overrides,
    },
    /// Sweep cr for every system and write a trade-off CSV.
    Bench {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[command(flatten)]
        set: Overrides,
    },
}

fn load_config(cli: &Cli, set: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for pair in &set.pairs {
        cfg.assign(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        anyhow::bail!("--threads must be >= 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("--threads: {e}"))?;
    let ctx = commands::Context {
        out: cli.out.clone(),
        parallelism: if cli.threads > 1 {
            list_core::Parallelism::Rayon
        } else {
            list_core::Parallelism::Sequential
        },
    };
    match &cli.command {
        Command::Gen { set } => commands::gen(&ctx, load_config(&cli, set)?),
        Command::TrainModel { data, set } => {
            commands::train_model(&ctx, load_config(&cli, set)?, data.as_deref())
        }
        Command::TrainIndex { data, model, set } => commands::train_index(
            &ctx,
            load_config(&cli, set)?,
            data.as_deref(),
            model.as_deref(),
        ),
        Command::Build {
            data,
            classifier,
            set,
        } => commands::build(
            &ctx,
            load_config(&cli, set)?,
            data.as_deref(),
            classifier.as_deref(),
        ),
        Command::Query {
            data,
            model,
            index,
            lat,
            lon,
            emb,
            set,
        } => {
            let single = match (lat, lon, emb) {
                (Some(lat), Some(lon), Some(emb)) => Some((*lat, *lon, emb.as_str())),
                _ => None,
            };
            commands::query(
                &ctx,
                load_config(&cli, set)?,
                data.as_deref(),
                model.as_deref(),
                index.as_deref(),
                single,
            )
        }
        Command::Eval {
            system,
            data,
            model,
            index,
            set,
        } => commands::eval(
            &ctx,
            load_config(&cli, set)?,
            *system,
            data.as_deref(),
            model.as_deref(),
            index.as_deref(),
        ),
        Command::Bench {
            data,
            model,
            index,
            set,
        } => commands::bench(
            &ctx,
            load_config(&cli, set)?,
            data.as_deref(),
            model.as_deref(),
            index.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
