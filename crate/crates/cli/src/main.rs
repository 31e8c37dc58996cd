use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmfuse::corpus::Modality;
use mmfuse::imbalance::ImbalanceStrategy;
use mmfuse::synth::SynthConfig;
use mmfuse_cli::config::{resolve, LossChoice, Overrides};
use mmfuse_cli::{exit_code, stages};

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Imbalance {
    None,
    WeightRescale,
    UniformSampling,
}

impl From<Imbalance> for ImbalanceStrategy {
    fn from(i: Imbalance) -> Self {
        match i {
            Imbalance::None => ImbalanceStrategy::None,
            Imbalance::WeightRescale => ImbalanceStrategy::WeightRescale,
            Imbalance::UniformSampling => ImbalanceStrategy::UniformSampling,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrainTarget {
    Image,
    Text,
    Tabular,
}

#[derive(Debug, Parser)]
#[command(name = "mmfuse", version, about = "Multimodal classification of heritage records")]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "MMFUSE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MMFUSE_SEED")]
    seed: Option<u64>,
    /// Worker threads for grid searches; results do not depend on it.
    #[arg(long, global = true, env = "MMFUSE_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, env = "MMFUSE_LOSS", value_enum)]
    loss: Option<LossChoice>,
    #[arg(long, global = true, env = "MMFUSE_IMBALANCE", value_enum)]
    imbalance: Option<Imbalance>,
    /// JSON hyperparameter grid for the tree classifiers of the stage being run.
    #[arg(long, global = true, env = "MMFUSE_GRID")]
    grid: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "MMFUSE_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus and a matching config into --out.
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().n_records)]
        records: usize,
    },
    /// Parse, filter and split the corpus; write statistics.
    Ingest,
    /// Train one single-modality classifier on the training split.
    Train {
        #[arg(value_enum)]
        modality: TrainTarget,
    },
    /// Fit fusion on the validation split, evaluate on test, export unlabeled predictions.
    Fuse,
    /// Every stage in order.
    Pipeline,
}

fn run(cli: Cli) -> mmfuse::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mmfuse::Error::Config(format!("cannot set up {n} threads: {e}")))?;
    }
    if let Command::Synth { records } = cli.command {
        let dir = cli.out.ok_or_else(|| mmfuse::Error::Config("synth needs --out".into()))?;
        let mut cfg = SynthConfig { n_records: records, ..SynthConfig::default() };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        return stages::synth(&dir, &cfg);
    }
    let grid_for_tabular = matches!(cli.command, Command::Train { modality: TrainTarget::Tabular } | Command::Pipeline);
    let grid_for_fusion = matches!(cli.command, Command::Fuse | Command::Pipeline);
    let overrides = Overrides {
        seed: cli.seed,
        loss: cli.loss,
        imbalance: cli.imbalance.map(Into::into),
        tabular_grid: cli.grid.clone().filter(|_| grid_for_tabular),
        fusion_grid: cli.grid.clone().filter(|_| grid_for_fusion),
        out: cli.out.clone(),
    };
    let run = resolve(cli.config.as_deref(), &overrides)?;
    log::info!("config_sha256={} seed={}", run.stamp.config_sha256, run.stamp.seed);
    match cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Ingest => stages::ingest(&run),
        Command::Train { modality: TrainTarget::Image } => stages::train_head(&run, Modality::Image),
        Command::Train { modality: TrainTarget::Text } => stages::train_head(&run, Modality::Text),
        Command::Train { modality: TrainTarget::Tabular } => stages::train_tabular(&run),
        Command::Fuse => stages::fuse(&run),
        Command::Pipeline => stages::pipeline(&run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MMFUSE_LOG", "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
