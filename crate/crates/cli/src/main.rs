use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    /// Reduced widths for single-core runs.
    Desk,
    /// 16/8 channels, 16x16 pooling, 2048-wide dense layers.
    Full,
    /// Two channels per conv; for smoke tests.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    IciAware,
    IciIgnorant,
    Both,
}

#[derive(Debug, Parser)]
#[command(name = "uwamod", version, about = "Learned modems for doubly-dispersive underwater acoustic links")]
pub struct Cli {
    /// System configuration JSON; overrides the profile's parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate channel / ZP-OFDM equivalent-channel pairs.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Names the random stream, so train/val/test sets differ.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Two-stage training followed by modem aggregation.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        modem: PathBuf,
        /// Defaults to `<checkpoint>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        e1: Option<usize>,
        #[arg(long)]
        e2: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Defaults to `desk` for the desk profile and `full` otherwise.
        #[arg(long, value_enum)]
        arch: Option<ArchChoice>,
    },
    /// Average and minimum sub-channel rates over a dataset.
    EvalRate {
        #[arg(long = "modem")]
        modems: Vec<PathBuf>,
        /// Include the ZP-OFDM baseline as modem `zp-ofdm`.
        #[arg(long)]
        ofdm: bool,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-5,0,5,10,15,20")]
        snr: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo QPSK bit error rates with zero-forcing equalization.
    EvalBer {
        #[arg(long = "modem")]
        modems: Vec<PathBuf>,
        #[arg(long)]
        ofdm: bool,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-5,0,5,10,15,20")]
        snr: Vec<f64>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeChoice,
        #[arg(long, default_value_t = 1000)]
        blocks: usize,
        /// Replace the configuration's maximum Doppler factor.
        #[arg(long)]
        a_max: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a dataset, modem or checkpoint file.
    Inspect { path: PathBuf },
}

fn history_default(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    let config = commands::load_config(cli.config.as_deref(), cli.profile, cli.seed)?;
    match cli.command {
        Command::GenDataset { out, count, split } => commands::gen_dataset(&config, &out, count, &split),
        Command::Train { train, val, checkpoint, modem, history, e1, e2, batch_size, arch } => {
            let history = history.unwrap_or_else(|| history_default(&checkpoint));
            let arch = arch.unwrap_or(match cli.profile {
                Profile::Desk => ArchChoice::Desk,
                Profile::Paper => ArchChoice::Full,
            });
            commands::train(
                &config,
                cli.profile,
                commands::TrainPaths { train: &train, val: &val, checkpoint: &checkpoint, modem: &modem, history: &history },
                commands::PlanOverrides { e1, e2, batch_size },
                arch,
            )
        }
        Command::EvalRate { modems, ofdm, dataset, snr, out } => {
            commands::eval_rate(&config, &modems, ofdm, &dataset, &snr, &out)
        }
        Command::EvalBer { modems, ofdm, snr, mode, blocks, a_max, out } => {
            commands::eval_ber(&config, &modems, ofdm, &snr, mode, blocks, a_max, &out)
        }
        Command::Inspect { path } => commands::inspect(&path),
    }
}
