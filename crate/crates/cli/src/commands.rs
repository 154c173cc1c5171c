use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use uwamod_core::dataset::generate_dataset;
use uwamod_core::evaluation::{rate_sweep, simulate_ber_modes, ChannelSource, EqualizerMode};
use uwamod_core::io::{describe, load_modem, save_modem, ByteReader, Dataset};
use uwamod_core::modem::{zp_ofdm_modem, Modem};
use uwamod_core::{spawn_stream, SystemConfig};
use uwamod_net::checkpoint::{describe_checkpoint, CHECKPOINT_MAGIC};
use uwamod_net::train::History;
use uwamod_net::{finalize_modem, init_params, train_stage1, train_stage2, ArchConfig, Checkpoint, NetDims, TrainingPlan};

use crate::{ArchChoice, ModeChoice, Profile};

pub fn load_config(path: Option<&Path>, profile: Profile, seed: Option<u64>) -> Result<SystemConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SystemConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => match profile {
            Profile::Desk => SystemConfig::desk(),
            Profile::Paper => SystemConfig::paper(),
        },
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().context("invalid configuration")?;
    Ok(config)
}

/// First 16 hex digits of the SHA-256 of the canonical configuration JSON.
pub fn config_hash(config: &SystemConfig) -> String {
    let digest = Sha256::digest(config.to_json().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Opens a CSV file whose first line is a provenance comment.
fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {comment}")?;
    Ok(csv::Writer::from_writer(out))
}

fn provenance(config: &SystemConfig) -> String {
    format!("config_hash={} seed={}", config_hash(config), config.seed)
}

pub fn gen_dataset(config: &SystemConfig, out: &Path, count: usize, split: &str) -> Result<()> {
    let pairs = generate_dataset(config, count, &mut spawn_stream(config.seed, &format!("dataset/{split}")))?;
    let ds = Dataset { config: config.clone(), pairs };
    ds.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

pub struct TrainPaths<'a> {
    pub train: &'a Path,
    pub val: &'a Path,
    pub checkpoint: &'a Path,
    pub modem: &'a Path,
    pub history: &'a Path,
}

pub struct PlanOverrides {
    pub e1: Option<usize>,
    pub e2: Option<usize>,
    pub batch_size: Option<usize>,
}

fn load_matching(path: &Path, config: &SystemConfig) -> Result<Dataset> {
    let ds = Dataset::load(path).with_context(|| format!("loading {}", path.display()))?;
    let (want, got) = (config.dims()?, ds.config.dims()?);
    if want != got {
        bail!("{} has dims {got:?} but the configuration implies {want:?}", path.display());
    }
    Ok(ds)
}

pub fn train(
    config: &SystemConfig,
    profile: Profile,
    paths: TrainPaths<'_>,
    overrides: PlanOverrides,
    arch: ArchChoice,
) -> Result<()> {
    let train = load_matching(paths.train, config)?;
    let val = load_matching(paths.val, config)?;
    let mut plan = match profile {
        Profile::Desk => TrainingPlan::desk(),
        Profile::Paper => TrainingPlan::paper(),
    };
    plan.e1 = overrides.e1.unwrap_or(plan.e1);
    plan.e2 = overrides.e2.unwrap_or(plan.e2);
    plan.batch_size = overrides.batch_size.unwrap_or(plan.batch_size);
    plan.train = train.pairs.len();
    plan.val = val.pairs.len();
    let arch = match arch {
        ArchChoice::Desk => ArchConfig::desk(),
        ArchChoice::Full => ArchConfig::default(),
        ArchChoice::Tiny => ArchConfig::tiny(),
    };
    let dims = NetDims::from(config.dims()?);
    let mut params = init_params(&arch, dims, &mut spawn_stream(config.seed, "init"))?;
    eprintln!("training {} parameters: E1={} E2={} batch={}", params.parameter_count(), plan.e1, plan.e2, plan.batch_size);

    let mut history = History::default();
    let one = train_stage1(&mut params, &train.pairs, &val.pairs, &plan, config)?;
    history.extend(one.history);
    let two = train_stage2(&mut params, &train.pairs, &val.pairs, &plan, config)?;
    history.extend(two.history);
    let modem = finalize_modem(&params, &val.pairs)?;

    Checkpoint { params, adam: Some(two.adam) }
        .save(paths.checkpoint)
        .with_context(|| format!("writing {}", paths.checkpoint.display()))?;
    save_modem(&modem, paths.modem).with_context(|| format!("writing {}", paths.modem.display()))?;
    write_history(paths.history, config, &history)?;
    if let Some(last) = history.records.last() {
        eprintln!("final epoch: val loss1 {:.4}, val spread {:.4}", last.val_loss1, last.val_spread);
    }
    println!(
        "wrote {}, {} and {}",
        paths.checkpoint.display(),
        paths.modem.display(),
        paths.history.display()
    );
    Ok(())
}

fn write_history(path: &Path, config: &SystemConfig, history: &History) -> Result<()> {
    let mut w = csv_writer(path, &provenance(config))?;
    w.write_record(["stage", "epoch", "train_loss", "train_loss1", "train_spread", "val_loss1", "val_spread", "val_loss2"])?;
    for r in &history.records {
        w.write_record([
            r.stage.number().to_string(),
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_loss1.to_string(),
            r.train_spread.to_string(),
            r.val_loss1.to_string(),
            r.val_spread.to_string(),
            r.val_loss2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn modem_label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// The ZP-OFDM baseline (when requested) followed by each modem file.
fn collect_modems(config: &SystemConfig, paths: &[PathBuf], ofdm: bool) -> Result<Vec<(String, Modem)>> {
    let dims = config.dims()?;
    let mut out = Vec::new();
    if ofdm {
        out.push(("zp-ofdm".to_string(), zp_ofdm_modem(config)?));
    }
    for p in paths {
        let modem = load_modem(p).with_context(|| format!("loading {}", p.display()))?;
        modem.check_dims(&dims).with_context(|| format!("{} does not fit the configuration", p.display()))?;
        out.push((modem_label(p), modem));
    }
    if out.is_empty() {
        bail!("no modems given (use --modem and/or --ofdm)");
    }
    Ok(out)
}

pub fn eval_rate(
    config: &SystemConfig,
    modems: &[PathBuf],
    ofdm: bool,
    dataset: &Path,
    snr: &[f64],
    out: &Path,
) -> Result<()> {
    let ds = load_matching(dataset, config)?;
    let channels: Vec<_> = ds.pairs.into_iter().map(|p| p.h).collect();
    let mut w = csv_writer(out, &provenance(config))?;
    w.write_record(["modem", "snr_db", "avg_rate", "min_rate"])?;
    for (label, modem) in collect_modems(config, modems, ofdm)? {
        let report = rate_sweep(&modem, &label, &channels, snr)?;
        for row in report.rows {
            w.write_record([label.clone(), row.snr_db.to_string(), row.avg_rate.to_string(), row.min_rate.to_string()])?;
        }
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval_ber(
    config: &SystemConfig,
    modems: &[PathBuf],
    ofdm: bool,
    snr: &[f64],
    mode: ModeChoice,
    blocks: usize,
    a_max: Option<f64>,
    out: &Path,
) -> Result<()> {
    if blocks == 0 {
        bail!("--blocks must be at least 1");
    }
    let mut channel_config = config.clone();
    if let Some(a) = a_max {
        channel_config.a_max = a;
        channel_config.validate().context("invalid --a-max")?;
    }
    let modes = match mode {
        ModeChoice::IciAware => vec![EqualizerMode::IciAware],
        ModeChoice::IciIgnorant => vec![EqualizerMode::IciIgnorant],
        ModeChoice::Both => vec![EqualizerMode::IciAware, EqualizerMode::IciIgnorant],
    };
    let modem_list = collect_modems(config, modems, ofdm)?;
    let comment = format!(
        "{} a_max={} a_max_override={}",
        provenance(config),
        channel_config.a_max,
        a_max.map_or("none".to_string(), |a| a.to_string())
    );
    let mut w = csv_writer(out, &comment)?;
    w.write_record(["modem", "mode", "snr_db", "bits", "errors", "ber", "skipped_blocks"])?;
    let source = ChannelSource::Random(channel_config);
    for (label, modem) in &modem_list {
        // Every modem sees the same channels, bits and noise.
        let mut stream = spawn_stream(config.seed, "ber");
        for curve in simulate_ber_modes(modem, label, &source, snr, &modes, blocks, &mut stream)? {
            for p in curve.points {
                w.write_record([
                    label.clone(),
                    curve.mode.as_str().to_string(),
                    p.snr_db.to_string(),
                    p.bits.to_string(),
                    p.errors.to_string(),
                    p.ber.to_string(),
                    p.skipped_blocks.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = ByteReader::new(&bytes).magic()?;
    let text = if magic == CHECKPOINT_MAGIC {
        describe_checkpoint(&bytes)?
    } else {
        describe(&bytes)?
    };
    println!("{}: {text}", path.display());
    Ok(())
}
