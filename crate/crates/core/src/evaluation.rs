//! Monte Carlo link evaluation: rate sweeps and QPSK bit error rate with
//! linear zero-forcing equalization.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{apply_channel, assemble_channel, sample_paths, ChannelMatrix};
use crate::config::{snr_from_db, SystemConfig};
use crate::criterion::subchannel_rates;
use crate::error::{Error, Result};
use crate::modem::{demodulate, equivalent_channel, modulate, Modem};
use crate::rng::{spawn_stream, RandomStream};

/// Equalizers whose condition number exceeds this are reported as
/// ill-conditioned rather than solved.
pub const CONDITION_LIMIT: f64 = 1e12;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gray-mapped QPSK: `(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_map(bits: &[bool]) -> Result<DVector<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::Invalid(format!("odd bit count {}", bits.len())));
    }
    let level = |b: bool| if b { -INV_SQRT2 } else { INV_SQRT2 };
    Ok(DVector::from_iterator(
        bits.len() / 2,
        bits.chunks_exact(2)
            .map(|pair| Complex64::new(level(pair[0]), level(pair[1]))),
    ))
}

/// Hard quadrant decision, inverse of [`qpsk_map`].
pub fn qpsk_demap(symbols: &DVector<Complex64>) -> Vec<bool> {
    symbols
        .iter()
        .flat_map(|z| [z.re < 0.0, z.im < 0.0])
        .collect()
}

fn is_diagonal(m: &DMatrix<Complex64>) -> bool {
    let zero = Complex64::new(0.0, 0.0);
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == zero))
}

/// Least-squares zero forcing `z = (H^H H)^{-1} H^H y`, solved through the
/// SVD of `H` (or tap by tap when `H` is diagonal).
pub fn lzf_equalize(h_hat: &DMatrix<Complex64>, y: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if h_hat.nrows() != y.len() || h_hat.ncols() > h_hat.nrows() {
        return Err(Error::Shape(format!(
            "equalizer {:?} vs observation length {}",
            h_hat.shape(),
            y.len()
        )));
    }
    if h_hat.is_square() && is_diagonal(h_hat) {
        let mags: Vec<f64> = h_hat.diagonal().iter().map(|d| d.norm()).collect();
        let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().copied().fold(0.0, f64::max);
        if lo == 0.0 || !lo.is_finite() {
            return Err(Error::Singular);
        }
        if hi / lo > CONDITION_LIMIT {
            return Err(Error::IllConditioned(hi / lo));
        }
        return Ok(DVector::from_fn(y.len(), |i, _| y[i] / h_hat[(i, i)]));
    }
    let svd = h_hat.clone().svd(true, true);
    let s = &svd.singular_values;
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(0.0, f64::max);
    if lo == 0.0 || !lo.is_finite() {
        return Err(Error::Singular);
    }
    if hi / lo > CONDITION_LIMIT {
        return Err(Error::IllConditioned(hi / lo));
    }
    svd.solve(y, 0.0).map_err(|e| Error::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EqualizerMode {
    /// Full equivalent channel.
    IciAware,
    /// Diagonal of the equivalent channel only (one tap per sub-channel).
    IciIgnorant,
}

impl EqualizerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::IciAware => "ici_aware",
            Self::IciIgnorant => "ici_ignorant",
        }
    }

    fn equalizer(&self, h_e: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        match self {
            Self::IciAware => h_e.clone(),
            Self::IciIgnorant => DMatrix::from_diagonal(&h_e.diagonal()),
        }
    }
}

impl std::str::FromStr for EqualizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ici_aware" | "aware" => Ok(Self::IciAware),
            "ici_ignorant" | "ignorant" => Ok(Self::IciIgnorant),
            other => Err(Error::Invalid(format!("unknown equalizer mode {other:?}"))),
        }
    }
}

/// Where each Monte Carlo block's channel comes from.
#[derive(Debug, Clone)]
pub enum ChannelSource {
    /// Fresh random paths per block.
    Random(SystemConfig),
    /// The same channel every block.
    Fixed(ChannelMatrix),
}

impl ChannelSource {
    fn draw(&self, stream: &mut RandomStream) -> Result<ChannelMatrix> {
        match self {
            Self::Random(config) => assemble_channel(&sample_paths(config, stream), config),
            Self::Fixed(h) => Ok(h.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub skipped_blocks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerCurve {
    pub label: String,
    pub mode: EqualizerMode,
    pub points: Vec<BerPoint>,
    /// Summed wall-clock time spent in the equalizer.
    pub equalize_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    bits: u64,
    errors: u64,
    skipped: u64,
    seconds: f64,
}

impl Tally {
    fn merge(self, other: Tally) -> Tally {
        Tally {
            bits: self.bits + other.bits,
            errors: self.errors + other.errors,
            skipped: self.skipped + other.skipped,
            seconds: self.seconds + other.seconds,
        }
    }
}

/// One block: fresh channel, random bits, modulation, noisy channel,
/// demodulation, then each requested equalizer on the same observation.
fn run_block(
    modem: &Modem,
    source: &ChannelSource,
    snr_db: f64,
    modes: &[EqualizerMode],
    stream: &mut RandomStream,
) -> Result<Vec<Tally>> {
    let h = source.draw(stream)?;
    let n = modem.dims().1;
    let bits: Vec<bool> = (0..2 * n).map(|_| stream.random()).collect();
    let s = qpsk_map(&bits)?;
    let x = modulate(modem, &s)?;
    let r = apply_channel(&h, &x, &snr_from_db(snr_db), stream)?;
    let y = demodulate(modem, &r)?;
    let h_e = equivalent_channel(modem, &h)?;
    modes
        .iter()
        .map(|mode| {
            let start = Instant::now();
            let z = lzf_equalize(&mode.equalizer(h_e.matrix()), &y);
            let seconds = start.elapsed().as_secs_f64();
            match z {
                Ok(z) => {
                    let decided = qpsk_demap(&z);
                    let errors = decided.iter().zip(&bits).filter(|(a, b)| a != b).count();
                    Ok(Tally {
                        bits: bits.len() as u64,
                        errors: errors as u64,
                        skipped: 0,
                        seconds,
                    })
                }
                Err(Error::Singular | Error::IllConditioned(_)) => Ok(Tally {
                    skipped: 1,
                    seconds,
                    ..Tally::default()
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// BER curves for several equalizer modes sharing every random draw.
///
/// A base seed is taken from `stream`; block `b` at SNR index `i` then uses
/// its own labeled stream, so two calls from identically seeded streams see
/// the same channels, bits and noise regardless of modem or thread count.
pub fn simulate_ber_modes(
    modem: &Modem,
    label: &str,
    source: &ChannelSource,
    snr_db_list: &[f64],
    modes: &[EqualizerMode],
    blocks: usize,
    stream: &mut RandomStream,
) -> Result<Vec<BerCurve>> {
    if blocks == 0 {
        return Err(Error::Invalid("blocks must be at least 1".into()));
    }
    if let ChannelSource::Random(config) = source {
        let d = config.validate()?;
        modem.check_dims(&d)?;
    }
    let base: u64 = stream.random();
    let mut per_snr = Vec::with_capacity(snr_db_list.len());
    for (si, &snr_db) in snr_db_list.iter().enumerate() {
        let tallies = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut bs = spawn_stream(base, &format!("ber/{si}/{b}"));
                run_block(modem, source, snr_db, modes, &mut bs)
            })
            .try_reduce(
                || vec![Tally::default(); modes.len()],
                |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()),
            )?;
        per_snr.push(tallies);
    }
    Ok(modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let mut seconds = 0.0;
            let points = snr_db_list
                .iter()
                .zip(&per_snr)
                .map(|(&snr_db, t)| {
                    let t = t[mi];
                    seconds += t.seconds;
                    BerPoint {
                        snr_db,
                        bits: t.bits,
                        errors: t.errors,
                        ber: if t.bits == 0 {
                            f64::NAN
                        } else {
                            t.errors as f64 / t.bits as f64
                        },
                        skipped_blocks: t.skipped,
                    }
                })
                .collect();
            BerCurve {
                label: label.to_string(),
                mode,
                points,
                equalize_seconds: seconds,
            }
        })
        .collect())
}

pub fn simulate_ber(
    modem: &Modem,
    label: &str,
    source: &ChannelSource,
    snr_db_list: &[f64],
    mode: EqualizerMode,
    blocks: usize,
    stream: &mut RandomStream,
) -> Result<BerCurve> {
    let mut curves =
        simulate_ber_modes(modem, label, source, snr_db_list, &[mode], blocks, stream)?;
    Ok(curves.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub snr_db: f64,
    /// Mean over channels of the mean sub-channel rate.
    pub avg_rate: f64,
    /// Mean over channels of the minimum sub-channel rate.
    pub min_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub label: String,
    pub rows: Vec<RateRow>,
}

pub fn rate_sweep(
    modem: &Modem,
    label: &str,
    test_channels: &[ChannelMatrix],
    snr_db_list: &[f64],
) -> Result<RateReport> {
    if test_channels.is_empty() {
        return Err(Error::Invalid("empty test channel set".into()));
    }
    let h_es = test_channels
        .iter()
        .map(|h| equivalent_channel(modem, h))
        .collect::<Result<Vec<_>>>()?;
    let count = h_es.len() as f64;
    let rows = snr_db_list
        .iter()
        .map(|&snr_db| {
            let noise = snr_from_db(snr_db);
            let mut avg = 0.0;
            let mut min = 0.0;
            for h_e in &h_es {
                let r = subchannel_rates(h_e, modem.psi_h(), &noise)?;
                avg += r.mean();
                min += r.min();
            }
            Ok(RateRow {
                snr_db,
                avg_rate: avg / count,
                min_rate: min / count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport {
        label: label.to_string(),
        rows,
    })
}
