//! Doubly-dispersive multipath channel: random path draws and the sampled
//! channel matrix relating `M` transmitted samples to `M'` received ones.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{NoiseModel, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Normalized sinc, `sin(pi x) / (pi x)`.
///
/// Exact zero at nonzero integers so integer-sample delays produce exact
/// shift matrices.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Per-path amplitude, delay (s) and Doppler scaling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub amplitudes: Vec<Complex64>,
    pub delays: Vec<f64>,
    pub dopplers: Vec<f64>,
}

impl PathSet {
    pub fn new(amplitudes: Vec<Complex64>, delays: Vec<f64>, dopplers: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != delays.len() || delays.len() != dopplers.len() {
            return Err(Error::Shape(format!(
                "path set lengths {} / {} / {}",
                amplitudes.len(),
                delays.len(),
                dopplers.len()
            )));
        }
        Ok(Self {
            amplitudes,
            delays,
            dopplers,
        })
    }

    pub fn single(amplitude: Complex64, delay: f64, doppler: f64) -> Self {
        Self {
            amplitudes: vec![amplitude],
            delays: vec![delay],
            dopplers: vec![doppler],
        }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn union(&self, other: &PathSet) -> PathSet {
        let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<_>>();
        PathSet {
            amplitudes: self
                .amplitudes
                .iter()
                .chain(&other.amplitudes)
                .copied()
                .collect(),
            delays: cat(&self.delays, &other.delays),
            dopplers: cat(&self.dopplers, &other.dopplers),
        }
    }
}

/// Draw from CN(0, variance): real and imaginary parts each N(0, variance/2).
pub fn complex_gaussian(stream: &mut RandomStream, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(stream);
    let im: f64 = StandardNormal.sample(stream);
    Complex64::new(re * scale, im * scale)
}

/// Lower bound of the Doppler interval, `1/(1 + a_max) - 1`.
pub fn doppler_lower_bound(a_max: f64) -> f64 {
    1.0 / (1.0 + a_max) - 1.0
}

/// Draws `P` independent paths: `A ~ CN(0,1)`, `tau ~ U(0, tau_max)`,
/// `a ~ U(1/(1+a_max) - 1, a_max)`.
pub fn sample_paths(config: &SystemConfig, stream: &mut RandomStream) -> PathSet {
    let lo = doppler_lower_bound(config.a_max);
    let hi = config.a_max;
    let mut paths = PathSet {
        amplitudes: Vec::with_capacity(config.paths),
        delays: Vec::with_capacity(config.paths),
        dopplers: Vec::with_capacity(config.paths),
    };
    for _ in 0..config.paths {
        paths.amplitudes.push(complex_gaussian(stream, 1.0));
        let u: f64 = stream.random();
        paths.delays.push(u * config.tau_max);
        let v: f64 = stream.random();
        paths.dopplers.push(lo + v * (hi - lo));
    }
    paths
}

/// Complex gain `A e^{-j 2 pi f_c tau}`.
pub fn path_gain(amplitude: Complex64, delay: f64, carrier_hz: f64) -> Complex64 {
    amplitude * Complex64::from_polar(1.0, -2.0 * PI * carrier_hz * delay)
}

/// `M' x M` channel matrix; rows index received samples, columns
/// transmitted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub DMatrix<Complex64>);

impl ChannelMatrix {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    /// `[I_M; 0]`, the ideal channel with `M' - M` trailing zero rows.
    pub fn identity(m: usize, m_prime: usize) -> Self {
        let mut h = DMatrix::zeros(m_prime, m);
        for i in 0..m.min(m_prime) {
            h[(i, i)] = Complex64::new(1.0, 0.0);
        }
        Self(h)
    }

    /// Real/imaginary planes as a `2 x M' x M` row-major tensor.
    pub fn to_image(&self) -> Vec<f64> {
        complex_to_planes(&self.0)
    }
}

/// Splits a complex matrix into `[re plane, im plane]`, each row-major.
pub fn complex_to_planes(m: &DMatrix<Complex64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = vec![0.0; 2 * r * c];
    let (re, im) = out.split_at_mut(r * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            re[i * c + j] = z.re;
            im[i * c + j] = z.im;
        }
    }
    out
}

/// Inverse of [`complex_to_planes`].
pub fn planes_to_complex(planes: &[f64], rows: usize, cols: usize) -> Result<DMatrix<Complex64>> {
    if planes.len() != 2 * rows * cols {
        return Err(Error::Shape(format!(
            "expected 2x{rows}x{cols} planes, got {} values",
            planes.len()
        )));
    }
    let (re, im) = planes.split_at(rows * cols);
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        Complex64::new(re[i * cols + j], im[i * cols + j])
    }))
}

/// Assembles `H = sum_p xi_p Lambda_p Gamma_p` path by path.
///
/// Row `m'` of path `p` is zeroed whenever the warped sample time
/// `gamma = (a_p + 1) m'/F_s - tau_p` falls outside `[0, T]`.
pub fn assemble_channel(paths: &PathSet, config: &SystemConfig) -> Result<ChannelMatrix> {
    if paths.amplitudes.len() != paths.delays.len() || paths.delays.len() != paths.dopplers.len() {
        return Err(Error::Shape("path set component lengths differ".into()));
    }
    let dims = config.dims()?;
    let (m, m_prime) = (dims.m, dims.m_prime);
    let fs = config.sample_rate_hz;
    let b = config.bandwidth_hz;
    let t = config.symbol_duration;
    let fc = config.carrier_hz;
    let col_step = b / fs;

    let mut h = DMatrix::<Complex64>::zeros(m_prime, m);
    for p in 0..paths.len() {
        let a = paths.dopplers[p];
        let tau = paths.delays[p];
        let xi = path_gain(paths.amplitudes[p], tau, fc);
        for row in 0..m_prime {
            let gamma = (a + 1.0) * row as f64 / fs - tau;
            if gamma < 0.0 || gamma > t {
                continue;
            }
            let lambda = Complex64::from_polar(1.0, 2.0 * PI * fc * a * row as f64 / fs);
            let coeff = xi * lambda;
            let base = b * gamma;
            for col in 0..m {
                h[(row, col)] += coeff * sinc(base - col as f64 * col_step);
            }
        }
    }
    Ok(ChannelMatrix(h))
}

/// `r = H x + w` with `w ~ CN(0, sigma_n^2 I)`.
pub fn apply_channel(
    h: &ChannelMatrix,
    x: &DVector<Complex64>,
    noise: &NoiseModel,
    stream: &mut RandomStream,
) -> Result<DVector<Complex64>> {
    if x.len() != h.cols() {
        return Err(Error::Shape(format!(
            "signal length {} vs channel columns {}",
            x.len(),
            h.cols()
        )));
    }
    let mut r = &h.0 * x;
    for v in r.iter_mut() {
        *v += complex_gaussian(stream, noise.sigma_n_sq);
    }
    Ok(r)
}
