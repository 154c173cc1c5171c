//! Modulation/demodulation matrix pairs and the ZP-OFDM baseline.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::ChannelMatrix;
use crate::config::{Dims, SystemConfig};
use crate::error::{Error, Result};

/// Relative tolerance on the two Frobenius energy budgets.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

/// A modulation matrix `phi` (`M x N`) and demodulation matrix `psi_h`
/// (`N x M'`). Energies are fixed at `N` and `N M'/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modem {
    phi: DMatrix<Complex64>,
    psi_h: DMatrix<Complex64>,
}

/// `H_e = Psi^H H Phi`, the `N x N` map from data symbols to demodulator
/// outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel(pub DMatrix<Complex64>);

impl EquivalentChannel {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }
}

pub fn frobenius_sq(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Target energies `(N, N M'/M)` for a modem with the given shapes.
pub fn energy_targets(m: usize, n: usize, m_prime: usize) -> (f64, f64) {
    let n = n as f64;
    (n, n * m_prime as f64 / m as f64)
}

fn relative_gap(value: f64, target: f64) -> f64 {
    (value - target).abs() / target
}

impl Modem {
    /// Wraps a matrix pair, checking shapes and both energy budgets.
    pub fn new(phi: DMatrix<Complex64>, psi_h: DMatrix<Complex64>) -> Result<Self> {
        let (m, n) = phi.shape();
        if psi_h.nrows() != n {
            return Err(Error::Shape(format!(
                "phi is {m}x{n} but psi_h has {} rows",
                psi_h.nrows()
            )));
        }
        if m == 0 || n == 0 || psi_h.ncols() < m {
            return Err(Error::Shape(format!(
                "degenerate modem shapes {m}x{n}, {}x{}",
                psi_h.nrows(),
                psi_h.ncols()
            )));
        }
        let (e_phi, e_psi) = energy_targets(m, n, psi_h.ncols());
        let got_phi = frobenius_sq(&phi);
        let got_psi = frobenius_sq(&psi_h);
        if relative_gap(got_phi, e_phi) > ENERGY_TOLERANCE
            || relative_gap(got_psi, e_psi) > ENERGY_TOLERANCE
        {
            return Err(Error::Invalid(format!(
                "modem energies ({got_phi}, {got_psi}) differ from ({e_phi}, {e_psi})"
            )));
        }
        Ok(Self { phi, psi_h })
    }

    pub fn phi(&self) -> &DMatrix<Complex64> {
        &self.phi
    }

    pub fn psi_h(&self) -> &DMatrix<Complex64> {
        &self.psi_h
    }

    /// `(M, N, M')`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.phi.nrows(), self.phi.ncols(), self.psi_h.ncols())
    }

    pub fn energies(&self) -> (f64, f64) {
        (frobenius_sq(&self.phi), frobenius_sq(&self.psi_h))
    }

    pub fn into_parts(self) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        (self.phi, self.psi_h)
    }

    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        if self.dims() != (dims.m, dims.n, dims.m_prime) {
            return Err(Error::Shape(format!(
                "modem dims {:?} vs configured ({}, {}, {})",
                self.dims(),
                dims.m,
                dims.n,
                dims.m_prime
            )));
        }
        Ok(())
    }
}

/// Unitary DFT matrix, `F[i, j] = e^{-j 2 pi i j / M} / sqrt(M)` (0-based).
pub fn dft_matrix(m: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, m, |i, j| {
        // Reduce the exponent modulo M before scaling to keep the phase exact.
        let k = (i * j) % m;
        Complex64::from_polar(scale, -2.0 * PI * k as f64 / m as f64)
    })
}

/// Evenly spread subcarriers `k_n = floor(n M / N)`.
pub fn subcarrier_indices(m: usize, n: usize) -> Result<Vec<usize>> {
    if n > m {
        return Err(Error::Invalid(format!("{n} subcarriers exceed {m} bins")));
    }
    Ok((0..n).map(|i| i * m / n).collect())
}

/// The `M x M'` 0/1 matrix that folds the `L = M' - M` guard samples back
/// onto the head of the block:
///
/// ```text
/// [ 0_{(M-L) x L}  I_{M-L}          0_{(M-L) x L} ]
/// [ I_L            0_{L x (M-L)}    I_L           ]
/// ```
pub fn overlap_add_matrix(m: usize, m_prime: usize) -> Result<DMatrix<f64>> {
    if m_prime < m {
        return Err(Error::Invalid(format!("m' = {m_prime} < m = {m}")));
    }
    let l = m_prime - m;
    if l > m {
        return Err(Error::Invalid(format!(
            "guard length {l} exceeds block length {m}"
        )));
    }
    let mut r = DMatrix::zeros(m, m_prime);
    for i in 0..m - l {
        r[(i, l + i)] = 1.0;
    }
    for i in 0..l {
        r[(m - l + i, i)] = 1.0;
        r[(m - l + i, m + i)] = 1.0;
    }
    Ok(r)
}

/// `Phi = F^H X`, `Psi^H = X^H F R`.
pub fn zp_ofdm_modem(config: &SystemConfig) -> Result<Modem> {
    let dims = config.dims()?;
    zp_ofdm_from_dims(dims.m, dims.n, dims.m_prime)
}

pub fn zp_ofdm_from_dims(m: usize, n: usize, m_prime: usize) -> Result<Modem> {
    let f = dft_matrix(m);
    let r = overlap_add_matrix(m, m_prime)?.map(|v| Complex64::new(v, 0.0));
    let idx = subcarrier_indices(m, n)?;
    let f_h = f.adjoint();
    let phi = DMatrix::from_fn(m, n, |i, j| f_h[(i, idx[j])]);
    let selected = DMatrix::from_fn(n, m, |i, j| f[(idx[i], j)]);
    let psi_h = selected * r;
    // The construction meets both energy budgets up to rounding; rescale so
    // the invariants hold to working precision.
    normalize_modem(phi, psi_h)
}

pub fn equivalent_channel(modem: &Modem, h: &ChannelMatrix) -> Result<EquivalentChannel> {
    equivalent_channel_parts(modem.phi(), modem.psi_h(), h.matrix())
}

pub fn equivalent_channel_parts(
    phi: &DMatrix<Complex64>,
    psi_h: &DMatrix<Complex64>,
    h: &DMatrix<Complex64>,
) -> Result<EquivalentChannel> {
    if psi_h.ncols() != h.nrows() || h.ncols() != phi.nrows() {
        return Err(Error::Shape(format!(
            "psi_h {:?}, h {:?}, phi {:?}",
            psi_h.shape(),
            h.shape(),
            phi.shape()
        )));
    }
    Ok(EquivalentChannel(psi_h * (h * phi)))
}

/// Scales each matrix by one positive factor to hit the energy budgets.
pub fn normalize_modem(phi_raw: DMatrix<Complex64>, psi_h_raw: DMatrix<Complex64>) -> Result<Modem> {
    let (m, n) = phi_raw.shape();
    if psi_h_raw.nrows() != n {
        return Err(Error::Shape(format!(
            "phi is {m}x{n} but psi_h has {} rows",
            psi_h_raw.nrows()
        )));
    }
    let (e_phi, e_psi) = energy_targets(m, n, psi_h_raw.ncols());
    let norm_phi = frobenius_sq(&phi_raw).sqrt();
    let norm_psi = frobenius_sq(&psi_h_raw).sqrt();
    if norm_phi == 0.0 || !norm_phi.is_finite() {
        return Err(Error::ZeroMatrix("phi"));
    }
    if norm_psi == 0.0 || !norm_psi.is_finite() {
        return Err(Error::ZeroMatrix("psi_h"));
    }
    let phi = phi_raw * Complex64::new(e_phi.sqrt() / norm_phi, 0.0);
    let psi_h = psi_h_raw * Complex64::new(e_psi.sqrt() / norm_psi, 0.0);
    Modem::new(phi, psi_h)
}

/// `x = Phi s`.
pub fn modulate(modem: &Modem, s: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if s.len() != modem.phi.ncols() {
        return Err(Error::Shape(format!(
            "symbol vector length {} vs {} subcarriers",
            s.len(),
            modem.phi.ncols()
        )));
    }
    Ok(&modem.phi * s)
}

/// `y = Psi^H r`.
pub fn demodulate(modem: &Modem, r: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if r.len() != modem.psi_h.ncols() {
        return Err(Error::Shape(format!(
            "received length {} vs {} demodulator columns",
            r.len(),
            modem.psi_h.ncols()
        )));
    }
    Ok(&modem.psi_h * r)
}
