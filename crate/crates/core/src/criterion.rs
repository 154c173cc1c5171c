//! Equivalent sub-channel rates, the worst-case-weighted criterion `f`, the
//! two training losses, and the analytic gradient of `f` with respect to the
//! modem matrices.
//!
//! Gradients of a real scalar `L` with respect to a complex matrix `Z` are
//! reported as `dL/dRe(Z) + j dL/dIm(Z)`. Under this convention a product
//! `Y = A X` back-propagates as `G_X = A^H G_Y` and `Y = X B` as
//! `G_X = G_Y B^H`.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::config::NoiseModel;
use crate::error::{Error, Result};
use crate::modem::{frobenius_sq, EquivalentChannel, Modem};

/// Per-sub-channel rates in bits per channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValue {
    pub f: f64,
    pub min_rate: f64,
    pub min_index: usize,
    pub avg_rate: f64,
}

/// Per-row signal, interference and demodulator-noise powers.
struct RowPowers {
    signal: f64,
    interference: f64,
    noise: f64,
}

fn row_powers(
    h_e: &DMatrix<Complex64>,
    psi_h: &DMatrix<Complex64>,
    noise: &NoiseModel,
) -> Result<Vec<RowPowers>> {
    let n = h_e.nrows();
    if h_e.ncols() != n || psi_h.nrows() != n {
        return Err(Error::Shape(format!(
            "h_e {:?} vs psi_h {:?}",
            h_e.shape(),
            psi_h.shape()
        )));
    }
    let ratio = noise.noise_to_signal();
    Ok((0..n)
        .map(|row| {
            let interference = (0..n)
                .filter(|&k| k != row)
                .map(|k| h_e[(row, k)].norm_sqr())
                .sum();
            let demod: f64 = psi_h.row(row).iter().map(|z| z.norm_sqr()).sum();
            RowPowers {
                signal: h_e[(row, row)].norm_sqr(),
                interference,
                noise: ratio * demod,
            }
        })
        .collect())
}

fn rate_of(p: &RowPowers) -> f64 {
    if p.signal == 0.0 {
        return 0.0;
    }
    (p.signal / (p.interference + p.noise)).ln_1p() / LN_2
}

/// `r_n = log2(1 + |He_nn|^2 / (sum_{k != n} |He_nk|^2 + (sn^2/ss^2) ||psi_n||^2))`.
pub fn subchannel_rates(
    h_e: &EquivalentChannel,
    psi_h: &DMatrix<Complex64>,
    noise: &NoiseModel,
) -> Result<RateVector> {
    Ok(RateVector(
        row_powers(h_e.matrix(), psi_h, noise)?
            .iter()
            .map(rate_of)
            .collect(),
    ))
}

/// `f = sum_n r_n + K N min_n r_n`. Ties in the minimum resolve to the
/// smallest index.
pub fn criterion_f(rates: &RateVector, k: f64) -> CriterionValue {
    let r = rates.as_slice();
    let mut min_index = 0;
    for (i, &v) in r.iter().enumerate() {
        if v < r[min_index] {
            min_index = i;
        }
    }
    let n = r.len() as f64;
    let sum: f64 = r.iter().sum();
    let min_rate = r[min_index];
    CriterionValue {
        f: sum + k * n * min_rate,
        min_rate,
        min_index,
        avg_rate: sum / n,
    }
}

pub fn criterion_value(
    h_e: &EquivalentChannel,
    psi_h: &DMatrix<Complex64>,
    noise: &NoiseModel,
    k: f64,
) -> Result<CriterionValue> {
    Ok(criterion_f(&subchannel_rates(h_e, psi_h, noise)?, k))
}

/// `f(H_e,OFDM) - f(H_e)`; negative when the learned modem wins.
pub fn loss_stage1(
    h_e: &EquivalentChannel,
    h_e_ofdm: &EquivalentChannel,
    psi_h: &DMatrix<Complex64>,
    psi_h_ofdm: &DMatrix<Complex64>,
    noise: &NoiseModel,
    k: f64,
) -> Result<f64> {
    let learned = criterion_value(h_e, psi_h, noise, k)?;
    let baseline = criterion_value(h_e_ofdm, psi_h_ofdm, noise, k)?;
    Ok(baseline.f - learned.f)
}

/// One channel's learned outputs for the Stage II loss.
#[derive(Debug, Clone, Copy)]
pub struct ModemSample<'a> {
    pub h_e: &'a EquivalentChannel,
    pub phi: &'a DMatrix<Complex64>,
    pub psi_h: &'a DMatrix<Complex64>,
}

/// Frobenius distance `||a - b||_F`.
pub fn frobenius_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    frobenius_sq(&(a - b)).sqrt()
}

/// `alpha [loss1(1) + loss1(2)] + (1 - alpha) [||Phi1 - Phi2|| + ||Psi1 - Psi2||]`.
#[allow(clippy::too_many_arguments)]
pub fn loss_stage2(
    first: ModemSample<'_>,
    second: ModemSample<'_>,
    h_e_ofdm_first: &EquivalentChannel,
    h_e_ofdm_second: &EquivalentChannel,
    psi_h_ofdm: &DMatrix<Complex64>,
    noise: &NoiseModel,
    k: f64,
    alpha: f64,
) -> Result<f64> {
    let perf = loss_stage1(first.h_e, h_e_ofdm_first, first.psi_h, psi_h_ofdm, noise, k)?
        + loss_stage1(second.h_e, h_e_ofdm_second, second.psi_h, psi_h_ofdm, noise, k)?;
    let spread = frobenius_distance(first.phi, second.phi)
        + frobenius_distance(first.psi_h, second.psi_h);
    Ok(alpha * perf + (1.0 - alpha) * spread)
}

/// Gradient of `f` with respect to the modem matrices for a fixed channel.
#[derive(Debug, Clone)]
pub struct CriterionGradient {
    pub value: CriterionValue,
    pub d_phi: DMatrix<Complex64>,
    pub d_psi_h: DMatrix<Complex64>,
}

/// Value and gradient of `f` at `(phi, psi_h)` for channel `h`.
///
/// The minimum is differentiated through its (smallest) argmin index.
pub fn criterion_gradient_parts(
    h: &DMatrix<Complex64>,
    phi: &DMatrix<Complex64>,
    psi_h: &DMatrix<Complex64>,
    noise: &NoiseModel,
    k: f64,
) -> Result<CriterionGradient> {
    if psi_h.ncols() != h.nrows() || h.ncols() != phi.nrows() || psi_h.nrows() != phi.ncols() {
        return Err(Error::Shape(format!(
            "psi_h {:?}, h {:?}, phi {:?}",
            psi_h.shape(),
            h.shape(),
            phi.shape()
        )));
    }
    let h_phi = h * phi;
    let psi_h_h = psi_h * h;
    let h_e = psi_h * &h_phi;
    let powers = row_powers(&h_e, psi_h, noise)?;
    let n = h_e.nrows();
    let rates = RateVector(powers.iter().map(rate_of).collect());
    let value = criterion_f(&rates, k);

    let ratio = noise.noise_to_signal();
    let mut g_he = DMatrix::<Complex64>::zeros(n, n);
    let mut d_psi_h = DMatrix::<Complex64>::zeros(n, psi_h.ncols());
    for (row, p) in powers.iter().enumerate() {
        let rest = p.interference + p.noise;
        if rest == 0.0 {
            return Err(Error::DegenerateSubchannel { index: row });
        }
        let total = p.signal + rest;
        let weight = (1.0 + if row == value.min_index { k * n as f64 } else { 0.0 }) / LN_2;
        // d r / d|z|^2 is 1/total for the diagonal and 1/total - 1/rest for
        // every interference or noise power; d|z|^2/dz maps to 2z.
        let diag = weight / total;
        let off = weight * (1.0 / total - 1.0 / rest);
        for col in 0..n {
            let scale = if col == row { diag } else { off };
            g_he[(row, col)] = h_e[(row, col)] * (2.0 * scale);
        }
        let noise_scale = 2.0 * off * ratio;
        for col in 0..psi_h.ncols() {
            d_psi_h[(row, col)] = psi_h[(row, col)] * noise_scale;
        }
    }
    d_psi_h += &g_he * h_phi.adjoint();
    let d_phi = psi_h_h.adjoint() * &g_he;
    Ok(CriterionGradient {
        value,
        d_phi,
        d_psi_h,
    })
}

/// Gradient of `f` for a modem on channel `h`.
pub fn criterion_gradient(
    h: &crate::channel::ChannelMatrix,
    modem: &Modem,
    noise: &NoiseModel,
    k: f64,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let g = criterion_gradient_parts(h.matrix(), modem.phi(), modem.psi_h(), noise, k)?;
    Ok((g.d_phi, g.d_psi_h))
}
