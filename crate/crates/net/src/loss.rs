//! Batch losses on network outputs, with gradients on the emitted matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use uwamod_core::config::snr_from_db;
use uwamod_core::criterion::{criterion_gradient_parts, criterion_value, frobenius_distance};
use uwamod_core::dataset::DatasetPair;
use uwamod_core::modem::zp_ofdm_modem;
use uwamod_core::{Error, NoiseModel, Result, SystemConfig};

use crate::model::NetworkOutput;

/// Everything the losses need besides the batch.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub psi_h_ofdm: DMatrix<Complex64>,
    pub noise: NoiseModel,
    pub k: f64,
    pub alpha: f64,
}

impl LossContext {
    pub fn new(config: &SystemConfig) -> Result<Self> {
        let ofdm = zp_ofdm_modem(config)?;
        Ok(Self {
            psi_h_ofdm: ofdm.psi_h().clone(),
            noise: snr_from_db(config.snr_train_db),
            k: config.k,
            alpha: config.alpha,
        })
    }

    /// `f` of the ZP-OFDM modem on this pair's channel.
    pub fn baseline(&self, pair: &DatasetPair) -> Result<f64> {
        Ok(criterion_value(&pair.h_e_ofdm, &self.psi_h_ofdm, &self.noise, self.k)?.f)
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// The optimized scalar.
    pub value: f64,
    /// Mean `loss1` over all samples.
    pub perf: f64,
    /// Mean `||Phi1 - Phi2|| + ||Psi1 - Psi2||` over pairs (0 in Stage I).
    pub spread: f64,
    pub grad_phi: Vec<DMatrix<Complex64>>,
    pub grad_psi: Vec<DMatrix<Complex64>>,
}

fn check_batch(output: &NetworkOutput, pairs: &[&DatasetPair]) -> Result<()> {
    if pairs.is_empty() || output.phis.len() != pairs.len() || output.psis.len() != pairs.len() {
        return Err(Error::Shape(format!(
            "{} outputs for {} pairs",
            output.phis.len(),
            pairs.len()
        )));
    }
    Ok(())
}

/// Per-sample `loss1` and its gradients (already negated: `loss1 = f_ofdm - f`).
fn per_sample(
    ctx: &LossContext,
    output: &NetworkOutput,
    pairs: &[&DatasetPair],
) -> Result<Vec<(f64, DMatrix<Complex64>, DMatrix<Complex64>)>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let g = criterion_gradient_parts(pair.h.matrix(), &output.phis[i], &output.psis[i], &ctx.noise, ctx.k)?;
            Ok((ctx.baseline(pair)? - g.value.f, -g.d_phi, -g.d_psi_h))
        })
        .collect()
}

/// Batch-mean `loss1`.
pub fn stage1_loss(ctx: &LossContext, output: &NetworkOutput, pairs: &[&DatasetPair]) -> Result<BatchLoss> {
    check_batch(output, pairs)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    let mut grad_phi = Vec::with_capacity(pairs.len());
    let mut grad_psi = Vec::with_capacity(pairs.len());
    for (l, gp, gs) in per_sample(ctx, output, pairs)? {
        value += l * scale;
        grad_phi.push(gp * Complex64::from(scale));
        grad_psi.push(gs * Complex64::from(scale));
    }
    Ok(BatchLoss { value, perf: value, spread: 0.0, grad_phi, grad_psi })
}

/// Subgradient of `||a - b||_F` with respect to `a` (zero at coincidence).
fn distance_gradient(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> (f64, DMatrix<Complex64>) {
    let diff = a - b;
    let d = frobenius_distance(a, b);
    if d == 0.0 {
        (0.0, DMatrix::zeros(a.nrows(), a.ncols()))
    } else {
        (d, diff / Complex64::from(d))
    }
}

/// Mean `loss2` over the pairs `(i, i + B/2)` of an even batch.
pub fn stage2_loss(ctx: &LossContext, output: &NetworkOutput, pairs: &[&DatasetPair]) -> Result<BatchLoss> {
    check_batch(output, pairs)?;
    if pairs.len() % 2 != 0 {
        return Err(Error::Shape(format!("stage II needs an even batch, got {}", pairs.len())));
    }
    let half = pairs.len() / 2;
    let scale = 1.0 / half as f64;
    let alpha = ctx.alpha;
    let samples = per_sample(ctx, output, pairs)?;
    let mut grad_phi: Vec<_> = samples.iter().map(|s| &s.1 * Complex64::from(alpha * scale)).collect();
    let mut grad_psi: Vec<_> = samples.iter().map(|s| &s.2 * Complex64::from(alpha * scale)).collect();
    let perf = samples.iter().map(|s| s.0).sum::<f64>() / pairs.len() as f64;
    let mut spread = 0.0;
    let w = Complex64::from((1.0 - alpha) * scale);
    for i in 0..half {
        let j = i + half;
        let (dp, gp) = distance_gradient(&output.phis[i], &output.phis[j]);
        let (ds, gs) = distance_gradient(&output.psis[i], &output.psis[j]);
        spread += (dp + ds) * scale;
        grad_phi[i] += &gp * w;
        grad_phi[j] -= &gp * w;
        grad_psi[i] += &gs * w;
        grad_psi[j] -= &gs * w;
    }
    let value = alpha * 2.0 * perf + (1.0 - alpha) * spread;
    Ok(BatchLoss { value, perf, spread, grad_phi, grad_psi })
}

/// Validation summary: mean `loss1` over every sample, mean spread over
/// consecutive pairs `(0, 1), (2, 3), ...`, and the matching `loss2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    pub loss1: f64,
    pub spread: f64,
    pub loss2: f64,
}

pub fn validation_metrics(
    ctx: &LossContext,
    output: &NetworkOutput,
    pairs: &[&DatasetPair],
) -> Result<ValidationMetrics> {
    check_batch(output, pairs)?;
    let mut loss1 = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let h_e = uwamod_core::modem::equivalent_channel_parts(&output.phis[i], &output.psis[i], pair.h.matrix())?;
        let f = criterion_value(&h_e, &output.psis[i], &ctx.noise, ctx.k)?.f;
        loss1.push(ctx.baseline(pair)? - f);
    }
    let mean1 = loss1.iter().sum::<f64>() / loss1.len() as f64;
    let count = pairs.len() / 2;
    if count == 0 {
        return Ok(ValidationMetrics { loss1: mean1, spread: 0.0, loss2: ctx.alpha * 2.0 * mean1 });
    }
    let mut spread = 0.0;
    let mut loss2 = 0.0;
    for p in 0..count {
        let (a, b) = (2 * p, 2 * p + 1);
        let s = frobenius_distance(&output.phis[a], &output.phis[b])
            + frobenius_distance(&output.psis[a], &output.psis[b]);
        spread += s;
        loss2 += ctx.alpha * (loss1[a] + loss1[b]) + (1.0 - ctx.alpha) * s;
    }
    Ok(ValidationMetrics { loss1: mean1, spread: spread / count as f64, loss2: loss2 / count as f64 })
}
