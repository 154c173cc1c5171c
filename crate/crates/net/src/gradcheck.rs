//! Central finite-difference verification of backprop gradients.

use rand::Rng;
use uwamod_core::dataset::DatasetPair;
use uwamod_core::{RandomStream, Result};

use crate::loss::{stage1_loss, stage2_loss, LossContext};
use crate::model::{Mode, NetworkParams};
use crate::train::{stack_images, Stage};

/// Agreement for one tensor: relative error over sampled coordinates and
/// along one random direction spanning the whole tensor.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub coordinate_error: f64,
    pub direction_error: f64,
}

impl GroupCheck {
    pub fn worst(&self) -> f64 {
        self.coordinate_error.max(self.direction_error)
    }
}

/// Train-mode batch loss for the given stage.
pub fn batch_loss(params: &NetworkParams, pairs: &[&DatasetPair], ctx: &LossContext, stage: Stage) -> Result<f64> {
    let images = stack_images(pairs);
    let (out, _) = params.forward(&images, pairs.len(), Mode::Train)?;
    let loss = match stage {
        Stage::One => stage1_loss(ctx, &out, pairs)?,
        Stage::Two => stage2_loss(ctx, &out, pairs)?,
    };
    Ok(loss.value)
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares backprop against central differences with step `h` on up to
/// `coordinates` random entries per tensor plus one random direction.
pub fn check_gradients(
    params: &NetworkParams,
    pairs: &[&DatasetPair],
    ctx: &LossContext,
    stage: Stage,
    coordinates: usize,
    h: f64,
    stream: &mut RandomStream,
) -> Result<Vec<GroupCheck>> {
    let images = stack_images(pairs);
    let (out, record) = params.forward(&images, pairs.len(), Mode::Train)?;
    let loss = match stage {
        Stage::One => stage1_loss(ctx, &out, pairs)?,
        Stage::Two => stage2_loss(ctx, &out, pairs)?,
    };
    let grads = params.backward(&record, &loss.grad_phi, &loss.grad_psi)?;
    let mut probe = params.clone();
    let mut results = Vec::new();
    for (t, tensor) in params.learnable.tensors.iter().enumerate() {
        let len = tensor.data.len();
        let picks: Vec<usize> = if len <= coordinates {
            (0..len).collect()
        } else {
            (0..coordinates).map(|_| stream.random_range(0..len)).collect()
        };
        let mut fd = Vec::with_capacity(picks.len());
        let mut an = Vec::with_capacity(picks.len());
        for &i in &picks {
            let base = tensor.data[i];
            probe.learnable.tensors[t].data[i] = base + h;
            let plus = batch_loss(&probe, pairs, ctx, stage)?;
            probe.learnable.tensors[t].data[i] = base - h;
            let minus = batch_loss(&probe, pairs, ctx, stage)?;
            probe.learnable.tensors[t].data[i] = base;
            fd.push((plus - minus) / (2.0 * h));
            an.push(grads.tensors[t].data[i]);
        }
        let mut dir: Vec<f64> = (0..len).map(|_| stream.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|d| *d /= norm);
        let shift = |probe: &mut NetworkParams, s: f64| {
            for (p, (b, d)) in probe.learnable.tensors[t].data.iter_mut().zip(tensor.data.iter().zip(&dir)) {
                *p = b + s * d;
            }
        };
        shift(&mut probe, h);
        let plus = batch_loss(&probe, pairs, ctx, stage)?;
        shift(&mut probe, -h);
        let minus = batch_loss(&probe, pairs, ctx, stage)?;
        shift(&mut probe, 0.0);
        let fd_dir = (plus - minus) / (2.0 * h);
        let an_dir: f64 = grads.tensors[t].data.iter().zip(&dir).map(|(g, d)| g * d).sum();
        results.push(GroupCheck {
            name: tensor.name.clone(),
            coordinate_error: relative(&fd, &an),
            direction_error: relative(&[fd_dir], &[an_dir]),
        });
    }
    Ok(results)
}
