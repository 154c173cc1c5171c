//! The two-pathway convolutional network: architecture, parameters, forward
//! pass with an activation record, and exact reverse-mode gradients.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use uwamod_core::{Error, RandomStream, Result};

use crate::layers::{self, Geometry};

const HIGH_KERNEL: usize = 7;
const LOW_KERNEL: usize = 3;
const PATHWAY_DEPTH: usize = 3;
const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub pathway_channels: usize,
    pub fused_channels: usize,
    pub pool_grid: [usize; 2],
    pub fc_hidden: [usize; 2],
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            pathway_channels: 16,
            fused_channels: 8,
            pool_grid: [16, 16],
            fc_hidden: [2048, 2048],
            leaky_slope: 0.3,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }
}

impl ArchConfig {
    /// Reduced widths that train the desk profile in minutes on one core.
    pub fn desk() -> Self {
        Self {
            pathway_channels: 4,
            fused_channels: 2,
            pool_grid: [4, 4],
            fc_hidden: [64, 64],
            ..Self::default()
        }
    }

    /// Smallest sensible network; used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            pathway_channels: 2,
            fused_channels: 2,
            pool_grid: [4, 4],
            fc_hidden: [64, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.pathway_channels,
            self.fused_channels,
            self.pool_grid[0],
            self.pool_grid[1],
            self.fc_hidden[0],
            self.fc_hidden[1],
        ];
        if counts.contains(&0) {
            return Err(Error::Config("architecture counts must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(format!("bn momentum {} outside (0, 1]", self.bn_momentum)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("bn epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Modem sizes the network maps between: `H` is `m_prime x m`, `Phi` is
/// `m x n`, `Psi^H` is `n x m_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub m: usize,
    pub m_prime: usize,
    pub n: usize,
}

impl NetDims {
    pub fn new(m: usize, m_prime: usize, n: usize) -> Self {
        Self { m, m_prime, n }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry { height: self.m_prime, width: self.m }
    }

    pub fn image_len(&self) -> usize {
        INPUT_CHANNELS * self.m * self.m_prime
    }

    pub fn phi_len(&self) -> usize {
        self.m * self.n
    }

    pub fn psi_len(&self) -> usize {
        self.n * self.m_prime
    }

    /// Raw output width before the split: `2 (MN + N M')`.
    pub fn output_len(&self) -> usize {
        2 * (self.phi_len() + self.psi_len())
    }

    pub fn energy_targets(&self) -> (f64, f64) {
        uwamod_core::modem::energy_targets(self.m, self.n, self.m_prime)
    }
}

impl From<uwamod_core::Dims> for NetDims {
    fn from(d: uwamod_core::Dims) -> Self {
        Self::new(d.m, d.m_prime, d.n)
    }
}

/// A named, shaped, flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { name, shape, data: vec![0.0; len] }
    }
}

/// An ordered list of tensors; learnable parameters and their gradients share
/// this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Batch-norm running statistics for one conv block.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One conv + BN + activation unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

pub fn block_names() -> [&'static str; 7] {
    ["high.0", "high.1", "high.2", "low.0", "low.1", "low.2", "fuse"]
}

const FC_NAMES: [&str; 3] = ["fc.0", "fc.1", "fc.2"];
const FUSE: usize = 6;

pub fn block_specs(arch: &ArchConfig) -> [BlockSpec; 7] {
    let c = arch.pathway_channels;
    let layer = |i: usize, kernel| BlockSpec { in_ch: INPUT_CHANNELS + i * c, out_ch: c, kernel };
    [
        layer(0, HIGH_KERNEL),
        layer(1, HIGH_KERNEL),
        layer(2, HIGH_KERNEL),
        layer(0, LOW_KERNEL),
        layer(1, LOW_KERNEL),
        layer(2, LOW_KERNEL),
        BlockSpec { in_ch: 2 * c, out_ch: arch.fused_channels, kernel: 1 },
    ]
}

/// Pooling output size, clipped to the input image.
pub fn pool_size(arch: &ArchConfig, dims: &NetDims) -> (usize, usize) {
    (arch.pool_grid[0].min(dims.m_prime), arch.pool_grid[1].min(dims.m))
}

/// `(inputs, outputs)` of the three dense layers.
pub fn dense_shapes(arch: &ArchConfig, dims: &NetDims) -> [(usize, usize); 3] {
    let (ph, pw) = pool_size(arch, dims);
    let flat = arch.fused_channels * ph * pw;
    [
        (flat, arch.fc_hidden[0]),
        (arch.fc_hidden[0], arch.fc_hidden[1]),
        (arch.fc_hidden[1], dims.output_len()),
    ]
}

/// Learnable parameter count in closed form. With `C` pathway channels,
/// `F` fused channels, pool `ph x pw`, hidden widths `h1, h2` and output
/// width `o = 2 (MN + N M')`:
///
/// `(7^2 + 3^2) C (6 + 3C) + 12 C + 2 C F + 2 F
///  + (F ph pw + 1) h1 + (h1 + 1) h2 + (h2 + 1) o`
///
/// (bias-free convolutions, two BN vectors per conv, biased dense layers).
/// Running statistics are not counted.
pub fn parameter_count(arch: &ArchConfig, dims: &NetDims) -> usize {
    let c = arch.pathway_channels;
    let f = arch.fused_channels;
    let (ph, pw) = pool_size(arch, dims);
    let [h1, h2] = arch.fc_hidden;
    let o = dims.output_len();
    (HIGH_KERNEL * HIGH_KERNEL + LOW_KERNEL * LOW_KERNEL) * c * (6 + 3 * c)
        + 12 * c
        + 2 * c * f
        + 2 * f
        + (f * ph * pw + 1) * h1
        + (h1 + 1) * h2
        + (h2 + 1) * o
}

/// Tensor layout: for each of the seven conv blocks `weight, bn_gamma,
/// bn_beta`; then `weight, bias` for each dense layer.
fn param_layout(arch: &ArchConfig, dims: &NetDims) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (name, s) in block_names().iter().zip(block_specs(arch)) {
        out.push((format!("{name}.weight"), vec![s.out_ch, s.in_ch, s.kernel, s.kernel]));
        out.push((format!("{name}.bn_gamma"), vec![s.out_ch]));
        out.push((format!("{name}.bn_beta"), vec![s.out_ch]));
    }
    for (name, (i, o)) in FC_NAMES.iter().zip(dense_shapes(arch, dims)) {
        out.push((format!("{name}.weight"), vec![o, i]));
        out.push((format!("{name}.bias"), vec![o]));
    }
    out
}

fn conv_index(block: usize) -> usize {
    3 * block
}

fn dense_index(layer: usize) -> usize {
    3 * 7 + 2 * layer
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub dims: NetDims,
    pub learnable: ParamSet,
    pub running: Vec<RunningStats>,
}

pub fn init_params(arch: &ArchConfig, dims: NetDims, stream: &mut RandomStream) -> Result<NetworkParams> {
    arch.validate()?;
    if dims.m == 0 || dims.m_prime == 0 || dims.n == 0 {
        return Err(Error::Config(format!("degenerate network dims {dims:?}")));
    }
    let mut tensors = Vec::new();
    for (name, shape) in param_layout(arch, &dims) {
        let mut t = Tensor::zeros(name, shape);
        if t.name.ends_with(".weight") {
            let fan_in: usize = t.shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = stream.random_range(-bound..bound);
            }
        } else if t.name.ends_with(".bn_gamma") {
            t.data.fill(1.0);
        }
        tensors.push(t);
    }
    let running = block_specs(arch)
        .iter()
        .map(|s| RunningStats { mean: vec![0.0; s.out_ch], var: vec![1.0; s.out_ch] })
        .collect();
    Ok(NetworkParams { arch: arch.clone(), dims, learnable: ParamSet { tensors }, running })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct BlockRecord {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    mode: Mode,
    batch: usize,
    blocks: Vec<BlockRecord>,
    fc_inputs: [Vec<f64>; 3],
    fc_pre: [Vec<f64>; 2],
    raw: Vec<f64>,
}

impl ForwardRecord {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Per-block batch mean and biased variance.
    pub fn batch_stats(&self) -> Vec<RunningStats> {
        self.blocks
            .iter()
            .map(|b| RunningStats { mean: b.batch_mean.clone(), var: b.batch_var.clone() })
            .collect()
    }
}

/// Normalized per-sample modem matrices.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub phis: Vec<DMatrix<Complex64>>,
    pub psis: Vec<DMatrix<Complex64>>,
}

/// Interleaves per-sample channel groups: parts are `[B, c_i, area]`.
fn concat_channels(parts: &[(&[f64], usize)], batch: usize, area: usize) -> Vec<f64> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(batch * total * area);
    for b in 0..batch {
        for &(data, ch) in parts {
            out.extend_from_slice(&data[b * ch * area..(b + 1) * ch * area]);
        }
    }
    out
}

/// Adds slices of a concatenated gradient back into per-part gradients.
fn split_channels_add(grad: &[f64], parts: &mut [(&mut [f64], usize)], batch: usize, area: usize) {
    let total: usize = parts.iter().map(|p| p.1).sum();
    for b in 0..batch {
        let mut offset = b * total * area;
        for (dst, ch) in parts.iter_mut() {
            let len = *ch * area;
            let src = &grad[offset..offset + len];
            for (d, s) in dst[b * len..(b + 1) * len].iter_mut().zip(src) {
                *d += s;
            }
            offset += len;
        }
    }
}

impl NetworkParams {
    pub fn parameter_count(&self) -> usize {
        self.learnable.count()
    }

    fn tensor(&self, index: usize) -> &[f64] {
        &self.learnable.tensors[index].data
    }

    fn run_block(
        &self,
        block: usize,
        input: Vec<f64>,
        batch: usize,
        mode: Mode,
    ) -> BlockRecord {
        let spec = block_specs(&self.arch)[block];
        let g = self.dims.geometry();
        let area = g.area();
        let w = self.tensor(conv_index(block));
        let z = layers::conv_forward(&input, batch, spec.in_ch, spec.out_ch, spec.kernel, g, w);
        let eps = self.arch.bn_epsilon;
        let (mean, var) = match mode {
            Mode::Train => layers::channel_moments(&z, batch, spec.out_ch, area),
            Mode::Eval => (self.running[block].mean.clone(), self.running[block].var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = layers::normalize_channels(&z, batch, spec.out_ch, area, &mean, &inv_std);
        let pre_act = layers::affine_channels(
            &xhat,
            batch,
            spec.out_ch,
            area,
            self.tensor(conv_index(block) + 1),
            self.tensor(conv_index(block) + 2),
        );
        BlockRecord { input, xhat, inv_std, pre_act, batch_mean: mean, batch_var: var }
    }

    fn activation(&self, rec: &BlockRecord) -> Vec<f64> {
        layers::leaky_relu_slice(&rec.pre_act, self.arch.leaky_slope)
    }

    /// Runs the network on `batch` images laid out `[B, 2, M', M]`.
    pub fn forward(&self, images: &[f64], batch: usize, mode: Mode) -> Result<(NetworkOutput, ForwardRecord)> {
        let dims = self.dims;
        if batch == 0 || images.len() != batch * dims.image_len() {
            return Err(Error::Shape(format!(
                "expected {batch} images of {} values, got {} values",
                dims.image_len(),
                images.len()
            )));
        }
        let g = dims.geometry();
        let area = g.area();
        let c = self.arch.pathway_channels;
        let mut blocks = Vec::with_capacity(7);
        let mut pathway_outputs = Vec::with_capacity(2);
        for path in 0..2 {
            let mut acts: Vec<Vec<f64>> = Vec::new();
            for layer in 0..PATHWAY_DEPTH {
                let mut parts: Vec<(&[f64], usize)> = vec![(images, INPUT_CHANNELS)];
                parts.extend(acts.iter().map(|a| (a.as_slice(), c)));
                let input = concat_channels(&parts, batch, area);
                let rec = self.run_block(path * PATHWAY_DEPTH + layer, input, batch, mode);
                acts.push(self.activation(&rec));
                blocks.push(rec);
            }
            pathway_outputs.push(acts.pop().expect("pathway has layers"));
        }
        let fuse_in = concat_channels(
            &[(&pathway_outputs[0], c), (&pathway_outputs[1], c)],
            batch,
            area,
        );
        let fuse_rec = self.run_block(FUSE, fuse_in, batch, mode);
        let fused = self.activation(&fuse_rec);
        blocks.push(fuse_rec);

        let (ph, pw) = pool_size(&self.arch, &dims);
        let pooled = layers::adaptive_avg_pool(&fused, batch, self.arch.fused_channels, g, ph, pw);
        let shapes = dense_shapes(&self.arch, &dims);
        let slope = self.arch.leaky_slope;
        let dense = |layer: usize, x: &[f64]| {
            let (i, o) = shapes[layer];
            layers::dense_forward(
                x,
                batch,
                i,
                o,
                self.tensor(dense_index(layer)),
                self.tensor(dense_index(layer) + 1),
            )
        };
        let pre0 = dense(0, &pooled);
        let h0 = layers::leaky_relu_slice(&pre0, slope);
        let pre1 = dense(1, &h0);
        let h1 = layers::leaky_relu_slice(&pre1, slope);
        let raw = dense(2, &h1);

        let output = normalize_outputs(&raw, batch, &dims)?;
        let record = ForwardRecord {
            mode,
            batch,
            blocks,
            fc_inputs: [pooled, h0, h1],
            fc_pre: [pre0, pre1],
            raw,
        };
        Ok((output, record))
    }

    /// Eval-mode forward in chunks, discarding the record.
    pub fn infer(&self, images: &[f64], batch: usize, chunk: usize) -> Result<NetworkOutput> {
        let len = self.dims.image_len();
        let mut phis = Vec::with_capacity(batch);
        let mut psis = Vec::with_capacity(batch);
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < batch {
            let end = (start + chunk).min(batch);
            let (out, _) = self.forward(&images[start * len..end * len], end - start, Mode::Eval)?;
            phis.extend(out.phis);
            psis.extend(out.psis);
            start = end;
        }
        Ok(NetworkOutput { phis, psis })
    }

    /// Folds a train-mode batch into the running statistics (unbiased
    /// variance, exponential moving average).
    pub fn update_running_stats(&mut self, record: &ForwardRecord) -> Result<()> {
        if record.mode != Mode::Train {
            return Err(Error::Invalid("running statistics need a train-mode record".into()));
        }
        let momentum = self.arch.bn_momentum;
        let count = (record.batch * self.dims.geometry().area()) as f64;
        let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for (stats, block) in self.running.iter_mut().zip(&record.blocks) {
            for c in 0..stats.mean.len() {
                stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * block.batch_mean[c];
                stats.var[c] =
                    (1.0 - momentum) * stats.var[c] + momentum * block.batch_var[c] * correction;
            }
        }
        Ok(())
    }

    /// Forward in train mode and absorb the batch statistics.
    pub fn forward_train(&mut self, images: &[f64], batch: usize) -> Result<(NetworkOutput, ForwardRecord)> {
        let (out, record) = self.forward(images, batch, Mode::Train)?;
        self.update_running_stats(&record)?;
        Ok((out, record))
    }

    /// Gradients of a scalar loss with respect to every learnable tensor,
    /// given its gradients on the normalized outputs (complex convention
    /// `dL/dRe + j dL/dIm`).
    pub fn backward(
        &self,
        record: &ForwardRecord,
        grad_phi: &[DMatrix<Complex64>],
        grad_psi: &[DMatrix<Complex64>],
    ) -> Result<ParamSet> {
        if record.mode != Mode::Train {
            return Err(Error::Invalid("backward needs a train-mode record".into()));
        }
        let batch = record.batch;
        let dims = self.dims;
        if grad_phi.len() != batch || grad_psi.len() != batch {
            return Err(Error::Shape(format!(
                "{} / {} output gradients for a batch of {batch}",
                grad_phi.len(),
                grad_psi.len()
            )));
        }
        for (gp, gs) in grad_phi.iter().zip(grad_psi) {
            if gp.shape() != (dims.m, dims.n) || gs.shape() != (dims.n, dims.m_prime) {
                return Err(Error::Shape(format!(
                    "output gradients {:?} / {:?}",
                    gp.shape(),
                    gs.shape()
                )));
            }
        }
        let mut grads = self.learnable.zeros_like();
        let slope = self.arch.leaky_slope;
        let shapes = dense_shapes(&self.arch, &dims);

        let mut g = normalize_backward(&record.raw, batch, &dims, grad_phi, grad_psi);
        for layer in (0..3).rev() {
            let (i, o) = shapes[layer];
            let (gw, rest) = grads.tensors.split_at_mut(dense_index(layer) + 1);
            let gw = &mut gw[dense_index(layer)].data;
            let gb = &mut rest[0].data;
            g = layers::dense_backward(
                &record.fc_inputs[layer],
                &g,
                batch,
                i,
                o,
                self.tensor(dense_index(layer)),
                gw,
                gb,
            );
            if layer > 0 {
                layers::leaky_relu_backward(&record.fc_pre[layer - 1], &mut g, slope);
            }
        }

        let geo = dims.geometry();
        let area = geo.area();
        let (ph, pw) = pool_size(&self.arch, &dims);
        let g_fused = layers::adaptive_avg_pool_backward(&g, batch, self.arch.fused_channels, geo, ph, pw);
        let g_fuse_in = self.block_backward(FUSE, &record.blocks[FUSE], g_fused, batch, &mut grads);

        let c = self.arch.pathway_channels;
        let mut g_out = [vec![0.0; batch * c * area], vec![0.0; batch * c * area]];
        {
            let [a, b] = &mut g_out;
            split_channels_add(&g_fuse_in, &mut [(a.as_mut_slice(), c), (b.as_mut_slice(), c)], batch, area);
        }
        for (path, g_last) in g_out.into_iter().enumerate() {
            // Gradients on each layer's activation, accumulated from every
            // later consumer through the dense concatenations.
            let mut g_acts: Vec<Vec<f64>> = vec![vec![0.0; batch * c * area]; PATHWAY_DEPTH];
            g_acts[PATHWAY_DEPTH - 1] = g_last;
            for layer in (0..PATHWAY_DEPTH).rev() {
                let block = path * PATHWAY_DEPTH + layer;
                let g_act = std::mem::take(&mut g_acts[layer]);
                let g_in = self.block_backward(block, &record.blocks[block], g_act, batch, &mut grads);
                let mut image_grad = vec![0.0; batch * INPUT_CHANNELS * area];
                let mut parts: Vec<(&mut [f64], usize)> = vec![(image_grad.as_mut_slice(), INPUT_CHANNELS)];
                parts.extend(g_acts[..layer].iter_mut().map(|a| (a.as_mut_slice(), c)));
                split_channels_add(&g_in, &mut parts, batch, area);
            }
        }
        Ok(grads)
    }

    /// Backward through activation, BN and convolution of one block; returns
    /// the gradient on the block input.
    fn block_backward(
        &self,
        block: usize,
        rec: &BlockRecord,
        mut g: Vec<f64>,
        batch: usize,
        grads: &mut ParamSet,
    ) -> Vec<f64> {
        let spec = block_specs(&self.arch)[block];
        let geo = self.dims.geometry();
        let area = geo.area();
        layers::leaky_relu_backward(&rec.pre_act, &mut g, self.arch.leaky_slope);
        let base = conv_index(block);
        let (head, tail) = grads.tensors.split_at_mut(base + 1);
        let (gg, gb) = tail.split_at_mut(1);
        let g_z = layers::batch_norm_backward(
            &g,
            &rec.xhat,
            batch,
            spec.out_ch,
            area,
            self.tensor(base + 1),
            &rec.inv_std,
            &mut gg[0].data,
            &mut gb[0].data,
        );
        layers::conv_backward(
            &rec.input,
            &g_z,
            batch,
            spec.in_ch,
            spec.out_ch,
            spec.kernel,
            geo,
            self.tensor(base),
            &mut head[base].data,
        )
    }
}

/// Per-sample raw layout: `[Re Phi, Im Phi, Re Psi^H, Im Psi^H]`, each block
/// row-major.
fn segments(dims: &NetDims) -> [(usize, usize); 2] {
    let p = 2 * dims.phi_len();
    [(0, p), (p, p + 2 * dims.psi_len())]
}

fn normalize_outputs(raw: &[f64], batch: usize, dims: &NetDims) -> Result<NetworkOutput> {
    let width = dims.output_len();
    let (e_phi, e_psi) = dims.energy_targets();
    let [sp, ss] = segments(dims);
    let mut phis = Vec::with_capacity(batch);
    let mut psis = Vec::with_capacity(batch);
    for row in raw.chunks_exact(width) {
        let scaled = |(a, b): (usize, usize), energy: f64, what: &'static str| -> Result<Vec<f64>> {
            let v = &row[a..b];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroMatrix(what));
            }
            let s = energy.sqrt() / norm;
            Ok(v.iter().map(|x| x * s).collect())
        };
        let phi = scaled(sp, e_phi, "phi")?;
        let psi = scaled(ss, e_psi, "psi_h")?;
        phis.push(uwamod_core::channel::planes_to_complex(&phi, dims.m, dims.n)?);
        psis.push(uwamod_core::channel::planes_to_complex(&psi, dims.n, dims.m_prime)?);
    }
    Ok(NetworkOutput { phis, psis })
}

/// Backward of `y = s x / |x|`: `g_x = s/|x| (g_y - xhat (xhat . g_y))`.
fn normalize_backward(
    raw: &[f64],
    batch: usize,
    dims: &NetDims,
    grad_phi: &[DMatrix<Complex64>],
    grad_psi: &[DMatrix<Complex64>],
) -> Vec<f64> {
    let width = dims.output_len();
    let (e_phi, e_psi) = dims.energy_targets();
    let [sp, ss] = segments(dims);
    let mut out = vec![0.0; batch * width];
    for b in 0..batch {
        let row = &raw[b * width..(b + 1) * width];
        let dst = &mut out[b * width..(b + 1) * width];
        let seg_grads = [
            (sp, e_phi, uwamod_core::channel::complex_to_planes(&grad_phi[b])),
            (ss, e_psi, uwamod_core::channel::complex_to_planes(&grad_psi[b])),
        ];
        for ((a, e), energy, gy) in seg_grads {
            let x = &row[a..e];
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let proj: f64 = x.iter().zip(&gy).map(|(xi, gi)| xi * gi).sum::<f64>() / norm;
            let s = energy.sqrt() / norm;
            for ((d, xi), gi) in dst[a..e].iter_mut().zip(x).zip(&gy) {
                *d = s * (gi - xi / norm * proj);
            }
        }
    }
    out
}
