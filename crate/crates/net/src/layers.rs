//! Forward and backward kernels for the layer types the network uses. All
//! tensors are flat row-major `f64` slices; batch layout is `[B, C, H*W]`.

/// `C = A B` (or `C += A B` when `accumulate`), with `A` logically `m x k`
/// and `B` logically `k x n`. A transposed operand is stored row-major in its
/// transposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm lhs size");
    assert_eq!(b.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above pin every operand to exactly the extent the
    // given strides address.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_slice(xs: &[f64], slope: f64) -> Vec<f64> {
    xs.iter().map(|&x| leaky_relu(x, slope)).collect()
}

/// Multiplies `grad` in place by the activation derivative at `pre`.
pub fn leaky_relu_backward(pre: &[f64], grad: &mut [f64], slope: f64) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        if x < 0.0 {
            *g *= slope;
        }
    }
}

/// Spatial geometry shared by every convolution (stride 1, zero "same"
/// padding, odd kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Unrolls `[C, H, W]` into `[C k k, H W]` patches.
pub fn im2col(input: &[f64], channels: usize, g: Geometry, kernel: usize, cols: &mut [f64]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let pad = (kernel / 2) as isize;
    let area = g.area();
    debug_assert_eq!(cols.len(), channels * kernel * kernel * area);
    for c in 0..channels {
        let plane = &input[c * area..(c + 1) * area];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let out = &mut cols[row * area..(row + 1) * area];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let dst = &mut out[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        dst[x as usize] = if sx < 0 || sx >= w { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `[C, H, W]`.
pub fn col2im(cols: &[f64], channels: usize, g: Geometry, kernel: usize, output: &mut [f64]) {
    let (h, w) = (g.height as isize, g.width as isize);
    let pad = (kernel / 2) as isize;
    let area = g.area();
    output.fill(0.0);
    for c in 0..channels {
        let plane = &mut output[c * area..(c + 1) * area];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src_row = &cols[row * area..(row + 1) * area];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let src = &src_row[(y * w) as usize..((y + 1) * w) as usize];
                    let dst = &mut plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            dst[sx as usize] += src[x as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Bias-free convolution over a batch. `weight` is `[C_out, C_in, k, k]`.
pub fn conv_forward(
    input: &[f64],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    g: Geometry,
    weight: &[f64],
) -> Vec<f64> {
    let area = g.area();
    let patch = in_ch * kernel * kernel;
    let mut out = vec![0.0; batch * out_ch * area];
    let mut cols = vec![0.0; patch * area];
    for b in 0..batch {
        let x = &input[b * in_ch * area..(b + 1) * in_ch * area];
        let y = &mut out[b * out_ch * area..(b + 1) * out_ch * area];
        if kernel == 1 {
            gemm(out_ch, in_ch, area, weight, false, x, false, y, false);
        } else {
            im2col(x, in_ch, g, kernel, &mut cols);
            gemm(out_ch, patch, area, weight, false, &cols, false, y, false);
        }
    }
    out
}

/// Returns the input gradient and accumulates into `grad_weight`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &[f64],
    grad_out: &[f64],
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    g: Geometry,
    weight: &[f64],
    grad_weight: &mut [f64],
) -> Vec<f64> {
    let area = g.area();
    let patch = in_ch * kernel * kernel;
    let mut grad_in = vec![0.0; batch * in_ch * area];
    let mut cols = vec![0.0; patch * area];
    let mut grad_cols = vec![0.0; patch * area];
    for b in 0..batch {
        let x = &input[b * in_ch * area..(b + 1) * in_ch * area];
        let dy = &grad_out[b * out_ch * area..(b + 1) * out_ch * area];
        let dx = &mut grad_in[b * in_ch * area..(b + 1) * in_ch * area];
        if kernel == 1 {
            gemm(out_ch, area, in_ch, dy, false, x, true, grad_weight, true);
            gemm(in_ch, out_ch, area, weight, true, dy, false, dx, false);
        } else {
            im2col(x, in_ch, g, kernel, &mut cols);
            gemm(out_ch, area, patch, dy, false, &cols, true, grad_weight, true);
            gemm(patch, out_ch, area, weight, true, dy, false, &mut grad_cols, false);
            col2im(&grad_cols, in_ch, g, kernel, dx);
        }
    }
    grad_in
}

/// Per-channel statistics of a `[B, C, area]` tensor.
pub fn channel_moments(x: &[f64], batch: usize, channels: usize, area: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * area) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            s += x[(b * channels + c) * area..(b * channels + c + 1) * area]
                .iter()
                .sum::<f64>();
        }
        let mu = s / count;
        let mut v = 0.0;
        for b in 0..batch {
            v += x[(b * channels + c) * area..(b * channels + c + 1) * area]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[c] = mu;
        var[c] = v / count;
    }
    (mean, var)
}

/// `(x - mean) / sqrt(var + eps)` per channel.
pub fn normalize_channels(
    x: &[f64],
    batch: usize,
    channels: usize,
    area: usize,
    mean: &[f64],
    inv_std: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let range = (b * channels + c) * area..(b * channels + c + 1) * area;
            for (o, &v) in out[range.clone()].iter_mut().zip(&x[range]) {
                *o = (v - mean[c]) * inv_std[c];
            }
        }
    }
    out
}

/// `gamma * xhat + beta` per channel.
pub fn affine_channels(
    xhat: &[f64],
    batch: usize,
    channels: usize,
    area: usize,
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; xhat.len()];
    for b in 0..batch {
        for c in 0..channels {
            let range = (b * channels + c) * area..(b * channels + c + 1) * area;
            for (o, &v) in out[range.clone()].iter_mut().zip(&xhat[range]) {
                *o = gamma[c] * v + beta[c];
            }
        }
    }
    out
}

/// Batch-statistics normalization backward. Accumulates `grad_gamma` and
/// `grad_beta`; returns the gradient with respect to the pre-normalization
/// input.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward(
    grad_out: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    area: usize,
    gamma: &[f64],
    inv_std: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let count = (batch * area) as f64;
    let mut grad_in = vec![0.0; grad_out.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let range = (b * channels + c) * area..(b * channels + c + 1) * area;
            for (&dy, &xh) in grad_out[range.clone()].iter().zip(&xhat[range]) {
                sum_dy += dy;
                sum_dy_xhat += dy * xh;
            }
        }
        grad_gamma[c] += sum_dy_xhat;
        grad_beta[c] += sum_dy;
        let scale = gamma[c] * inv_std[c] / count;
        for b in 0..batch {
            let range = (b * channels + c) * area..(b * channels + c + 1) * area;
            for ((gi, &dy), &xh) in grad_in[range.clone()]
                .iter_mut()
                .zip(&grad_out[range.clone()])
                .zip(&xhat[range])
            {
                *gi = scale * (count * dy - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
    grad_in
}

/// Half-open source window `[start, end)` for adaptive pooling output `i`.
pub fn pool_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling of `[B, C, H, W]` down to `[B, C, ph, pw]`.
pub fn adaptive_avg_pool(
    x: &[f64],
    batch: usize,
    channels: usize,
    g: Geometry,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * channels * ph * pw];
    for bc in 0..batch * channels {
        let plane = &x[bc * g.area()..(bc + 1) * g.area()];
        for oy in 0..ph {
            let (y0, y1) = pool_window(oy, g.height, ph);
            for ox in 0..pw {
                let (x0, x1) = pool_window(ox, g.width, pw);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += plane[y * g.width + x0..y * g.width + x1].iter().sum::<f64>();
                }
                out[(bc * ph + oy) * pw + ox] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward(
    grad_out: &[f64],
    batch: usize,
    channels: usize,
    g: Geometry,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let mut grad_in = vec![0.0; batch * channels * g.area()];
    for bc in 0..batch * channels {
        let plane = &mut grad_in[bc * g.area()..(bc + 1) * g.area()];
        for oy in 0..ph {
            let (y0, y1) = pool_window(oy, g.height, ph);
            for ox in 0..pw {
                let (x0, x1) = pool_window(ox, g.width, pw);
                let share = grad_out[(bc * ph + oy) * pw + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for v in &mut plane[y * g.width + x0..y * g.width + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    grad_in
}

/// `Y = X W^T + b` for `X: [B, in]`, `W: [out, in]`.
pub fn dense_forward(x: &[f64], batch: usize, inputs: usize, outputs: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(b);
    }
    gemm(batch, inputs, outputs, x, false, w, true, &mut y, true);
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    grad_out: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    gemm(outputs, batch, inputs, grad_out, true, x, false, grad_w, true);
    for row in grad_out.chunks_exact(outputs) {
        for (gb, &g) in grad_b.iter_mut().zip(row) {
            *gb += g;
        }
    }
    let mut grad_in = vec![0.0; batch * inputs];
    gemm(batch, outputs, inputs, grad_out, false, w, false, &mut grad_in, false);
    grad_in
}
