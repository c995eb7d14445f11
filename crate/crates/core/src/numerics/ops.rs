//! Layer primitives: 2-D cross-correlation, dense affine maps, ReLU, max
//! pooling, softmax, inverted-scaling dropout, and bilinear upsampling.
//!
//! All functions are pure: inputs in, freshly allocated outputs out. The
//! recorded graph in [`super::graph`] calls the same `*_backward` companions
//! that the tests exercise against finite differences, so there is exactly
//! one implementation of every derivative.
//!
//! Convolution convention: **cross-correlation** (no kernel flip), the
//! convention used by every mainstream deep-learning framework. The kernel
//! slides with its top-left tap aligned to the window's top-left corner.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::rng::Rng;
use super::tensor::Tensor;
use super::NumericsError;

/// `C[m×n] = alpha · A · B + beta · C` with explicit strides per operand;
/// `C` is row-major contiguous. Thin safe wrapper over `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

/// Output spatial size of a convolution/pooling window sweep.
#[inline]
fn sweep_len(input: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if window == 0 || stride == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Geometry of one conv2d application, resolved from the operand shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    /// Validates operand shapes and resolves output dimensions.
    pub fn resolve(
        input: &Tensor,
        kernels: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self, NumericsError> {
        if input.rank() != 3 || kernels.rank() != 4 {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "input rank {} (want 3: C_in x H x W), kernels rank {} (want 4: C_out x C_in x kh x kw)",
                    input.rank(),
                    kernels.rank()
                ),
            });
        }
        let (c_in, h_in, w_in) = (input.dim(0), input.dim(1), input.dim(2));
        let (c_out, kc, kh, kw) = (
            kernels.dim(0),
            kernels.dim(1),
            kernels.dim(2),
            kernels.dim(3),
        );
        if kc != c_in {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "input channels {c_in} (shape {:?}) vs kernel input channels {kc} (shape {:?})",
                    input.shape(),
                    kernels.shape()
                ),
            });
        }
        if let Some(b) = bias {
            if b.rank() != 1 || b.dim(0) != c_out {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!(
                        "bias shape {:?} vs output channels {c_out}",
                        b.shape()
                    ),
                });
            }
        }
        let h_out = sweep_len(h_in, kh, stride.0, padding.0);
        let w_out = sweep_len(w_in, kw, stride.1, padding.1);
        match (h_out, w_out) {
            (Some(h_out), Some(w_out)) => Ok(ConvGeometry {
                c_in,
                h_in,
                w_in,
                c_out,
                kh,
                kw,
                stride,
                padding,
                h_out,
                w_out,
            }),
            _ => Err(NumericsError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {kh}x{kw} with stride {:?} does not fit input {h_in}x{w_in} padded by {:?}",
                    stride, padding
                ),
            }),
        }
    }
}

/// Unrolls conv windows into a `(C_in·kh·kw) × (h_out·w_out)` matrix,
/// zero-filling out-of-bounds (padding) taps.
fn im2col(input: &Tensor, g: &ConvGeometry) -> Vec<f64> {
    let n = g.h_out * g.w_out;
    let mut cols = vec![0.0; g.c_in * g.kh * g.kw * n];
    let x = input.data();
    for ci in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = ((ci * g.kh + di) * g.kw + dj) * n;
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride.0 + di) as isize - g.padding.0 as isize;
                    if ih < 0 || ih >= g.h_in as isize {
                        continue;
                    }
                    let src_row = (ci * g.h_in + ih as usize) * g.w_in;
                    let dst_row = row + oh * g.w_out;
                    if g.stride.1 == 1 {
                        // Contiguous fast path: one window column sweep is a
                        // slice copy once clamped to the valid range.
                        let shift = dj as isize - g.padding.1 as isize;
                        let ow_lo = (-shift).max(0) as usize;
                        let ow_hi = ((g.w_in as isize - shift).min(g.w_out as isize)).max(0) as usize;
                        if ow_lo < ow_hi {
                            let src_lo = (ow_lo as isize + shift) as usize;
                            cols[dst_row + ow_lo..dst_row + ow_hi].copy_from_slice(
                                &x[src_row + src_lo..src_row + src_lo + (ow_hi - ow_lo)],
                            );
                        }
                    } else {
                        for ow in 0..g.w_out {
                            let iw = (ow * g.stride.1 + dj) as isize - g.padding.1 as isize;
                            if iw >= 0 && iw < g.w_in as isize {
                                cols[dst_row + ow] = x[src_row + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of column gradients back onto the input layout; exact adjoint
/// of [`im2col`].
fn col2im(cols: &[f64], g: &ConvGeometry) -> Tensor {
    let n = g.h_out * g.w_out;
    let mut out = Tensor::zeros(&[g.c_in, g.h_in, g.w_in]);
    let dx = out.data_mut();
    for ci in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = ((ci * g.kh + di) * g.kw + dj) * n;
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride.0 + di) as isize - g.padding.0 as isize;
                    if ih < 0 || ih >= g.h_in as isize {
                        continue;
                    }
                    let dst_row = (ci * g.h_in + ih as usize) * g.w_in;
                    let src_row = row + oh * g.w_out;
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride.1 + dj) as isize - g.padding.1 as isize;
                        if iw >= 0 && iw < g.w_in as isize {
                            dx[dst_row + iw as usize] += cols[src_row + ow];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D cross-correlation of a `C_in×H×W` input with a `C_out×C_in×kh×kw`
/// kernel bank, plus an optional per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor, NumericsError> {
    let (out, _cols) = conv2d_with_cols(input, kernels, bias, stride, padding)?;
    Ok(out)
}

/// Like [`conv2d`] but also returns the unrolled column matrix, which the
/// graph caches so the backward pass does not re-unroll.
pub fn conv2d_with_cols(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor, Vec<f64>), NumericsError> {
    let g = ConvGeometry::resolve(input, kernels, bias, stride, padding)?;
    let n = g.h_out * g.w_out;
    let k = g.c_in * g.kh * g.kw;
    let cols = im2col(input, &g);
    let mut out = Tensor::zeros(&[g.c_out, g.h_out, g.w_out]);
    gemm(
        g.c_out,
        k,
        n,
        1.0,
        kernels.data(),
        k as isize,
        1,
        &cols,
        n as isize,
        1,
        0.0,
        out.data_mut(),
    );
    if let Some(b) = bias {
        let data = out.data_mut();
        for c in 0..g.c_out {
            let bc = b.data()[c];
            for v in &mut data[c * n..(c + 1) * n] {
                *v += bc;
            }
        }
    }
    Ok((out, cols))
}

/// Gradients of [`conv2d`] w.r.t. input, kernels, and bias.
///
/// `cols` must be the column matrix produced by the matching forward call.
pub fn conv2d_backward(
    grad_out: &Tensor,
    kernels: &Tensor,
    cols: &[f64],
    g: &ConvGeometry,
    with_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let n = g.h_out * g.w_out;
    let k = g.c_in * g.kh * g.kw;
    debug_assert_eq!(grad_out.len(), g.c_out * n);
    debug_assert_eq!(cols.len(), k * n);

    // dW[C_out×K] = dY[C_out×N] · colsᵀ[N×K]
    let mut grad_kernels = Tensor::zeros(&[g.c_out, g.c_in, g.kh, g.kw]);
    gemm(
        g.c_out,
        n,
        k,
        1.0,
        grad_out.data(),
        n as isize,
        1,
        cols,
        1,
        n as isize,
        0.0,
        grad_kernels.data_mut(),
    );

    // dcols[K×N] = Wᵀ[K×C_out] · dY[C_out×N], then scatter back to the input.
    let mut grad_cols = vec![0.0; k * n];
    gemm(
        k,
        g.c_out,
        n,
        1.0,
        kernels.data(),
        1,
        k as isize,
        grad_out.data(),
        n as isize,
        1,
        0.0,
        &mut grad_cols,
    );
    let grad_input = col2im(&grad_cols, g);

    let grad_bias = with_bias.then(|| {
        let mut gb = Tensor::zeros(&[g.c_out]);
        for c in 0..g.c_out {
            gb.data_mut()[c] = grad_out.data()[c * n..(c + 1) * n].iter().sum();
        }
        gb
    });

    (grad_input, grad_kernels, grad_bias)
}

/// Elementwise `max(x, 0)`.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// ReLU gradient: passes `grad_out` where the forward *input* was positive.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Tensor {
    let mut out = grad_out.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// Max pooling over a `C×H×W` input. Returns the pooled tensor and, per
/// output element, the flat input index of its maximum (first occurrence in
/// row-major scan order on ties) for use by the backward pass.
pub fn maxpool2d(
    input: &Tensor,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor, Vec<usize>), NumericsError> {
    if input.rank() != 3 {
        return Err(NumericsError::ShapeMismatch {
            op: "maxpool2d",
            detail: format!("input rank {} (want 3: C x H x W)", input.rank()),
        });
    }
    let (c_n, h, w) = (input.dim(0), input.dim(1), input.dim(2));
    let h_out = sweep_len(h, window.0, stride.0, 0);
    let w_out = sweep_len(w, window.1, stride.1, 0);
    let (h_out, w_out) = match (h_out, w_out) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(NumericsError::ShapeMismatch {
                op: "maxpool2d",
                detail: format!(
                    "window {:?} with stride {:?} does not fit input {h}x{w}",
                    window, stride
                ),
            })
        }
    };
    let mut out = Tensor::zeros(&[c_n, h_out, w_out]);
    let mut argmax = vec![0usize; c_n * h_out * w_out];
    let x = input.data();
    let o = out.data_mut();
    for c in 0..c_n {
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for di in 0..window.0 {
                    let ih = oh * stride.0 + di;
                    let row = (c * h + ih) * w;
                    for dj in 0..window.1 {
                        let iw = ow * stride.1 + dj;
                        let v = x[row + iw];
                        if v > best {
                            best = v;
                            best_idx = row + iw;
                        }
                    }
                }
                let oi = (c * h_out + oh) * w_out + ow;
                o[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Max-pool gradient: routes each output gradient to its recorded argmax.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(input_shape);
    let dx = out.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        dx[idx] += g;
    }
    out
}

/// Affine map `W·x + b` of a rank-1 input; `w` is `out×in`.
pub fn dense(
    input: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
) -> Result<Tensor, NumericsError> {
    if input.rank() != 1 || w.rank() != 2 || w.dim(1) != input.dim(0) {
        return Err(NumericsError::ShapeMismatch {
            op: "dense",
            detail: format!("input {:?} vs weights {:?}", input.shape(), w.shape()),
        });
    }
    let (rows, cols) = (w.dim(0), w.dim(1));
    if let Some(b) = b {
        if b.rank() != 1 || b.dim(0) != rows {
            return Err(NumericsError::ShapeMismatch {
                op: "dense",
                detail: format!("bias {:?} vs weights {:?}", b.shape(), w.shape()),
            });
        }
    }
    let mut out = Tensor::zeros(&[rows]);
    let o = out.data_mut();
    for r in 0..rows {
        let wrow = &w.data()[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in wrow.iter().zip(input.data()) {
            acc += wv * xv;
        }
        o[r] = acc + b.map_or(0.0, |b| b.data()[r]);
    }
    Ok(out)
}

/// Gradients of [`dense`] w.r.t. input, weights, and bias.
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    w: &Tensor,
    with_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let (rows, cols) = (w.dim(0), w.dim(1));
    let mut grad_input = Tensor::zeros(&[cols]);
    let mut grad_w = Tensor::zeros(&[rows, cols]);
    {
        let gi = grad_input.data_mut();
        let gw = grad_w.data_mut();
        for r in 0..rows {
            let gr = grad_out.data()[r];
            let wrow = &w.data()[r * cols..(r + 1) * cols];
            let gwrow = &mut gw[r * cols..(r + 1) * cols];
            for c in 0..cols {
                gi[c] += wrow[c] * gr;
                gwrow[c] = input.data()[c] * gr;
            }
        }
    }
    let grad_b = with_bias.then(|| grad_out.clone());
    (grad_input, grad_w, grad_b)
}

/// Numerically stable softmax of a rank-1 logit vector.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyInput { op: "softmax" });
    }
    if logits.rank() != 1 {
        return Err(NumericsError::ShapeMismatch {
            op: "softmax",
            detail: format!("input {:?} (want rank 1)", logits.shape()),
        });
    }
    let max = logits.max_value().unwrap();
    let mut out = logits.clone();
    let mut sum = 0.0;
    for v in out.data_mut() {
        *v = super::fmath::exp(*v - max);
        sum += *v;
    }
    for v in out.data_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Log-sum-exp of a logit slice, max-shifted for stability.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in logits {
        sum += super::fmath::exp(v - max);
    }
    max + super::fmath::ln(sum)
}

/// Inverted-scaling dropout.
///
/// During training each element is zeroed with probability `rate` and the
/// survivors are scaled by `1/(1-rate)`, so the expected activation is
/// unchanged and inference applies no compensation. Returns the output and,
/// when training, the per-element factor mask (`0` or `1/(1-rate)`).
pub fn dropout(
    input: &Tensor,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, Option<Vec<f64>>), NumericsError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::InvalidRate {
            op: "dropout",
            rate,
        });
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut out = input.clone();
    let mut factors = vec![0.0; input.len()];
    for (v, f) in out.data_mut().iter_mut().zip(factors.iter_mut()) {
        if rng.bernoulli(rate) {
            *v = 0.0;
        } else {
            *v *= keep_scale;
            *f = keep_scale;
        }
    }
    Ok((out, Some(factors)))
}

/// Bilinear upsampling of a rank-2 map to `(out_h, out_w)`, align-corners
/// convention (corner samples map to corner samples exactly).
pub fn bilinear_upsample(
    input: &Tensor,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, NumericsError> {
    if input.rank() != 2 {
        return Err(NumericsError::ShapeMismatch {
            op: "bilinear_upsample",
            detail: format!("input {:?} (want rank 2)", input.shape()),
        });
    }
    if out_h == 0 || out_w == 0 || input.is_empty() {
        return Err(NumericsError::EmptyInput {
            op: "bilinear_upsample",
        });
    }
    let (h, w) = (input.dim(0), input.dim(1));
    let scale = |out_len: usize, in_len: usize| -> f64 {
        if out_len > 1 {
            (in_len - 1) as f64 / (out_len - 1) as f64
        } else {
            0.0
        }
    };
    let sh = scale(out_h, h);
    let sw = scale(out_w, w);
    let mut out = Tensor::zeros(&[out_h, out_w]);
    let o = out.data_mut();
    for oh in 0..out_h {
        let fy = oh as f64 * sh;
        let y0 = (fy as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ow in 0..out_w {
            let fx = ow as f64 * sw;
            let x0 = (fx as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let v00 = input.at2(y0, x0);
            let v01 = input.at2(y0, x1);
            let v10 = input.at2(y1, x0);
            let v11 = input.at2(y1, x1);
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            o[oh * out_w + ow] = top + (bottom - top) * ty;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Hand-computed 3x3 * 2x2 valid cross-correlation. With input rows
    /// [1 2 3; 4 5 6; 7 8 9] and kernel [1 0; 0 -1], output[i][j] =
    /// x[i][j] - x[i+1][j+1]: [[1-5, 2-6], [4-8, 5-9]] = [[-4,-4],[-4,-4]],
    /// then +0.5 bias. A flipped-kernel (true convolution) implementation
    /// would produce [[ -1*5+... ]] different values, so this pins the
    /// cross-correlation convention.
    #[test]
    fn conv2d_matches_hand_computation() {
        let input = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let kernels = t(&[1, 1, 2, 2], &[1., 0., 0., -1.]);
        let bias = t(&[1], &[0.5]);
        let out = conv2d(&input, &kernels, Some(&bias), (1, 1), (0, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[-3.5, -3.5, -3.5, -3.5]);
    }

    #[test]
    fn conv2d_same_padding_preserves_spatial_dims() {
        let input = Tensor::filled(&[2, 6, 20], 1.0);
        let kernels = Tensor::filled(&[3, 2, 3, 5], 0.1);
        let out = conv2d(&input, &kernels, None, (1, 1), (1, 2)).unwrap();
        assert_eq!(out.shape(), &[3, 6, 20]);
        // Interior elements see all 2*3*5 taps: 30 * 0.1 = 3.0.
        assert!((out.at3(1, 3, 10) - 3.0).abs() < 1e-12);
        // The corner sees a 2x3 window per input channel: 2*2*3 taps.
        assert!((out.at3(0, 0, 0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let kernels = Tensor::zeros(&[1, 3, 2, 2]);
        let err = conv2d(&input, &kernels, None, (1, 1), (0, 0)).unwrap_err();
        match err {
            NumericsError::ShapeMismatch { op: "conv2d", detail } => {
                assert!(detail.contains('2') && detail.contains('3'), "{detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let input = Tensor::zeros(&[1, 2, 2]);
        let kernels = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&input, &kernels, None, (1, 1), (0, 0)).is_err());
        // With padding 1 the 3x3 kernel fits a 2x2 input again.
        assert!(conv2d(&input, &kernels, None, (1, 1), (1, 1)).is_ok());
    }

    #[test]
    fn maxpool_records_first_argmax_on_ties() {
        let input = t(&[1, 1, 4], &[2.0, 2.0, 1.0, 3.0]);
        let (out, argmax) = maxpool2d(&input, (1, 2), (1, 2)).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
        assert_eq!(argmax, vec![0, 3]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let input = t(&[1, 2, 2], &[1.0, 5.0, 4.0, 2.0]);
        let (out, argmax) = maxpool2d(&input, (2, 2), (2, 2)).unwrap();
        assert_eq!(out.data(), &[5.0]);
        let grad = maxpool2d_backward(&Tensor::scalar(2.5).reshaped(vec![1, 1, 1]).unwrap(), &argmax, input.shape());
        assert_eq!(grad.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn dense_matches_hand_computation() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let w = t(&[2, 3], &[1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let b = t(&[2], &[10.0, -10.0]);
        let y = dense(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[8.0, -7.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_orders_like_logits() {
        let p = softmax(&t(&[3], &[1.0, 3.0, 2.0])).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.data()[1] > p.data()[2] && p.data()[2] > p.data()[0]);
        assert!(softmax(&Tensor::zeros(&[0])).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&t(&[2], &[1000.0, 1000.0])).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!(p.all_finite());
    }

    #[test]
    fn dropout_identity_outside_training() {
        let x = t(&[4], &[1.0, -2.0, 3.0, -4.0]);
        let mut rng = Rng::new(1);
        let (y, mask) = dropout(&x, 0.5, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y0, mask0) = dropout(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y0, x);
        assert!(mask0.is_none());
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = Tensor::filled(&[1000], 1.0);
        let mut rng = Rng::new(7);
        let (y, mask) = dropout(&x, 0.2, &mut rng, true).unwrap();
        let mask = mask.unwrap();
        let mut kept = 0usize;
        for (v, f) in y.data().iter().zip(&mask) {
            if *f == 0.0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!((*v - 1.25).abs() < 1e-15);
                assert!((*f - 1.25).abs() < 1e-15);
                kept += 1;
            }
        }
        // Expected keep count 800; this seed should be well within 5 sigma.
        assert!((kept as f64 - 800.0).abs() < 65.0, "kept {kept}");
    }

    #[test]
    fn bilinear_upsample_aligns_corners() {
        let input = t(&[2, 2], &[0.0, 1.0, 2.0, 3.0]);
        let up = bilinear_upsample(&input, 3, 3).unwrap();
        assert_eq!(up.at2(0, 0), 0.0);
        assert_eq!(up.at2(0, 2), 1.0);
        assert_eq!(up.at2(2, 0), 2.0);
        assert_eq!(up.at2(2, 2), 3.0);
        assert!((up.at2(1, 1) - 1.5).abs() < 1e-12);
        // Upsampling a constant map stays constant.
        let flat = bilinear_upsample(&Tensor::filled(&[3, 5], 4.25), 7, 11).unwrap();
        assert!(flat.data().iter().all(|v| (*v - 4.25).abs() < 1e-12));
    }

    #[test]
    fn bilinear_upsample_identity_when_sizes_match() {
        let input = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let up = bilinear_upsample(&input, 2, 3).unwrap();
        assert_eq!(up, input);
    }

    proptest! {
        /// Softmax is invariant to a constant logit shift.
        #[test]
        fn softmax_shift_invariance(
            logits in proptest::collection::vec(-30.0..30.0f64, 1..8),
            shift in -100.0..100.0f64,
        ) {
            let base = softmax(&t(&[logits.len()], &logits)).unwrap();
            let shifted_logits: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let shifted = softmax(&t(&[logits.len()], &shifted_logits)).unwrap();
            for (a, b) in base.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        /// Pooling then flattening never changes the multiset maximum.
        #[test]
        fn maxpool_output_bounded_by_input_max(
            data in proptest::collection::vec(-10.0..10.0f64, 16),
        ) {
            let input = t(&[1, 4, 4], &data);
            let (out, _) = maxpool2d(&input, (2, 2), (2, 2)).unwrap();
            let in_max = input.max_value().unwrap();
            prop_assert_eq!(out.max_value().unwrap(), in_max);
        }
    }
}
