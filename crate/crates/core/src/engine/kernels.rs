//! Reference CPU kernels. Each kernel counts the work of the loops it actually
//! runs into a [`KernelCounters`].
//!
//! Parallel kernels only split output elements across threads; the reduction
//! order of every output element is fixed, so results are bit-identical for
//! any thread count.

use std::f32::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use super::counters::KernelCounters;
use crate::graph::{Activation, ConvParams, MFCC_COEFFS};
use crate::shape::{Axis, Precision, TensorShape};
use crate::tensor::{round_trip_storage, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn mismatch(msg: impl Into<String>) -> KernelError {
    KernelError::ShapeMismatch(msg.into())
}

#[derive(Debug, Clone, Copy)]
pub struct KernelCtx {
    /// Tile edge of the blocked matmul, in elements.
    pub block: usize,
    /// Storage precision of the weights, for byte accounting.
    pub weight_precision: Precision,
}

impl Default for KernelCtx {
    fn default() -> Self {
        KernelCtx {
            block: 64,
            weight_precision: Precision::Fp32,
        }
    }
}

impl KernelCtx {
    fn weight_bytes(&self, elements: usize) -> u64 {
        elements as u64 * self.weight_precision.bytes()
    }
}

fn activation_bytes(x: &TensorShape, out: &TensorShape) -> u64 {
    x.storage_bytes() + out.storage_bytes()
}

fn require_tags(x: &Tensor, tags: &[Axis], what: &str) -> Result<(), KernelError> {
    if x.shape.tags() != tags {
        return Err(mismatch(format!("{what} expects axes {tags:?}, got {}", x.shape)));
    }
    Ok(())
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Accumulates `x_rows[r×k] · w[k×n]` columns `col0..col0+width` into `y` (row stride `width`).
fn tile_accumulate(
    block: usize,
    x_rows: &[f32],
    w: &[f32],
    k: usize,
    n: usize,
    y: &mut [f32],
    col0: usize,
    width: usize,
) -> u64 {
    let rows = y.len() / width;
    let mut macs = 0u64;
    for kb in (0..k).step_by(block) {
        let ke = (kb + block).min(k);
        for nb in (0..width).step_by(block) {
            let ne = (nb + block).min(width);
            for i in 0..rows {
                let yrow = &mut y[i * width + nb..i * width + ne];
                let xrow = &x_rows[i * k..(i + 1) * k];
                for kk in kb..ke {
                    let wrow = &w[kk * n + col0 + nb..kk * n + col0 + ne];
                    axpy(yrow, xrow[kk], wrow);
                }
            }
            macs += (rows * (ke - kb) * (ne - nb)) as u64;
        }
    }
    macs
}

/// `y[rows×n] = x[rows×k] · w[k×n] + b`, cache-blocked and parallel over rows
/// (or over column blocks when there are fewer rows than threads).
/// Returns the number of MACs executed.
pub fn matmul_bias(block: usize, x: &[f32], w: &[f32], b: &[f32], y: &mut [f32], rows: usize, k: usize, n: usize) -> u64 {
    let block = block.max(1);
    for row in y.chunks_mut(n) {
        row.copy_from_slice(b);
    }
    let threads = rayon::current_num_threads();
    if rows >= threads {
        let rows_per_task = if threads == 1 { rows } else { rows.div_ceil(threads * 4).max(1) };
        y.par_chunks_mut(rows_per_task * n)
            .enumerate()
            .map(|(ci, ychunk)| {
                let r0 = ci * rows_per_task;
                let r = ychunk.len() / n;
                tile_accumulate(block, &x[r0 * k..(r0 + r) * k], w, k, n, ychunk, 0, n)
            })
            .sum()
    } else {
        let col_chunk = n.div_ceil(threads).div_ceil(block).max(1) * block;
        let mut macs = 0;
        for (i, yrow) in y.chunks_mut(n).enumerate() {
            let xrow = &x[i * k..(i + 1) * k];
            macs += yrow
                .par_chunks_mut(col_chunk)
                .enumerate()
                .map(|(cj, seg)| {
                    let width = seg.len();
                    tile_accumulate(block, xrow, w, k, n, seg, cj * col_chunk, width)
                })
                .sum::<u64>();
        }
        macs
    }
}

/// Fully connected layer over the trailing `F` axis; leading axes are
/// flattened into an effective batch.
pub fn fc_forward(
    ctx: &KernelCtx,
    x: &Tensor,
    w: &[f32],
    b: &[f32],
    out_features: usize,
    activation: Activation,
    counters: &mut KernelCounters,
) -> Result<Tensor, KernelError> {
    let (axis, in_f) = x.shape.last();
    if axis != Axis::F {
        return Err(mismatch(format!("fc needs a trailing F axis, got {}", x.shape)));
    }
    if w.len() != in_f * out_features || b.len() != out_features {
        return Err(mismatch(format!(
            "fc weights {}+{} do not fit {in_f}->{out_features}",
            w.len(),
            b.len()
        )));
    }
    let rows = x.numel() / in_f;
    let out_shape = x.shape.with_last(Axis::F, out_features).with_precision(Precision::Fp32);
    let mut y = vec![0.0f32; rows * out_features];
    let macs = matmul_bias(ctx.block, &x.data, w, b, &mut y, rows, in_f, out_features);
    let outputs = (rows * out_features) as u64;
    let mut flops = 2 * macs + outputs;
    if let Activation::ReluClip { clip } = activation {
        for v in &mut y {
            *v = relu_clip(*v, clip);
        }
        flops += outputs;
    }
    *counters += KernelCounters {
        macs,
        flops,
        weight_bytes_touched: ctx.weight_bytes(w.len() + b.len()),
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
    };
    Ok(Tensor::new(out_shape, y))
}

#[inline]
pub fn relu_clip(v: f32, clip: f32) -> f32 {
    v.max(0.0).min(clip)
}

/// Borrowed weights of one LSTM direction; gate columns ordered i, f, g, o.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `[in, 4h]`
    pub wx: &'a [f32],
    /// `[h, 4h]`
    pub wh: &'a [f32],
    /// `[4h]`
    pub bias: &'a [f32],
}

impl LstmWeights<'_> {
    fn check(&self, in_f: usize, hidden: usize) -> Result<(), KernelError> {
        let g4 = 4 * hidden;
        if self.wx.len() != in_f * g4 || self.wh.len() != hidden * g4 || self.bias.len() != g4 {
            return Err(mismatch(format!("lstm weights do not fit in={in_f}, hidden={hidden}")));
        }
        Ok(())
    }

    /// Weight elements read by one pass over `steps` timesteps: the input
    /// projection and bias once, the recurrent matrix every step.
    fn elements_touched(&self, steps: usize) -> usize {
        self.wx.len() + self.bias.len() + self.wh.len() * steps
    }
}

/// Adds the recurrent term `h · Wh` to one timestep's gate pre-activations,
/// parallel over gate columns.
fn add_recurrent(h: &[f32], wh: &[f32], batch: usize, hidden: usize, gates: &mut [f32]) -> u64 {
    let g4 = 4 * hidden;
    let threads = rayon::current_num_threads();
    let chunk = g4.div_ceil(threads).div_ceil(16).max(1) * 16;
    let starts: Vec<usize> = (0..g4).step_by(chunk).collect();
    let parts: Vec<(usize, Vec<f32>)> = starts
        .into_par_iter()
        .map(|c0| {
            let width = chunk.min(g4 - c0);
            let mut local = vec![0.0f32; batch * width];
            for (b, row) in local.chunks_mut(width).enumerate() {
                row.copy_from_slice(&gates[b * g4 + c0..b * g4 + c0 + width]);
            }
            for k in 0..hidden {
                let wrow = &wh[k * g4 + c0..k * g4 + c0 + width];
                for (b, row) in local.chunks_mut(width).enumerate() {
                    axpy(row, h[b * hidden + k], wrow);
                }
            }
            (c0, local)
        })
        .collect();
    for (c0, local) in parts {
        let width = local.len() / batch;
        for b in 0..batch {
            gates[b * g4 + c0..b * g4 + c0 + width].copy_from_slice(&local[b * width..(b + 1) * width]);
        }
    }
    (batch * hidden * g4) as u64
}

/// One LSTM direction over `[T, B, in]` data, writing `[T, B, h]`.
///
/// The input projection `x · Wx + b` is one matmul over all timesteps; only
/// `Wh` is re-read every step. `reverse` walks t = T-1 .. 0.
#[allow(clippy::too_many_arguments)]
fn lstm_pass(
    block: usize,
    x: &[f32],
    steps: usize,
    batch: usize,
    in_f: usize,
    w: &LstmWeights<'_>,
    hidden: usize,
    reverse: bool,
) -> (Vec<f32>, u64, u64) {
    let g4 = 4 * hidden;
    let mut xproj = vec![0.0f32; steps * batch * g4];
    let mut macs = matmul_bias(block, x, w.wx, w.bias, &mut xproj, steps * batch, in_f, g4);
    let mut out = vec![0.0f32; steps * batch * hidden];
    let mut h = vec![0.0f32; batch * hidden];
    let mut c = vec![0.0f32; batch * hidden];
    for step in 0..steps {
        let t = if reverse { steps - 1 - step } else { step };
        let gates = &mut xproj[t * batch * g4..(t + 1) * batch * g4];
        macs += add_recurrent(&h, w.wh, batch, hidden, gates);
        for b in 0..batch {
            let g = &gates[b * g4..(b + 1) * g4];
            for j in 0..hidden {
                let i_gate = sigmoid(g[j]);
                let f_gate = sigmoid(g[hidden + j]);
                let cand = g[2 * hidden + j].tanh();
                let o_gate = sigmoid(g[3 * hidden + j]);
                let cell = f_gate * c[b * hidden + j] + i_gate * cand;
                c[b * hidden + j] = cell;
                h[b * hidden + j] = o_gate * cell.tanh();
            }
        }
        out[t * batch * hidden..(t + 1) * batch * hidden].copy_from_slice(&h);
    }
    // Per (t, b, j): 4 bias adds, 4 activations, 3 cell-update ops, 2 output ops.
    let flops = 2 * macs + 13 * (steps * batch * hidden) as u64;
    (out, macs, flops)
}

fn lstm_dims(x: &Tensor) -> Result<(usize, usize, usize), KernelError> {
    require_tags(x, &[Axis::T, Axis::B, Axis::F], "lstm")?;
    let a = x.shape.axes();
    Ok((a[0].1, a[1].1, a[2].1))
}

/// Standard LSTM with zero initial state: `[T, B, in] -> [T, B, h]`.
pub fn lstm_forward(
    ctx: &KernelCtx,
    x: &Tensor,
    weights: &LstmWeights<'_>,
    hidden: usize,
    reverse: bool,
    counters: &mut KernelCounters,
) -> Result<Tensor, KernelError> {
    let (steps, batch, in_f) = lstm_dims(x)?;
    weights.check(in_f, hidden)?;
    let (out, macs, flops) = lstm_pass(ctx.block, &x.data, steps, batch, in_f, weights, hidden, reverse);
    let out_shape = x.shape.with_extent(Axis::F, hidden).with_precision(Precision::Fp32);
    *counters += KernelCounters {
        macs,
        flops,
        weight_bytes_touched: ctx.weight_bytes(weights.elements_touched(steps)),
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
    };
    Ok(Tensor::new(out_shape, out))
}

/// Forward pass and time-reversed backward pass concatenated on `F`: `[T, B, 2h]`.
pub fn bilstm_forward(
    ctx: &KernelCtx,
    x: &Tensor,
    fwd: &LstmWeights<'_>,
    bwd: &LstmWeights<'_>,
    hidden: usize,
    counters: &mut KernelCounters,
) -> Result<Tensor, KernelError> {
    let (steps, batch, in_f) = lstm_dims(x)?;
    fwd.check(in_f, hidden)?;
    bwd.check(in_f, hidden)?;
    let (a, macs_a, flops_a) = lstm_pass(ctx.block, &x.data, steps, batch, in_f, fwd, hidden, false);
    let (b, macs_b, flops_b) = lstm_pass(ctx.block, &x.data, steps, batch, in_f, bwd, hidden, true);
    let mut out = vec![0.0f32; steps * batch * 2 * hidden];
    for ((dst, fa), fb) in out
        .chunks_mut(2 * hidden)
        .zip(a.chunks(hidden))
        .zip(b.chunks(hidden))
    {
        dst[..hidden].copy_from_slice(fa);
        dst[hidden..].copy_from_slice(fb);
    }
    let out_shape = x.shape.with_extent(Axis::F, 2 * hidden).with_precision(Precision::Fp32);
    *counters += KernelCounters {
        macs: macs_a + macs_b,
        flops: flops_a + flops_b,
        weight_bytes_touched: ctx.weight_bytes(fwd.elements_touched(steps) + bwd.elements_touched(steps)),
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
    };
    Ok(Tensor::new(out_shape, out))
}

/// Direct convolution, `[B, C, H, W]` with weights `[F, C, kh, kw]`.
/// Zero-padded taps are counted as MACs.
pub fn conv2d_forward(
    ctx: &KernelCtx,
    x: &Tensor,
    w: &[f32],
    bias: &[f32],
    params: &ConvParams,
    counters: &mut KernelCounters,
) -> Result<Tensor, KernelError> {
    require_tags(x, &[Axis::B, Axis::C, Axis::H, Axis::W], "conv2d")?;
    let a = x.shape.axes();
    let (batch, chans, height, width) = (a[0].1, a[1].1, a[2].1, a[3].1);
    let (kh, kw, filters, stride) = (params.kernel_h, params.kernel_w, params.filters, params.stride);
    if w.len() != filters * chans * kh * kw || bias.len() != filters {
        return Err(mismatch("conv2d weights do not fit the input"));
    }
    let (ho, pad_t) = params
        .out_extent(height, kh)
        .ok_or_else(|| mismatch("conv2d kernel taller than input"))?;
    let (wo, pad_l) = params
        .out_extent(width, kw)
        .ok_or_else(|| mismatch("conv2d kernel wider than input"))?;
    let mut out = vec![0.0f32; batch * filters * ho * wo];
    let taps = (chans * kh * kw) as u64;
    let macs: u64 = out
        .par_chunks_mut(ho * wo)
        .enumerate()
        .map(|(plane, dst)| {
            let (b, f) = (plane / filters, plane % filters);
            let img = &x.data[b * chans * height * width..(b + 1) * chans * height * width];
            let ker = &w[f * chans * kh * kw..(f + 1) * chans * kh * kw];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[f];
                    for c in 0..chans {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad_t as isize;
                            if iy < 0 || iy >= height as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad_l as isize;
                                if ix < 0 || ix >= width as isize {
                                    continue;
                                }
                                acc += img[(c * height + iy as usize) * width + ix as usize]
                                    * ker[(c * kh + ky) * kw + kx];
                            }
                        }
                    }
                    dst[oy * wo + ox] = acc;
                }
            }
            (ho * wo) as u64 * taps
        })
        .sum();
    let out_shape = x
        .shape
        .with_extent(Axis::C, filters)
        .with_extent(Axis::H, ho)
        .with_extent(Axis::W, wo)
        .with_precision(Precision::Fp32);
    *counters += KernelCounters {
        macs,
        flops: 2 * macs + (batch * filters * ho * wo) as u64,
        weight_bytes_touched: ctx.weight_bytes(w.len() + bias.len()),
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
    };
    Ok(Tensor::new(out_shape, out))
}

/// Softmax over the trailing `F` axis: max, subtract, exp, sum, divide (5 FLOPs per element).
pub fn softmax(x: &Tensor, counters: &mut KernelCounters) -> Result<Tensor, KernelError> {
    let (axis, classes) = x.shape.last();
    if axis != Axis::F {
        return Err(mismatch("softmax needs a trailing F axis"));
    }
    let mut out = x.data.clone();
    out.par_chunks_mut(classes).for_each(|row| {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
    let out_shape = x.shape.with_precision(Precision::Fp32);
    *counters += KernelCounters {
        flops: 5 * x.numel() as u64,
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
        ..Default::default()
    };
    Ok(Tensor::new(out_shape, out))
}

/// MFCC-style front end over raw frames `[T, B, N]`: Hann window, DFT
/// magnitude over `N/2 + 1` bins, natural log, DCT-II truncated to 26 coefficients.
pub fn inlay_mfcc_lite(x: &Tensor, counters: &mut KernelCounters) -> Result<Tensor, KernelError> {
    require_tags(x, &[Axis::T, Axis::B, Axis::F], "mfcc")?;
    let n = x.shape.last().1;
    let bins = n / 2 + 1;
    if bins < MFCC_COEFFS {
        return Err(mismatch(format!("mfcc frames of {n} samples are too short")));
    }
    let window: Vec<f32> = (0..n)
        .map(|i| {
            if n == 1 {
                1.0
            } else {
                0.5 - 0.5 * (2.0 * PI * i as f32 / (n - 1) as f32).cos()
            }
        })
        .collect();
    let mut cos_t = vec![0.0f32; bins * n];
    let mut sin_t = vec![0.0f32; bins * n];
    for k in 0..bins {
        for i in 0..n {
            // Reduce k*i mod n first to keep the angle accurate.
            let phase = 2.0 * std::f64::consts::PI * ((k * i) % n) as f64 / n as f64;
            cos_t[k * n + i] = phase.cos() as f32;
            sin_t[k * n + i] = phase.sin() as f32;
        }
    }
    let mut dct = vec![0.0f32; MFCC_COEFFS * bins];
    for j in 0..MFCC_COEFFS {
        for k in 0..bins {
            dct[j * bins + k] = (PI / bins as f32 * (k as f32 + 0.5) * j as f32).cos();
        }
    }
    let frames = x.numel() / n;
    let mut out = vec![0.0f32; frames * MFCC_COEFFS];
    out.par_chunks_mut(MFCC_COEFFS).enumerate().for_each(|(fi, dst)| {
        let frame: Vec<f32> = x.data[fi * n..(fi + 1) * n]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let mut logmag = vec![0.0f32; bins];
        for (k, lm) in logmag.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f32, 0.0f32);
            for (i, s) in frame.iter().enumerate() {
                re += s * cos_t[k * n + i];
                im -= s * sin_t[k * n + i];
            }
            *lm = ((re * re + im * im).sqrt() + 1e-6).ln();
        }
        for (j, d) in dst.iter_mut().enumerate() {
            let row = &dct[j * bins..(j + 1) * bins];
            *d = row.iter().zip(&logmag).map(|(c, l)| c * l).sum();
        }
    });
    let per_frame_macs = (2 * n * bins + MFCC_COEFFS * bins) as u64;
    let macs = frames as u64 * per_frame_macs;
    let out_shape = x.shape.with_extent(Axis::F, MFCC_COEFFS).with_precision(Precision::Fp32);
    *counters += KernelCounters {
        macs,
        // window + (2 mul, add, sqrt) magnitude + (add, log) per bin
        flops: 2 * macs + frames as u64 * (n + 6 * bins) as u64,
        weight_bytes_touched: 0,
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
    };
    Ok(Tensor::new(out_shape, out))
}

pub fn inlay_memcopy(x: &Tensor, counters: &mut KernelCounters) -> Tensor {
    let out = Tensor::new(x.shape.clone(), x.data.to_vec());
    counters.activation_bytes_touched += activation_bytes(&x.shape, &out.shape);
    out
}

/// Converts to the target storage precision and back to fp32 (2 FLOPs per element).
pub fn inlay_cast(x: &Tensor, precision: Precision, counters: &mut KernelCounters) -> Tensor {
    let mut data = x.data.clone();
    round_trip_storage(&mut data, precision);
    let out_shape = x.shape.with_precision(precision);
    *counters += KernelCounters {
        flops: 2 * x.numel() as u64,
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
        ..Default::default()
    };
    Tensor::new(out_shape, data)
}

/// Collapses consecutive repeats, then drops blanks.
pub fn ctc_collapse(best_path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in best_path {
        if prev != Some(label) && label != blank {
            out.push(label);
        }
        prev = Some(label);
    }
    out
}

/// Greedy CTC decode of `[T, B, F]` scores into `[T, B]` labels, padded with -1.
/// `blank` defaults to the last class. One comparison per score is counted.
pub fn inlay_ctc_greedy(x: &Tensor, blank: Option<usize>, counters: &mut KernelCounters) -> Result<Tensor, KernelError> {
    require_tags(x, &[Axis::T, Axis::B, Axis::F], "ctc_greedy")?;
    let a = x.shape.axes();
    let (steps, batch, classes) = (a[0].1, a[1].1, a[2].1);
    let blank = blank.unwrap_or(classes - 1);
    if blank >= classes {
        return Err(mismatch("ctc blank index out of range"));
    }
    let out_shape = TensorShape::new(vec![(Axis::T, steps), (Axis::B, batch)], Precision::Fp32)
        .map_err(|e| mismatch(e.0))?;
    let mut out = vec![-1.0f32; steps * batch];
    for b in 0..batch {
        let path: Vec<usize> = (0..steps)
            .map(|t| {
                let row = &x.data[(t * batch + b) * classes..(t * batch + b + 1) * classes];
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        for (t, label) in ctc_collapse(&path, blank).into_iter().enumerate() {
            out[t * batch + b] = label as f32;
        }
    }
    *counters += KernelCounters {
        flops: x.numel() as u64,
        activation_bytes_touched: activation_bytes(&x.shape, &out_shape),
        ..Default::default()
    };
    Ok(Tensor::new(out_shape, out))
}
