//! Scalar reference implementations and fixture helpers shared by the
//! integration tests and the acceptance harness.
//!
//! Every oracle here is written against plain index arithmetic in f64 and
//! shares no code with the engine kernels.

#![allow(dead_code)]

use std::path::PathBuf;

use ntp_core::graph::{Activation, LayerParams, Padding};
use ntp_core::{parse_topology, validate, LayerNode, TopologyGraph};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn topology_path(name: &str) -> PathBuf {
    workspace_root().join("fixtures/topologies").join(name)
}

pub fn machine_path(name: &str) -> PathBuf {
    workspace_root().join("fixtures/machines").join(name)
}

pub fn load_graph(name: &str) -> TopologyGraph {
    let text = std::fs::read_to_string(topology_path(name)).expect("fixture readable");
    validate(&parse_topology(&text).expect("fixture parses")).expect("fixture validates")
}

/// The flagship fixture and its three Bi-LSTM width variants.
pub const DEEPSPEECH_FIXTURES: [&str; 4] = [
    "deepspeech.xml",
    "deepspeech-h512.xml",
    "deepspeech-h1024.xml",
    "deepspeech-h2048.xml",
];

pub const ALL_FIXTURES: [&str; 6] = [
    "deepspeech.xml",
    "deepspeech-h512.xml",
    "deepspeech-h1024.xml",
    "deepspeech-h2048.xml",
    "speech-frontend.xml",
    "tiny-cnn.xml",
];

/// `max|a - e| / max|e|` over the whole tensor.
pub fn rel_err(actual: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(actual.len(), expected.len(), "length mismatch");
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = actual
        .iter()
        .zip(expected)
        .fold(0.0f64, |m, (a, e)| m.max((f64::from(*a) - e).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `y[r, o] = b[o] + sum_i x[r, i] * w[i, o]`, optionally clamped to `[0, clip]`.
pub fn fc(x: &[f32], w: &[f32], b: &[f32], rows: usize, inp: usize, out: usize, clip: Option<f32>) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        for o in 0..out {
            let mut acc = f64::from(b[o]);
            for i in 0..inp {
                acc += f64::from(x[r * inp + i]) * f64::from(w[i * out + o]);
            }
            if let Some(c) = clip {
                acc = acc.max(0.0).min(f64::from(c));
            }
            y[r * out + o] = acc;
        }
    }
    y
}

/// One LSTM direction, gates ordered i, f, g, o, zero initial state.
#[allow(clippy::too_many_arguments)]
pub fn lstm(
    x: &[f32],
    wx: &[f32],
    wh: &[f32],
    bias: &[f32],
    steps: usize,
    batch: usize,
    inp: usize,
    hidden: usize,
    reverse: bool,
) -> Vec<f64> {
    let g4 = 4 * hidden;
    let mut out = vec![0.0; steps * batch * hidden];
    for b in 0..batch {
        let mut h = vec![0.0f64; hidden];
        let mut c = vec![0.0f64; hidden];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let mut pre = vec![0.0f64; g4];
            for (g, slot) in pre.iter_mut().enumerate() {
                let mut acc = f64::from(bias[g]);
                for i in 0..inp {
                    acc += f64::from(x[(t * batch + b) * inp + i]) * f64::from(wx[i * g4 + g]);
                }
                for (k, hk) in h.iter().enumerate() {
                    acc += hk * f64::from(wh[k * g4 + g]);
                }
                *slot = acc;
            }
            for j in 0..hidden {
                let ig = sigmoid(pre[j]);
                let fg = sigmoid(pre[hidden + j]);
                let gg = pre[2 * hidden + j].tanh();
                let og = sigmoid(pre[3 * hidden + j]);
                c[j] = fg * c[j] + ig * gg;
                h[j] = og * c[j].tanh();
            }
            out[(t * batch + b) * hidden..(t * batch + b + 1) * hidden].copy_from_slice(&h);
        }
    }
    out
}

/// Forward and reverse passes concatenated per `(t, b)` row.
pub fn bilstm(fwd: &[f64], bwd: &[f64], rows: usize, hidden: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * 2 * hidden);
    for r in 0..rows {
        out.extend_from_slice(&fwd[r * hidden..(r + 1) * hidden]);
        out.extend_from_slice(&bwd[r * hidden..(r + 1) * hidden]);
    }
    out
}

/// Direct NCHW convolution. "same" pads so that `out = ceil(in / stride)`,
/// putting the smaller half of the padding first.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f32],
    w: &[f32],
    bias: &[f32],
    dims: (usize, usize, usize, usize),
    filters: usize,
    kernel: (usize, usize),
    stride: usize,
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let (n, c, h, wd) = dims;
    let (kh, kw) = kernel;
    let extent = |len: usize, k: usize| -> (usize, usize) {
        if same {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            (out, total / 2)
        } else {
            ((len - k) / stride + 1, 0)
        }
    };
    let (ho, pt) = extent(h, kh);
    let (wo, pl) = extent(wd, kw);
    let mut y = vec![0.0; n * filters * ho * wo];
    for b in 0..n {
        for f in 0..filters {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = f64::from(bias[f]);
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as i64 - pt as i64;
                                let ix = (ox * stride + kx) as i64 - pl as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((f * c + ch) * kh + ky) * kw + kx];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    y[((b * filters + f) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, ho, wo)
}

/// Row-wise softmax over the last axis.
pub fn softmax(x: &[f32], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(classes) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(f64::from(*v)));
        let exps: Vec<f64> = row.iter().map(|v| (f64::from(*v) - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

/// Per-node FLOP count written out from the counting conventions:
/// a MAC is two FLOPs, each bias add, activation or element-wise op is one.
pub fn expected_flops(node: &LayerNode) -> u64 {
    let numel_in = node.in_shape.numel() as u64;
    let numel_out = node.out_shape.numel() as u64;
    let feat_in = node.in_shape.last().1 as u64;
    match &node.params {
        LayerParams::Fc { nodes, activation } => {
            let rows = numel_in / feat_in;
            let out = rows * *nodes as u64;
            let macs = rows * feat_in * *nodes as u64;
            let act = if matches!(activation, Activation::ReluClip { .. }) { out } else { 0 };
            2 * macs + out + act
        }
        LayerParams::Lstm { hidden, .. } | LayerParams::BiLstm { hidden } => {
            let dirs = if matches!(node.params, LayerParams::BiLstm { .. }) { 2 } else { 1 };
            let h = *hidden as u64;
            let tb = numel_in / feat_in;
            dirs * (2 * tb * 4 * h * (feat_in + h) + 13 * tb * h)
        }
        LayerParams::Conv2d(p) => {
            let c = node.in_shape.axes()[1].1 as u64;
            let taps = c * (p.kernel_h * p.kernel_w) as u64;
            2 * numel_out * taps + numel_out
        }
        LayerParams::Softmax => 5 * numel_in,
        LayerParams::Mfcc => {
            let n = feat_in;
            let k = n / 2 + 1;
            let frames = numel_in / n;
            2 * frames * (2 * n * k + 26 * k) + frames * (n + 6 * k)
        }
        LayerParams::Memcopy => 0,
        LayerParams::Cast { .. } => 2 * numel_in,
        LayerParams::CtcGreedy { .. } => numel_in,
    }
}

pub fn padding_is_same(p: Padding) -> bool {
    matches!(p, Padding::Same)
}
