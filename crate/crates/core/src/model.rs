//! Materializes a [`TopologyGraph`] into a [`Model`] with seeded weights, and
//! generates random input batches.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{LayerNode, LayerParams, TopologyGraph};
use crate::rng::{derive_seed, fill_uniform, stream_key};
use crate::shape::{Axis, Precision, TensorShape};
use crate::tensor::{int8_scale, quantize_i8, Tensor};

/// Weights are drawn from `uniform[-INIT_RANGE, INIT_RANGE)`.
pub const INIT_RANGE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum WeightData {
    F32(Vec<f32>),
    F16(Vec<half::f16>),
    /// Symmetric linear quantization: `value = q * scale`.
    I8 { values: Vec<i8>, scale: f32 },
}

impl WeightData {
    pub fn precision(&self) -> Precision {
        match self {
            WeightData::F32(_) => Precision::Fp32,
            WeightData::F16(_) => Precision::Fp16,
            WeightData::I8 { .. } => Precision::Int8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            WeightData::F32(v) => v.len(),
            WeightData::F16(v) => v.len(),
            WeightData::I8 { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts fp32 values into the requested storage precision.
    pub fn encode(values: Vec<f32>, precision: Precision) -> WeightData {
        match precision {
            Precision::Fp32 => WeightData::F32(values),
            Precision::Fp16 => WeightData::F16(values.iter().map(|v| half::f16::from_f32(*v)).collect()),
            Precision::Int8 => {
                let scale = int8_scale(&values);
                WeightData::I8 {
                    values: values.iter().map(|v| quantize_i8(*v, scale)).collect(),
                    scale,
                }
            }
        }
    }

    /// fp32 compute view; borrows when storage already is fp32.
    pub fn to_f32(&self) -> Cow<'_, [f32]> {
        match self {
            WeightData::F32(v) => Cow::Borrowed(v),
            WeightData::F16(v) => Cow::Owned(v.iter().map(|h| h.to_f32()).collect()),
            WeightData::I8 { values, scale } => {
                Cow::Owned(values.iter().map(|q| f32::from(*q) * scale).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub shape: TensorShape,
    pub data: WeightData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub graph: TopologyGraph,
    /// Keyed by node id; parametric nodes only.
    pub weights: BTreeMap<String, Vec<WeightTensor>>,
    pub seed: u64,
    pub storage_precision: Precision,
}

impl Model {
    pub fn tensors(&self) -> impl Iterator<Item = &WeightTensor> {
        self.weights.values().flatten()
    }

    pub fn weight_elements(&self, node_id: &str) -> usize {
        self.weights
            .get(node_id)
            .map(|ws| ws.iter().map(|w| w.data.len()).sum())
            .unwrap_or(0)
    }
}

/// Names and shapes (fp32-tagged) of the weight set of a node, in storage order.
///
/// FC: `W[in, out]`, `b[out]`. LSTM: `Wx[in, 4h]`, `Wh[h, 4h]`, `b[4h]` with gate
/// columns ordered i, f, g, o; Bi-LSTM repeats that under `fwd.` and `bwd.`.
/// Conv2D: `W[filters, c, kh, kw]`, `b[filters]`.
pub fn weight_layout(node: &LayerNode) -> Vec<(String, TensorShape)> {
    use Axis::*;
    let id = &node.id;
    let feat_in = node.in_shape.last().1;
    let lstm = |prefix: String, hidden: usize| {
        vec![
            (format!("{prefix}.Wx"), TensorShape::fp32(&[(F, feat_in), (N, 4 * hidden)])),
            (format!("{prefix}.Wh"), TensorShape::fp32(&[(F, hidden), (N, 4 * hidden)])),
            (format!("{prefix}.b"), TensorShape::fp32(&[(N, 4 * hidden)])),
        ]
    };
    match node.params {
        LayerParams::Fc { nodes, .. } => vec![
            (format!("{id}.W"), TensorShape::fp32(&[(F, feat_in), (N, nodes)])),
            (format!("{id}.b"), TensorShape::fp32(&[(N, nodes)])),
        ],
        LayerParams::Lstm { hidden, .. } => lstm(id.clone(), hidden),
        LayerParams::BiLstm { hidden } => {
            let mut v = lstm(format!("{id}.fwd"), hidden);
            v.extend(lstm(format!("{id}.bwd"), hidden));
            v
        }
        LayerParams::Conv2d(p) => {
            let channels = node.in_shape.extent(C).unwrap_or(1);
            vec![
                (
                    format!("{id}.W"),
                    TensorShape::fp32(&[(N, p.filters), (C, channels), (H, p.kernel_h), (W, p.kernel_w)]),
                ),
                (format!("{id}.b"), TensorShape::fp32(&[(N, p.filters)])),
            ]
        }
        _ => Vec::new(),
    }
}

pub fn build_model(graph: &TopologyGraph, seed: u64, precision: Precision) -> Model {
    let jobs: Vec<(String, String, TensorShape)> = graph
        .nodes
        .iter()
        .flat_map(|node| {
            weight_layout(node)
                .into_iter()
                .map(|(name, shape)| (node.id.clone(), name, shape))
        })
        .collect();
    let built: Vec<(String, WeightTensor)> = jobs
        .into_par_iter()
        .map(|(node_id, name, shape)| {
            let mut values = vec![0.0f32; shape.numel()];
            fill_uniform(&mut values, stream_key(seed, &node_id, &name), -INIT_RANGE, INIT_RANGE);
            let tensor = WeightTensor {
                name,
                shape: shape.with_precision(precision),
                data: WeightData::encode(values, precision),
            };
            (node_id, tensor)
        })
        .collect();
    let mut weights: BTreeMap<String, Vec<WeightTensor>> = BTreeMap::new();
    for (node_id, tensor) in built {
        weights.entry(node_id).or_default().push(tensor);
    }
    Model {
        graph: graph.clone(),
        weights,
        seed,
        storage_precision: precision,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniform {
    pub lo: f32,
    pub hi: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub shape: TensorShape,
    pub distribution: Uniform,
    pub seed: u64,
}

/// Deterministic in `spec.seed`; values lie in `[lo, hi)`.
pub fn gen_input(spec: &InputSpec) -> Tensor {
    let Uniform { lo, hi } = spec.distribution;
    assert!(lo < hi, "input distribution needs lo < hi");
    let mut data = vec![0.0f32; spec.shape.numel()];
    fill_uniform(&mut data, stream_key(spec.seed, "input", ""), lo, hi);
    Tensor::new(spec.shape.clone(), data)
}

/// One tensor per graph input, in declaration order, each with its own sub-seed.
pub fn gen_inputs(graph: &TopologyGraph, seed: u64, distribution: Uniform) -> Vec<Tensor> {
    graph
        .inputs
        .iter()
        .map(|(id, shape)| {
            gen_input(&InputSpec {
                shape: shape.clone(),
                distribution,
                seed: derive_seed(seed, id),
            })
        })
        .collect()
}
