//! Analytical cost model: exact operation counts, a weight-reuse DRAM traffic
//! estimate and a two-roof (compute, bandwidth) lower bound per node.

mod calibrate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibrate::{calibrate_machine, matmul_gflops, pointer_chase_llc, stream_triad_gbps, CalibrationOptions};

use crate::engine::KernelCounters;
use crate::graph::{LayerNode, LayerParams, NodeKind, TopologyGraph, MFCC_COEFFS};
use crate::shape::{Axis, Precision};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid machine spec: {0}")]
    InvalidMachine(String),
    #[error("cannot read machine spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed machine spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("workload finished in {elapsed_ns} ns, below the {min_ns} ns needed for a reliable timing")]
    ClockResolution { elapsed_ns: u64, min_ns: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub name: String,
    /// Compute roof, GFLOP/s.
    pub peak_gflops: f64,
    /// Bandwidth roof, GB/s (10^9 bytes).
    pub dram_gbps: f64,
    pub llc_bytes: u64,
    pub cores: usize,
}

impl MachineSpec {
    pub fn validate(&self) -> Result<(), CostError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.peak_gflops) || !positive(self.dram_gbps) || self.llc_bytes == 0 || self.cores == 0 {
            return Err(CostError::InvalidMachine(format!(
                "`{}`: peak_gflops, dram_gbps, llc_bytes and cores must all be positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<MachineSpec, CostError> {
        let spec: MachineSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<MachineSpec, CostError> {
        MachineSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("machine spec serializes")
    }

    /// Machine balance in FLOP per byte; layers below it are memory bound.
    pub fn balance(&self) -> f64 {
        self.peak_gflops / self.dram_gbps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundClass {
    ComputeBound,
    MemoryBound,
}

impl BoundClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundClass::ComputeBound => "compute_bound",
            BoundClass::MemoryBound => "memory_bound",
        }
    }
}

/// How a node's weights are read during one forward pass: `once_bytes` are
/// read a single time, plus `sets` recurrent sets of `set_bytes` each, every
/// one read `reuse_count` times.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightReuse {
    pub once_bytes: u64,
    pub sets: u64,
    pub set_bytes: u64,
    pub reuse_count: u64,
}

impl WeightReuse {
    /// Recurrent sets that fit in the last-level cache are loaded once;
    /// larger ones are re-streamed from DRAM on every reuse.
    pub fn dram_traffic(&self, llc_bytes: u64) -> u64 {
        let per_set = if self.set_bytes <= llc_bytes {
            self.set_bytes
        } else {
            self.set_bytes * self.reuse_count
        };
        self.once_bytes + self.sets * per_set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub flops: u64,
    pub params: u64,
    /// Weight storage in the model's precision.
    pub weight_bytes: u64,
    pub act_bytes: u64,
    pub dram_bytes_est: u64,
    pub intensity: f64,
    pub bound_class: BoundClass,
    pub t_compute_s: f64,
    pub t_memory_s: f64,
    pub t_lower_s: f64,
    pub reuse: WeightReuse,
}

/// Counts a node's work from its shapes alone. Must agree exactly with the
/// counters the engine kernels report.
pub fn analytic_counters(node: &LayerNode, precision: Precision) -> KernelCounters {
    let input = &node.in_shape;
    let numel = input.numel() as u64;
    let act = input.storage_bytes() + node.out_shape.storage_bytes();
    let in_f = input.last().1 as u64;
    let steps = input.extent(Axis::T).unwrap_or(1) as u64;
    let batch = input.extent(Axis::B).unwrap_or(1) as u64;
    let wbytes = param_count(node) * precision.bytes();
    let (macs, flops, weight_touched) = match node.params {
        LayerParams::Fc { nodes, activation } => {
            let rows = numel / in_f;
            let out = rows * nodes as u64;
            let macs = rows * in_f * nodes as u64;
            let act_ops = if matches!(activation, crate::graph::Activation::None) { 0 } else { out };
            (macs, 2 * macs + out + act_ops, wbytes)
        }
        LayerParams::Lstm { hidden, .. } => {
            let h = hidden as u64;
            let macs = steps * batch * 4 * h * (in_f + h);
            let wh = 4 * h * h * precision.bytes();
            (macs, 2 * macs + 13 * steps * batch * h, wbytes + wh * (steps - 1))
        }
        LayerParams::BiLstm { hidden } => {
            let h = hidden as u64;
            let macs = 2 * steps * batch * 4 * h * (in_f + h);
            let wh = 2 * 4 * h * h * precision.bytes();
            (macs, 2 * macs + 2 * 13 * steps * batch * h, wbytes + wh * (steps - 1))
        }
        LayerParams::Conv2d(p) => {
            let out = node.out_shape.numel() as u64;
            let chans = input.extent(Axis::C).unwrap_or(1) as u64;
            let macs = out * chans * p.kernel_h as u64 * p.kernel_w as u64;
            (macs, 2 * macs + out, wbytes)
        }
        LayerParams::Softmax => (0, 5 * numel, 0),
        LayerParams::Mfcc => {
            let n = in_f;
            let bins = n / 2 + 1;
            let frames = numel / n;
            let macs = frames * (2 * n * bins + MFCC_COEFFS as u64 * bins);
            (macs, 2 * macs + frames * (n + 6 * bins), 0)
        }
        LayerParams::Memcopy => (0, 0, 0),
        LayerParams::Cast { .. } => (0, 2 * numel, 0),
        LayerParams::CtcGreedy { .. } => (0, numel, 0),
    };
    KernelCounters {
        macs,
        flops,
        weight_bytes_touched: weight_touched,
        activation_bytes_touched: act,
    }
}

/// Number of weight elements the model builder allocates for the node.
pub fn param_count(node: &LayerNode) -> u64 {
    let in_f = node.in_shape.last().1 as u64;
    match node.params {
        LayerParams::Fc { nodes, .. } => (in_f + 1) * nodes as u64,
        LayerParams::Lstm { hidden, .. } => lstm_params(in_f, hidden as u64),
        LayerParams::BiLstm { hidden } => 2 * lstm_params(in_f, hidden as u64),
        LayerParams::Conv2d(p) => {
            let chans = node.in_shape.extent(Axis::C).unwrap_or(1) as u64;
            let f = p.filters as u64;
            f * chans * p.kernel_h as u64 * p.kernel_w as u64 + f
        }
        _ => 0,
    }
}

fn lstm_params(in_f: u64, h: u64) -> u64 {
    4 * h * (in_f + h) + 4 * h
}

fn weight_reuse(node: &LayerNode, weight_bytes: u64, precision: Precision) -> WeightReuse {
    let steps = node.in_shape.extent(Axis::T).unwrap_or(1) as u64;
    let recurrent = |dirs: u64, hidden: usize| {
        let wh = 4 * (hidden as u64).pow(2) * precision.bytes();
        WeightReuse {
            once_bytes: weight_bytes - dirs * wh,
            sets: dirs,
            set_bytes: wh,
            reuse_count: steps,
        }
    };
    match node.params {
        LayerParams::Fc { .. } | LayerParams::Conv2d(_) => WeightReuse {
            once_bytes: weight_bytes,
            ..Default::default()
        },
        LayerParams::Lstm { hidden, .. } => recurrent(1, hidden),
        LayerParams::BiLstm { hidden } => recurrent(2, hidden),
        _ => WeightReuse::default(),
    }
}

/// Roofline terms for a given amount of work and traffic.
fn roofline(flops: u64, dram: u64, machine: &MachineSpec) -> (f64, f64, f64, BoundClass) {
    let t_compute = flops as f64 / (machine.peak_gflops * 1e9);
    let t_memory = dram as f64 / (machine.dram_gbps * 1e9);
    let class = if t_memory >= t_compute {
        BoundClass::MemoryBound
    } else {
        BoundClass::ComputeBound
    };
    (t_compute, t_memory, t_compute.max(t_memory), class)
}

/// Bound class of a workload with the given counts; memory bound exactly
/// when its intensity is at or below the machine balance.
pub fn classify(flops: u64, dram_bytes: u64, machine: &MachineSpec) -> BoundClass {
    roofline(flops, dram_bytes, machine).3
}

pub fn layer_cost(node: &LayerNode, machine: &MachineSpec, precision: Precision) -> LayerCost {
    let counters = analytic_counters(node, precision);
    let params = param_count(node);
    let weight_bytes = params * precision.bytes();
    let reuse = weight_reuse(node, weight_bytes, precision);
    cost_from_parts(counters.flops, params, weight_bytes, counters.activation_bytes_touched, reuse, machine)
}

fn cost_from_parts(
    flops: u64,
    params: u64,
    weight_bytes: u64,
    act_bytes: u64,
    reuse: WeightReuse,
    machine: &MachineSpec,
) -> LayerCost {
    let dram = act_bytes + reuse.dram_traffic(machine.llc_bytes);
    let (t_compute_s, t_memory_s, t_lower_s, bound_class) = roofline(flops, dram, machine);
    LayerCost {
        flops,
        params,
        weight_bytes,
        act_bytes,
        dram_bytes_est: dram,
        intensity: if dram == 0 { 0.0 } else { flops as f64 / dram as f64 },
        bound_class,
        t_compute_s,
        t_memory_s,
        t_lower_s,
        reuse,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub id: String,
    pub kind: NodeKind,
    pub cost: LayerCost,
    /// Share of the topology's summed `t_lower_s`.
    pub percent_t_lower: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub flops: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub act_bytes: u64,
    pub dram_bytes_est: u64,
    pub t_lower_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyCost {
    pub machine: MachineSpec,
    pub precision: Precision,
    pub nodes: Vec<NodeCost>,
    pub totals: CostTotals,
}

impl TopologyCost {
    pub fn node(&self, id: &str) -> Option<&NodeCost> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

fn with_percentages(machine: &MachineSpec, precision: Precision, costs: Vec<(String, NodeKind, LayerCost)>) -> TopologyCost {
    let mut totals = CostTotals::default();
    for (_, _, c) in &costs {
        totals.flops += c.flops;
        totals.params += c.params;
        totals.weight_bytes += c.weight_bytes;
        totals.act_bytes += c.act_bytes;
        totals.dram_bytes_est += c.dram_bytes_est;
        totals.t_lower_s += c.t_lower_s;
    }
    let nodes = costs
        .into_iter()
        .map(|(id, kind, cost)| NodeCost {
            percent_t_lower: if totals.t_lower_s > 0.0 {
                100.0 * cost.t_lower_s / totals.t_lower_s
            } else {
                0.0
            },
            id,
            kind,
            cost,
        })
        .collect();
    TopologyCost {
        machine: machine.clone(),
        precision,
        nodes,
        totals,
    }
}

pub fn topology_cost(graph: &TopologyGraph, machine: &MachineSpec, precision: Precision) -> TopologyCost {
    let costs = graph
        .nodes
        .iter()
        .map(|n| (n.id.clone(), n.kind(), layer_cost(n, machine, precision)))
        .collect();
    with_percentages(machine, precision, costs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedNode {
    pub id: String,
    pub t_lower_a_s: f64,
    pub t_lower_b_s: f64,
    pub dram_bytes_a: u64,
    pub dram_bytes_b: u64,
    pub bound_class_b: BoundClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub machine_a: String,
    pub machine_b: String,
    pub nodes: Vec<ProjectedNode>,
    pub total_a_s: f64,
    pub total_b_s: f64,
    /// `total_a_s / total_b_s`; above 1 means machine b is faster.
    pub speedup: f64,
}

/// Re-evaluates every node's bound under another machine's roofs and cache size.
pub fn project_runtime(costs: &TopologyCost, machine_b: &MachineSpec) -> Projection {
    let nodes: Vec<ProjectedNode> = costs
        .nodes
        .iter()
        .map(|n| {
            let c = &n.cost;
            let b = cost_from_parts(c.flops, c.params, c.weight_bytes, c.act_bytes, c.reuse, machine_b);
            ProjectedNode {
                id: n.id.clone(),
                t_lower_a_s: c.t_lower_s,
                t_lower_b_s: b.t_lower_s,
                dram_bytes_a: c.dram_bytes_est,
                dram_bytes_b: b.dram_bytes_est,
                bound_class_b: b.bound_class,
            }
        })
        .collect();
    let total_a_s: f64 = nodes.iter().map(|n| n.t_lower_a_s).sum();
    let total_b_s: f64 = nodes.iter().map(|n| n.t_lower_b_s).sum();
    Projection {
        machine_a: costs.machine.name.clone(),
        machine_b: machine_b.name.clone(),
        speedup: if total_b_s > 0.0 { total_a_s / total_b_s } else { 1.0 },
        nodes,
        total_a_s,
        total_b_s,
    }
}
