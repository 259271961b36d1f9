//! Execution engine: runs a [`Model`] repeatedly on a dedicated thread pool,
//! driving a [`Collector`] around the marker region.

mod counters;
pub mod kernels;

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use thiserror::Error;

pub use counters::KernelCounters;
pub use kernels::{KernelCtx, KernelError};

use crate::graph::{Direction, LayerNode, LayerParams, NodeKind};
use crate::metrics::{
    process_cpu_ns, AllocGuard, AllocTracker, Collector, CollectorError, CollectorSummary, RunMeta, Sample,
};
use crate::model::{weight_layout, Model};
use crate::shape::TensorShape;
use crate::tensor::{round_trip_storage, Tensor};
use kernels::LstmWeights;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub threads: usize,
    /// Collected repetitions.
    pub reps: usize,
    /// Uncollected repetitions run first.
    pub warmup: usize,
    /// Matmul tile edge in elements.
    pub block: usize,
    /// Keep every node output of the first collected repetition, not only the graph sinks.
    pub retain_outputs: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            threads: 1,
            reps: 5,
            warmup: 1,
            block: 64,
            retain_outputs: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.threads == 0 {
            return Err(EngineError::InvalidConfig("threads must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(EngineError::InvalidConfig("reps must be at least 1".into()));
        }
        if self.block == 0 {
            return Err(EngineError::InvalidConfig("block must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("kernel failure in `{node}`: {source}")]
    Kernel {
        node: String,
        #[source]
        source: KernelError,
    },
    #[error(transparent)]
    Collector(#[from] CollectorError),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("missing weights for `{0}`")]
    MissingWeights(String),
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
    #[error("`{node}` produced {found}, expected {expected}")]
    ShapeDrift {
        node: String,
        expected: String,
        found: String,
    },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub id: String,
    pub kind: NodeKind,
    pub in_region: bool,
    /// One sample per collected repetition; empty outside the region.
    pub samples: Vec<Sample>,
    pub counters: KernelCounters,
    pub out_shape: TensorShape,
    /// FNV-1a over the output's f32 bytes, first collected repetition.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub topology: String,
    pub threads: usize,
    pub reps: usize,
    pub warmup: usize,
    pub nodes: Vec<NodeTrace>,
    /// Resume-to-pause wall time of each collected repetition.
    pub region_wall_ns: Vec<u64>,
    pub region_cpu_ns: Vec<u64>,
    pub collector: CollectorSummary,
    /// Graph sinks, or every node when outputs are retained.
    pub outputs: BTreeMap<String, Tensor>,
    /// Tracked tensor bytes still live after the run (0 unless something leaked).
    pub live_bytes_after: u64,
    pub peak_live_bytes: u64,
}

impl ExecutionTrace {
    pub fn node(&self, id: &str) -> Option<&NodeTrace> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

pub struct Engine {
    config: EngineConfig,
    pool: rayon::ThreadPool,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine, EngineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .thread_name(|i| format!("ntp-worker-{i}"))
            .build()
            .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
        Ok(Engine { config, pool })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// `inputs` are positional, matching `model.graph.inputs`.
    pub fn run(
        &self,
        model: &Model,
        inputs: &[Tensor],
        collector: &mut dyn Collector,
    ) -> Result<ExecutionTrace, EngineError> {
        let prepared = prepare_inputs(model, inputs)?;
        let weights = decode_weights(model)?;
        self.pool
            .install(|| Run::new(&self.config, model, &weights).execute(&prepared, collector))
    }
}

pub fn run_model(
    model: &Model,
    inputs: &[Tensor],
    config: &EngineConfig,
    collector: &mut dyn Collector,
) -> Result<ExecutionTrace, EngineError> {
    Engine::new(config.clone())?.run(model, inputs, collector)
}

fn prepare_inputs(model: &Model, inputs: &[Tensor]) -> Result<Vec<(String, Tensor)>, EngineError> {
    let declared = &model.graph.inputs;
    if inputs.len() != declared.len() {
        return Err(EngineError::InputMismatch(format!(
            "graph declares {} inputs, got {}",
            declared.len(),
            inputs.len()
        )));
    }
    declared
        .iter()
        .zip(inputs)
        .map(|((id, shape), t)| {
            if t.shape.axes() != shape.axes() {
                return Err(EngineError::InputMismatch(format!(
                    "input `{id}` expects {}, got {}",
                    shape.dims_string(),
                    t.shape.dims_string()
                )));
            }
            let mut data = t.data.clone();
            round_trip_storage(&mut data, shape.precision);
            Ok((id.clone(), Tensor::new(shape.clone(), data)))
        })
        .collect()
}

type DecodedWeights<'m> = HashMap<&'m str, Vec<Cow<'m, [f32]>>>;

fn decode_weights(model: &Model) -> Result<DecodedWeights<'_>, EngineError> {
    let mut out = HashMap::new();
    for node in &model.graph.nodes {
        let layout = weight_layout(node);
        if layout.is_empty() {
            continue;
        }
        let stored = model
            .weights
            .get(&node.id)
            .ok_or_else(|| EngineError::MissingWeights(node.id.clone()))?;
        let mut views = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let t = stored
                .iter()
                .find(|t| &t.name == name)
                .ok_or_else(|| EngineError::MissingWeights(name.clone()))?;
            if t.data.len() != shape.numel() {
                return Err(EngineError::MissingWeights(format!(
                    "{name} holds {} values, expected {}",
                    t.data.len(),
                    shape.numel()
                )));
            }
            views.push(t.data.to_f32());
        }
        out.insert(node.id.as_str(), views);
    }
    Ok(out)
}

fn exec_node(
    ctx: &KernelCtx,
    node: &LayerNode,
    x: &Tensor,
    w: &[Cow<'_, [f32]>],
    counters: &mut KernelCounters,
) -> Result<Tensor, KernelError> {
    let lstm = |at: usize| LstmWeights {
        wx: &w[at],
        wh: &w[at + 1],
        bias: &w[at + 2],
    };
    match &node.params {
        LayerParams::Fc { nodes, activation } => kernels::fc_forward(ctx, x, &w[0], &w[1], *nodes, *activation, counters),
        LayerParams::Lstm { hidden, direction } => {
            kernels::lstm_forward(ctx, x, &lstm(0), *hidden, *direction == Direction::Reverse, counters)
        }
        LayerParams::BiLstm { hidden } => kernels::bilstm_forward(ctx, x, &lstm(0), &lstm(3), *hidden, counters),
        LayerParams::Conv2d(p) => kernels::conv2d_forward(ctx, x, &w[0], &w[1], p, counters),
        LayerParams::Softmax => kernels::softmax(x, counters),
        LayerParams::Mfcc => kernels::inlay_mfcc_lite(x, counters),
        LayerParams::Memcopy => Ok(kernels::inlay_memcopy(x, counters)),
        LayerParams::Cast { to } => Ok(kernels::inlay_cast(x, *to, counters)),
        LayerParams::CtcGreedy { blank } => kernels::inlay_ctc_greedy(x, *blank, counters),
    }
}

struct Run<'a> {
    config: &'a EngineConfig,
    model: &'a Model,
    weights: &'a DecodedWeights<'a>,
    ctx: KernelCtx,
    tracker: std::sync::Arc<AllocTracker>,
    /// Consumer count of every value name.
    fan_out: HashMap<&'a str, usize>,
}

struct Live {
    tensor: Tensor,
    remaining: usize,
    _guard: AllocGuard,
}

impl<'a> Run<'a> {
    fn new(config: &'a EngineConfig, model: &'a Model, weights: &'a DecodedWeights<'a>) -> Self {
        let mut fan_out: HashMap<&str, usize> = HashMap::new();
        for node in &model.graph.nodes {
            for input in &node.inputs {
                *fan_out.entry(input.as_str()).or_default() += 1;
            }
        }
        Run {
            config,
            model,
            weights,
            ctx: KernelCtx {
                block: config.block,
                weight_precision: model.storage_precision,
            },
            tracker: AllocTracker::new(),
            fan_out,
        }
    }

    fn execute(
        &self,
        inputs: &[(String, Tensor)],
        collector: &mut dyn Collector,
    ) -> Result<ExecutionTrace, EngineError> {
        let graph = &self.model.graph;
        let region = graph.region_range();
        let mut nodes: Vec<NodeTrace> = graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeTrace {
                id: n.id.clone(),
                kind: n.kind(),
                in_region: region.contains(&i),
                samples: Vec::new(),
                counters: KernelCounters::default(),
                out_shape: n.out_shape.clone(),
                checksum: 0,
            })
            .collect();
        let mut trace = ExecutionTrace {
            topology: graph.name.clone(),
            threads: self.config.threads,
            reps: self.config.reps,
            warmup: self.config.warmup,
            nodes: Vec::new(),
            region_wall_ns: Vec::new(),
            region_cpu_ns: Vec::new(),
            collector: CollectorSummary::default(),
            outputs: BTreeMap::new(),
            live_bytes_after: 0,
            peak_live_bytes: 0,
        };

        collector.start(&RunMeta {
            topology: graph.name.clone(),
            threads: self.config.threads,
            reps: self.config.reps,
            warmup: self.config.warmup,
            tracker: self.tracker.clone(),
        })?;

        let total = self.config.warmup + self.config.reps;
        for rep in 0..total {
            let collect = rep >= self.config.warmup;
            let first = rep == self.config.warmup;
            let mut values: HashMap<&str, Live> = HashMap::new();
            for (id, t) in inputs {
                values.insert(
                    id.as_str(),
                    Live {
                        _guard: self.tracker.track(t.shape.storage_bytes()),
                        tensor: t.clone(),
                        remaining: self.fan_out.get(id.as_str()).copied().unwrap_or(0),
                    },
                );
            }
            let (mut t0, mut c0) = (Instant::now(), 0);
            for (i, node) in graph.nodes.iter().enumerate() {
                let sampled = collect && region.contains(&i);
                if sampled && i == region.start {
                    collector.resume()?;
                    t0 = Instant::now();
                    c0 = process_cpu_ns();
                }
                if sampled {
                    collector.on_node_begin(&node.id)?;
                }
                let x = &values[node.inputs[0].as_str()].tensor;
                let mut counters = KernelCounters::default();
                let w = self.weights.get(node.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                let out = exec_node(&self.ctx, node, x, w, &mut counters).map_err(|source| EngineError::Kernel {
                    node: node.id.clone(),
                    source,
                })?;
                let guard = self.tracker.track(out.shape.storage_bytes());
                if sampled {
                    let sample = collector.on_node_end(&node.id)?;
                    nodes[i].samples.push(sample);
                }
                if sampled && i + 1 == region.end {
                    collector.pause()?;
                    trace.region_wall_ns.push(t0.elapsed().as_nanos() as u64);
                    trace.region_cpu_ns.push(process_cpu_ns().saturating_sub(c0));
                }

                if out.shape != node.out_shape {
                    return Err(EngineError::ShapeDrift {
                        node: node.id.clone(),
                        expected: node.out_shape.to_string(),
                        found: out.shape.to_string(),
                    });
                }
                if rep == 0 {
                    nodes[i].counters = counters;
                } else {
                    debug_assert_eq!(nodes[i].counters, counters, "counters of `{}` changed between reps", node.id);
                }
                if first {
                    nodes[i].checksum = out.checksum();
                }

                let source = node.inputs[0].as_str();
                let done = {
                    let live = values.get_mut(source).expect("input value is live");
                    live.remaining -= 1;
                    live.remaining == 0
                };
                if done {
                    values.remove(source);
                }
                let remaining = self.fan_out.get(node.id.as_str()).copied().unwrap_or(0);
                if first && (self.config.retain_outputs || remaining == 0) {
                    trace.outputs.insert(node.id.clone(), out.clone());
                }
                values.insert(
                    node.id.as_str(),
                    Live {
                        tensor: out,
                        remaining,
                        _guard: guard,
                    },
                );
            }
        }

        trace.collector = collector.stop()?;
        trace.nodes = nodes;
        trace.peak_live_bytes = self.tracker.peak();
        trace.live_bytes_after = self.tracker.live();
        Ok(trace)
    }
}
