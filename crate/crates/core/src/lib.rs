//! Neural-network topology profiler.
//!
//! A topology is described in a small XML dialect ([`dsl`]), validated into a
//! typed graph ([`graph`]), materialized with seeded weights ([`model`]) and
//! executed by a reference CPU engine ([`engine`]) under a pluggable metric
//! collector ([`metrics`]). The analytical [`cost`] model and the [`report`]
//! module turn a run into an `ntp-report/1` document.
//!
//! ```
//! use ntp_core::{build_model, parse_topology, validate, Precision};
//!
//! let doc = parse_topology(
//!     r#"<topology name="tiny">
//!          <input id="x" shape="T:4,B:1,F:8"/>
//!          <layer id="fc" type="fc" nodes="16" input="x"/>
//!        </topology>"#,
//! )
//! .unwrap();
//! let graph = validate(&doc).unwrap();
//! let model = build_model(&graph, 7, Precision::Fp32);
//! assert_eq!(model.weight_elements("fc"), 8 * 16 + 16);
//! ```

pub mod container;
pub mod cost;
pub mod dsl;
pub mod engine;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod shape;
pub mod tensor;

pub use container::{load_weights, save_tensors, save_weights, ContainerError};
pub use cost::{layer_cost, project_runtime, topology_cost, BoundClass, CostError, LayerCost, MachineSpec, TopologyCost};
pub use dsl::{parse_topology, serialize_topology, DslError, RawTopologyDoc};
pub use engine::{run_model, Engine, EngineConfig, EngineError, ExecutionTrace, KernelCounters, NodeTrace};
pub use graph::{validate, GraphError, LayerNode, LayerParams, NodeKind, TopologyGraph};
pub use metrics::{aggregate, AggregateStats, Collector, CollectorError, Sample, StandardCollector};
pub use model::{build_model, gen_input, gen_inputs, InputSpec, Model, Uniform};
pub use report::{compare, summarize, CompareAxis, ComparisonReport, ProfileReport, ReportError, ReportMeta};
pub use shape::{Axis, Precision, TensorShape};
pub use tensor::Tensor;

/// Version string recorded in report metadata.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
