//! Shared setup for the criterion benchmarks: fixture loading and seeded data.

use std::path::PathBuf;

use ntp_core::rng::{fill_uniform, stream_key};
use ntp_core::{parse_topology, validate, Tensor, TensorShape, TopologyGraph};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Parses and validates a bundled topology by file name.
pub fn load(name: &str) -> TopologyGraph {
    let path = fixtures_dir().join("topologies").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    validate(&parse_topology(&text).expect("fixture parses")).expect("fixture validates")
}

/// `n` uniform values in `[-1, 1)`, keyed by `label`.
pub fn values(label: &str, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; n];
    fill_uniform(&mut out, stream_key(0, "bench", label), -1.0, 1.0);
    out
}

pub fn tensor(label: &str, shape: TensorShape) -> Tensor {
    let data = values(label, shape.numel());
    Tensor::new(shape, data)
}
