//! Metric collection: samples, the collector lifecycle, built-in collectors
//! and aggregation over repetitions.

mod alloc;
mod collector;
mod hwc;
mod lifecycle;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alloc::{AllocGuard, AllocTracker};
pub use collector::{
    collector_from_selection, process_cpu_ns, Collector, CollectorError, CollectorSummary, RunMeta,
    StandardCollector,
};
pub use hwc::HwCounters;
pub use lifecycle::{lifecycle_guard, Call, ContractViolation, LifecycleGuard};

/// One measurement of one node in one repetition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub wall_ns: u64,
    pub cpu_ns: u64,
    pub alloc_bytes: u64,
    pub peak_live_bytes: u64,
    /// Collector-defined counters, passed through untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, u64>,
}

impl Sample {
    pub(crate) fn accumulate(&mut self, other: &Sample) {
        self.wall_ns += other.wall_ns;
        self.cpu_ns += other.cpu_ns;
        self.alloc_bytes += other.alloc_bytes;
        self.peak_live_bytes = self.peak_live_bytes.max(other.peak_live_bytes);
        for (k, v) in &other.extensions {
            *self.extensions.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty sample list")]
    EmptySamples,
    #[error("utilization undefined: {0}")]
    DivisionDomain(&'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    /// Lower-middle element for even counts.
    pub median: u64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl FieldStats {
    fn of(values: impl Iterator<Item = u64>) -> FieldStats {
        let mut v: Vec<u64> = values.collect();
        v.sort_unstable();
        let n = v.len() as f64;
        let mean = v.iter().map(|x| *x as f64).sum::<f64>() / n;
        let var = v.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
        FieldStats {
            min: v[0],
            max: v[v.len() - 1],
            mean,
            median: v[(v.len() - 1) / 2],
            stddev: var.sqrt(),
        }
    }

    /// Field-wise sum, used for group records.
    pub fn sum(&self, other: &FieldStats) -> FieldStats {
        FieldStats {
            min: self.min + other.min,
            max: self.max + other.max,
            mean: self.mean + other.mean,
            median: self.median + other.median,
            stddev: (self.stddev.powi(2) + other.stddev.powi(2)).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub reps: usize,
    pub wall_ns: FieldStats,
    pub cpu_ns: FieldStats,
    pub alloc_bytes: FieldStats,
    pub peak_live_bytes: FieldStats,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, FieldStats>,
}

pub fn aggregate(samples: &[Sample]) -> Result<AggregateStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    // Only counters reported by every sample are aggregated.
    let mut keys: Vec<&String> = samples[0].extensions.keys().collect();
    keys.retain(|k| samples.iter().all(|s| s.extensions.contains_key(*k)));
    Ok(AggregateStats {
        reps: samples.len(),
        wall_ns: FieldStats::of(samples.iter().map(|s| s.wall_ns)),
        cpu_ns: FieldStats::of(samples.iter().map(|s| s.cpu_ns)),
        alloc_bytes: FieldStats::of(samples.iter().map(|s| s.alloc_bytes)),
        peak_live_bytes: FieldStats::of(samples.iter().map(|s| s.peak_live_bytes)),
        extensions: keys
            .into_iter()
            .map(|k| (k.clone(), FieldStats::of(samples.iter().map(|s| s.extensions[k]))))
            .collect(),
    })
}

/// Mean CPU time over mean wall time times thread count, clamped to `[0, 1]`.
pub fn utilization(stats: &AggregateStats, threads: usize) -> Result<f64, MetricsError> {
    if threads == 0 {
        return Err(MetricsError::DivisionDomain("thread count is zero"));
    }
    if stats.wall_ns.mean <= 0.0 {
        return Err(MetricsError::DivisionDomain("mean wall time is zero"));
    }
    Ok((stats.cpu_ns.mean / (stats.wall_ns.mean * threads as f64)).clamp(0.0, 1.0))
}
