//! Profile reports (`ntp-report/1`): merging an execution trace with the cost
//! model, JSON/CSV export and cross-report comparison.

mod compare;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{compare, comparison_csv, CompareAxis, ComparisonReport, ComparisonRow, Unmatched, VariantInfo};

use crate::cost::{analytic_counters, BoundClass, LayerCost, TopologyCost};
use crate::engine::{ExecutionTrace, KernelCounters};
use crate::graph::{Group, TopologyGraph};
use crate::metrics::{aggregate, AggregateStats, FieldStats};

pub const SCHEMA_ID: &str = "ntp-report/1";

/// JSON schema of [`ProfileReport`], shared with external report producers.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/ntp-report-1.schema.json");

pub const CSV_HEADER: &str =
    "layer,kind,flops,params,weight_bytes,dram_bytes_est,intensity,bound_class,wall_ms_median,cpu_ms_median,alloc_bytes,percent_wall";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("unsupported report schema `{found}` (expected `{expected}`)")]
    SchemaVersion { found: String, expected: String },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("axis mismatch: {0}")]
    AxisMismatch(String),
    #[error("no rows could be aligned: {0}")]
    UnalignableRows(String),
    #[error("need at least two reports to compare, got {0}")]
    TooFewReports(usize),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub topology: String,
    pub seed: u64,
    pub precision: String,
    pub threads: usize,
    pub reps: usize,
    pub warmup: usize,
    pub collector: String,
    pub machine: String,
    pub tool_version: String,
    pub timestamp: String,
    /// Producer of the measurements, e.g. the reference engine or a framework.
    pub engine: String,
    /// True when cost fields are zeroed because only timings were taken.
    pub measured_only: bool,
}

/// Cost-model columns of a layer or group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub flops: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub act_bytes: u64,
    pub dram_bytes_est: u64,
    pub intensity: f64,
    /// Absent for measured-only reports.
    pub bound_class: Option<BoundClass>,
    pub t_compute_s: f64,
    pub t_memory_s: f64,
    /// Roofline lower bound, not a runtime prediction.
    pub t_lower_bound_s: f64,
    pub percent_t_lower: f64,
}

impl CostRecord {
    fn from_cost(c: &LayerCost, percent: f64) -> CostRecord {
        CostRecord {
            flops: c.flops,
            params: c.params,
            weight_bytes: c.weight_bytes,
            act_bytes: c.act_bytes,
            dram_bytes_est: c.dram_bytes_est,
            intensity: c.intensity,
            bound_class: Some(c.bound_class),
            t_compute_s: c.t_compute_s,
            t_memory_s: c.t_memory_s,
            t_lower_bound_s: c.t_lower_s,
            percent_t_lower: percent,
        }
    }

    fn add(&mut self, o: &CostRecord) {
        self.flops += o.flops;
        self.params += o.params;
        self.weight_bytes += o.weight_bytes;
        self.act_bytes += o.act_bytes;
        self.dram_bytes_est += o.dram_bytes_est;
        self.t_compute_s += o.t_compute_s;
        self.t_memory_s += o.t_memory_s;
        self.t_lower_bound_s += o.t_lower_bound_s;
        self.percent_t_lower += o.percent_t_lower;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub id: String,
    pub kind: String,
    /// Output shape, e.g. `T:100,B:1,F:2048`.
    pub shape: String,
    pub in_region: bool,
    /// FNV-1a of the output tensor as 16 hex digits; absent without execution.
    pub checksum: Option<String>,
    pub counters: KernelCounters,
    pub cost: CostRecord,
    /// Absent for nodes outside the region or without execution.
    pub stats: Option<AggregateStats>,
    pub percent_wall: f64,
}

impl LayerRecord {
    pub fn wall_ns_median(&self) -> Option<u64> {
        self.stats.as_ref().map(|s| s.wall_ns.median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub name: String,
    pub members: Vec<String>,
    pub counters: KernelCounters,
    pub cost: CostRecord,
    /// Field-wise sum of the members' statistics.
    pub stats: Option<AggregateStats>,
    pub percent_wall: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub flops: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub dram_bytes_est: u64,
    pub t_lower_bound_s: f64,
    /// Sum of the region layers' median wall times.
    pub layer_wall_ns_median_sum: u64,
    /// Median resume-to-pause time of the region.
    pub region_wall_ns_median: Option<u64>,
    pub region_cpu_ns_median: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub schema: String,
    pub meta: ReportMeta,
    pub layers: Vec<LayerRecord>,
    pub groups: Vec<GroupRecord>,
    pub totals: Totals,
}

fn median(values: &[u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

fn sum_stats(a: &AggregateStats, b: &AggregateStats) -> AggregateStats {
    let sum = |x: &FieldStats, y: &FieldStats| x.sum(y);
    AggregateStats {
        reps: a.reps.min(b.reps),
        wall_ns: sum(&a.wall_ns, &b.wall_ns),
        cpu_ns: sum(&a.cpu_ns, &b.cpu_ns),
        alloc_bytes: sum(&a.alloc_bytes, &b.alloc_bytes),
        peak_live_bytes: FieldStats {
            min: a.peak_live_bytes.min.max(b.peak_live_bytes.min),
            max: a.peak_live_bytes.max.max(b.peak_live_bytes.max),
            mean: a.peak_live_bytes.mean.max(b.peak_live_bytes.mean),
            median: a.peak_live_bytes.median.max(b.peak_live_bytes.median),
            stddev: 0.0,
        },
        extensions: a
            .extensions
            .iter()
            .filter_map(|(k, v)| b.extensions.get(k).map(|w| (k.clone(), v.sum(w))))
            .collect(),
    }
}

impl ProfileReport {
    pub fn layer(&self, id: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn group(&self, name: &str) -> Option<&GroupRecord> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn from_json(text: &str) -> Result<ProfileReport, ReportError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
        if found != SCHEMA_ID {
            return Err(ReportError::SchemaVersion {
                found: found.to_owned(),
                expected: SCHEMA_ID.to_owned(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn export_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    /// One row per layer, then one per group, under [`CSV_HEADER`].
    pub fn export_csv(&self) -> Result<Vec<u8>, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(','))?;
        let ms = |ns: u64| format!("{:.6}", ns as f64 / 1e6);
        let row = |name: &str, kind: &str, cost: &CostRecord, stats: &Option<AggregateStats>, percent: f64| {
            vec![
                name.to_owned(),
                kind.to_owned(),
                cost.flops.to_string(),
                cost.params.to_string(),
                cost.weight_bytes.to_string(),
                cost.dram_bytes_est.to_string(),
                format!("{:.6}", cost.intensity),
                cost.bound_class.map(|b| b.as_str().to_owned()).unwrap_or_default(),
                stats.as_ref().map(|s| ms(s.wall_ns.median)).unwrap_or_default(),
                stats.as_ref().map(|s| ms(s.cpu_ns.median)).unwrap_or_default(),
                stats.as_ref().map(|s| s.alloc_bytes.median.to_string()).unwrap_or_default(),
                format!("{percent:.4}"),
            ]
        };
        for l in &self.layers {
            w.write_record(row(&l.id, &l.kind, &l.cost, &l.stats, l.percent_wall))?;
        }
        for g in &self.groups {
            w.write_record(row(&g.name, "group", &g.cost, &g.stats, g.percent_wall))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(w.into_inner().expect("flushed writer"))
    }

    fn build_groups(&mut self, groups: &[Group]) {
        self.groups = groups
            .iter()
            .map(|g| {
                let members: Vec<&LayerRecord> = g.members.iter().filter_map(|m| self.layer(m)).collect();
                let mut counters = KernelCounters::default();
                let mut cost = CostRecord::default();
                let mut stats: Option<AggregateStats> = None;
                let mut percent_wall = 0.0;
                for m in &members {
                    counters += m.counters;
                    cost.add(&m.cost);
                    percent_wall += m.percent_wall;
                    if let Some(s) = &m.stats {
                        stats = Some(match stats {
                            Some(acc) => sum_stats(&acc, s),
                            None => s.clone(),
                        });
                    }
                }
                if cost.dram_bytes_est > 0 {
                    cost.intensity = cost.flops as f64 / cost.dram_bytes_est as f64;
                }
                if !self.meta.measured_only {
                    cost.bound_class = Some(if cost.t_memory_s >= cost.t_compute_s {
                        BoundClass::MemoryBound
                    } else {
                        BoundClass::ComputeBound
                    });
                }
                GroupRecord {
                    name: g.name.clone(),
                    members: g.members.clone(),
                    counters,
                    cost,
                    stats,
                    percent_wall,
                }
            })
            .collect();
    }

    fn fill_totals(&mut self) {
        let mut t = Totals {
            region_wall_ns_median: self.totals.region_wall_ns_median,
            region_cpu_ns_median: self.totals.region_cpu_ns_median,
            ..Default::default()
        };
        for l in &self.layers {
            t.flops += l.cost.flops;
            t.params += l.cost.params;
            t.weight_bytes += l.cost.weight_bytes;
            t.dram_bytes_est += l.cost.dram_bytes_est;
            t.t_lower_bound_s += l.cost.t_lower_bound_s;
            t.layer_wall_ns_median_sum += l.wall_ns_median().unwrap_or(0);
        }
        self.totals = t;
    }
}

/// Sets each measured layer's share of the summed median wall time.
pub fn assign_wall_percentages(layers: &mut [LayerRecord]) {
    let total: u64 = layers.iter().filter_map(|l| l.wall_ns_median()).sum();
    for l in layers.iter_mut() {
        l.percent_wall = match l.wall_ns_median() {
            Some(m) if total > 0 => 100.0 * m as f64 / total as f64,
            _ => 0.0,
        };
    }
}

/// Combines one run's trace with the cost model. `timestamp` lives in `meta`
/// so the output is a pure function of the arguments.
pub fn summarize(
    trace: &ExecutionTrace,
    costs: &TopologyCost,
    groups: &[Group],
    meta: ReportMeta,
) -> Result<ProfileReport, ReportError> {
    let trace_ids: Vec<&str> = trace.nodes.iter().map(|n| n.id.as_str()).collect();
    let cost_ids: Vec<&str> = costs.nodes.iter().map(|n| n.id.as_str()).collect();
    if trace_ids != cost_ids {
        return Err(ReportError::InconsistentInputs(format!(
            "trace nodes {trace_ids:?} differ from cost nodes {cost_ids:?}"
        )));
    }
    for g in groups {
        if let Some(m) = g.members.iter().find(|m| !trace_ids.contains(&m.as_str())) {
            return Err(ReportError::InconsistentInputs(format!("group `{}` names unknown node `{m}`", g.name)));
        }
    }
    let mut layers = Vec::with_capacity(trace.nodes.len());
    for (n, c) in trace.nodes.iter().zip(&costs.nodes) {
        let stats = if n.samples.is_empty() {
            None
        } else {
            Some(aggregate(&n.samples).map_err(|e| ReportError::InconsistentInputs(e.to_string()))?)
        };
        layers.push(LayerRecord {
            id: n.id.clone(),
            kind: n.kind.as_str().to_owned(),
            shape: n.out_shape.to_string(),
            in_region: n.in_region,
            checksum: Some(format!("{:016x}", n.checksum)),
            counters: n.counters,
            cost: CostRecord::from_cost(&c.cost, c.percent_t_lower),
            stats,
            percent_wall: 0.0,
        });
    }
    assign_wall_percentages(&mut layers);
    let mut report = ProfileReport {
        schema: SCHEMA_ID.to_owned(),
        meta,
        layers,
        groups: Vec::new(),
        totals: Totals {
            region_wall_ns_median: median(&trace.region_wall_ns),
            region_cpu_ns_median: median(&trace.region_cpu_ns),
            ..Default::default()
        },
    };
    report.build_groups(groups);
    report.fill_totals();
    Ok(report)
}

/// A cost-model-only report: no checksums, statistics or wall percentages.
pub fn describe(graph: &TopologyGraph, costs: &TopologyCost, meta: ReportMeta) -> ProfileReport {
    let region = graph.region_range();
    let layers = graph
        .nodes
        .iter()
        .zip(&costs.nodes)
        .enumerate()
        .map(|(i, (n, c))| LayerRecord {
            id: n.id.clone(),
            kind: n.kind().as_str().to_owned(),
            shape: n.out_shape.to_string(),
            in_region: region.contains(&i),
            checksum: None,
            counters: analytic_counters(n, costs.precision),
            cost: CostRecord::from_cost(&c.cost, c.percent_t_lower),
            stats: None,
            percent_wall: 0.0,
        })
        .collect();
    let mut report = ProfileReport {
        schema: SCHEMA_ID.to_owned(),
        meta,
        layers,
        groups: Vec::new(),
        totals: Totals::default(),
    };
    report.build_groups(&graph.groups);
    report.fill_totals();
    report
}
