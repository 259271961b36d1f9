use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ProfileReport, ReportError, SCHEMA_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareAxis {
    Layers,
    Topologies,
    Machines,
    Frameworks,
}

impl FromStr for CompareAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "layers" => Ok(CompareAxis::Layers),
            "topologies" => Ok(CompareAxis::Topologies),
            "machines" => Ok(CompareAxis::Machines),
            "frameworks" => Ok(CompareAxis::Frameworks),
            other => Err(format!(
                "unknown axis `{other}` (expected layers, topologies, machines or frameworks)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantInfo {
    pub label: String,
    pub topology: String,
    pub machine: String,
    pub engine: String,
    pub threads: usize,
    pub precision: String,
}

/// One aligned layer or group; every vector has one entry per variant,
/// baseline first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// Baseline layer id, or `group:<name>`.
    pub key: String,
    pub kind: String,
    pub ids: Vec<Option<String>>,
    pub wall_ns_median: Vec<Option<u64>>,
    pub percent_wall: Vec<Option<f64>>,
    pub dram_bytes_est: Vec<Option<u64>>,
    /// Variant median over baseline median.
    pub ratio: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unmatched {
    pub variant: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub axis: CompareAxis,
    pub baseline: String,
    pub variants: Vec<VariantInfo>,
    pub rows: Vec<ComparisonRow>,
    pub unmatched: Vec<Unmatched>,
    pub warnings: Vec<String>,
}

impl ComparisonReport {
    pub fn row(&self, key: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn export_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("comparison serializes");
        out.push(b'\n');
        out
    }
}

/// Per-row view of a report used for alignment.
struct Entry {
    id: String,
    kind: String,
    wall: Option<u64>,
    percent: Option<f64>,
    dram: Option<u64>,
}

fn entries(r: &ProfileReport) -> (Vec<Entry>, Vec<Entry>) {
    let measured = |p: f64, has: bool| if has { Some(p) } else { None };
    let layers = r
        .layers
        .iter()
        .map(|l| Entry {
            id: l.id.clone(),
            kind: l.kind.clone(),
            wall: l.wall_ns_median(),
            percent: measured(l.percent_wall, l.stats.is_some()),
            dram: (!r.meta.measured_only).then_some(l.cost.dram_bytes_est),
        })
        .collect();
    let groups = r
        .groups
        .iter()
        .map(|g| Entry {
            id: g.name.clone(),
            kind: "group".into(),
            wall: g.stats.as_ref().map(|s| s.wall_ns.median),
            percent: measured(g.percent_wall, g.stats.is_some()),
            dram: (!r.meta.measured_only).then_some(g.cost.dram_bytes_est),
        })
        .collect();
    (layers, groups)
}

fn label(r: &ProfileReport, axis: CompareAxis, index: usize) -> String {
    let m = &r.meta;
    let base = match axis {
        CompareAxis::Layers => format!("{}@{}t", m.topology, m.threads),
        CompareAxis::Topologies => m.topology.clone(),
        CompareAxis::Machines => m.machine.clone(),
        CompareAxis::Frameworks => m.engine.clone(),
    };
    format!("{index}:{base}")
}

/// For each variant, maps baseline row index to the variant's row index.
fn align_by_id(base: &[Entry], other: &[Entry]) -> Vec<Option<usize>> {
    base.iter()
        .map(|b| other.iter().position(|o| o.id == b.id))
        .collect()
}

fn align_by_position(base: &[Entry], other: &[Entry]) -> Vec<Option<usize>> {
    base.iter()
        .enumerate()
        .map(|(i, b)| other.get(i).filter(|o| o.kind == b.kind).map(|_| i))
        .collect()
}

/// Aligns reports row by row against the first (the baseline).
///
/// Rows match by layer id. On the topology axis, when the id lists differ,
/// rows fall back to matching by (position, kind) with a warning. Rows that
/// find no partner are listed in `unmatched`.
pub fn compare(reports: &[ProfileReport], axis: CompareAxis) -> Result<ComparisonReport, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    if let Some(bad) = reports.iter().find(|r| r.schema != SCHEMA_ID) {
        return Err(ReportError::SchemaVersion {
            found: bad.schema.clone(),
            expected: SCHEMA_ID.to_owned(),
        });
    }
    let base = &reports[0];
    if axis != CompareAxis::Topologies {
        if let Some(r) = reports.iter().find(|r| r.meta.topology != base.meta.topology) {
            return Err(ReportError::AxisMismatch(format!(
                "{axis:?} comparison needs one topology, got `{}` and `{}`",
                base.meta.topology, r.meta.topology
            )));
        }
    }

    let labels: Vec<String> = reports.iter().enumerate().map(|(i, r)| label(r, axis, i)).collect();
    let all: Vec<(Vec<Entry>, Vec<Entry>)> = reports.iter().map(entries).collect();
    let (base_layers, base_groups) = &all[0];
    let mut warnings = Vec::new();
    let mut unmatched = Vec::new();

    // alignment[v] = (layer map, group map) from baseline rows into variant v
    let mut alignment = Vec::with_capacity(reports.len());
    for (v, (layers, groups)) in all.iter().enumerate() {
        let same_ids = layers.len() == base_layers.len()
            && layers.iter().zip(base_layers).all(|(a, b)| a.id == b.id);
        let layer_map = if same_ids || axis != CompareAxis::Topologies {
            align_by_id(base_layers, layers)
        } else {
            warnings.push(format!(
                "layer ids of `{}` differ from the baseline; aligning by position and kind",
                labels[v]
            ));
            align_by_position(base_layers, layers)
        };
        let group_map = align_by_id(base_groups, groups);
        for (j, e) in layers.iter().enumerate() {
            if !layer_map.contains(&Some(j)) {
                unmatched.push(Unmatched {
                    variant: labels[v].clone(),
                    id: e.id.clone(),
                });
            }
        }
        for (j, e) in groups.iter().enumerate() {
            if !group_map.contains(&Some(j)) {
                unmatched.push(Unmatched {
                    variant: labels[v].clone(),
                    id: format!("group:{}", e.id),
                });
            }
        }
        for (i, m) in layer_map.iter().enumerate() {
            if m.is_none() {
                unmatched.push(Unmatched {
                    variant: labels[0].clone(),
                    id: base_layers[i].id.clone(),
                });
            }
        }
        alignment.push((layer_map, group_map));
    }

    let aligned_somewhere = alignment[1..]
        .iter()
        .all(|(lm, gm)| lm.iter().chain(gm.iter()).any(Option::is_some));
    if !aligned_somewhere {
        return Err(ReportError::UnalignableRows(
            "a variant shares no layer or group with the baseline".into(),
        ));
    }

    let build_row = |key: String, kind: String, cells: Vec<Option<&Entry>>| {
        let base_wall = cells[0].and_then(|e| e.wall);
        ComparisonRow {
            key,
            kind,
            ids: cells.iter().map(|c| c.map(|e| e.id.clone())).collect(),
            wall_ns_median: cells.iter().map(|c| c.and_then(|e| e.wall)).collect(),
            percent_wall: cells.iter().map(|c| c.and_then(|e| e.percent)).collect(),
            dram_bytes_est: cells.iter().map(|c| c.and_then(|e| e.dram)).collect(),
            ratio: cells
                .iter()
                .map(|c| match (c.and_then(|e| e.wall), base_wall) {
                    (Some(w), Some(b)) if b > 0 => Some(w as f64 / b as f64),
                    _ => None,
                })
                .collect(),
        }
    };

    let mut rows = Vec::new();
    for (i, b) in base_layers.iter().enumerate() {
        let cells = all
            .iter()
            .zip(&alignment)
            .map(|((layers, _), (lm, _))| lm[i].map(|j| &layers[j]))
            .collect();
        rows.push(build_row(b.id.clone(), b.kind.clone(), cells));
    }
    for (i, b) in base_groups.iter().enumerate() {
        let cells = all
            .iter()
            .zip(&alignment)
            .map(|((_, groups), (_, gm))| gm[i].map(|j| &groups[j]))
            .collect();
        rows.push(build_row(format!("group:{}", b.id), b.kind.clone(), cells));
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ComparisonReport {
        axis,
        baseline: labels[0].clone(),
        variants: reports
            .iter()
            .zip(&labels)
            .map(|(r, l)| VariantInfo {
                label: l.clone(),
                topology: r.meta.topology.clone(),
                machine: r.meta.machine.clone(),
                engine: r.meta.engine.clone(),
                threads: r.meta.threads,
                precision: r.meta.precision.clone(),
            })
            .collect(),
        rows,
        unmatched,
        warnings,
    })
}

/// Plot-friendly table: one line per row, wall/percent/ratio columns per variant.
pub fn comparison_csv(c: &ComparisonReport) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["key".to_owned(), "kind".to_owned()];
    for v in &c.variants {
        for col in ["wall_ms_median", "percent_wall", "ratio"] {
            header.push(format!("{}:{col}", v.label));
        }
    }
    w.write_record(&header)?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for r in &c.rows {
        let mut rec = vec![r.key.clone(), r.kind.clone()];
        for i in 0..c.variants.len() {
            rec.push(opt(r.wall_ns_median[i].map(|n| format!("{:.6}", n as f64 / 1e6))));
            rec.push(opt(r.percent_wall[i].map(|p| format!("{p:.4}"))));
            rec.push(opt(r.ratio[i].map(|x| format!("{x:.6}"))));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(w.into_inner().expect("flushed writer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, Sample};
    use crate::report::{assign_wall_percentages, CostRecord, LayerRecord, ReportMeta, Totals};
    use crate::engine::KernelCounters;

    fn report(topology: &str, layers: &[(&str, &str, u64)]) -> ProfileReport {
        let mut layers: Vec<LayerRecord> = layers
            .iter()
            .map(|(id, kind, wall)| LayerRecord {
                id: (*id).into(),
                kind: (*kind).into(),
                shape: "B:1,F:1".into(),
                in_region: true,
                checksum: None,
                counters: KernelCounters::default(),
                cost: CostRecord::default(),
                stats: Some(
                    aggregate(&[Sample {
                        wall_ns: *wall,
                        ..Default::default()
                    }])
                    .unwrap(),
                ),
                percent_wall: 0.0,
            })
            .collect();
        assign_wall_percentages(&mut layers);
        ProfileReport {
            schema: SCHEMA_ID.into(),
            meta: ReportMeta {
                topology: topology.into(),
                seed: 0,
                precision: "fp32".into(),
                threads: 1,
                reps: 1,
                warmup: 0,
                collector: "time".into(),
                machine: "m".into(),
                tool_version: "0".into(),
                timestamp: "t".into(),
                engine: "reference".into(),
                measured_only: false,
            },
            layers,
            groups: Vec::new(),
            totals: Totals::default(),
        }
    }

    #[test]
    fn self_comparison_is_unity() {
        let r = report("t", &[("a", "fc", 10), ("b", "lstm", 30)]);
        let c = compare(&[r.clone(), r], CompareAxis::Layers).unwrap();
        for row in &c.rows {
            assert_eq!(row.ratio, vec![Some(1.0), Some(1.0)]);
        }
        assert!(c.unmatched.is_empty());
    }

    #[test]
    fn halving_time_gives_half_ratio() {
        let a = report("t", &[("a", "fc", 10_000_000)]);
        let b = report("t", &[("a", "fc", 5_000_000)]);
        let c = compare(&[a, b], CompareAxis::Machines).unwrap();
        assert_eq!(c.rows[0].ratio[1], Some(0.5));
    }

    #[test]
    fn ratios_are_transitive() {
        let a = report("t", &[("a", "fc", 7), ("b", "fc", 11)]);
        let b = report("t", &[("a", "fc", 13), ("b", "fc", 17)]);
        let c = report("t", &[("a", "fc", 19), ("b", "fc", 23)]);
        let ca = compare(&[a.clone(), c.clone()], CompareAxis::Layers).unwrap();
        let cb = compare(&[b.clone(), c], CompareAxis::Layers).unwrap();
        let ba = compare(&[a, b], CompareAxis::Layers).unwrap();
        for i in 0..2 {
            let lhs = ca.rows[i].ratio[1].unwrap();
            let rhs = cb.rows[i].ratio[1].unwrap() * ba.rows[i].ratio[1].unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn topology_axis_falls_back_to_position() {
        let a = report("x", &[("fc1", "fc", 10), ("rnn", "bilstm", 20)]);
        let b = report("y", &[("dense", "fc", 10), ("recurrent", "bilstm", 40), ("extra", "fc", 1)]);
        let c = compare(&[a, b], CompareAxis::Topologies).unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert_eq!(c.row("rnn").unwrap().ids[1].as_deref(), Some("recurrent"));
        assert_eq!(c.row("rnn").unwrap().ratio[1], Some(2.0));
        assert_eq!(c.unmatched.len(), 1);
        assert_eq!(c.unmatched[0].id, "extra");
    }

    #[test]
    fn errors() {
        let a = report("x", &[("a", "fc", 1)]);
        let b = report("y", &[("b", "lstm", 1)]);
        assert!(matches!(compare(&[a.clone(), b.clone()], CompareAxis::Machines), Err(ReportError::AxisMismatch(_))));
        assert!(matches!(compare(&[a.clone(), b], CompareAxis::Topologies), Err(ReportError::UnalignableRows(_))));
        assert!(matches!(compare(&[a.clone()], CompareAxis::Layers), Err(ReportError::TooFewReports(1))));
        let mut old = a.clone();
        old.schema = "ntp-report/0".into();
        assert!(matches!(compare(&[a, old], CompareAxis::Layers), Err(ReportError::SchemaVersion { .. })));
    }
}
