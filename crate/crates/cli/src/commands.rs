use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ntp_core::container::{load_weights, save_tensors, save_weights, ContainerError};
use ntp_core::cost::{calibrate_machine, project_runtime, topology_cost, CalibrationOptions, CostError, MachineSpec};
use ntp_core::dsl::{parse_topology_bytes, RawTopologyDoc};
use ntp_core::metrics::collector_from_selection;
use ntp_core::report::{self, comparison_csv, CompareAxis, ProfileReport, ReportError, ReportMeta};
use ntp_core::{build_model, gen_inputs, run_model, validate as validate_graph, EngineConfig, TopologyGraph, Uniform};
use thiserror::Error;

use crate::{CalibrateArgs, CompareArgs, DescribeArgs, ExecArgs, ModelArgs, RunArgs, SweepArgs};

const DEFAULT_MACHINE: &str = include_str!("../../../fixtures/machines/generic-cpu.json");
const ENGINE_NAME: &str = "ntp-reference";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn container_err(path: &Path, e: ContainerError) -> CliError {
    match e {
        ContainerError::Io(e) => io_err(path, e),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

fn read_topology(path: &Path) -> Result<RawTopologyDoc> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_topology_bytes(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn graph_from(doc: &RawTopologyDoc, path: &Path) -> Result<TopologyGraph> {
    validate_graph(doc).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn prepare_doc(args: &ModelArgs, whole: bool) -> Result<RawTopologyDoc> {
    let mut doc = read_topology(&args.topology)?;
    if let Some(b) = args.batch {
        if b == 0 {
            return Err(CliError::Validation("--batch must be at least 1".into()));
        }
        doc.override_batch(b);
    }
    if whole {
        doc.clear_markers();
    }
    Ok(doc)
}

fn load_machine(path: Option<&Path>) -> Result<MachineSpec> {
    match path {
        None => Ok(MachineSpec::from_json(DEFAULT_MACHINE).expect("bundled machine spec is valid")),
        Some(p) => MachineSpec::load(p).map_err(|e| match e {
            CostError::Io(e) => io_err(p, e),
            other => CliError::Validation(format!("{}: {other}", p.display())),
        }),
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn validate(path: &Path) -> Result<()> {
    let doc = read_topology(path)?;
    let graph = graph_from(&doc, path)?;
    let region = graph.region_range();
    println!("topology {}", graph.name);
    for (id, shape) in &graph.inputs {
        println!("  input  {id:<14} {shape}");
    }
    for (i, n) in graph.nodes.iter().enumerate() {
        let mark = if region.contains(&i) { '*' } else { ' ' };
        println!(
            "{mark} {:<10} {:<14} {} -> {}",
            n.kind().as_str(),
            n.id,
            n.in_shape.dims_string(),
            n.out_shape.dims_string()
        );
    }
    for g in &graph.groups {
        println!("  group  {:<14} {}", g.name, g.members.join(","));
    }
    Ok(())
}

fn print_layer_table(report: &ProfileReport) {
    eprintln!(
        "{:<12} {:<10} {:>14} {:>14} {:<13} {:>12} {:>8}",
        "layer", "kind", "flops", "dram_est", "bound", "wall_ms", "%wall"
    );
    for l in &report.layers {
        eprintln!(
            "{:<12} {:<10} {:>14} {:>14} {:<13} {:>12} {:>8.2}",
            l.id,
            l.kind,
            l.cost.flops,
            l.cost.dram_bytes_est,
            l.cost.bound_class.map(|b| b.as_str()).unwrap_or("-"),
            l.wall_ns_median()
                .map(|n| format!("{:.3}", n as f64 / 1e6))
                .unwrap_or_else(|| "-".into()),
            l.percent_wall
        );
    }
}

pub fn describe(args: &DescribeArgs) -> Result<()> {
    let doc = prepare_doc(&args.model, false)?;
    let graph = graph_from(&doc, &args.model.topology)?;
    if graph.nodes.is_empty() {
        return Err(CliError::Validation("topology has no nodes".into()));
    }
    let machine = load_machine(args.model.machine.as_deref())?;
    let costs = topology_cost(&graph, &machine, args.model.precision);
    let meta = ReportMeta {
        topology: graph.name.clone(),
        seed: 0,
        precision: args.model.precision.as_str().to_owned(),
        threads: 1,
        reps: 0,
        warmup: 0,
        collector: "none".into(),
        machine: machine.name.clone(),
        tool_version: ntp_core::TOOL_VERSION.into(),
        timestamp: now_utc(),
        engine: "cost-model".into(),
        measured_only: false,
    };
    let rep = report::describe(&graph, &costs, meta);
    print_layer_table(&rep);
    if let Some(p) = &args.project {
        let other = load_machine(Some(p))?;
        let proj = project_runtime(&costs, &other);
        eprintln!(
            "projected bound on {}: {:.6} s -> {:.6} s (speedup {:.3})",
            other.name, proj.total_a_s, proj.total_b_s, proj.speedup
        );
    }
    write_output(args.out.as_deref(), &rep.export_json())?;
    if let Some(csv) = &args.csv {
        let bytes = rep.export_csv().map_err(|e| CliError::Runtime(e.to_string()))?;
        write_output(Some(csv), &bytes)?;
    }
    Ok(())
}

#[derive(Default)]
struct RunExtras<'a> {
    weights: Option<&'a Path>,
    save_weights: Option<&'a Path>,
    save_inputs: Option<&'a Path>,
    dump_outputs: Option<&'a Path>,
}

fn profile(doc: &RawTopologyDoc, source: &Path, model_args: &ModelArgs, exec: &ExecArgs, extras: RunExtras<'_>) -> Result<ProfileReport> {
    let graph = graph_from(doc, source)?;
    if graph.nodes.is_empty() {
        return Err(CliError::Validation("topology has no nodes".into()));
    }
    let machine = load_machine(model_args.machine.as_deref())?;
    let precision = model_args.precision;
    let mut model = build_model(&graph, exec.seed, precision);
    if let Some(p) = extras.weights {
        model = load_weights(&model, p).map_err(|e| container_err(p, e))?;
    }
    if let Some(p) = extras.save_weights {
        save_weights(&model, p).map_err(|e| container_err(p, e))?;
    }
    let inputs = gen_inputs(&graph, exec.seed, Uniform { lo: -1.0, hi: 1.0 });
    if let Some(p) = extras.save_inputs {
        save_tensors(p, graph.inputs.iter().map(|(id, _)| id.as_str()).zip(&inputs)).map_err(|e| container_err(p, e))?;
    }
    let (mut collector, warning) =
        collector_from_selection(&exec.collector).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(w) = warning {
        log::warn!("{w}");
    }
    let config = EngineConfig {
        threads: exec.threads,
        reps: exec.reps as usize,
        warmup: exec.warmup,
        retain_outputs: extras.dump_outputs.is_some(),
        ..Default::default()
    };
    if config.threads == 0 {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    let trace = run_model(&model, &inputs, &config, collector.as_mut()).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = extras.dump_outputs {
        save_tensors(p, trace.outputs.iter().map(|(k, v)| (k.as_str(), v))).map_err(|e| container_err(p, e))?;
    }
    let costs = topology_cost(&graph, &machine, precision);
    let meta = ReportMeta {
        topology: graph.name.clone(),
        seed: exec.seed,
        precision: precision.as_str().to_owned(),
        threads: exec.threads,
        reps: config.reps,
        warmup: config.warmup,
        collector: trace.collector.collector.clone(),
        machine: machine.name.clone(),
        tool_version: ntp_core::TOOL_VERSION.into(),
        timestamp: exec.timestamp.clone().unwrap_or_else(now_utc),
        engine: ENGINE_NAME.into(),
        measured_only: false,
    };
    report::summarize(&trace, &costs, &graph.groups, meta).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn run(args: &RunArgs) -> Result<()> {
    let doc = prepare_doc(&args.model, args.exec.whole)?;
    let rep = profile(
        &doc,
        &args.model.topology,
        &args.model,
        &args.exec,
        RunExtras {
            weights: args.weights.as_deref(),
            save_weights: args.save_weights.as_deref(),
            save_inputs: args.save_inputs.as_deref(),
            dump_outputs: args.dump_outputs.as_deref(),
        },
    )?;
    print_layer_table(&rep);
    write_output(args.out.as_deref(), &rep.export_json())?;
    if let Some(csv) = &args.csv {
        let bytes = rep.export_csv().map_err(|e| CliError::Runtime(e.to_string()))?;
        write_output(Some(csv), &bytes)?;
    }
    Ok(())
}

fn report_err(e: ReportError) -> CliError {
    match e {
        ReportError::Csv(e) => CliError::Runtime(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn read_report(path: &Path) -> Result<ProfileReport> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ProfileReport::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn emit_comparison(
    reports: &[ProfileReport],
    axis: CompareAxis,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    let cmp = report::compare(reports, axis).map_err(report_err)?;
    for w in &cmp.warnings {
        eprintln!("warning: {w}");
    }
    for u in &cmp.unmatched {
        eprintln!("unmatched: {} in {}", u.id, u.variant);
    }
    for row in &cmp.rows {
        let cells: Vec<String> = row
            .percent_wall
            .iter()
            .zip(&row.ratio)
            .map(|(p, r)| match (p, r) {
                (Some(p), Some(r)) => format!("{p:6.2}% x{r:.3}"),
                (Some(p), None) => format!("{p:6.2}%"),
                _ => "-".into(),
            })
            .collect();
        eprintln!("{:<16} {}", row.key, cells.join("  "));
    }
    write_output(out, &cmp.export_json())?;
    if let Some(p) = csv {
        write_output(Some(p), &comparison_csv(&cmp).map_err(report_err)?)?;
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let reports = args.reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    emit_comparison(&reports, args.axis, args.out.as_deref(), args.csv.as_deref())
}

fn file_stem(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.values.is_empty() {
        return Err(CliError::Validation("--values needs at least one value".into()));
    }
    let base = prepare_doc(&args.model, args.exec.whole)?;
    let mut variants = Vec::with_capacity(args.values.len());
    for value in &args.values {
        let mut doc = base.clone();
        doc.set_param(&args.param, value)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        doc.name = format!("{}[{}={}]", base.name, args.param, value);
        // Validate every variant before spending time on execution.
        graph_from(&doc, &args.model.topology)?;
        variants.push((value, doc));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let mut reports = Vec::new();
    for (value, doc) in &variants {
        eprintln!("== {} = {value}", args.param);
        let rep = profile(doc, &args.model.topology, &args.model, &args.exec, RunExtras::default())?;
        let path: PathBuf = args.out_dir.join(format!("{}-{}.json", file_stem(&base.name), file_stem(value)));
        write_output(Some(&path), &rep.export_json())?;
        reports.push(rep);
    }
    if reports.len() < 2 {
        eprintln!("single value: no comparison written");
        return Ok(());
    }
    emit_comparison(
        &reports,
        CompareAxis::Topologies,
        Some(&args.out_dir.join("comparison.json")),
        Some(&args.out_dir.join("comparison.csv")),
    )
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    if args.threads == 0 {
        return Err(CliError::Validation("--threads must be at least 1".into()));
    }
    let mut spec = calibrate_machine(&CalibrationOptions {
        threads: args.threads,
        llc_bytes: args.llc_bytes,
        ..Default::default()
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    spec.name = args.name.clone();
    eprintln!(
        "peak {:.2} GFLOP/s, bandwidth {:.2} GB/s, llc {} bytes",
        spec.peak_gflops, spec.dram_gbps, spec.llc_bytes
    );
    let mut text = spec.to_json();
    text.push('\n');
    write_output(Some(&args.out), text.as_bytes())
}
