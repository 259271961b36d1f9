mod common;

use ntp_core::container::{decode, load_weights, save_tensors, save_weights};
use ntp_core::metrics::StandardCollector;
use ntp_core::{
    build_model, gen_inputs, parse_topology, run_model, validate, EngineConfig, ExecutionTrace, Model, Precision,
    TopologyGraph, Uniform,
};

fn cfg(threads: usize, reps: usize) -> EngineConfig {
    EngineConfig {
        threads,
        reps,
        warmup: 1,
        ..Default::default()
    }
}

fn execute(model: &Model, seed: u64, config: &EngineConfig) -> ExecutionTrace {
    let inputs = gen_inputs(&model.graph, seed, Uniform { lo: -1.0, hi: 1.0 });
    run_model(model, &inputs, config, &mut StandardCollector::time_alloc()).unwrap()
}

fn checksums(t: &ExecutionTrace) -> Vec<(String, u64)> {
    t.nodes.iter().map(|n| (n.id.clone(), n.checksum)).collect()
}

const SMALL_BILSTM: &str = r#"<topology name="small-ds">
  <input id="features" shape="T:12,B:2,F:20"/>
  <layer id="fc1" type="fc" nodes="48" activation="relu_clip" clip="20" input="features"/>
  <layer id="bilstm" type="bilstm" nodes="40" input="fc1"/>
  <layer id="fc2" type="fc" nodes="29" input="bilstm"/>
  <layer id="probs" type="softmax" input="fc2"/>
  <inlay id="decoder" type="ctc_greedy" input="probs"/>
  <marker type="start" before="bilstm"/>
  <marker type="end" after="bilstm"/>
</topology>"#;

fn small() -> TopologyGraph {
    validate(&parse_topology(SMALL_BILSTM).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_checksums_and_counters() {
    for name in ["speech-frontend.xml", "tiny-cnn.xml"] {
        let g = common::load_graph(name);
        let a = execute(&build_model(&g, 5, Precision::Fp32), 5, &cfg(1, 2));
        let b = execute(&build_model(&g, 5, Precision::Fp32), 5, &cfg(1, 2));
        assert_eq!(checksums(&a), checksums(&b), "{name}");
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.counters, y.counters);
        }
    }
}

#[test]
fn different_seeds_change_outputs() {
    let g = small();
    let a = execute(&build_model(&g, 1, Precision::Fp32), 1, &cfg(1, 1));
    let b = execute(&build_model(&g, 2, Precision::Fp32), 2, &cfg(1, 1));
    assert_ne!(a.node("fc2").unwrap().checksum, b.node("fc2").unwrap().checksum);
}

#[test]
fn thread_count_does_not_change_results() {
    let g = small();
    let model = build_model(&g, 3, Precision::Fp32);
    let one = execute(&model, 3, &cfg(1, 1));
    for threads in [2, 3] {
        let many = execute(&model, 3, &cfg(threads, 1));
        assert_eq!(checksums(&one), checksums(&many), "threads={threads}");
    }
    let cnn = common::load_graph("tiny-cnn.xml");
    let model = build_model(&cnn, 3, Precision::Fp32);
    assert_eq!(checksums(&execute(&model, 3, &cfg(1, 1))), checksums(&execute(&model, 3, &cfg(2, 1))));
}

#[test]
fn region_samples_only_the_marked_node() {
    let g = small();
    let model = build_model(&g, 7, Precision::Fp32);
    let region = execute(&model, 7, &cfg(1, 3));
    let whole = execute(&Model { graph: g.without_region(), ..model.clone() }, 7, &cfg(1, 3));
    for (r, w) in region.nodes.iter().zip(&whole.nodes) {
        assert_eq!(r.samples.len(), if r.id == "bilstm" { 3 } else { 0 }, "{}", r.id);
        assert_eq!(w.samples.len(), 3, "{}", w.id);
        assert_eq!(r.counters, w.counters, "{}", r.id);
        assert_eq!(r.checksum, w.checksum, "{}", r.id);
    }
}

#[test]
fn reduced_precisions_run_and_differ_from_fp32() {
    let g = small();
    let full = execute(&build_model(&g, 9, Precision::Fp32), 9, &cfg(1, 1));
    for p in [Precision::Fp16, Precision::Int8] {
        let t = execute(&build_model(&g, 9, p), 9, &cfg(1, 1));
        assert_ne!(t.node("bilstm").unwrap().checksum, full.node("bilstm").unwrap().checksum, "{p:?}");
        assert!(
            t.node("bilstm").unwrap().counters.weight_bytes_touched
                < full.node("bilstm").unwrap().counters.weight_bytes_touched
        );
    }
}

#[test]
fn saved_weights_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    for p in [Precision::Fp32, Precision::Fp16, Precision::Int8] {
        let g = small();
        let original = build_model(&g, 21, p);
        let path = dir.path().join(format!("w-{}.ntpw", p.as_str()));
        save_weights(&original, &path).unwrap();
        // Seed 0 weights are overwritten by the container contents.
        let loaded = load_weights(&build_model(&g, 0, p), &path).unwrap();
        let a = execute(&original, 21, &cfg(1, 1));
        let b = execute(&loaded, 21, &cfg(1, 1));
        assert_eq!(checksums(&a), checksums(&b), "{p:?}");
    }
}

#[test]
fn weights_from_another_topology_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cnn.ntpw");
    save_weights(&build_model(&common::load_graph("tiny-cnn.xml"), 1, Precision::Fp32), &path).unwrap();
    assert!(load_weights(&build_model(&small(), 1, Precision::Fp32), &path).is_err());
}

#[test]
fn retained_outputs_round_trip_through_a_container() {
    let g = small();
    let model = build_model(&g, 4, Precision::Fp32);
    let trace = execute(
        &model,
        4,
        &EngineConfig {
            retain_outputs: true,
            ..cfg(1, 1)
        },
    );
    assert_eq!(trace.outputs.len(), g.nodes.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.ntpw");
    save_tensors(&path, trace.outputs.iter().map(|(k, v)| (k.as_str(), v))).unwrap();
    let stored = decode(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(stored.len(), g.nodes.len());
    for s in &stored {
        let t = &trace.outputs[&s.name];
        assert_eq!(s.data.to_f32().as_ref(), t.data.as_slice(), "{}", s.name);
        assert_eq!(trace.node(&s.name).unwrap().checksum, t.checksum());
    }
}

#[test]
fn live_tensor_bytes_return_to_zero() {
    for name in ["speech-frontend.xml", "tiny-cnn.xml"] {
        let g = common::load_graph(name);
        let t = execute(&build_model(&g, 0, Precision::Fp32), 0, &cfg(2, 2));
        assert_eq!(t.live_bytes_after, 0, "{name}");
        assert!(t.peak_live_bytes > 0);
    }
}
