//! Microbenchmarks that measure the roofs of the current machine.

use std::hint::black_box;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CostError, MachineSpec};
use crate::engine::kernels::matmul_bias;

/// Shortest workload whose timing is trusted.
pub const MIN_TIMED_NS: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub threads: usize,
    /// Skip the cache probe and use this capacity.
    pub llc_bytes: Option<u64>,
    pub matmul_n: usize,
    /// Total bytes of the three triad arrays.
    pub stream_bytes: usize,
    pub trials: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            threads: 1,
            llc_bytes: None,
            matmul_n: 512,
            stream_bytes: 3 * 8 * (8 << 20),
            trials: 5,
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CostError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CostError::InvalidMachine(format!("thread pool: {e}")))
}

fn checked(elapsed_ns: u64) -> Result<u64, CostError> {
    if elapsed_ns < MIN_TIMED_NS {
        return Err(CostError::ClockResolution {
            elapsed_ns,
            min_ns: MIN_TIMED_NS,
        });
    }
    Ok(elapsed_ns)
}

/// Best-of-`trials` GFLOP/s of an `n`-cubed blocked matmul.
pub fn matmul_gflops(n: usize, threads: usize, trials: usize) -> Result<f64, CostError> {
    let a: Vec<f32> = (0..n * n).map(|i| (i % 13) as f32 * 0.01).collect();
    let b: Vec<f32> = (0..n * n).map(|i| (i % 7) as f32 * 0.02).collect();
    let bias = vec![0.0f32; n];
    let mut c = vec![0.0f32; n * n];
    let pool = pool(threads)?;
    let mut best = f64::MAX;
    for _ in 0..trials.max(1) {
        let start = Instant::now();
        pool.install(|| matmul_bias(64, &a, &b, &bias, &mut c, n, n, n));
        black_box(&c);
        let ns = checked(start.elapsed().as_nanos() as u64)?;
        best = best.min(ns as f64);
    }
    Ok(2.0 * (n * n * n) as f64 / best)
}

/// Best-of-`trials` bandwidth of `a = b + s*c` over three f64 arrays totalling `bytes`.
pub fn stream_triad_gbps(bytes: usize, threads: usize, trials: usize) -> Result<f64, CostError> {
    let len = (bytes / 24).max(1);
    let b = vec![1.0f64; len];
    let c = vec![2.0f64; len];
    let mut a = vec![0.0f64; len];
    let pool = pool(threads)?;
    let chunk = len.div_ceil(threads.max(1) * 4).max(1);
    let mut best = f64::MAX;
    for trial in 0..trials.max(1) {
        let s = 3.0 + trial as f64;
        let start = Instant::now();
        pool.install(|| {
            a.par_chunks_mut(chunk).enumerate().for_each(|(ci, dst)| {
                let off = ci * chunk;
                for (i, v) in dst.iter_mut().enumerate() {
                    *v = b[off + i] + s * c[off + i];
                }
            })
        });
        black_box(&a);
        let ns = checked(start.elapsed().as_nanos() as u64)?;
        best = best.min(ns as f64);
    }
    Ok((3 * 8 * len) as f64 / best)
}

fn chase_latency_ns(bytes: usize, steps: usize) -> f64 {
    let slots = (bytes / std::mem::size_of::<usize>()).max(2);
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(slots as u64));
    let mut next = vec![0usize; slots];
    for w in 0..slots {
        next[order[w]] = order[(w + 1) % slots];
    }
    let mut p = order[0];
    for _ in 0..slots.min(steps) {
        p = next[p];
    }
    let start = Instant::now();
    for _ in 0..steps {
        p = next[p];
    }
    black_box(p);
    start.elapsed().as_nanos() as f64 / steps as f64
}

/// Estimates the last-level cache as the working-set size just before the
/// steepest rise in pointer-chase latency (sizes 1 MiB to `max_bytes`).
pub fn pointer_chase_llc(max_bytes: usize) -> u64 {
    let mut sizes = Vec::new();
    let mut s = 1usize << 20;
    while s <= max_bytes {
        sizes.push(s);
        s *= 2;
    }
    if sizes.len() < 2 {
        return max_bytes as u64;
    }
    let lat: Vec<f64> = sizes.iter().map(|&s| chase_latency_ns(s, 1 << 21)).collect();
    let mut best = (0.0, sizes[0]);
    for i in 0..sizes.len() - 1 {
        let jump = lat[i + 1] / lat[i];
        if jump > best.0 {
            best = (jump, sizes[i]);
        }
    }
    best.1 as u64
}

pub fn calibrate_machine(options: &CalibrationOptions) -> Result<MachineSpec, CostError> {
    let peak_gflops = matmul_gflops(options.matmul_n, options.threads, options.trials)?;
    let dram_gbps = stream_triad_gbps(options.stream_bytes, options.threads, options.trials)?;
    let llc_bytes = match options.llc_bytes {
        Some(b) => b,
        None => pointer_chase_llc(128 << 20),
    };
    let spec = MachineSpec {
        name: format!("calibrated-{}t", options.threads),
        peak_gflops,
        dram_gbps,
        llc_bytes,
        cores: options.threads,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_stream_is_below_clock_resolution() {
        assert!(matches!(
            stream_triad_gbps(1024, 1, 1),
            Err(CostError::ClockResolution { .. })
        ));
    }

    #[test]
    fn calibration_produces_positive_roofs() {
        let spec = calibrate_machine(&CalibrationOptions {
            llc_bytes: Some(1 << 20),
            matmul_n: 256,
            stream_bytes: 24 << 20,
            trials: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(spec.peak_gflops > 0.0 && spec.dram_gbps > 0.0);
        assert_eq!(spec.llc_bytes, 1 << 20);
    }

    #[test]
    #[ignore = "timing-sensitive; run on an idle machine"]
    fn repeated_calibration_is_stable() {
        let opts = CalibrationOptions {
            llc_bytes: Some(1 << 25),
            ..Default::default()
        };
        let a = calibrate_machine(&opts).unwrap().peak_gflops;
        let b = calibrate_machine(&opts).unwrap().peak_gflops;
        assert!((a - b).abs() <= 0.2 * a.max(b), "{a} vs {b}");
    }

    #[test]
    #[ignore = "timing-sensitive; needs more than one core"]
    fn more_threads_do_not_lower_peak() {
        let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let one = matmul_gflops(512, 1, 5).unwrap();
        let many = matmul_gflops(512, n, 5).unwrap();
        assert!(one <= many * 1.1, "{one} vs {many}");
    }
}
