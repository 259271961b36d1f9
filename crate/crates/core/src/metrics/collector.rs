//! Collector contract and the built-in collectors.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::alloc::AllocTracker;
use super::hwc::HwCounters;
use super::lifecycle::{Call, ContractViolation, LifecycleGuard};
use super::Sample;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error("collector backend failure: {0}")]
    Backend(String),
    #[error("unknown collector `{0}` (expected time, time+alloc or hwc)")]
    UnknownSelection(String),
}

/// Handed to a collector at `start`.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub topology: String,
    pub threads: usize,
    pub reps: usize,
    pub warmup: usize,
    pub tracker: Arc<AllocTracker>,
}

/// Returned by `stop`: totals over every resumed interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectorSummary {
    pub collector: String,
    pub resumed: Sample,
    pub nodes_sampled: u64,
}

/// Start/Stop/Pause/Resume lifecycle with per-node sampling. Calls arrive
/// from the engine's coordinating thread only.
pub trait Collector: Send {
    fn name(&self) -> &str;
    fn start(&mut self, meta: &RunMeta) -> Result<(), CollectorError>;
    fn pause(&mut self) -> Result<(), CollectorError>;
    fn resume(&mut self) -> Result<(), CollectorError>;
    fn on_node_begin(&mut self, id: &str) -> Result<(), CollectorError>;
    fn on_node_end(&mut self, id: &str) -> Result<Sample, CollectorError>;
    fn stop(&mut self) -> Result<CollectorSummary, CollectorError>;
}

/// Process CPU time in nanoseconds.
pub fn process_cpu_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: ts is a valid out-pointer for clock_gettime.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0;
    }
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

struct Mark {
    at: Instant,
    cpu_ns: u64,
    alloc_total: u64,
    hw: BTreeMap<String, u64>,
}

/// Wall clock plus process CPU time, optionally allocation accounting and
/// hardware counters.
pub struct StandardCollector {
    name: String,
    track_alloc: bool,
    hw: Option<HwCounters>,
    guard: LifecycleGuard,
    tracker: Option<Arc<AllocTracker>>,
    node_mark: Option<Mark>,
    resume_mark: Option<Mark>,
    summary: CollectorSummary,
}

impl StandardCollector {
    pub fn time() -> Self {
        Self::with(String::from("time"), false, None)
    }

    pub fn time_alloc() -> Self {
        Self::with(String::from("time+alloc"), true, None)
    }

    /// Hardware counters when the platform exposes them; otherwise time only
    /// and the reason is returned as a warning.
    pub fn hwc() -> (Self, Option<String>) {
        match HwCounters::open() {
            Ok(hw) => (Self::with(String::from("hwc"), true, Some(hw)), None),
            Err(reason) => (
                Self::with(String::from("time"), false, None),
                Some(format!("hardware counters unavailable ({reason}); collecting time metrics only")),
            ),
        }
    }

    fn with(name: String, track_alloc: bool, hw: Option<HwCounters>) -> Self {
        StandardCollector {
            summary: CollectorSummary {
                collector: name.clone(),
                ..Default::default()
            },
            name,
            track_alloc,
            hw,
            guard: LifecycleGuard::new(),
            tracker: None,
            node_mark: None,
            resume_mark: None,
        }
    }

    fn mark(&self) -> Mark {
        Mark {
            hw: self.hw.as_ref().map(HwCounters::read).unwrap_or_default(),
            alloc_total: self.tracker.as_ref().map(|t| t.total()).unwrap_or(0),
            cpu_ns: process_cpu_ns(),
            at: Instant::now(),
        }
    }

    fn delta(&self, from: &Mark) -> Sample {
        let wall_ns = from.at.elapsed().as_nanos() as u64;
        let now = self.mark();
        let mut sample = Sample {
            wall_ns,
            cpu_ns: now.cpu_ns.saturating_sub(from.cpu_ns),
            ..Default::default()
        };
        if self.track_alloc {
            if let Some(t) = &self.tracker {
                sample.alloc_bytes = now.alloc_total - from.alloc_total;
                sample.peak_live_bytes = t.peak();
            }
        }
        for (k, v) in now.hw {
            let before = from.hw.get(&k).copied().unwrap_or(0);
            sample.extensions.insert(k, v.saturating_sub(before));
        }
        sample
    }
}

/// Builds a collector from the CLI selection string.
pub fn collector_from_selection(
    selection: &str,
) -> Result<(Box<dyn Collector>, Option<String>), CollectorError> {
    match selection {
        "time" => Ok((Box::new(StandardCollector::time()), None)),
        "time+alloc" => Ok((Box::new(StandardCollector::time_alloc()), None)),
        "hwc" => {
            let (c, warning) = StandardCollector::hwc();
            Ok((Box::new(c), warning))
        }
        other => Err(CollectorError::UnknownSelection(other.to_owned())),
    }
}

impl Collector for StandardCollector {
    fn name(&self) -> &str {
        &self.name
    }

    fn start(&mut self, meta: &RunMeta) -> Result<(), CollectorError> {
        self.guard.step(&Call::Start)?;
        self.tracker = Some(Arc::clone(&meta.tracker));
        if self.hw.is_some() {
            // Counters follow the thread that opened them; reopen on the coordinating thread.
            self.hw = Some(HwCounters::open().map_err(CollectorError::Backend)?);
        }
        Ok(())
    }

    fn pause(&mut self) -> Result<(), CollectorError> {
        self.guard.step(&Call::Pause)?;
        if let Some(mark) = self.resume_mark.take() {
            let d = self.delta(&mark);
            self.summary.resumed.accumulate(&d);
        }
        Ok(())
    }

    fn resume(&mut self) -> Result<(), CollectorError> {
        self.guard.step(&Call::Resume)?;
        if self.resume_mark.is_none() {
            self.resume_mark = Some(self.mark());
        }
        Ok(())
    }

    fn on_node_begin(&mut self, id: &str) -> Result<(), CollectorError> {
        self.guard.step(&Call::NodeBegin(id))?;
        if let Some(t) = &self.tracker {
            t.reset_peak();
        }
        self.node_mark = Some(self.mark());
        Ok(())
    }

    fn on_node_end(&mut self, id: &str) -> Result<Sample, CollectorError> {
        self.guard.step(&Call::NodeEnd(id))?;
        let mark = self.node_mark.take().expect("guard ensures a matching begin");
        self.summary.nodes_sampled += 1;
        Ok(self.delta(&mark))
    }

    fn stop(&mut self) -> Result<CollectorSummary, CollectorError> {
        let was_resumed = self.guard.is_resumed();
        self.guard.step(&Call::Stop)?;
        if was_resumed {
            if let Some(mark) = self.resume_mark.take() {
                let d = self.delta(&mark);
                self.summary.resumed.accumulate(&d);
            }
        }
        Ok(std::mem::take(&mut self.summary))
    }
}
