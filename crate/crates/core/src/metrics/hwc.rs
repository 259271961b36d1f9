//! Optional hardware counters via Linux `perf_event_open`.
//!
//! Counts user-space events of the calling thread. Unavailable counters
//! (non-Linux, containers, `perf_event_paranoid`) make [`HwCounters::open`]
//! return an error and the collector falls back to time metrics.

use std::collections::BTreeMap;

#[cfg(target_os = "linux")]
mod imp {
    use std::os::fd::{FromRawFd, OwnedFd, AsRawFd};

    #[repr(C)]
    #[derive(Default)]
    struct PerfEventAttr {
        type_: u32,
        size: u32,
        config: u64,
        sample_period: u64,
        sample_type: u64,
        read_format: u64,
        flags: u64,
        wakeup_events: u32,
        bp_type: u32,
        config1: u64,
        config2: u64,
        branch_sample_type: u64,
        sample_regs_user: u64,
        sample_stack_user: u32,
        clockid: i32,
        sample_regs_intr: u64,
        aux_watermark: u32,
        sample_max_stack: u16,
        reserved: u16,
    }

    const PERF_TYPE_HARDWARE: u32 = 0;
    const EXCLUDE_KERNEL: u64 = 1 << 5;
    const EXCLUDE_HV: u64 = 1 << 6;

    pub(super) const EVENTS: &[(&str, u64)] = &[("cycles", 0), ("instructions", 1), ("cache_misses", 3)];

    pub(super) struct Counter(OwnedFd);

    impl Counter {
        pub(super) fn open(config: u64) -> std::io::Result<Counter> {
            let attr = PerfEventAttr {
                type_: PERF_TYPE_HARDWARE,
                size: std::mem::size_of::<PerfEventAttr>() as u32,
                config,
                flags: EXCLUDE_KERNEL | EXCLUDE_HV,
                ..Default::default()
            };
            // SAFETY: attr is a properly sized, zero-initialized perf_event_attr.
            let fd = unsafe {
                libc::syscall(
                    libc::SYS_perf_event_open,
                    &attr as *const PerfEventAttr,
                    0 as libc::pid_t,
                    -1 as libc::c_int,
                    -1 as libc::c_int,
                    0 as libc::c_ulong,
                )
            };
            if fd < 0 {
                return Err(std::io::Error::last_os_error());
            }
            // SAFETY: the kernel returned a fresh descriptor that we now own.
            Ok(Counter(unsafe { OwnedFd::from_raw_fd(fd as i32) }))
        }

        pub(super) fn read(&self) -> std::io::Result<u64> {
            let mut value = 0u64;
            // SAFETY: reading 8 bytes into a u64 owned by this frame.
            let n = unsafe {
                libc::read(
                    self.0.as_raw_fd(),
                    &mut value as *mut u64 as *mut libc::c_void,
                    std::mem::size_of::<u64>(),
                )
            };
            if n != 8 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(value)
        }
    }

    #[test]
    fn attr_matches_kernel_abi_v5() {
        assert_eq!(std::mem::size_of::<PerfEventAttr>(), 112);
    }
}

pub struct HwCounters {
    #[cfg(target_os = "linux")]
    counters: Vec<(&'static str, imp::Counter)>,
}

impl HwCounters {
    #[cfg(target_os = "linux")]
    pub fn open() -> Result<HwCounters, String> {
        let mut counters = Vec::new();
        for (name, config) in imp::EVENTS {
            match imp::Counter::open(*config) {
                Ok(c) => counters.push((*name, c)),
                Err(e) => return Err(format!("perf_event_open({name}) failed: {e}")),
            }
        }
        Ok(HwCounters { counters })
    }

    #[cfg(not(target_os = "linux"))]
    pub fn open() -> Result<HwCounters, String> {
        Err("hardware counters are only supported on Linux".into())
    }

    pub fn read(&self) -> BTreeMap<String, u64> {
        #[cfg(target_os = "linux")]
        {
            self.counters
                .iter()
                .filter_map(|(name, c)| c.read().ok().map(|v| ((*name).to_owned(), v)))
                .collect()
        }
        #[cfg(not(target_os = "linux"))]
        {
            BTreeMap::new()
        }
    }
}
