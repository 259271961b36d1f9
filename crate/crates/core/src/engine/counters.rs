use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Work performed by one kernel invocation. A MAC counts as two FLOPs;
/// every other element-wise operation counts as one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCounters {
    pub macs: u64,
    pub flops: u64,
    pub weight_bytes_touched: u64,
    pub activation_bytes_touched: u64,
}

impl AddAssign for KernelCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.macs += rhs.macs;
        self.flops += rhs.flops;
        self.weight_bytes_touched += rhs.weight_bytes_touched;
        self.activation_bytes_touched += rhs.activation_bytes_touched;
    }
}
