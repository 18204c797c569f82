//! Work accounting shared by all engines.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// Cumulative work counters. One unit is charged per dictionary operation
/// (adjacency/sampler structure reads and writes), per neighbor visited
/// during recoloring scans, and per palette-sampling attempt or lottery draw.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct WorkStats {
    pub dict_ops: u64,
    pub neighbor_visits: u64,
    pub sample_attempts: u64,
}

impl WorkStats {
    pub fn total(&self) -> u64 {
        self.dict_ops + self.neighbor_visits + self.sample_attempts
    }
}

impl Add for WorkStats {
    type Output = WorkStats;
    fn add(self, rhs: WorkStats) -> WorkStats {
        WorkStats {
            dict_ops: self.dict_ops + rhs.dict_ops,
            neighbor_visits: self.neighbor_visits + rhs.neighbor_visits,
            sample_attempts: self.sample_attempts + rhs.sample_attempts,
        }
    }
}

impl AddAssign for WorkStats {
    fn add_assign(&mut self, rhs: WorkStats) {
        self.dict_ops += rhs.dict_ops;
        self.neighbor_visits += rhs.neighbor_visits;
        self.sample_attempts += rhs.sample_attempts;
    }
}

impl Sub for WorkStats {
    type Output = WorkStats;
    fn sub(self, rhs: WorkStats) -> WorkStats {
        WorkStats {
            dict_ops: self.dict_ops - rhs.dict_ops,
            neighbor_visits: self.neighbor_visits - rhs.neighbor_visits,
            sample_attempts: self.sample_attempts - rhs.sample_attempts,
        }
    }
}

impl fmt::Display for WorkStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dict={} visits={} samples={} (total {})",
            self.dict_ops,
            self.neighbor_visits,
            self.sample_attempts,
            self.total()
        )
    }
}
