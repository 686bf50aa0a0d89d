//! Virtual (simulated) time.
//!
//! All timing in the runtime is expressed as [`SimTime`], an integer count of
//! microseconds on a monotonic virtual clock. The clock only moves when the
//! runtime advances it, which keeps simulated scans fast and reproducible.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// A point on (or a span of) the virtual clock, in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> SimTime {
        SimTime((secs.max(0.0) * 1e6).round() as u64)
    }

    pub fn from_millis(ms: u64) -> SimTime {
        SimTime(ms * 1000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Shared monotonic virtual clock. Readers may be anywhere; only the runtime
/// advances it.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now_us: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> VirtualClock {
        VirtualClock::default()
    }

    pub fn now(&self) -> SimTime {
        SimTime(self.now_us.load(Ordering::Acquire))
    }

    pub fn advance(&self, dt: SimTime) -> SimTime {
        SimTime(self.now_us.fetch_add(dt.0, Ordering::AcqRel) + dt.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_is_monotone() {
        let clock = VirtualClock::new();
        assert_eq!(clock.now(), SimTime::ZERO);
        clock.advance(SimTime::from_millis(100));
        clock.advance(SimTime::from_secs_f64(1.5));
        assert_eq!(clock.now(), SimTime(1_600_000));
        assert_eq!(clock.now().as_secs_f64(), 1.6);
    }

    #[test]
    fn sub_saturates() {
        assert_eq!(SimTime(5) - SimTime(9), SimTime::ZERO);
    }
}
