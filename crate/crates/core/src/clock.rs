//! Hybrid logical clocks.
//!
//! Timestamps carry a physical component (driven by the simulated clock) and
//! a logical counter, and are compared lexicographically. Every node keeps a
//! cluster time that only moves forward: local ticks advance it strictly, and
//! observing a larger remote value pulls it up.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A hybrid logical clock value, totally ordered by lexicographic comparison.
#[derive(
    Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Ts {
    pub physical: u64,
    pub logical: u64,
}

impl Ts {
    pub const MIN: Ts = Ts { physical: 0, logical: 0 };

    pub fn new(physical: u64, logical: u64) -> Ts {
        Ts { physical, logical }
    }

    /// The largest timestamp strictly smaller than `self` at clock
    /// granularity. Saturates at `Ts::MIN`.
    pub fn predecessor(self) -> Ts {
        if self.logical > 0 {
            Ts { physical: self.physical, logical: self.logical - 1 }
        } else if self.physical > 0 {
            Ts { physical: self.physical - 1, logical: u64::MAX }
        } else {
            Ts::MIN
        }
    }
}

impl fmt::Display for Ts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.physical, self.logical)
    }
}

/// A node's cluster time.
#[derive(Debug, Default, Clone)]
pub struct HlcClock {
    ct: Ts,
}

impl HlcClock {
    pub fn new() -> HlcClock {
        HlcClock { ct: Ts::MIN }
    }

    pub fn now(&self) -> Ts {
        self.ct
    }

    /// Advance the clock for a commit or prepare point and return the new
    /// value. `physical_now` comes from the caller's time source; the result
    /// strictly exceeds the previous cluster time.
    pub fn tick(&mut self, physical_now: u64) -> Ts {
        self.ct = if physical_now > self.ct.physical {
            Ts { physical: physical_now, logical: 0 }
        } else {
            Ts { physical: self.ct.physical, logical: self.ct.logical + 1 }
        };
        self.ct
    }

    /// Merge a cluster time received in a message.
    pub fn observe(&mut self, remote: Ts) {
        if remote > self.ct {
            self.ct = remote;
        }
    }
}
