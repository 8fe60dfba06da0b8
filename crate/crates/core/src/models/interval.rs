//! Per-feature value intervals, from tree paths or from explanations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A closed value range `[lo, hi]`; either bound may be infinite.
/// Serialized as `[lo, hi]` with infinite bounds encoded as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "IntervalWire", into = "IntervalWire")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Serialize, Deserialize)]
struct IntervalWire(Option<f64>, Option<f64>);

impl From<IntervalWire> for Interval {
    fn from(w: IntervalWire) -> Interval {
        Interval {
            lo: w.0.unwrap_or(f64::NEG_INFINITY),
            hi: w.1.unwrap_or(f64::INFINITY),
        }
    }
}

impl From<Interval> for IntervalWire {
    fn from(iv: Interval) -> IntervalWire {
        IntervalWire(
            iv.lo.is_finite().then_some(iv.lo),
            iv.hi.is_finite().then_some(iv.hi),
        )
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn full() -> Interval {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn point(v: f64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }

    /// Intersection; empty intersections collapse to the tighter bound pair
    /// (callers treat `lo > hi` as empty).
    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }
}

/// Map feature index -> value interval.
pub type FeatureIntervalMap = BTreeMap<usize, Interval>;
