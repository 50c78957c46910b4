//! Trace-level eviction policies, Zipf workloads, capacity calibration and
//! estimation of the fractions the queueing models consume.

mod arena;
mod estimate;
mod policies;
mod workload;

use std::fmt;

use crate::error::{Error, Result};
use crate::policy::Policy;

pub use estimate::{
    calibrate_capacity, clock_scan_profile, estimate_s3fifo_params, estimate_slru_t_fraction,
    measure_hit_ratio, read_fraction_table, write_fraction_table, Calibration, FractionTable,
    LabConfig, TableKind,
};
pub use policies::{ClockCache, FifoCache, LruCache, ProbLruCache, S3FifoCache, SlruCache};
pub use workload::{read_trace, write_trace, zipf_trace, Workload};

/// Default protected share of an SLRU cache.
pub const SLRU_PROTECTED_FRACTION: f64 = 0.8;
/// Small-list share of an S3-FIFO cache.
pub const S3_SMALL_FRACTION: f64 = 0.1;

/// Outcome of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub hit: bool,
    /// Key removed from the cache by this request, if any.
    pub evicted: Option<u64>,
}

/// Counters accumulated since the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceStats {
    pub hits: u64,
    pub misses: u64,
    /// SLRU: hits found on the protected list.
    pub t_hits: u64,
    /// S3-FIFO: misses the ghost admitted straight to Main.
    pub main_admits: u64,
    /// S3-FIFO: items leaving the Small tail.
    pub small_tail_events: u64,
    /// S3-FIFO: Small-tail items carrying a set bit (moved to Main).
    pub small_tail_promotions: u64,
    pub evictions: u64,
    /// CLOCK: bits inspected by eviction scans.
    pub scan_inspections: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl TraceStats {
    pub fn requests(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_ratio(&self) -> f64 {
        ratio(self.hits, self.requests())
    }

    pub fn t_fraction(&self) -> f64 {
        ratio(self.t_hits, self.hits)
    }

    pub fn p_ghost(&self) -> f64 {
        ratio(self.main_admits, self.misses)
    }

    pub fn p_m(&self) -> f64 {
        ratio(self.small_tail_promotions, self.small_tail_events)
    }

    pub fn mean_scan_depth(&self) -> f64 {
        ratio(self.scan_inspections, self.evictions)
    }
}

/// A fixed-capacity cache of `u64` keys.
pub trait Cache: Send {
    fn access(&mut self, key: u64) -> Access;
    fn contains(&self, key: u64) -> bool;
    fn len(&self) -> usize;
    fn capacity(&self) -> usize;
    fn stats(&self) -> &TraceStats;
    fn reset_stats(&mut self);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_full(&self) -> bool {
        self.len() >= self.capacity()
    }
}

/// Trace-level policy selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TracePolicy {
    Lru,
    Fifo,
    ProbLru { q: f64 },
    Clock,
    Slru { protected: f64 },
    S3Fifo,
}

impl TracePolicy {
    pub fn min_capacity(&self) -> usize {
        match self {
            TracePolicy::S3Fifo => 10,
            TracePolicy::Slru { protected } if *protected > 0.0 => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TracePolicy::Lru => "LRU",
            TracePolicy::Fifo => "FIFO",
            TracePolicy::ProbLru { .. } => "ProbLRU",
            TracePolicy::Clock => "CLOCK",
            TracePolicy::Slru { .. } => "SLRU",
            TracePolicy::S3Fifo => "S3-FIFO",
        }
    }

    /// A fresh, empty cache. `seed` drives ProbLRU's coin.
    pub fn build(&self, capacity: usize, seed: u64) -> Result<Box<dyn Cache>> {
        let minimum = self.min_capacity();
        if capacity < minimum {
            return Err(Error::CapacityTooSmall {
                policy: self.name(),
                capacity,
                minimum,
            });
        }
        Ok(match *self {
            TracePolicy::Lru => Box::new(LruCache::new(capacity)),
            TracePolicy::Fifo => Box::new(FifoCache::new(capacity)),
            TracePolicy::ProbLru { q } => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidConfig(format!("ProbLRU q={q} outside [0, 1]")));
                }
                Box::new(ProbLruCache::new(capacity, q, seed))
            }
            TracePolicy::Clock => Box::new(ClockCache::new(capacity)),
            TracePolicy::Slru { protected } => Box::new(SlruCache::new(capacity, protected)?),
            TracePolicy::S3Fifo => Box::new(S3FifoCache::new(capacity)),
        })
    }
}

impl From<&Policy> for TracePolicy {
    fn from(p: &Policy) -> Self {
        match p {
            Policy::Lru => TracePolicy::Lru,
            Policy::Fifo => TracePolicy::Fifo,
            Policy::ProbLru { q } => TracePolicy::ProbLru { q: *q },
            Policy::Clock => TracePolicy::Clock,
            Policy::Slru { .. } => TracePolicy::Slru {
                protected: SLRU_PROTECTED_FRACTION,
            },
            Policy::S3Fifo { .. } => TracePolicy::S3Fifo,
        }
    }
}

impl fmt::Display for TracePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TracePolicy::ProbLru { q } => write!(f, "ProbLRU(q={q})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Replay `trace` on a cold cache and return the counters.
pub fn run_policy(policy: TracePolicy, capacity: usize, trace: &[u64]) -> Result<TraceStats> {
    run_policy_seeded(policy, capacity, trace, 0)
}

pub fn run_policy_seeded(
    policy: TracePolicy,
    capacity: usize,
    trace: &[u64],
    seed: u64,
) -> Result<TraceStats> {
    let mut cache = policy.build(capacity, seed)?;
    for &k in trace {
        cache.access(k);
    }
    Ok(*cache.stats())
}

/// Keys evicted while replaying `trace` on a cold cache, in order.
pub fn eviction_sequence(
    policy: TracePolicy,
    capacity: usize,
    trace: &[u64],
    seed: u64,
) -> Result<Vec<u64>> {
    let mut cache = policy.build(capacity, seed)?;
    Ok(trace.iter().filter_map(|&k| cache.access(k).evicted).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_ratios() {
        let s = TraceStats {
            hits: 3,
            misses: 1,
            t_hits: 1,
            ..Default::default()
        };
        assert_eq!(s.hit_ratio(), 0.75);
        assert!((s.t_fraction() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.p_ghost(), 0.0);
        assert_eq!(TraceStats::default().hit_ratio(), 0.0);
    }

    #[test]
    fn minimum_capacities() {
        assert!(matches!(
            TracePolicy::S3Fifo.build(9, 0),
            Err(Error::CapacityTooSmall { minimum: 10, .. })
        ));
        assert!(TracePolicy::S3Fifo.build(10, 0).is_ok());
        assert!(TracePolicy::Lru.build(0, 0).is_err());
        assert!(TracePolicy::ProbLru { q: 1.5 }.build(4, 0).is_err());
    }

    #[test]
    fn policy_mapping() {
        assert_eq!(
            TracePolicy::from(&Policy::Slru { t_fraction: None }),
            TracePolicy::Slru { protected: 0.8 }
        );
        assert_eq!(TracePolicy::from(&Policy::ProbLru { q: 0.5 }).to_string(), "ProbLRU(q=0.5)");
    }
}
