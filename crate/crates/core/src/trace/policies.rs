use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arena::{Arena, KeyMap};
use super::{Access, Cache, TraceStats, S3_SMALL_FRACTION};
use crate::error::{Error, Result};

const HIT: Access = Access {
    hit: true,
    evicted: None,
};

fn miss(evicted: Option<u64>) -> Access {
    Access {
        hit: false,
        evicted,
    }
}

macro_rules! cache_common {
    () => {
        fn contains(&self, key: u64) -> bool {
            self.arena.get(key).is_some()
        }

        fn len(&self) -> usize {
            self.arena.len()
        }

        fn capacity(&self) -> usize {
            self.capacity
        }

        fn stats(&self) -> &TraceStats {
            &self.stats
        }

        fn reset_stats(&mut self) {
            self.stats = TraceStats::default();
        }
    };
}

/// Insert at head on a miss, evicting the tail when full. Returns the
/// evicted key.
fn insert_evicting_tail(arena: &mut Arena<1>, capacity: usize, key: u64, stats: &mut TraceStats) -> Option<u64> {
    let evicted = if arena.len() >= capacity {
        let t = arena.tail(0).expect("full cache has a tail");
        stats.evictions += 1;
        Some(arena.remove(t))
    } else {
        None
    };
    arena.insert(0, key);
    evicted
}

/// Hits move the item to the head.
#[derive(Debug)]
pub struct LruCache {
    arena: Arena<1>,
    capacity: usize,
    stats: TraceStats,
}

impl LruCache {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            stats: TraceStats::default(),
        }
    }

    /// Keys from most to least recently used.
    pub fn keys(&self) -> Vec<u64> {
        self.arena.keys(0)
    }
}

impl Cache for LruCache {
    fn access(&mut self, key: u64) -> Access {
        if let Some(i) = self.arena.get(key) {
            self.stats.hits += 1;
            self.arena.move_to_head(0, i);
            return HIT;
        }
        self.stats.misses += 1;
        miss(insert_evicting_tail(&mut self.arena, self.capacity, key, &mut self.stats))
    }

    cache_common!();
}

/// Hits leave the list untouched.
#[derive(Debug)]
pub struct FifoCache {
    arena: Arena<1>,
    capacity: usize,
    stats: TraceStats,
}

impl FifoCache {
    pub fn new(capacity: usize) -> Self {
        FifoCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            stats: TraceStats::default(),
        }
    }

    pub fn keys(&self) -> Vec<u64> {
        self.arena.keys(0)
    }
}

impl Cache for FifoCache {
    fn access(&mut self, key: u64) -> Access {
        if self.arena.get(key).is_some() {
            self.stats.hits += 1;
            return HIT;
        }
        self.stats.misses += 1;
        miss(insert_evicting_tail(&mut self.arena, self.capacity, key, &mut self.stats))
    }

    cache_common!();
}

/// A hit is ignored with probability `q`, otherwise handled as in LRU.
#[derive(Debug)]
pub struct ProbLruCache {
    arena: Arena<1>,
    capacity: usize,
    q: f64,
    rng: ChaCha8Rng,
    stats: TraceStats,
}

impl ProbLruCache {
    pub fn new(capacity: usize, q: f64, seed: u64) -> Self {
        ProbLruCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            q,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: TraceStats::default(),
        }
    }

    pub fn keys(&self) -> Vec<u64> {
        self.arena.keys(0)
    }
}

impl Cache for ProbLruCache {
    fn access(&mut self, key: u64) -> Access {
        if let Some(i) = self.arena.get(key) {
            self.stats.hits += 1;
            let skip = self.rng.random::<f64>() < self.q;
            if !skip {
                self.arena.move_to_head(0, i);
            }
            return HIT;
        }
        self.stats.misses += 1;
        miss(insert_evicting_tail(&mut self.arena, self.capacity, key, &mut self.stats))
    }

    cache_common!();
}

/// Hits set a bit in place. An eviction inspects the tail item and up to two
/// predecessors, evicting the first with a clear bit (clearing the bits it
/// passes); if all three are set the fourth item from the tail is evicted
/// regardless of its bit.
#[derive(Debug)]
pub struct ClockCache {
    arena: Arena<1>,
    capacity: usize,
    stats: TraceStats,
}

/// Items the scan may inspect, the last one being evicted unconditionally.
pub const CLOCK_SCAN_LIMIT: usize = 4;

impl ClockCache {
    pub fn new(capacity: usize) -> Self {
        ClockCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            stats: TraceStats::default(),
        }
    }

    /// Keys from head (newest) to tail, with their bits.
    pub fn entries(&self) -> Vec<(u64, bool)> {
        self.arena
            .keys(0)
            .into_iter()
            .map(|k| (k, self.arena.node(self.arena.get(k).unwrap()).bit))
            .collect()
    }

    fn evict(&mut self) -> u64 {
        let mut cand = self.arena.tail(0).expect("full cache has a tail");
        let mut inspected = 0;
        let victim = loop {
            inspected += 1;
            let node = self.arena.node(cand);
            let prev = node.prev;
            if !node.bit || inspected == CLOCK_SCAN_LIMIT || prev == super::arena::NIL {
                break cand;
            }
            self.arena.node_mut(cand).bit = false;
            cand = prev;
        };
        self.stats.evictions += 1;
        self.stats.scan_inspections += inspected as u64;
        self.arena.remove(victim)
    }
}

impl Cache for ClockCache {
    fn access(&mut self, key: u64) -> Access {
        if let Some(i) = self.arena.get(key) {
            self.stats.hits += 1;
            self.arena.node_mut(i).bit = true;
            return HIT;
        }
        self.stats.misses += 1;
        let evicted = if self.arena.len() >= self.capacity {
            Some(self.evict())
        } else {
            None
        };
        self.arena.insert(0, key);
        miss(evicted)
    }

    cache_common!();
}

const T: usize = 0;
const B: usize = 1;

/// Segmented LRU: misses enter the probationary list B, a B-hit promotes to
/// the protected list T, T overflow demotes T's tail to B's head. B holds
/// whatever space T does not use.
#[derive(Debug)]
pub struct SlruCache {
    arena: Arena<2>,
    capacity: usize,
    t_capacity: usize,
    stats: TraceStats,
}

impl SlruCache {
    pub fn new(capacity: usize, protected: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&protected) {
            return Err(Error::InvalidConfig(format!(
                "SLRU protected fraction {protected} outside [0, 1)"
            )));
        }
        let t_capacity = ((protected * capacity as f64).floor() as usize).min(capacity - 1);
        Ok(SlruCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            t_capacity,
            stats: TraceStats::default(),
        })
    }

    pub fn protected_capacity(&self) -> usize {
        self.t_capacity
    }

    pub fn protected_keys(&self) -> Vec<u64> {
        self.arena.keys(T)
    }

    pub fn probationary_keys(&self) -> Vec<u64> {
        self.arena.keys(B)
    }
}

impl Cache for SlruCache {
    fn access(&mut self, key: u64) -> Access {
        if let Some(i) = self.arena.get(key) {
            self.stats.hits += 1;
            if self.arena.node(i).list as usize == T {
                self.stats.t_hits += 1;
                self.arena.move_to_head(T, i);
            } else if self.t_capacity == 0 {
                self.arena.move_to_head(B, i);
            } else {
                self.arena.move_to_head(T, i);
                if self.arena.list_len(T) > self.t_capacity {
                    let t = self.arena.tail(T).expect("overfull T has a tail");
                    self.arena.move_to_head(B, t);
                }
            }
            return HIT;
        }
        self.stats.misses += 1;
        self.arena.insert(B, key);
        let evicted = if self.arena.len() > self.capacity {
            let t = self.arena.tail(B).expect("B holds the new item");
            self.stats.evictions += 1;
            Some(self.arena.remove(t))
        } else {
            None
        };
        miss(evicted)
    }

    cache_common!();
}

const S: usize = 0;
const M: usize = 1;

/// Small and Main FIFO lists with reference bits and a ghost of recent
/// misses. A miss seen within the last `|Main|` misses goes to Main, others
/// to Small. Small's tail moves to Main iff its bit is set; Main evicts its
/// tail. While Main still has room, Small's overflow fills it.
#[derive(Debug)]
pub struct S3FifoCache {
    arena: Arena<2>,
    capacity: usize,
    s_capacity: usize,
    m_capacity: usize,
    ghost: VecDeque<u64>,
    ghost_count: KeyMap<u32>,
    stats: TraceStats,
}

impl S3FifoCache {
    pub fn new(capacity: usize) -> Self {
        let s_capacity = ((capacity as f64 * S3_SMALL_FRACTION).floor() as usize).max(1);
        S3FifoCache {
            arena: Arena::with_capacity(capacity),
            capacity,
            s_capacity,
            m_capacity: capacity - s_capacity,
            ghost: VecDeque::with_capacity(capacity + 1),
            ghost_count: KeyMap::default(),
            stats: TraceStats::default(),
        }
    }

    pub fn small_capacity(&self) -> usize {
        self.s_capacity
    }

    pub fn small_keys(&self) -> Vec<u64> {
        self.arena.keys(S)
    }

    pub fn main_keys(&self) -> Vec<u64> {
        self.arena.keys(M)
    }

    pub fn ghost_len(&self) -> usize {
        self.ghost.len()
    }

    pub fn in_ghost(&self, key: u64) -> bool {
        self.ghost_count.contains_key(&key)
    }

    fn enforce_main(&mut self) -> Option<u64> {
        if self.arena.list_len(M) <= self.m_capacity {
            return None;
        }
        let t = self.arena.tail(M).expect("overfull Main has a tail");
        self.stats.evictions += 1;
        Some(self.arena.remove(t))
    }

    fn enforce_small(&mut self) -> Option<u64> {
        if self.arena.list_len(S) <= self.s_capacity {
            return None;
        }
        let t = self.arena.tail(S).expect("overfull Small has a tail");
        self.stats.small_tail_events += 1;
        if self.arena.node(t).bit {
            self.stats.small_tail_promotions += 1;
            self.arena.node_mut(t).bit = false;
            self.arena.move_to_head(M, t);
            self.enforce_main()
        } else if self.arena.list_len(M) < self.m_capacity {
            self.arena.move_to_head(M, t);
            None
        } else {
            self.stats.evictions += 1;
            Some(self.arena.remove(t))
        }
    }

    fn remember_miss(&mut self, key: u64) {
        self.ghost.push_back(key);
        *self.ghost_count.entry(key).or_insert(0) += 1;
        let x = self.arena.list_len(M);
        while self.ghost.len() > x {
            let old = self.ghost.pop_front().expect("non-empty ghost");
            match self.ghost_count.get_mut(&old) {
                Some(c) if *c > 1 => *c -= 1,
                _ => {
                    self.ghost_count.remove(&old);
                }
            }
        }
    }
}

impl Cache for S3FifoCache {
    fn access(&mut self, key: u64) -> Access {
        if let Some(i) = self.arena.get(key) {
            self.stats.hits += 1;
            self.arena.node_mut(i).bit = true;
            return HIT;
        }
        self.stats.misses += 1;
        let to_main = self.in_ghost(key);
        let evicted = if to_main {
            self.stats.main_admits += 1;
            self.arena.insert(M, key);
            self.enforce_main()
        } else {
            self.arena.insert(S, key);
            self.enforce_small()
        };
        self.remember_miss(key);
        miss(evicted)
    }

    cache_common!();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay(c: &mut dyn Cache, keys: &[u64]) -> Vec<Option<u64>> {
        keys.iter().map(|&k| c.access(k).evicted).collect()
    }

    #[test]
    fn lru_order_and_eviction() {
        let mut c = LruCache::new(3);
        replay(&mut c, &[1, 2, 3, 1]);
        assert_eq!(c.keys(), vec![1, 3, 2]);
        assert_eq!(c.access(4).evicted, Some(2));
        assert_eq!(c.stats().hits, 1);
    }

    #[test]
    fn fifo_ignores_hits() {
        let mut c = FifoCache::new(3);
        replay(&mut c, &[1, 2, 3, 1]);
        assert_eq!(c.access(4).evicted, Some(1));
    }

    #[test]
    fn lru_beats_fifo_on_reuse_loop() {
        // A,B,A,C,A,D,...: A is reused between every new key.
        let trace: Vec<u64> = (1..200).flat_map(|k| [0, k]).collect();
        let mut l = LruCache::new(2);
        let mut f = FifoCache::new(2);
        replay(&mut l, &trace);
        replay(&mut f, &trace);
        assert!(l.stats().hit_ratio() >= f.stats().hit_ratio());
        assert!(l.stats().hit_ratio() > 0.49);
    }

    #[test]
    fn clock_scan_rule() {
        let mut c = ClockCache::new(4);
        replay(&mut c, &[1, 2, 3, 4]);
        // list head..tail: 4 3 2 1; set bits on 1 and 2
        c.access(1);
        c.access(2);
        // tail 1 (bit) -> 2 (bit) -> 3 (clear): evict 3, positions kept
        assert_eq!(c.access(5).evicted, Some(3));
        assert_eq!(c.entries(), vec![(5, false), (4, false), (2, false), (1, false)]);
        assert_eq!(c.stats().scan_inspections, 3);
        // all four set: force-evict the fourth from the tail
        for k in [5, 4, 2, 1] {
            c.access(k);
        }
        assert_eq!(c.access(6).evicted, Some(5));
        assert_eq!(c.stats().mean_scan_depth(), 3.5);
    }

    #[test]
    fn clock_small_capacity_evicts_last_candidate() {
        let mut c = ClockCache::new(2);
        replay(&mut c, &[1, 2, 1, 2]);
        assert_eq!(c.access(3).evicted, Some(2));
        let mut c = ClockCache::new(1);
        replay(&mut c, &[1, 1]);
        assert_eq!(c.access(2).evicted, Some(1));
    }

    #[test]
    fn prob_lru_extremes() {
        let trace = [1, 2, 3, 1, 4, 2, 5, 1, 3, 6, 1, 2];
        let mut lru = LruCache::new(3);
        let mut p0 = ProbLruCache::new(3, 0.0, 9);
        assert_eq!(replay(&mut lru, &trace), replay(&mut p0, &trace));
        let mut fifo = FifoCache::new(3);
        let mut p1 = ProbLruCache::new(3, 1.0, 9);
        assert_eq!(replay(&mut fifo, &trace), replay(&mut p1, &trace));
    }

    #[test]
    fn slru_promotion_and_demotion() {
        let mut c = SlruCache::new(5, 0.4).unwrap();
        assert_eq!(c.protected_capacity(), 2);
        replay(&mut c, &[1, 2, 3]);
        c.access(1);
        c.access(2);
        assert_eq!(c.protected_keys(), vec![2, 1]);
        c.access(3); // T overflow demotes 1
        assert_eq!(c.protected_keys(), vec![3, 2]);
        assert_eq!(c.probationary_keys(), vec![1]);
        c.access(2);
        assert_eq!(c.stats().t_hits, 1);
        replay(&mut c, &[4, 5, 6]);
        assert_eq!(c.len(), 5);
        assert!(!c.contains(1));
    }

    #[test]
    fn slru_without_protected_list() {
        let mut c = SlruCache::new(4, 0.0).unwrap();
        replay(&mut c, &[1, 2, 1, 2, 3, 1]);
        assert_eq!(c.stats().t_fraction(), 0.0);
        assert!(c.protected_keys().is_empty());
        assert!(SlruCache::new(4, 1.0).is_err());
    }

    #[test]
    fn s3fifo_ghost_admission() {
        let mut c = S3FifoCache::new(10);
        assert_eq!(c.small_capacity(), 1);
        // fill: Small overflow fills Main while it has room
        replay(&mut c, &(0..10).collect::<Vec<_>>());
        assert_eq!(c.len(), 10);
        assert_eq!(c.small_keys(), vec![9]);
        // 10 is new; 9 leaves Small with a clear bit and is evicted
        assert_eq!(c.access(10).evicted, Some(9));
        assert!(c.in_ghost(9));
        // 9 missed recently: admitted to Main, Main tail 0 evicted
        assert_eq!(c.access(9).evicted, Some(0));
        assert_eq!(c.main_keys()[0], 9);
        assert_eq!(c.stats().main_admits, 1);
    }

    #[test]
    fn s3fifo_bit_promotes_from_small() {
        let mut c = S3FifoCache::new(10);
        replay(&mut c, &(0..10).collect::<Vec<_>>());
        c.access(9); // hit in Small sets the bit
        assert_eq!(c.access(100).evicted, Some(0));
        assert_eq!(c.main_keys()[0], 9);
        assert_eq!(c.stats().small_tail_promotions, 1);
    }

    #[test]
    fn s3fifo_unique_keys_never_reach_main_by_ghost() {
        let mut c = S3FifoCache::new(20);
        replay(&mut c, &(0..20).collect::<Vec<_>>());
        c.reset_stats();
        replay(&mut c, &(100..5000).collect::<Vec<_>>());
        assert_eq!(c.stats().p_ghost(), 0.0);
        assert_eq!(c.stats().p_m(), 0.0);
    }
}
