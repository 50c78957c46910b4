use std::fmt::Write as _;
use std::hint::{black_box, spin_loop};
use std::io::Read;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use dashmap::DashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::list::ConcurrentList;
use super::BLOCK_SIZE;
use crate::error::{Error, Result};
use crate::policy::{clock_g, ClockOps, ListOps, ServiceParams};

/// Busy-wait for `latency_us` µs and return the time actually spent.
pub fn emulate_disk(latency_us: f64) -> Duration {
    let start = Instant::now();
    if latency_us.is_nan() || latency_us <= 0.0 {
        return start.elapsed();
    }
    let target = Duration::from_secs_f64(latency_us * 1e-6);
    loop {
        let e = start.elapsed();
        if e >= target {
            return e;
        }
        spin_loop();
    }
}

/// Smallest nonzero step observed between consecutive clock reads.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1_000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Per-operation service means measured on this machine, µs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedProfile {
    /// Index probe plus the 4KB block copy.
    pub lookup: f64,
    pub delink: f64,
    pub head: f64,
    pub tail: f64,
    /// CLOCK tail update with every inspected bit clear.
    pub clock_tail_base: f64,
    /// Coefficient of `g(p_hit)` in the CLOCK tail mean.
    pub clock_tail_scan: f64,
    pub workers: usize,
    pub method: String,
}

pub const FLOOD_METHOD: &str = "flood-interdeparture";

impl CalibratedProfile {
    fn validate(&self) -> Result<()> {
        let means = [
            self.lookup,
            self.delink,
            self.head,
            self.tail,
            self.clock_tail_base,
        ];
        if means.iter().any(|m| !(m.is_finite() && *m > 0.0)) || self.clock_tail_scan < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "calibrated means must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Service parameters for the queueing models, with `disk` µs.
    pub fn service_params(&self, disk: f64) -> ServiceParams {
        let ops = ListOps {
            delink: self.delink,
            head: self.head,
            tail: Some(self.tail),
        };
        ServiceParams {
            lookup: self.lookup,
            disk,
            lru: ops,
            fifo: ops,
            clock: ClockOps {
                head: self.head,
                tail_base: self.clock_tail_base,
                tail_scan: self.clock_tail_scan,
            },
            ..ServiceParams::default()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method={}", self.method);
        let _ = writeln!(s, "workers={}", self.workers);
        for (k, v) in [
            ("lookup", self.lookup),
            ("delink", self.delink),
            ("head", self.head),
            ("tail", self.tail),
            ("clock_tail_base", self.clock_tail_base),
            ("clock_tail_scan", self.clock_tail_scan),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = CalibratedProfile {
            lookup: f64::NAN,
            delink: f64::NAN,
            head: f64::NAN,
            tail: f64::NAN,
            clock_tail_base: f64::NAN,
            clock_tail_scan: f64::NAN,
            workers: 0,
            method: String::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("profile line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("profile line {}: bad number `{v}`", n + 1)))
            };
            match k {
                "method" => p.method = v.to_string(),
                "workers" => {
                    p.workers = v
                        .parse()
                        .map_err(|_| Error::Parse(format!("profile line {}: bad count", n + 1)))?
                }
                "lookup" => p.lookup = num()?,
                "delink" => p.delink = num()?,
                "head" => p.head = num()?,
                "tail" => p.tail = num()?,
                "clock_tail_base" => p.clock_tail_base = num()?,
                "clock_tail_scan" => p.clock_tail_scan = num()?,
                other => return Err(Error::Parse(format!("unknown profile key `{other}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut s = String::new();
        input.read_to_string(&mut s)?;
        Self::from_text(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub workers: usize,
    /// Operations each worker issues per flood.
    pub ops_per_worker: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            workers: super::default_workers(),
            ops_per_worker: 20_000,
            seed: 1,
        }
    }
}

/// Run `op(worker, i)` for `i in 0..per_worker` on every worker at once and
/// return the mean inter-departure time in µs.
fn flood<F>(workers: usize, per_worker: usize, op: F) -> f64
where
    F: Fn(usize, usize) + Send + Sync + 'static,
{
    let op = Arc::new(op);
    let barrier = Arc::new(Barrier::new(workers));
    // workers stamp their own start and end: with few CPUs a coordinating
    // thread may not run again until the flood is over
    let handles: Vec<_> = (0..workers)
        .map(|w| {
            let op = Arc::clone(&op);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || {
                barrier.wait();
                let start = Instant::now();
                for i in 0..per_worker {
                    op(w, i);
                }
                (start, Instant::now())
            })
        })
        .collect();
    let spans: Vec<(Instant, Instant)> = handles
        .into_iter()
        .map(|h| h.join().expect("flood worker panicked"))
        .collect();
    let start = spans.iter().map(|s| s.0).min().expect("at least one worker");
    let end = spans.iter().map(|s| s.1).max().expect("at least one worker");
    let elapsed = (end - start).as_secs_f64() * 1e6;
    elapsed / (workers * per_worker) as f64
}

fn filled(n: usize) -> Arc<ConcurrentList> {
    let l = Arc::new(ConcurrentList::new(n));
    for s in 0..n as u32 {
        l.push_head(s);
    }
    l
}

fn clock_flood(workers: usize, per: usize, bits: bool) -> f64 {
    // an all-set list is evicted in a 4,1,1,1 depth pattern
    let l = filled(workers * per + 4);
    for s in 0..l.slots() as u32 {
        l.set_bit(s, bits);
    }
    flood(workers, per, move |_, _| {
        black_box(l.clock_evict());
    })
}

/// Flood each list operation in turn and report the mean inter-departure
/// times. The CLOCK scan coefficient maps the cost of three extra
/// inspections onto `g(1) - g(0)`.
pub fn calibrate(config: &CalibrationConfig) -> Result<CalibratedProfile> {
    let workers = config.workers.max(1);
    let per = config.ops_per_worker.max(1);
    let total = workers * per;

    let head = {
        let l = Arc::new(ConcurrentList::new(total));
        flood(workers, per, move |w, i| l.push_head((w * per + i) as u32))
    };
    let tail = {
        let l = filled(total);
        flood(workers, per, move |_, _| {
            black_box(l.pop_tail());
        })
    };
    let delink = {
        let l = filled(total);
        // each worker delinks only its own slots
        flood(workers, per, move |w, i| {
            black_box(l.delink((w * per + i) as u32));
        })
    };
    let t0 = clock_flood(workers, per, false);
    let t_mixed = clock_flood(workers, per, true);
    // mixed pattern averages 1.75 inspections per eviction
    let per_inspection = ((t_mixed - t0) / 0.75).max(0.0);
    let clock_tail_scan = 3.0 * per_inspection / (clock_g(1.0) - clock_g(0.0));
    let clock_tail_base = (t0 - clock_tail_scan * clock_g(0.0)).max(t0 * 0.5);

    let lookup = lookup_cost(config.seed);

    let resolution = timer_resolution().as_secs_f64() * 1e6;
    for (name, mean) in [("delink", delink), ("head", head), ("tail", tail)] {
        if resolution >= 3.0 * mean {
            return Err(Error::TimerResolution(format!(
                "{name} mean {mean:.4} µs against a {resolution:.4} µs clock"
            )));
        }
    }
    let p = CalibratedProfile {
        lookup,
        delink,
        head,
        tail,
        clock_tail_base,
        clock_tail_scan,
        workers,
        method: FLOOD_METHOD.to_string(),
    };
    p.validate()?;
    Ok(p)
}

/// Mean cost of one index probe plus a 4KB block copy, single-threaded.
fn lookup_cost(seed: u64) -> f64 {
    const KEYS: u64 = 10_000;
    const ROUNDS: usize = 200_000;
    let index: DashMap<u64, u32> = (0..KEYS).map(|k| (k, k as u32)).collect();
    let pool = vec![7u8; BLOCK_SIZE * 16];
    let mut buf = vec![0u8; BLOCK_SIZE];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u64> = (0..ROUNDS).map(|_| rng.random_range(0..KEYS)).collect();
    let start = Instant::now();
    for k in keys {
        let slot = index.get(&k).map(|v| *v).unwrap_or(0) as usize % 16;
        buf.copy_from_slice(&pool[slot * BLOCK_SIZE..(slot + 1) * BLOCK_SIZE]);
        black_box(&buf);
    }
    start.elapsed().as_secs_f64() * 1e6 / ROUNDS as f64
}

/// Whether every mean in `a` is within `rel` of the matching mean in `b`.
pub fn profiles_agree(a: &CalibratedProfile, b: &CalibratedProfile, rel: f64) -> bool {
    [
        (a.lookup, b.lookup),
        (a.delink, b.delink),
        (a.head, b.head),
        (a.tail, b.tail),
    ]
    .iter()
    .all(|(x, y)| (x - y).abs() <= rel * x.max(*y))
}

/// Median of `emulate_disk(latency_us)` over `samples` calls, µs.
pub fn disk_median(latency_us: f64, samples: usize) -> f64 {
    let mut v: Vec<f64> = (0..samples)
        .map(|_| emulate_disk(latency_us).as_secs_f64() * 1e6)
        .collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_emulation() {
        assert!(emulate_disk(0.0) < Duration::from_micros(50));
        let m = disk_median(100.0, 2_000);
        assert!((95.0..=105.0).contains(&m), "{m}");
        let m = disk_median(5.0, 2_000);
        assert!((4.75..=5.25).contains(&m), "{m}");
    }

    #[test]
    fn calibration_is_sane() {
        let p = calibrate(&CalibrationConfig {
            workers: 2,
            ops_per_worker: 5_000,
            seed: 3,
        })
        .unwrap();
        for m in [p.lookup, p.delink, p.head, p.tail, p.clock_tail_base] {
            assert!(m > 0.0 && m < 100.0, "{p:?}");
        }
        let params = p.service_params(100.0);
        assert_eq!(params.lru.tail, Some(p.tail));
        assert_eq!(params.disk, 100.0);
    }

    #[test]
    fn profile_round_trip() {
        let p = CalibratedProfile {
            lookup: 0.51,
            delink: 0.7,
            head: 0.59,
            tail: 0.4,
            clock_tail_base: 0.65,
            clock_tail_scan: 0.3,
            workers: 8,
            method: FLOOD_METHOD.into(),
        };
        let back = CalibratedProfile::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(profiles_agree(&p, &back, 0.0));
        assert!(CalibratedProfile::from_text("lookup=1\n").is_err());
        assert!(CalibratedProfile::from_text("bogus=1\n").is_err());
    }
}
