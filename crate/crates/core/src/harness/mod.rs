//! A concurrent in-memory cache driven by a closed loop of worker threads,
//! with emulated disk latency and calibration of the list-operation means.

mod calibrate;
mod list;

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};
use crate::policy::{Policy, DEFAULT_MPL};
use crate::sim::mean_ci95;
use crate::trace::{calibrate_capacity, LabConfig, TracePolicy, Workload};

pub use calibrate::{
    calibrate, disk_median, emulate_disk, profiles_agree, timer_resolution, CalibratedProfile,
    CalibrationConfig, FLOOD_METHOD,
};
pub use list::ConcurrentList;

/// Bytes copied per request.
pub const BLOCK_SIZE: usize = 4096;
/// Distinct data blocks backing the cache slots.
const POOL_BLOCKS: usize = 256;
/// Index value of a key whose miss is still being served.
const CLAIMED: u32 = u32::MAX;

const WARMUP: u8 = 0;
const MEASURE: u8 = 1;
const STOP: u8 = 2;

/// Hardware threads available to this process.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchPolicy {
    Lru,
    Fifo,
    ProbLru { q: f64 },
    Clock,
}

impl TryFrom<&Policy> for BenchPolicy {
    type Error = Error;

    fn try_from(p: &Policy) -> Result<Self> {
        match p {
            Policy::Lru => Ok(BenchPolicy::Lru),
            Policy::Fifo => Ok(BenchPolicy::Fifo),
            Policy::ProbLru { q } => Ok(BenchPolicy::ProbLru { q: *q }),
            Policy::Clock => Ok(BenchPolicy::Clock),
            other => Err(Error::UnsupportedPolicy(format!(
                "{other} has no bench implementation"
            ))),
        }
    }
}

impl fmt::Display for BenchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchPolicy::Lru => f.write_str("LRU"),
            BenchPolicy::Fifo => f.write_str("FIFO"),
            BenchPolicy::ProbLru { q } => write!(f, "ProbLRU(q={q})"),
            BenchPolicy::Clock => f.write_str("CLOCK"),
        }
    }
}

/// Where hits and misses come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchMode {
    /// Each request hits with probability `p_hit`; misses bring in a fresh key.
    Bernoulli { p_hit: f64 },
    /// Requests draw Zipf keys against a cache of `capacity` items.
    Trace { workload: Workload, capacity: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub policy: BenchPolicy,
    pub workers: usize,
    pub mode: BenchMode,
    pub disk_us: f64,
    pub warmup: Duration,
    pub duration: Duration,
    pub runs: u32,
    /// Items in the cache (Bernoulli mode).
    pub capacity: usize,
    pub seed: u64,
    /// Pin worker `i` to CPU `i` when there are enough CPUs.
    pub pin: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            policy: BenchPolicy::Lru,
            workers: DEFAULT_MPL as usize,
            mode: BenchMode::Bernoulli { p_hit: 0.9 },
            disk_us: 100.0,
            warmup: Duration::from_secs(5),
            duration: Duration::from_secs(10),
            runs: 20,
            capacity: 10_000,
            seed: 1,
            pin: true,
        }
    }
}

impl BenchConfig {
    fn capacity(&self) -> usize {
        match self.mode {
            BenchMode::Bernoulli { .. } => self.capacity,
            BenchMode::Trace { capacity, .. } => capacity,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.runs == 0 {
            return Err(Error::InvalidConfig("workers and runs must be >= 1".into()));
        }
        if !(self.disk_us.is_finite() && self.disk_us >= 0.0) {
            return Err(Error::InvalidConfig("disk latency must be >= 0".into()));
        }
        if let BenchMode::Bernoulli { p_hit } = self.mode {
            if !(0.0..=1.0).contains(&p_hit) {
                return Err(Error::HitRatioOutOfRange(p_hit));
            }
        }
        if let BenchPolicy::ProbLru { q } = self.policy {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidConfig(format!("ProbLRU q={q} outside [0, 1]")));
            }
        }
        // every worker may hold one node off the list at a time
        let minimum = 2 * self.workers + 4;
        if self.capacity() < minimum {
            return Err(Error::CapacityTooSmall {
                policy: "bench",
                capacity: self.capacity(),
                minimum,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunResult {
    pub run: u32,
    pub throughput_rps: f64,
    pub hit_ratio: f64,
    pub requests: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub runs: Vec<RunResult>,
    pub mean_rps: f64,
    /// Student-t 95% half-width over runs; 0 for a single run.
    pub ci_half_rps: f64,
    pub hit_ratio: f64,
}

impl BenchResult {
    /// Hit ratio written to CSV: the target in Bernoulli mode, else achieved.
    pub fn p_hit(&self) -> f64 {
        match self.config.mode {
            BenchMode::Bernoulli { p_hit } => p_hit,
            BenchMode::Trace { .. } => self.hit_ratio,
        }
    }
}

struct Shared {
    list: ConcurrentList,
    index: DashMap<u64, u32>,
    pool: Vec<u8>,
    phase: AtomicU8,
}

impl Shared {
    fn new(capacity: usize) -> Self {
        let list = ConcurrentList::new(capacity);
        let index = DashMap::with_capacity(capacity * 2);
        for s in 0..capacity as u32 {
            list.set_key(s, u64::from(s));
            index.insert(u64::from(s), s);
            list.push_head(s);
        }
        Shared {
            list,
            index,
            pool: (0..BLOCK_SIZE * POOL_BLOCKS).map(|i| (i % 251) as u8).collect(),
            phase: AtomicU8::new(WARMUP),
        }
    }

    fn block(&self, slot: u32) -> &[u8] {
        let b = slot as usize % POOL_BLOCKS;
        &self.pool[b * BLOCK_SIZE..(b + 1) * BLOCK_SIZE]
    }
}

/// Consistency of the index and the list once all workers have stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub capacity: usize,
    pub list_len: usize,
    pub index_len: usize,
    pub duplicates: usize,
    pub mismatched: usize,
    pub links_ok: bool,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.list_len == self.capacity
            && self.index_len == self.capacity
            && self.duplicates == 0
            && self.mismatched == 0
            && self.links_ok
    }
}

fn audit(shared: &Shared) -> AuditReport {
    let snap = shared.list.snapshot();
    let mut seen = vec![false; shared.list.slots()];
    let mut duplicates = 0;
    let mut mismatched = 0;
    for &s in &snap {
        if std::mem::replace(&mut seen[s as usize], true) {
            duplicates += 1;
        }
        let key = shared.list.key(s);
        if shared.index.get(&key).map(|v| *v) != Some(s) {
            mismatched += 1;
        }
    }
    AuditReport {
        capacity: shared.list.slots(),
        list_len: snap.len(),
        index_len: shared.index.len(),
        duplicates,
        mismatched,
        links_ok: shared.list.links_consistent(),
    }
}

#[cfg(target_os = "linux")]
fn pin_to_cpu(cpu: usize) -> bool {
    // SAFETY: cpu_set_t is plain data; the set is fully initialized by
    // CPU_ZERO before use and only passed by reference to the syscall.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(cpu, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_to_cpu(_cpu: usize) -> bool {
    false
}

#[derive(Default)]
struct Counts {
    requests: u64,
    hits: u64,
}

struct Worker<'a> {
    shared: &'a Shared,
    config: &'a BenchConfig,
    rng: ChaCha8Rng,
    buf: Vec<u8>,
    fresh: u64,
}

impl Worker<'_> {
    fn hit(&mut self, slot: u32) {
        let list = &self.shared.list;
        match self.config.policy {
            BenchPolicy::Fifo => {}
            BenchPolicy::Clock => list.set_bit(slot, true),
            BenchPolicy::Lru => {
                if list.delink(slot) {
                    list.push_head(slot);
                }
            }
            BenchPolicy::ProbLru { q } => {
                if self.rng.random::<f64>() >= q && list.delink(slot) {
                    list.push_head(slot);
                }
            }
        }
    }

    /// Evict a victim and reuse its node for `key`.
    fn insert(&mut self, key: u64) {
        let list = &self.shared.list;
        let victim = loop {
            let v = match self.config.policy {
                BenchPolicy::Clock => list.clock_evict().map(|(s, _)| s),
                _ => list.pop_tail(),
            };
            if let Some(v) = v {
                break v;
            }
            std::hint::spin_loop();
        };
        let old = list.key(victim);
        self.shared.index.remove(&old);
        list.set_key(victim, key);
        list.set_bit(victim, false);
        self.shared.index.insert(key, victim);
        list.push_head(victim);
    }

    fn copy(&mut self, slot: u32) {
        self.buf.copy_from_slice(self.shared.block(slot));
        black_box(&self.buf);
    }

    /// One request; returns whether it hit.
    fn request(&mut self, zipf: Option<&Zipf<f64>>) -> bool {
        let shared = self.shared;
        match self.config.mode {
            BenchMode::Bernoulli { p_hit } => {
                if self.rng.random::<f64>() < p_hit {
                    let slot = loop {
                        let s = self.rng.random_range(0..shared.list.slots() as u32);
                        let key = shared.list.key(s);
                        if let Some(v) = shared.index.get(&key).map(|v| *v) {
                            break v;
                        }
                    };
                    self.copy(slot);
                    self.hit(slot);
                    true
                } else {
                    self.fresh += 1;
                    let key = self.fresh;
                    black_box(shared.index.get(&key).is_some());
                    emulate_disk(self.config.disk_us);
                    self.copy(0);
                    self.insert(key);
                    false
                }
            }
            BenchMode::Trace { .. } => {
                let zipf = zipf.expect("trace mode has a sampler");
                let key = zipf.sample(&mut self.rng) as u64 - 1;
                match shared.index.get(&key).map(|v| *v) {
                    Some(CLAIMED) => true,
                    Some(slot) => {
                        self.copy(slot);
                        self.hit(slot);
                        true
                    }
                    None => {
                        match shared.index.entry(key) {
                            Entry::Occupied(_) => return true,
                            Entry::Vacant(e) => {
                                e.insert(CLAIMED);
                            }
                        }
                        emulate_disk(self.config.disk_us);
                        self.copy(0);
                        self.insert(key);
                        false
                    }
                }
            }
        }
    }
}

fn run_once(config: &BenchConfig, run: u32) -> Result<RunResult> {
    let capacity = config.capacity();
    let shared = Arc::new(Shared::new(capacity));
    let zipf = match config.mode {
        BenchMode::Trace { workload, .. } => Some(
            Zipf::new(workload.universe as f64, workload.theta)
                .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?,
        ),
        BenchMode::Bernoulli { .. } => None,
    };
    let pin = config.pin && config.workers <= default_workers();
    let barrier = Arc::new(Barrier::new(config.workers + 1));
    let handles: Vec<_> = (0..config.workers)
        .map(|w| {
            let shared = Arc::clone(&shared);
            let barrier = Arc::clone(&barrier);
            let config = config.clone();
            thread::spawn(move || {
                if pin && !pin_to_cpu(w) {
                    log::debug!("could not pin worker {w}");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(u64::from(run) << 20 | w as u64);
                let mut worker = Worker {
                    shared: &shared,
                    config: &config,
                    rng,
                    buf: vec![0u8; BLOCK_SIZE],
                    // fresh keys live above the preloaded range, one block per worker
                    fresh: (1u64 << 62) | ((w as u64) << 40),
                };
                let mut counts = Counts::default();
                barrier.wait();
                loop {
                    let phase = shared.phase.load(Ordering::Acquire);
                    if phase == STOP {
                        break;
                    }
                    let hit = worker.request(zipf.as_ref());
                    if phase == MEASURE {
                        counts.requests += 1;
                        counts.hits += u64::from(hit);
                    }
                }
                counts
            })
        })
        .collect();
    barrier.wait();
    thread::sleep(config.warmup);
    shared.phase.store(MEASURE, Ordering::Release);
    let start = Instant::now();
    thread::sleep(config.duration);
    shared.phase.store(STOP, Ordering::Release);
    let elapsed = start.elapsed().as_secs_f64();
    let mut total = Counts::default();
    for h in handles {
        let c = h
            .join()
            .map_err(|_| Error::InvalidConfig("bench worker panicked".into()))?;
        total.requests += c.requests;
        total.hits += c.hits;
    }
    // trace-mode claims leave no residue once every miss completes
    let report = audit(&shared);
    if !report.ok() {
        return Err(Error::AuditFailed(format!("{report:?}")));
    }
    Ok(RunResult {
        run,
        throughput_rps: total.requests as f64 / elapsed,
        hit_ratio: if total.requests == 0 {
            0.0
        } else {
            total.hits as f64 / total.requests as f64
        },
        requests: total.requests,
    })
}

/// Run the closed-loop bench `config.runs` times.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let hw = default_workers();
    if config.workers > hw {
        log::warn!(
            "{} workers exceed the {hw} available hardware threads; results will reflect time slicing",
            config.workers
        );
    }
    let runs = (0..config.runs)
        .map(|r| run_once(config, r))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = runs.iter().map(|r| r.throughput_rps).collect();
    let (mean_rps, ci_half_rps) = if xs.len() >= 2 {
        mean_ci95(&xs)?
    } else {
        (xs[0], 0.0)
    };
    let requests: u64 = runs.iter().map(|r| r.requests).sum();
    let hits: f64 = runs.iter().map(|r| r.hit_ratio * r.requests as f64).sum();
    Ok(BenchResult {
        config: config.clone(),
        runs,
        mean_rps,
        ci_half_rps,
        hit_ratio: if requests == 0 { 0.0 } else { hits / requests as f64 },
    })
}

/// Trace mode at the capacity that gives `target` on the lab workload.
pub fn trace_mode_for(policy: BenchPolicy, lab: &LabConfig, target: f64) -> Result<BenchMode> {
    let tp = match policy {
        BenchPolicy::Lru => TracePolicy::Lru,
        BenchPolicy::Fifo => TracePolicy::Fifo,
        BenchPolicy::ProbLru { q } => TracePolicy::ProbLru { q },
        BenchPolicy::Clock => TracePolicy::Clock,
    };
    let c = calibrate_capacity(tp, lab, target)?;
    if !c.reached {
        return Err(Error::InvalidConfig(format!(
            "target hit ratio {target} unreachable (best {:.4} at capacity {})",
            c.achieved, c.capacity
        )));
    }
    Ok(BenchMode::Trace {
        workload: lab.workload,
        capacity: c.capacity,
    })
}

pub const BENCH_CSV_HEADER: [&str; 7] = [
    "policy",
    "p_hit",
    "disk_us",
    "workers",
    "run",
    "throughput_rps",
    "hit_ratio",
];

/// One row per run.
pub fn write_bench_csv<W: Write>(results: &[BenchResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_CSV_HEADER)?;
    for r in results {
        for run in &r.runs {
            w.write_record([
                r.config.policy.to_string(),
                r.p_hit().to_string(),
                r.config.disk_us.to_string(),
                r.config.workers.to_string(),
                run.run.to_string(),
                run.throughput_rps.to_string(),
                run.hit_ratio.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
