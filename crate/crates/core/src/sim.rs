//! Event-driven simulation of a [`ClosedNetwork`].
//!
//! `N` jobs cycle forever: each samples a root-to-leaf path, spends think
//! visits as pure delay and queues FCFS at each single-server queue visit.
//! Consecutive think visits are folded into one delay event.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::qnet::{ClosedNetwork, DistKind, ServiceDist, StationClass, StationId};

pub const DEFAULT_CYCLES: u64 = 200_000;
pub const DEFAULT_REPLICATIONS: u32 = 20;
pub const MIN_WARMUP: u64 = 5_000;
/// Warmup also lasts at least this many multiples of the longest mean visit,
/// so slow think stations reach their steady-state population.
pub const WARMUP_VISIT_MEANS: f64 = 20.0;

/// 10% of `cycles`, at least 5 000.
pub fn default_warmup(cycles: u64) -> u64 {
    (cycles / 10).max(MIN_WARMUP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Completed request cycles measured per replication.
    pub cycles: u64,
    /// Completed cycles discarded before measuring. Warmup also runs for at
    /// least [`WARMUP_VISIT_MEANS`] times the longest mean visit.
    pub warmup: u64,
    pub replications: u32,
    pub seed: u64,
    /// Replaces the distribution family of every queue-station visit.
    pub distribution_override: Option<DistKind>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cycles: DEFAULT_CYCLES,
            warmup: default_warmup(DEFAULT_CYCLES),
            replications: DEFAULT_REPLICATIONS,
            seed: 1,
            distribution_override: None,
        }
    }
}

impl SimConfig {
    /// Sets `cycles` and the matching default warmup.
    pub fn with_cycles(mut self, cycles: u64) -> Self {
        self.cycles = cycles;
        self.warmup = default_warmup(cycles);
        self
    }

    pub fn with_replications(mut self, replications: u32) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_distribution(mut self, kind: Option<DistKind>) -> Self {
        self.distribution_override = kind;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidConfig("cycles must be >= 1".into()));
        }
        if self.warmup >= self.cycles {
            return Err(Error::InvalidConfig(format!(
                "warmup ({}) must be below cycles ({})",
                self.warmup, self.cycles
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationStats {
    pub station: StationId,
    pub utilization: f64,
    /// Time-averaged number of jobs present (waiting plus in service).
    pub mean_queue_length: f64,
    pub completions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Requests per µs.
    pub throughput: f64,
    /// Mean time per cycle spent at queue stations, waiting plus service.
    pub mean_response_time: f64,
    /// Mean time per cycle spent at think stations: the time-averaged number
    /// of thinking jobs divided by throughput.
    pub mean_think_time: f64,
    pub stations: Vec<StationStats>,
    /// Measured (post-warmup) simulated time, µs.
    pub simulated_time: f64,
    pub cycles: u64,
}

impl SimResult {
    pub fn station(&self, name: &str) -> Option<&StationStats> {
        self.stations.iter().find(|s| s.station.as_str() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub mean_throughput: f64,
    /// Student-t 95% half-width over replications.
    pub ci_half_width: f64,
    pub replications: Vec<SimResult>,
}

impl SimSummary {
    pub fn ci(&self) -> (f64, f64) {
        (
            self.mean_throughput - self.ci_half_width,
            self.mean_throughput + self.ci_half_width,
        )
    }
}

/// Mean and Student-t 95% half-width of `samples` (at least two).
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "a confidence interval needs at least 2 replications".into(),
        ));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 || samples.iter().all(|x| *x == samples[0]) {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, t * (var / nf).sqrt()))
}

enum Step {
    Think(Vec<ServiceDist>),
    Queue(usize, ServiceDist),
}

struct Compiled {
    stations: Vec<StationId>,
    /// Cumulative path probabilities, paired with `paths`.
    cumulative: Vec<f64>,
    paths: Vec<Vec<Step>>,
    longest_visit: f64,
}

impl Compiled {
    fn new(network: &ClosedNetwork, config: &SimConfig) -> Result<Self> {
        let stations: Vec<StationId> = network.queue_stations().map(|s| s.id.clone()).collect();
        let mut cumulative = Vec::new();
        let mut paths = Vec::new();
        let mut acc = 0.0;
        let mut mean_cycle = 0.0;
        let mut longest_visit = 0.0f64;
        for fp in network.leaf_paths() {
            if fp.probability <= 0.0 {
                continue;
            }
            let mut steps: Vec<Step> = Vec::new();
            let mut path_mean = 0.0;
            for v in &fp.visits {
                path_mean += v.service.mean();
                longest_visit = longest_visit.max(v.service.mean());
                match v.class {
                    StationClass::Think => match steps.last_mut() {
                        Some(Step::Think(d)) => d.push(v.service),
                        _ => steps.push(Step::Think(vec![v.service])),
                    },
                    StationClass::Queue => {
                        let idx = stations
                            .iter()
                            .position(|s| *s == v.station)
                            .expect("queue station registered");
                        let service = match config.distribution_override {
                            Some(kind) => ServiceDist::of_kind(kind, v.service.mean())?,
                            None => v.service,
                        };
                        steps.push(Step::Queue(idx, service));
                    }
                }
            }
            acc += fp.probability;
            mean_cycle += fp.probability * path_mean;
            cumulative.push(acc);
            paths.push(steps);
        }
        if paths.is_empty() || mean_cycle <= 0.0 {
            return Err(Error::InvalidNetwork(
                "network has no time-consuming visits".into(),
            ));
        }
        Ok(Compiled {
            stations,
            cumulative,
            paths,
            longest_visit,
        })
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> usize {
        if self.paths.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.paths.len() - 1)
    }
}

#[derive(Clone, Copy)]
enum Kind {
    ThinkDone(u32),
    ServiceDone(u32),
}

struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default, Clone)]
struct Job {
    path: usize,
    step: usize,
    arrived: f64,
    queue_time: f64,
}

#[derive(Default)]
struct StationState {
    waiting: VecDeque<u32>,
    in_service: Option<u32>,
    busy_since: f64,
    busy: f64,
    area: f64,
    present: u32,
    last_change: f64,
    completions: u64,
}

impl StationState {
    fn touch(&mut self, now: f64) {
        self.area += f64::from(self.present) * (now - self.last_change);
        self.last_change = now;
    }
}

struct Engine<'a> {
    net: &'a Compiled,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    seq: u64,
    jobs: Vec<Job>,
    stations: Vec<StationState>,
    thinking: u32,
    measuring: bool,
    t0: f64,
    done: u64,
    sum_r: f64,
    /// Time integral of `thinking` since measuring began.
    think_area: f64,
    think_since: f64,
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn begin_cycle(&mut self, j: u32) {
        let path = self.net.pick(&mut self.rng);
        let job = &mut self.jobs[j as usize];
        job.path = path;
        job.step = 0;
        job.queue_time = 0.0;
    }

    /// Move job `j` forward from its current step at time `now` until it
    /// blocks on a delay or a queue.
    fn advance(&mut self, j: u32, now: f64) {
        let net = self.net;
        loop {
            let (path, step) = {
                let job = &self.jobs[j as usize];
                (job.path, job.step)
            };
            let Some(s) = net.paths[path].get(step) else {
                self.complete_cycle(j);
                self.begin_cycle(j);
                continue;
            };
            match s {
                Step::Think(dists) => {
                    let mut d = 0.0;
                    for dist in dists {
                        d += dist.sample(&mut self.rng);
                    }
                    let job = &mut self.jobs[j as usize];
                    job.step += 1;
                    if d > 0.0 {
                        self.think_change(now, 1);
                        self.schedule(now + d, Kind::ThinkDone(j));
                        return;
                    }
                }
                Step::Queue(idx, dist) => {
                    let idx = *idx;
                    self.jobs[j as usize].arrived = now;
                    let st = &mut self.stations[idx];
                    st.touch(now);
                    st.present += 1;
                    if st.in_service.is_none() {
                        st.in_service = Some(j);
                        st.busy_since = now;
                        let s = dist.sample(&mut self.rng);
                        self.schedule(now + s, Kind::ServiceDone(idx as u32));
                    } else {
                        st.waiting.push_back(j);
                    }
                    return;
                }
            }
        }
    }

    fn think_change(&mut self, now: f64, delta: i32) {
        self.think_area += f64::from(self.thinking) * (now - self.think_since);
        self.think_since = now;
        self.thinking = self.thinking.checked_add_signed(delta).expect("thinking count");
    }

    fn complete_cycle(&mut self, j: u32) {
        if self.measuring {
            let job = &self.jobs[j as usize];
            self.sum_r += job.queue_time;
        }
        self.done += 1;
    }

    fn service_done(&mut self, idx: usize, now: f64) {
        let net = self.net;
        let st = &mut self.stations[idx];
        let j = st.in_service.take().expect("busy station");
        st.touch(now);
        st.present -= 1;
        st.busy += now - st.busy_since;
        st.completions += 1;
        if let Some(next) = st.waiting.pop_front() {
            st.in_service = Some(next);
            st.busy_since = now;
            let nj = &self.jobs[next as usize];
            let Step::Queue(_, dist) = &net.paths[nj.path][nj.step] else {
                unreachable!("queued job is at a queue step")
            };
            let s = dist.sample(&mut self.rng);
            self.schedule(now + s, Kind::ServiceDone(idx as u32));
        }
        let job = &mut self.jobs[j as usize];
        job.queue_time += now - job.arrived;
        job.step += 1;
        self.advance(j, now);
    }

    fn start_measuring(&mut self, now: f64) {
        self.measuring = true;
        self.t0 = now;
        self.done = 0;
        self.sum_r = 0.0;
        self.think_area = 0.0;
        self.think_since = now;
        for st in &mut self.stations {
            st.area = 0.0;
            st.last_change = now;
            st.busy = 0.0;
            st.completions = 0;
            if st.in_service.is_some() {
                st.busy_since = now;
            }
        }
    }

    fn check_population(&self) {
        let queued: u32 = self.stations.iter().map(|s| s.present).sum();
        debug_assert_eq!(
            self.thinking + queued,
            self.jobs.len() as u32,
            "job population not conserved"
        );
    }
}

/// One replication. Replication `r` draws from stream `r` of the ChaCha
/// generator seeded with `config.seed`.
pub fn simulate(network: &ClosedNetwork, config: &SimConfig, replication: u64) -> Result<SimResult> {
    config.validate()?;
    let compiled = Compiled::new(network, config)?;
    Ok(run(&compiled, network.mpl(), config, replication))
}

fn run(net: &Compiled, mpl: u32, config: &SimConfig, replication: u64) -> SimResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replication);
    let mut e = Engine {
        net,
        rng,
        heap: BinaryHeap::with_capacity(mpl as usize + net.paths.len() + 8),
        seq: 0,
        jobs: vec![Job::default(); mpl as usize],
        stations: (0..net.stations.len()).map(|_| StationState::default()).collect(),
        thinking: 0,
        measuring: config.warmup == 0,
        t0: 0.0,
        done: 0,
        sum_r: 0.0,
        think_area: 0.0,
        think_since: 0.0,
    };
    for j in 0..mpl {
        e.begin_cycle(j);
        e.advance(j, 0.0);
    }
    let warmup_time = if config.warmup == 0 {
        0.0
    } else {
        WARMUP_VISIT_MEANS * net.longest_visit
    };
    let mut now = 0.0;
    while let Some(ev) = e.heap.pop() {
        now = ev.time;
        match ev.kind {
            Kind::ThinkDone(j) => {
                e.think_change(now, -1);
                e.advance(j, now);
            }
            Kind::ServiceDone(idx) => e.service_done(idx as usize, now),
        }
        e.check_population();
        if !e.measuring && e.done >= config.warmup && now >= warmup_time {
            e.start_measuring(now);
        } else if e.measuring && e.done >= config.cycles {
            break;
        }
    }
    let elapsed = now - e.t0;
    let stations = net
        .stations
        .iter()
        .zip(e.stations.iter_mut())
        .map(|(id, st)| {
            st.touch(now);
            if st.in_service.is_some() {
                st.busy += now - st.busy_since;
            }
            StationStats {
                station: id.clone(),
                utilization: if elapsed > 0.0 { st.busy / elapsed } else { 0.0 },
                mean_queue_length: if elapsed > 0.0 { st.area / elapsed } else { 0.0 },
                completions: st.completions,
            }
        })
        .collect();
    e.think_change(now, 0);
    let done = e.done.max(1) as f64;
    let throughput = e.done as f64 / elapsed;
    SimResult {
        throughput,
        mean_response_time: e.sum_r / done,
        mean_think_time: if throughput > 0.0 {
            e.think_area / elapsed / throughput
        } else {
            0.0
        },
        stations,
        simulated_time: elapsed,
        cycles: e.done,
    }
}

/// `config.replications` independent replications run in parallel, with a
/// Student-t 95% interval on throughput.
pub fn replicate(network: &ClosedNetwork, config: &SimConfig) -> Result<SimSummary> {
    config.validate()?;
    if config.replications < 2 {
        return Err(Error::InvalidConfig(
            "replicate needs at least 2 replications".into(),
        ));
    }
    let compiled = Compiled::new(network, config)?;
    let replications: Vec<SimResult> = (0..u64::from(config.replications))
        .into_par_iter()
        .map(|r| run(&compiled, network.mpl(), config, r))
        .collect();
    let xs: Vec<f64> = replications.iter().map(|r| r.throughput).collect();
    let (mean_throughput, ci_half_width) = mean_ci95(&xs)?;
    Ok(SimSummary {
        mean_throughput,
        ci_half_width,
        replications,
    })
}

/// `|N/X - (E[R] + E[Z])| / (N/X)` with both means measured per cycle.
pub fn verify_response_time_law(result: &SimResult, network: &ClosedNetwork) -> f64 {
    let cycle = f64::from(network.mpl()) / result.throughput;
    (cycle - (result.mean_response_time + result.mean_think_time)).abs() / cycle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{build_network, closed_form_bound, Policy, ServiceParams};
    use crate::qnet::{device_demands, PathBranch, Visit, LOOKUP};

    fn single_think(mpl: u32) -> ClosedNetwork {
        let root = PathBranch::new(
            1.0,
            vec![Visit::think(LOOKUP, ServiceDist::deterministic(10.0).unwrap())],
        );
        ClosedNetwork::new("think", mpl, root).unwrap()
    }

    fn quick() -> SimConfig {
        SimConfig::default().with_cycles(50_000)
    }

    fn lru(p: f64) -> ClosedNetwork {
        build_network(&Policy::Lru, p, &ServiceParams::default(), 72).unwrap()
    }

    #[test]
    fn single_job_pure_delay() {
        let net = single_think(1);
        let r = simulate(&net, &quick(), 0).unwrap();
        assert!((r.throughput - 0.1).abs() < 1e-12, "{}", r.throughput);
        assert!(verify_response_time_law(&r, &net) < 1e-12);
        let s = replicate(&net, &quick().with_replications(20)).unwrap();
        assert_eq!(s.ci_half_width, 0.0);
    }

    #[test]
    fn single_queue_single_job() {
        // One job alternating 1 µs think and a deterministic 1 µs server.
        let root = PathBranch::new(
            1.0,
            vec![
                Visit::think(LOOKUP, ServiceDist::deterministic(1.0).unwrap()),
                Visit::queue("q", ServiceDist::deterministic(1.0).unwrap()),
            ],
        );
        let net = ClosedNetwork::new("mm", 1, root).unwrap();
        let r = simulate(&net, &quick(), 0).unwrap();
        assert!((r.throughput - 0.5).abs() < 1e-9);
        assert!((r.station("q").unwrap().utilization - 0.5).abs() < 1e-9);
        assert!((r.mean_response_time - 1.0).abs() < 1e-9);
    }

    #[test]
    fn machine_repairman_matches_mva() {
        // N=5 jobs, exponential think 4 µs, one exponential 1 µs server.
        let root = PathBranch::new(
            1.0,
            vec![
                Visit::think(LOOKUP, ServiceDist::exponential(4.0).unwrap()),
                Visit::queue("q", ServiceDist::exponential(1.0).unwrap()),
            ],
        );
        let net = ClosedNetwork::new("mr", 5, root).unwrap();
        // exact mean value analysis
        let (mut q, mut x) = (0.0, 0.0);
        for n in 1..=5 {
            let r = 1.0 * (1.0 + q);
            x = f64::from(n) / (4.0 + r);
            q = x * r;
        }
        let s = replicate(&net, &quick().with_replications(10)).unwrap();
        assert!((s.mean_throughput - x).abs() / x < 0.01, "{} vs {x}", s.mean_throughput);
    }

    #[test]
    fn lru_high_hit_saturates_delink() {
        let r = simulate(&lru(0.95), &quick(), 0).unwrap();
        assert!(r.station("delink").unwrap().utilization >= 0.95);
    }

    #[test]
    fn fifo_below_bound() {
        let net = build_network(&Policy::Fifo, 0.5, &ServiceParams::default(), 72).unwrap();
        let s = replicate(&net, &quick().with_replications(4)).unwrap();
        let b = closed_form_bound(&Policy::Fifo, 0.5, 100.0, 72).unwrap();
        assert!(s.mean_throughput <= b, "{} > {b}", s.mean_throughput);
    }

    #[test]
    fn lru_below_bound_and_laws() {
        let net = lru(0.9);
        let s = replicate(&net, &quick().with_replications(4)).unwrap();
        assert!(s.mean_throughput <= 1.5873);
        let d = device_demands(&net);
        for r in &s.replications {
            assert!(verify_response_time_law(r, &net) < 0.005);
            for st in &r.stations {
                let sd = d.get(st.station.as_str()).unwrap();
                let want = r.throughput * sd.demand;
                // sampling noise of the sum of exponential services
                let visits = sd.visits * r.cycles as f64;
                let tol = 0.01_f64.max(4.0 * (2.0 / visits).sqrt());
                assert!(
                    (st.utilization - want).abs() <= tol * want,
                    "{}: {} vs {want}",
                    st.station,
                    st.utilization
                );
            }
        }
    }

    #[test]
    fn flow_balance() {
        let net = lru(0.7);
        let r = simulate(&net, &quick(), 3).unwrap();
        let d = device_demands(&net);
        let n = r.cycles as f64;
        for st in &r.stations {
            let v = d.get(st.station.as_str()).unwrap().visits;
            let p = v.min(1.0);
            let sigma = (n * p * (1.0 - p)).sqrt().max(1.0);
            assert!(
                (st.completions as f64 - v * n).abs() <= 4.0 * sigma + 72.0,
                "{}: {} vs {}",
                st.station,
                st.completions,
                v * n
            );
        }
    }

    #[test]
    fn reproducible() {
        let net = lru(0.8);
        let a = simulate(&net, &quick(), 7).unwrap();
        let b = simulate(&net, &quick(), 7).unwrap();
        assert_eq!(a, b);
        let c = simulate(&net, &quick(), 8).unwrap();
        assert_ne!(a.throughput, c.throughput);
    }

    #[test]
    fn distribution_insensitive() {
        for p in [0.5, 0.9] {
            let net = lru(p);
            let xs: Vec<f64> = [
                DistKind::Exponential,
                DistKind::Deterministic,
                DistKind::BoundedPareto,
            ]
            .iter()
            .map(|k| {
                replicate(&net, &quick().with_replications(3).with_distribution(Some(*k)))
                    .unwrap()
                    .mean_throughput
            })
            .collect();
            let hi = xs.iter().cloned().fold(f64::MIN, f64::max);
            let lo = xs.iter().cloned().fold(f64::MAX, f64::min);
            assert!((hi - lo) / lo < 0.05, "p={p}: {xs:?}");
        }
    }

    #[test]
    fn zero_service_station_is_instant() {
        let root = PathBranch::new(
            1.0,
            vec![
                Visit::think(LOOKUP, ServiceDist::deterministic(2.0).unwrap()),
                Visit::queue("zero", ServiceDist::deterministic(0.0).unwrap()),
            ],
        );
        let net = ClosedNetwork::new("z", 3, root).unwrap();
        let r = simulate(&net, &quick(), 0).unwrap();
        // lockstep jobs straddle the warmup cut, an O(N / cycles) edge effect
        assert!((r.throughput - 1.5).abs() < 1e-4, "{}", r.throughput);
    }

    #[test]
    fn rejects_bad_config() {
        let net = single_think(1);
        assert!(replicate(&net, &quick().with_replications(1)).is_err());
        let mut c = quick();
        c.warmup = c.cycles;
        assert!(simulate(&net, &c, 0).is_err());
        let zero = ClosedNetwork::new(
            "zero",
            2,
            PathBranch::new(
                1.0,
                vec![Visit::think(LOOKUP, ServiceDist::deterministic(0.0).unwrap())],
            ),
        )
        .unwrap();
        assert!(matches!(simulate(&zero, &quick(), 0), Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn ci_helper() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        // t_{0.975, 2} = 4.302653
        assert!((h - 4.302_653 / 3f64.sqrt()).abs() < 1e-5);
        assert!(mean_ci95(&[1.0]).is_err());
    }
}
