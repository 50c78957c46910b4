//! Per-policy queueing networks, closed-form bounds, knee finding and the
//! LRU-like / FIFO-like classification.
//!
//! Each builder turns a policy, a hit ratio and a set of measured service
//! means into a [`ClosedNetwork`]. The request cycle always starts with the
//! cache-lookup think visit, then branches on hit/miss:
//!
//! | policy  | hit path                                   | miss path                                |
//! |---------|--------------------------------------------|------------------------------------------|
//! | LRU     | delink, head                               | disk, tail, head                         |
//! | FIFO    | nothing                                    | disk, tail, head                         |
//! | ProbLRU | q: nothing / 1-q: delink, head             | disk, tail, head                         |
//! | CLOCK   | nothing (bit set)                          | disk, tail (scan), head                  |
//! | SLRU    | f_T: delinkT, headT / else: delinkB, tailT, headT, headB | disk, tailB, headB         |
//! | S3-FIFO | nothing (bit set)                          | disk, ghost, then Main or Small insert   |

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::qnet::{
    self, BindingTerm, ClosedNetwork, DistKind, PathBranch, ServiceDist, StationId, Visit, LOOKUP,
};

/// Disk means evaluated by the classifier and the acceptance checks, in µs.
pub const STANDARD_DISKS: [f64; 3] = [5.0, 100.0, 500.0];

/// Default multi-programming limit.
pub const DEFAULT_MPL: u32 = 72;

/// Means of the three list operations. `tail` is what the simulator serves;
/// the bound only knows `0 <= tail <= head`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListOps {
    pub delink: f64,
    pub head: f64,
    pub tail: Option<f64>,
}

impl ListOps {
    pub fn tail_mean(&self) -> f64 {
        self.tail.unwrap_or(self.head)
    }

    fn tail_bound(&self) -> f64 {
        self.head.max(self.tail_mean())
    }
}

/// CLOCK-style operation means: tail updates scan for a zero bit and cost
/// `tail_base + tail_scan * g(p_hit)`; head updates are bounded by `head`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockOps {
    pub head: f64,
    pub tail_base: f64,
    pub tail_scan: f64,
}

impl ClockOps {
    pub fn tail_mean(&self, p_hit: f64) -> f64 {
        self.tail_base + self.tail_scan * clock_g(p_hit)
    }
}

/// Think means and per-operation service means, all in µs.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceParams {
    pub lookup: f64,
    pub disk: f64,
    pub ghost: f64,
    pub lru: ListOps,
    pub fifo: ListOps,
    pub clock: ClockOps,
    /// ProbLRU means; `None` picks LRU's below `q = 1 - 1/N` and FIFO's head
    /// mean at or above it.
    pub prob_lru: Option<ListOps>,
    /// SLRU segment means; `None` reuses LRU's.
    pub slru: Option<ListOps>,
    /// S3-FIFO means; `None` reuses CLOCK's.
    pub s3fifo: Option<ClockOps>,
    /// Distribution family of every visit.
    pub dist: DistKind,
}

impl Default for ServiceParams {
    fn default() -> Self {
        ServiceParams {
            lookup: 0.51,
            disk: 100.0,
            ghost: 0.51,
            lru: ListOps {
                delink: 0.7,
                head: 0.59,
                tail: None,
            },
            fifo: ListOps {
                delink: 0.7,
                head: 0.73,
                tail: None,
            },
            clock: ClockOps {
                head: 0.65,
                tail_base: 0.65,
                tail_scan: 0.3,
            },
            prob_lru: None,
            slru: None,
            s3fifo: None,
            dist: DistKind::Exponential,
        }
    }
}

impl ServiceParams {
    pub fn with_disk(mut self, disk: f64) -> Self {
        self.disk = disk;
        self
    }

    pub fn with_dist(mut self, dist: DistKind) -> Self {
        self.dist = dist;
        self
    }

    fn prob_lru_ops(&self, q: f64, mpl: u32) -> ListOps {
        if let Some(ops) = self.prob_lru {
            return ops;
        }
        if q >= prob_lru_fifo_threshold(mpl) {
            ListOps {
                delink: self.lru.delink,
                head: self.fifo.head,
                tail: self.fifo.tail,
            }
        } else {
            self.lru
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.lookup,
            self.disk,
            self.ghost,
            self.lru.delink,
            self.lru.head,
            self.lru.tail_mean(),
            self.fifo.head,
            self.fifo.tail_mean(),
            self.clock.head,
            self.clock.tail_base,
            self.clock.tail_scan,
        ];
        if all.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidConfig(
                "service means must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Smallest `q` at which ProbLRU behaves FIFO-like for population `mpl`.
pub fn prob_lru_fifo_threshold(mpl: u32) -> f64 {
    1.0 - 1.0 / f64::from(mpl) - 1e-12
}

/// Scan-overhead multiplier for CLOCK tail updates as a function of hit ratio.
pub fn clock_g(p_hit: f64) -> f64 {
    2.43e-5 * (11.24 * p_hit).exp() + 0.187
}

/// An empirical function of the hit ratio with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum FractionCurve {
    Constant(f64),
    /// Points sorted by strictly increasing hit ratio; evaluated by linear
    /// interpolation and clamped to the end values outside the table.
    Table(Arc<[(f64, f64)]>),
}

impl FractionCurve {
    pub fn constant(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidConfig(format!(
                "fraction {value} outside [0, 1]"
            )));
        }
        Ok(FractionCurve::Constant(value))
    }

    pub fn table(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("empty fraction table".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidConfig(format!(
                    "duplicate hit ratio {} in fraction table",
                    w[1].0
                )));
            }
        }
        if points
            .iter()
            .any(|&(p, v)| !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&v))
        {
            return Err(Error::InvalidConfig(
                "fraction table entries must lie in [0, 1]".into(),
            ));
        }
        Ok(FractionCurve::Table(points.into()))
    }

    pub fn at(&self, p: f64) -> f64 {
        match self {
            FractionCurve::Constant(v) => *v,
            FractionCurve::Table(pts) => {
                let first = pts[0];
                let last = pts[pts.len() - 1];
                if p <= first.0 {
                    return first.1;
                }
                if p >= last.0 {
                    return last.1;
                }
                let i = pts.partition_point(|&(x, _)| x <= p);
                let (x0, y0) = pts[i - 1];
                let (x1, y1) = pts[i];
                y0 + (y1 - y0) * (p - x0) / (x1 - x0)
            }
        }
    }
}

/// Ghost-admission and Small-tail promotion fractions for S3-FIFO.
#[derive(Debug, Clone, PartialEq)]
pub struct S3Fractions {
    /// Fraction of misses the ghost sends to the Main list.
    pub ghost: FractionCurve,
    /// Fraction of Small-tail items carrying a set bit (promoted to Main).
    pub promote: FractionCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Lru,
    Fifo,
    ProbLru { q: f64 },
    Clock,
    Slru { t_fraction: Option<FractionCurve> },
    S3Fifo { fractions: Option<S3Fractions> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Lru => "LRU",
            Policy::Fifo => "FIFO",
            Policy::ProbLru { .. } => "ProbLRU",
            Policy::Clock => "CLOCK",
            Policy::Slru { .. } => "SLRU",
            Policy::S3Fifo { .. } => "S3-FIFO",
        }
    }

    pub fn q(&self) -> Option<f64> {
        match self {
            Policy::ProbLru { q } => Some(*q),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::ProbLru { q } => write!(f, "ProbLRU(q={q})"),
            other => f.write_str(other.name()),
        }
    }
}

fn svc(kind: DistKind, mean: f64) -> Result<ServiceDist> {
    ServiceDist::of_kind(kind, mean)
}

struct Ops<'a> {
    kind: DistKind,
    params: &'a ServiceParams,
}

impl Ops<'_> {
    fn think(&self, name: &str, mean: f64) -> Result<Visit> {
        Ok(Visit::think(name, svc(self.kind, mean)?))
    }

    fn queue(&self, name: &str, mean: f64) -> Result<Visit> {
        Ok(Visit::queue(name, svc(self.kind, mean)?))
    }

    /// Queue visit known only as `0 <= mean <= hi`; served with `mean`.
    fn bounded(&self, name: &str, mean: f64, hi: f64) -> Result<Visit> {
        Ok(Visit::queue_bounded(name, svc(self.kind, mean)?, 0.0, hi))
    }

    fn lookup(&self) -> Result<Visit> {
        self.think(LOOKUP, self.params.lookup)
    }

    fn disk(&self) -> Result<Visit> {
        self.think("disk", self.params.disk)
    }
}

fn hit_miss(p_hit: f64, lookup: Visit, hit: PathBranch, miss: PathBranch) -> PathBranch {
    debug_assert!((hit.probability - p_hit).abs() < 1e-15);
    PathBranch::new(1.0, vec![lookup]).with_children(vec![hit, miss])
}

/// Build the closed network for `policy` at hit ratio `p_hit`.
pub fn build_network(
    policy: &Policy,
    p_hit: f64,
    params: &ServiceParams,
    mpl: u32,
) -> Result<ClosedNetwork> {
    if !(0.0..=1.0).contains(&p_hit) || p_hit.is_nan() {
        return Err(Error::HitRatioOutOfRange(p_hit));
    }
    if mpl == 0 {
        return Err(Error::InvalidConfig("mpl must be >= 1".into()));
    }
    params.validate()?;
    let ops = Ops {
        kind: params.dist,
        params,
    };
    let p_miss = 1.0 - p_hit;
    let label = format!("{policy} disk={} N={mpl} p_hit={p_hit}", params.disk);

    let lru_miss = |lo: &ListOps| -> Result<PathBranch> {
        Ok(PathBranch::new(
            p_miss,
            vec![
                ops.disk()?,
                ops.bounded("tail", lo.tail_mean(), lo.tail_bound())?,
                ops.queue("head", lo.head)?,
            ],
        ))
    };

    match policy {
        Policy::Lru => {
            let lo = params.lru;
            let hit = PathBranch::new(
                p_hit,
                vec![ops.queue("delink", lo.delink)?, ops.queue("head", lo.head)?],
            );
            let root = hit_miss(p_hit, ops.lookup()?, hit, lru_miss(&lo)?);
            ClosedNetwork::new(label, mpl, root)
        }
        Policy::Fifo => {
            let fo = params.fifo;
            let hit = PathBranch::new(p_hit, vec![]);
            let root = hit_miss(p_hit, ops.lookup()?, hit, lru_miss(&fo)?);
            ClosedNetwork::new(label, mpl, root)?
                .with_station_order(&[LOOKUP, "disk", "head", "tail"])
        }
        Policy::ProbLru { q } => {
            let q = *q;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidConfig(format!("ProbLRU q={q} outside [0, 1]")));
            }
            let lo = params.prob_lru_ops(q, mpl);
            let promote = vec![ops.queue("delink", lo.delink)?, ops.queue("head", lo.head)?];
            let hit = if q == 0.0 {
                PathBranch::new(p_hit, promote)
            } else {
                PathBranch::new(p_hit, vec![]).with_children(vec![
                    PathBranch::new(q, vec![]),
                    PathBranch::new(1.0 - q, promote),
                ])
            };
            let root = hit_miss(p_hit, ops.lookup()?, hit, lru_miss(&lo)?);
            ClosedNetwork::new(label, mpl, root)
        }
        Policy::Clock => {
            let co = params.clock;
            let hit = PathBranch::new(p_hit, vec![]);
            let miss = PathBranch::new(
                p_miss,
                vec![
                    ops.disk()?,
                    ops.queue("tail", co.tail_mean(p_hit))?,
                    ops.bounded("head", co.head, co.head)?,
                ],
            );
            let root = hit_miss(p_hit, ops.lookup()?, hit, miss);
            ClosedNetwork::new(label, mpl, root)
        }
        Policy::Slru { t_fraction } => {
            let f_t = t_fraction
                .as_ref()
                .ok_or(Error::MissingFractions("SLRU"))?
                .at(p_hit);
            let so = params.slru.unwrap_or(params.lru);
            let t_hit = PathBranch::new(
                f_t,
                vec![ops.queue("delinkT", so.delink)?, ops.queue("headT", so.head)?],
            );
            // B-hit: promote to T, demote T's tail item to the head of B.
            let b_hit = PathBranch::new(
                1.0 - f_t,
                vec![
                    ops.queue("delinkB", so.delink)?,
                    ops.bounded("tailT", so.tail_mean(), so.tail_bound())?,
                    ops.queue("headT", so.head)?,
                    ops.queue("headB", so.head)?,
                ],
            );
            let hit = PathBranch::new(p_hit, vec![]).with_children(vec![t_hit, b_hit]);
            let miss = PathBranch::new(
                p_miss,
                vec![
                    ops.disk()?,
                    ops.bounded("tailB", so.tail_mean(), so.tail_bound())?,
                    ops.queue("headB", so.head)?,
                ],
            );
            let root = hit_miss(p_hit, ops.lookup()?, hit, miss);
            ClosedNetwork::new(label, mpl, root)
        }
        Policy::S3Fifo { fractions } => {
            let fr = fractions.as_ref().ok_or(Error::MissingFractions("S3-FIFO"))?;
            let p_ghost = fr.ghost.at(p_hit);
            let p_m = fr.promote.at(p_hit);
            let so = params.s3fifo.unwrap_or(params.clock);
            let tail = so.tail_mean(p_hit);
            let to_main = |prob: f64| -> Result<PathBranch> {
                Ok(PathBranch::new(
                    prob,
                    vec![
                        ops.bounded("headM", so.head, so.head)?,
                        ops.queue("tailM", tail)?,
                    ],
                ))
            };
            let small = PathBranch::new(
                1.0 - p_ghost,
                vec![
                    ops.bounded("headS", so.head, so.head)?,
                    ops.queue("tailS", tail)?,
                ],
            )
            .with_children(vec![to_main(p_m)?, PathBranch::new(1.0 - p_m, vec![])]);
            let miss = PathBranch::new(p_miss, vec![ops.disk()?, ops.think("ghost", params.ghost)?])
                .with_children(vec![to_main(p_ghost)?, small]);
            let hit = PathBranch::new(p_hit, vec![]);
            let root = hit_miss(p_hit, ops.lookup()?, hit, miss);
            ClosedNetwork::new(label, mpl, root)
        }
    }
}

/// The printed closed-form bounds for LRU, FIFO and CLOCK with the measured
/// service means. Disk means of 5, 100 and 500 µs use the printed
/// coefficients; other disk means use the same derivation.
pub fn closed_form_bound(policy: &Policy, p_hit: f64, disk: f64, mpl: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hit) || p_hit.is_nan() {
        return Err(Error::HitRatioOutOfRange(p_hit));
    }
    let n = f64::from(mpl);
    let p = p_hit;
    let x = match policy {
        Policy::Lru => {
            let (a, b) = if disk == 5.0 {
                (6.1, 4.3)
            } else if disk == 100.0 {
                (101.1, 99.3)
            } else if disk == 500.0 {
                (501.1, 499.3)
            } else {
                (0.51 + disk + 0.59, disk - 0.7)
            };
            (n / (a - b * p)).min(1.0 / (0.59_f64).max(0.7 * p))
        }
        Policy::Fifo => {
            let (a, b) = if disk == 5.0 {
                (6.24, 5.73)
            } else if disk == 100.0 {
                (101.24, 100.73)
            } else if disk == 500.0 {
                (501.24, 500.73)
            } else {
                (0.51 + disk + 0.73, disk + 0.73)
            };
            (n / (a - b * p)).min(1.0 / (0.73 - 0.73 * p))
        }
        Policy::Clock => {
            let scan = 0.3 * clock_g(p);
            let (a, b) = if disk == 100.0 {
                (101.16 + scan, 100.65 + scan)
            } else {
                (0.51 + disk + 0.65 + scan, disk + 0.65 + scan)
            };
            (n / (a - b * p)).min(1.0 / ((1.0 - p) * (0.65 + scan)))
        }
        other => return Err(Error::UnsupportedPolicy(other.to_string())),
    };
    Ok(x)
}

/// Default hit-ratio grid: 0.40..0.90 by 0.05, then 0.92..1.00 by 0.02.
pub fn default_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (40..=90).step_by(5).map(|i| f64::from(i) / 100.0).collect();
    g.extend((92..=100).step_by(2).map(|i| f64::from(i) / 100.0));
    g
}

/// Evenly spaced grid on `[lo, hi]` with `steps` intervals.
pub fn uniform_grid(lo: f64, hi: f64, steps: u32) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                hi
            } else {
                lo + (hi - lo) * f64::from(i) / f64::from(steps)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoint {
    pub p_hit: f64,
    pub x_upper: f64,
    pub binding: BindingTerm,
    pub bottleneck: Option<StationId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub policy: Policy,
    pub disk: f64,
    pub mpl: u32,
    pub points: Vec<BoundPoint>,
}

impl BoundCurve {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x_upper).collect()
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty hit-ratio grid".into()));
    }
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidConfig("hit-ratio grid must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "hit-ratio grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Generic-engine bound for every grid point.
pub fn bound_curve(
    policy: &Policy,
    params: &ServiceParams,
    mpl: u32,
    grid: &[f64],
) -> Result<BoundCurve> {
    validate_grid(grid)?;
    let points = grid
        .iter()
        .map(|&p| {
            let b = qnet::throughput_upper_bound(&build_network(policy, p, params, mpl)?);
            Ok(BoundPoint {
                p_hit: p,
                x_upper: b.x_upper,
                binding: b.binding,
                bottleneck: b.bottleneck,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        policy: policy.clone(),
        disk: params.disk,
        mpl,
        points,
    })
}

/// Where the bound curve stops improving.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Knee {
    /// Start of the final strictly decreasing stretch.
    pub decrease_start: Option<f64>,
    /// Start of the final non-increasing stretch (plateau plus decrease);
    /// only reported together with `decrease_start`.
    pub plateau_start: Option<f64>,
}

impl Knee {
    pub fn exists(&self) -> bool {
        self.decrease_start.is_some()
    }
}

const KNEE_STEP: u32 = 1000;
const REL_EPS: f64 = 1e-12;

fn strictly_below(next: f64, prev: f64) -> bool {
    next < prev * (1.0 - REL_EPS)
}

fn not_above(next: f64, prev: f64) -> bool {
    next <= prev * (1.0 + REL_EPS)
}

/// Index of the first point of the trailing run whose consecutive pairs all
/// satisfy `keep`, or `None` when the last pair does not.
fn trailing_run(values: &[f64], keep: fn(f64, f64) -> bool) -> Option<usize> {
    let n = values.len();
    if n < 2 || !keep(values[n - 1], values[n - 2]) {
        return None;
    }
    let mut k = n - 2;
    while k > 0 && keep(values[k], values[k - 1]) {
        k -= 1;
    }
    Some(k)
}

/// Knee of the bound curve on `[0, 1]`.
pub fn hit_ratio_knee(policy: &Policy, params: &ServiceParams, mpl: u32) -> Result<Knee> {
    hit_ratio_knee_in(policy, params, mpl, 0.0, 1.0)
}

/// Knee of the bound curve restricted to `[lo, hi]`, scanned on a 1e-3 grid
/// and refined to 1e-6 around the decrease start.
pub fn hit_ratio_knee_in(
    policy: &Policy,
    params: &ServiceParams,
    mpl: u32,
    lo: f64,
    hi: f64,
) -> Result<Knee> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidConfig(format!("bad knee range [{lo}, {hi}]")));
    }
    let steps = ((hi - lo) * f64::from(KNEE_STEP)).round().max(1.0) as u32;
    let eval = |grid: &[f64]| -> Result<Vec<f64>> {
        grid.iter()
            .map(|&p| {
                build_network(policy, p, params, mpl).map(|n| qnet::throughput_upper_bound(&n).x_upper)
            })
            .collect()
    };
    let grid = uniform_grid(lo, hi, steps);
    let values = eval(&grid)?;
    let Some(k) = trailing_run(&values, strictly_below) else {
        return Ok(Knee::default());
    };
    let plateau = trailing_run(&values, not_above).map(|m| grid[m.min(k)]);

    // Refine: the true start lies between the neighbours of grid[k].
    let a = grid[k.saturating_sub(1)];
    let b = grid[(k + 1).min(grid.len() - 1)];
    let fine = uniform_grid(a, b, 2000);
    let fine_values = eval(&fine)?;
    let refined = match trailing_run(&fine_values, strictly_below) {
        Some(j) => fine[j],
        None => grid[k],
    };
    Ok(Knee {
        decrease_start: Some(refined),
        plateau_start: plateau.map(|p| p.min(refined)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    LruLike,
    FifoLike,
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::LruLike => "LRU-like",
            ClassLabel::FifoLike => "FIFO-like",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: ClassLabel,
    /// Knee at the configured disk mean, or at the first standard disk mean
    /// that has one.
    pub knee: Option<f64>,
}

/// LRU-like iff the bound has a knee at some standard disk mean (or at the
/// configured one).
pub fn classify(policy: &Policy, params: &ServiceParams, mpl: u32) -> Result<Classification> {
    let mut disks = vec![params.disk];
    disks.extend(STANDARD_DISKS.iter().copied().filter(|d| *d != params.disk));
    let mut knee = None;
    for disk in disks {
        let k = hit_ratio_knee(policy, &params.clone().with_disk(disk), mpl)?;
        if let Some(p) = k.decrease_start {
            knee = Some(p);
            break;
        }
    }
    Ok(Classification {
        label: if knee.is_some() {
            ClassLabel::LruLike
        } else {
            ClassLabel::FifoLike
        },
        knee,
    })
}
