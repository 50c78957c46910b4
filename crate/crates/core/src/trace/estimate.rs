use std::io::{Read, Write};

use super::workload::{zipf_trace, Workload};
use super::{TracePolicy, TraceStats, SLRU_PROTECTED_FRACTION};
use crate::error::{Error, Result};
use crate::policy::{FractionCurve, Policy, S3Fractions};

/// Offset separating the evaluation trace's seed from the warm trace's.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;
/// Upper limit on fill passes when the warm trace cannot fill the cache.
const MAX_FILL_PASSES: usize = 4;

/// Workload and calibration settings for the trace lab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabConfig {
    /// `length` is the minimum warm and evaluation trace length; each grows
    /// to ten times the capacity under test.
    pub workload: Workload,
    /// Accepted `|achieved - target|` hit ratio.
    pub tolerance: f64,
    /// SLRU protected share.
    pub protected: f64,
}

impl LabConfig {
    pub fn new(workload: Workload) -> Self {
        LabConfig {
            workload,
            tolerance: 0.005,
            protected: SLRU_PROTECTED_FRACTION,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        if !(self.tolerance >= 0.002 && self.tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "calibration tolerance {} must be in [0.002, 1)",
                self.tolerance
            )));
        }
        Ok(())
    }
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig::new(Workload {
            universe: 1_000_000,
            theta: 0.99,
            length: 1_000_000,
            seed: 1,
        })
    }
}

/// Warm and evaluation traces, regenerated when a longer one is needed.
struct Traces {
    workload: Workload,
    warm: Vec<u64>,
    eval: Vec<u64>,
}

impl Traces {
    fn new(workload: Workload) -> Self {
        Traces {
            workload,
            warm: Vec::new(),
            eval: Vec::new(),
        }
    }

    fn ensure(&mut self, capacity: usize) -> Result<()> {
        let len = self.workload.length.max(capacity.saturating_mul(10));
        if self.warm.len() < len {
            let w = self.workload.with_length(len);
            self.warm = zipf_trace(&w)?;
            self.eval = zipf_trace(&w.with_seed(w.seed.wrapping_add(EVAL_SEED_OFFSET)))?;
        }
        Ok(())
    }
}

fn measure(policy: TracePolicy, capacity: usize, traces: &mut Traces) -> Result<TraceStats> {
    traces.ensure(capacity)?;
    let len = traces.workload.length.max(capacity.saturating_mul(10));
    let warm = &traces.warm[..len];
    let eval = &traces.eval[..len];
    let mut cache = policy.build(capacity, traces.workload.seed)?;
    // warm fill: pass until full (or no progress), then one full pass
    for _ in 0..MAX_FILL_PASSES {
        let before = cache.len();
        for &k in warm {
            cache.access(k);
            if cache.is_full() {
                break;
            }
        }
        if cache.is_full() || cache.len() == before {
            break;
        }
    }
    for &k in warm {
        cache.access(k);
    }
    cache.reset_stats();
    for &k in eval {
        cache.access(k);
    }
    Ok(*cache.stats())
}

/// Post-warmup counters for `policy` at `capacity` on the lab workload.
pub fn measure_hit_ratio(policy: TracePolicy, capacity: usize, lab: &LabConfig) -> Result<TraceStats> {
    lab.validate()?;
    measure(policy, capacity, &mut Traces::new(lab.workload))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub capacity: usize,
    pub achieved: f64,
    /// Whether `|achieved - target| <= tolerance`; false means best effort.
    pub reached: bool,
    pub stats: TraceStats,
}

/// Bisection over (log) capacity for the target hit ratio.
pub fn calibrate_capacity(policy: TracePolicy, lab: &LabConfig, target: f64) -> Result<Calibration> {
    lab.validate()?;
    calibrate(policy, lab, target, policy.min_capacity(), &mut Traces::new(lab.workload))
}

fn calibrate(
    policy: TracePolicy,
    lab: &LabConfig,
    target: f64,
    lower: usize,
    traces: &mut Traces,
) -> Result<Calibration> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::HitRatioOutOfRange(target));
    }
    let tol = lab.tolerance;
    let universe = usize::try_from(lab.workload.universe).unwrap_or(usize::MAX);
    let mut lo = lower.max(policy.min_capacity());
    let mut hi = universe.max(lo);
    let mut eval = |c: usize| -> Result<Calibration> {
        let stats = measure(policy, c, traces)?;
        let achieved = stats.hit_ratio();
        Ok(Calibration {
            capacity: c,
            achieved,
            reached: (achieved - target).abs() <= tol,
            stats,
        })
    };
    let top = eval(hi)?;
    if target >= top.achieved - tol {
        return Ok(top);
    }
    let bottom = eval(lo)?;
    if target <= bottom.achieved + tol {
        return Ok(bottom);
    }
    let (mut best_lo, mut best_hi) = (bottom, top);
    while hi - lo > 1 {
        let mid = ((lo as f64 * hi as f64).sqrt().round() as usize).clamp(lo + 1, hi - 1);
        let m = eval(mid)?;
        if m.reached {
            return Ok(m);
        }
        if m.achieved < target {
            lo = mid;
            best_lo = m;
        } else {
            hi = mid;
            best_hi = m;
        }
    }
    Ok(
        if (best_lo.achieved - target).abs() <= (best_hi.achieved - target).abs() {
            best_lo
        } else {
            best_hi
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    SlruTFraction,
    S3Fifo,
    ClockScan,
}

impl TableKind {
    pub fn headers(&self) -> &'static [&'static str] {
        match self {
            TableKind::SlruTFraction => &["p_hit", "f_T"],
            TableKind::S3Fifo => &["p_hit", "p_ghost", "p_M"],
            TableKind::ClockScan => &["p_hit", "scan_depth"],
        }
    }

    fn from_headers(h: &[&str]) -> Result<Self> {
        [TableKind::SlruTFraction, TableKind::S3Fifo, TableKind::ClockScan]
            .into_iter()
            .find(|k| k.headers() == h)
            .ok_or_else(|| Error::Parse(format!("unrecognized fraction table header {h:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionRow {
    pub target: f64,
    pub capacity: usize,
    /// Achieved hit ratio; the table is keyed by this value.
    pub p_hit: f64,
    pub reached: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionTable {
    pub kind: TableKind,
    pub rows: Vec<FractionRow>,
}

impl FractionTable {
    /// Column `col` (0-based among the value columns) as an interpolating
    /// curve over achieved hit ratio. Rows repeating an earlier hit ratio
    /// are dropped.
    pub fn curve(&self, col: usize) -> Result<FractionCurve> {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for r in &self.rows {
            let v = *r
                .values
                .get(col)
                .ok_or_else(|| Error::InvalidConfig(format!("no value column {col}")))?;
            if pts.iter().all(|(p, _)| *p != r.p_hit) {
                pts.push((r.p_hit, v.clamp(0.0, 1.0)));
            }
        }
        FractionCurve::table(pts)
    }

    pub fn slru_policy(&self) -> Result<Policy> {
        self.expect(TableKind::SlruTFraction)?;
        Ok(Policy::Slru {
            t_fraction: Some(self.curve(0)?),
        })
    }

    pub fn s3fifo_policy(&self) -> Result<Policy> {
        self.expect(TableKind::S3Fifo)?;
        Ok(Policy::S3Fifo {
            fractions: Some(S3Fractions {
                ghost: self.curve(0)?,
                promote: self.curve(1)?,
            }),
        })
    }

    /// Whether value column `col` never drops by more than `slack` as the
    /// hit ratio increases.
    pub fn is_non_decreasing(&self, col: usize, slack: f64) -> bool {
        let mut rows: Vec<&FractionRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| a.p_hit.total_cmp(&b.p_hit));
        rows.windows(2)
            .all(|w| w[1].values[col] >= w[0].values[col] - slack)
    }

    fn expect(&self, kind: TableKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidConfig(format!(
                "expected a {kind:?} table, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn estimate(
    policy: TracePolicy,
    kind: TableKind,
    lab: &LabConfig,
    grid: &[f64],
    values: fn(&TraceStats) -> Option<Vec<f64>>,
) -> Result<FractionTable> {
    lab.validate()?;
    if grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::InvalidConfig("estimator grid must lie in (0, 1]".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut traces = Traces::new(lab.workload);
    let mut lower = policy.min_capacity();
    let mut rows = Vec::with_capacity(sorted.len());
    for target in sorted {
        let c = calibrate(policy, lab, target, lower, &mut traces)?;
        log::debug!(
            "{policy} target {target}: capacity {} achieved {:.4}",
            c.capacity,
            c.achieved
        );
        lower = c.capacity;
        // A ratio with an empty denominator (e.g. no evictions once the
        // cache holds the whole universe) is undefined; skip the row.
        let Some(values) = values(&c.stats) else {
            log::debug!("{policy} target {target}: undefined fraction, row skipped");
            continue;
        };
        rows.push(FractionRow {
            target,
            capacity: c.capacity,
            p_hit: c.achieved,
            reached: c.reached,
            values,
        });
    }
    Ok(FractionTable { kind, rows })
}

/// SLRU protected-list hit fraction at calibrated capacities.
pub fn estimate_slru_t_fraction(lab: &LabConfig, grid: &[f64]) -> Result<FractionTable> {
    let policy = TracePolicy::Slru {
        protected: lab.protected,
    };
    estimate(policy, TableKind::SlruTFraction, lab, grid, |s| {
        (s.hits > 0).then(|| vec![s.t_fraction()])
    })
}

/// S3-FIFO ghost admission and Small-tail promotion fractions.
pub fn estimate_s3fifo_params(lab: &LabConfig, grid: &[f64]) -> Result<FractionTable> {
    estimate(TracePolicy::S3Fifo, TableKind::S3Fifo, lab, grid, |s| {
        (s.misses > 0 && s.small_tail_events > 0).then(|| vec![s.p_ghost(), s.p_m()])
    })
}

/// CLOCK mean bits inspected per eviction.
pub fn clock_scan_profile(lab: &LabConfig, grid: &[f64]) -> Result<FractionTable> {
    estimate(TracePolicy::Clock, TableKind::ClockScan, lab, grid, |s| {
        (s.evictions > 0).then(|| vec![s.mean_scan_depth()])
    })
}

/// CSV with a single header row and full-precision numbers.
pub fn write_fraction_table<W: Write>(table: &FractionTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(table.kind.headers())?;
    for r in &table.rows {
        let mut rec = vec![r.p_hit.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a table written by [`write_fraction_table`]; the kind is taken
/// from the header.
pub fn read_fraction_table<R: Read>(input: R) -> Result<FractionTable> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let kind = TableKind::from_headers(&names)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let nums = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if nums.len() != names.len() {
            return Err(Error::Parse("ragged fraction table row".into()));
        }
        rows.push(FractionRow {
            target: nums[0],
            capacity: 0,
            p_hit: nums[0],
            reached: true,
            values: nums[1..].to_vec(),
        });
    }
    Ok(FractionTable { kind, rows })
}
