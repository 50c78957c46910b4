//! Sweep specifications, argument parsing helpers and the CSV report rows
//! shared by every prong.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cachequeue::harness::BenchResult;
use cachequeue::policy::uniform_grid;
use cachequeue::trace::{read_fraction_table, FractionTable, TableKind};
use cachequeue::{
    bound_curve, build_network, default_grid, replicate, throughput_upper_bound, CalibratedProfile,
    Policy, ServiceParams, SimConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prong {
    Bound,
    Sim,
    Bench,
}

impl fmt::Display for Prong {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prong::Bound => "bound",
            Prong::Sim => "sim",
            Prong::Bench => "bench",
        })
    }
}

impl std::str::FromStr for Prong {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bound" => Ok(Prong::Bound),
            "sim" => Ok(Prong::Sim),
            "bench" => Ok(Prong::Bench),
            other => bail!("unknown prong `{other}`"),
        }
    }
}

/// One output line: a (prong, configuration, grid point) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub prong: Prong,
    pub policy: String,
    pub q: Option<f64>,
    pub disk_us: f64,
    pub mpl: u32,
    pub p_hit: f64,
    /// Requests per µs.
    pub throughput: f64,
    pub ci_half: Option<f64>,
    pub binding_term: Option<String>,
    pub bottleneck: Option<String>,
}

pub const REPORT_HEADER: [&str; 11] = [
    "prong",
    "policy",
    "q",
    "disk_us",
    "mpl",
    "p_hit",
    "throughput_req_per_us",
    "throughput_rps",
    "ci_half",
    "binding_term",
    "bottleneck",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.prong.to_string(),
            r.policy.clone(),
            opt(r.q),
            r.disk_us.to_string(),
            r.mpl.to_string(),
            r.p_hit.to_string(),
            r.throughput.to_string(),
            (r.throughput * 1e6).to_string(),
            opt(r.ci_half),
            r.binding_term.clone().unwrap_or_default(),
            r.bottleneck.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_HEADER {
        bail!("unexpected report header {header:?}");
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse().with_context(|| format!("bad number `{s}`"))?))
        }
    };
    let text = |s: &str| (!s.is_empty()).then(|| s.to_string());
    r.records()
        .map(|rec| {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            Ok(ReportRow {
                prong: f(0).parse()?,
                policy: f(1).to_string(),
                q: num(f(2))?,
                disk_us: num(f(3))?.ok_or_else(|| anyhow!("missing disk_us"))?,
                mpl: f(4).parse().context("bad mpl")?,
                p_hit: num(f(5))?.ok_or_else(|| anyhow!("missing p_hit"))?,
                throughput: num(f(6))?.ok_or_else(|| anyhow!("missing throughput"))?,
                ci_half: num(f(8))?,
                binding_term: text(f(9)),
                bottleneck: text(f(10)),
            })
        })
        .collect()
}

/// Fraction tables supplied with `--fractions-file`.
#[derive(Debug, Clone, Default)]
pub struct Fractions {
    pub slru: Option<FractionTable>,
    pub s3fifo: Option<FractionTable>,
}

impl Fractions {
    pub fn add(&mut self, table: FractionTable) {
        match table.kind {
            TableKind::SlruTFraction => self.slru = Some(table),
            TableKind::S3Fifo => self.s3fifo = Some(table),
            TableKind::ClockScan => {
                log::info!("scan-depth tables are informational; CLOCK uses the fitted g(p)")
            }
        }
    }

    pub fn load(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let mut f = Fractions::default();
        for p in paths {
            let p = p.as_ref();
            let file =
                std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            f.add(read_fraction_table(file).with_context(|| format!("reading {}", p.display()))?);
        }
        Ok(f)
    }
}

/// Splits every item on commas and parses each piece.
pub fn parse_list<T: std::str::FromStr>(items: &[String]) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    items
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("`{s}`: {e}")))
        .collect()
}

/// `default`, `lo:hi:step`, or a comma list of hit ratios.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s == "default" {
        return Ok(default_grid());
    }
    let grid = if let [lo, hi, step] = s.split(':').collect::<Vec<_>>()[..] {
        let (lo, hi, step): (f64, f64, f64) = (lo.parse()?, hi.parse()?, step.parse()?);
        if !(step > 0.0 && hi > lo) {
            bail!("grid `{s}` needs lo < hi and step > 0");
        }
        let steps = ((hi - lo) / step).round();
        if ((lo + steps * step) - hi).abs() > 1e-9 {
            bail!("grid `{s}`: step does not divide the range");
        }
        uniform_grid(lo, hi, steps as u32)
    } else {
        parse_list::<f64>(&[s.to_string()])?
    };
    cachequeue::policy::validate_grid(&grid)?;
    Ok(grid)
}

/// One policy name, expanded over `qs` for ProbLRU. `problru:Q` fixes q.
pub fn parse_policy(name: &str, qs: &[f64], fractions: &Fractions) -> Result<Vec<Policy>> {
    let lower = name.trim().to_ascii_lowercase();
    let (base, inline_q) = match lower.split_once(':') {
        Some((b, q)) => (b.to_string(), Some(q.parse::<f64>().context("bad inline q")?)),
        None => (lower, None),
    };
    let one = |p: Policy| Ok(vec![p]);
    match base.replace(['-', '_'], "").as_str() {
        "lru" => one(Policy::Lru),
        "fifo" => one(Policy::Fifo),
        "clock" => one(Policy::Clock),
        "problru" => {
            let qs: Vec<f64> = match inline_q {
                Some(q) => vec![q],
                None if qs.is_empty() => bail!("ProbLRU needs --q or problru:Q"),
                None => qs.to_vec(),
            };
            if let Some(q) = qs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                bail!("ProbLRU q={q} outside [0, 1]");
            }
            Ok(qs.into_iter().map(|q| Policy::ProbLru { q }).collect())
        }
        "slru" => {
            let t = fractions.slru.as_ref().ok_or_else(|| {
                anyhow!("SLRU needs an f_T table: run `cachequeue trace` and pass --fractions-file")
            })?;
            one(t.slru_policy()?)
        }
        "s3fifo" => {
            let t = fractions.s3fifo.as_ref().ok_or_else(|| {
                anyhow!("S3-FIFO needs a p_ghost/p_M table: run `cachequeue trace` and pass --fractions-file")
            })?;
            one(t.s3fifo_policy()?)
        }
        other => bail!("unknown policy `{other}`"),
    }
}

/// What to sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub policies: Vec<Policy>,
    pub disks: Vec<f64>,
    pub mpls: Vec<u32>,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub profile: Option<CalibratedProfile>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            bail!("no policies given (use --policy)");
        }
        if self.disks.is_empty() || self.mpls.is_empty() {
            bail!("disk means and MPLs must be non-empty");
        }
        if self.disks.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            bail!("disk means must be >= 0");
        }
        if self.mpls.contains(&0) {
            bail!("MPL must be >= 1");
        }
        cachequeue::policy::validate_grid(&self.grid)?;
        Ok(())
    }

    pub fn params(&self, disk: f64) -> ServiceParams {
        match &self.profile {
            Some(p) => p.service_params(disk),
            None => ServiceParams::default().with_disk(disk),
        }
    }

    fn configs(&self) -> impl Iterator<Item = (&Policy, f64, u32)> {
        self.policies.iter().flat_map(move |p| {
            self.disks
                .iter()
                .flat_map(move |&d| self.mpls.iter().map(move |&n| (p, d, n)))
        })
    }
}

pub fn bound_rows(spec: &SweepSpec) -> Result<Vec<ReportRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (policy, disk, mpl) in spec.configs() {
        let curve = bound_curve(policy, &spec.params(disk), mpl, &spec.grid)?;
        rows.extend(curve.points.into_iter().map(|pt| ReportRow {
            prong: Prong::Bound,
            policy: policy.name().to_string(),
            q: policy.q(),
            disk_us: disk,
            mpl,
            p_hit: pt.p_hit,
            throughput: pt.x_upper,
            ci_half: None,
            binding_term: Some(pt.binding.to_string()),
            bottleneck: pt.bottleneck.map(|b| b.to_string()),
        }));
    }
    Ok(rows)
}

/// Replicated simulation per grid point. Points whose mean exceeds the
/// bound by more than 1% are logged.
pub fn sim_rows(spec: &SweepSpec, sim: &SimConfig) -> Result<Vec<ReportRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (policy, disk, mpl) in spec.configs() {
        let params = spec.params(disk);
        for &p in &spec.grid {
            let net = build_network(policy, p, &params, mpl)?;
            let s = replicate(&net, &sim.clone().with_seed(spec.seed))?;
            let bound = throughput_upper_bound(&net).x_upper;
            if s.mean_throughput > 1.01 * bound {
                log::warn!(
                    "{policy} disk {disk} N={mpl} p={p}: sim {} exceeds bound {bound}",
                    s.mean_throughput
                );
            }
            rows.push(ReportRow {
                prong: Prong::Sim,
                policy: policy.name().to_string(),
                q: policy.q(),
                disk_us: disk,
                mpl,
                p_hit: p,
                throughput: s.mean_throughput,
                ci_half: Some(s.ci_half_width),
                binding_term: None,
                bottleneck: None,
            });
        }
    }
    Ok(rows)
}

pub fn bench_rows(results: &[BenchResult]) -> Vec<ReportRow> {
    results
        .iter()
        .map(|r| {
            let q = match r.config.policy {
                cachequeue::BenchPolicy::ProbLru { q } => Some(q),
                _ => None,
            };
            ReportRow {
                prong: Prong::Bench,
                policy: match r.config.policy {
                    cachequeue::BenchPolicy::ProbLru { .. } => "ProbLRU".to_string(),
                    other => other.to_string(),
                },
                q,
                disk_us: r.config.disk_us,
                mpl: r.config.workers as u32,
                p_hit: r.p_hit(),
                throughput: r.mean_rps / 1e6,
                ci_half: Some(r.ci_half_rps / 1e6),
                binding_term: None,
                bottleneck: None,
            }
        })
        .collect()
}

/// Output file name for a trace-lab table.
pub fn table_file_name(kind: TableKind) -> &'static str {
    match kind {
        TableKind::SlruTFraction => "slru_t_fraction.csv",
        TableKind::S3Fifo => "s3fifo_fractions.csv",
        TableKind::ClockScan => "clock_scan_depth.csv",
    }
}
