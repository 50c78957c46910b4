use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use cachequeue::harness::{
    calibrate, run_bench, trace_mode_for, write_bench_csv, BenchConfig, BenchMode, BenchPolicy,
    CalibratedProfile, CalibrationConfig,
};
use cachequeue::qnet::DistKind;
use cachequeue::trace::{
    clock_scan_profile, estimate_s3fifo_params, estimate_slru_t_fraction, write_fraction_table,
    LabConfig, TableKind, Workload,
};
use cachequeue::{default_grid, SimConfig};
use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::report::{
    bench_rows, bound_rows, parse_grid, parse_list, parse_policy, sim_rows, table_file_name,
    write_report, Fractions, SweepSpec,
};
use crate::verify::{all_gated_pass, print_table, run_all, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "cachequeue", version, about = "Throughput bounds, simulation, trace lab and bench for cache eviction policies")]
pub struct Cli {
    /// key = value config file with [bound] [simulate] [trace] [bench] [verify] sections
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic throughput upper bound over a hit-ratio grid
    Bound(SweepArgs),
    /// Replicated event-driven simulation over a hit-ratio grid
    Simulate(SimulateArgs),
    /// Estimate SLRU, S3-FIFO and CLOCK fraction tables from Zipf traces
    Trace(TraceArgs),
    /// Calibrate and measure the concurrent cache prototype
    Bench(BenchArgs),
    /// Run the acceptance suite and print a table of checks
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// lru, fifo, problru[:Q], clock, slru, s3fifo (repeat or comma-separate)
    #[arg(long)]
    pub policy: Vec<String>,
    /// ProbLRU skip probabilities
    #[arg(long)]
    pub q: Vec<String>,
    /// Disk means in µs [default: 5,100,500]
    #[arg(long = "disk-us")]
    pub disk_us: Vec<String>,
    /// Multi-programming limits [default: 72]
    #[arg(long)]
    pub mpl: Vec<String>,
    /// `default`, `lo:hi:step` or a comma list
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction tables written by `trace` (kind read from the header)
    #[arg(long = "fractions-file")]
    pub fractions_file: Vec<PathBuf>,
    /// Calibrated service means to use instead of the defaults
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long)]
    pub reps: Option<u32>,
    #[arg(long)]
    pub cycles: Option<u64>,
    /// Override every queue station's distribution: exponential, deterministic, bounded-pareto
    #[arg(long)]
    pub dist: Option<String>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// slru, s3fifo, clock or all (repeat or comma-separate)
    #[arg(long)]
    pub table: Vec<String>,
    #[arg(long)]
    pub universe: Option<u64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Minimum warm and evaluation trace length
    #[arg(long)]
    pub length: Option<usize>,
    /// Accepted |achieved - target| hit ratio
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sweep: SweepArgs,
    /// Worker threads (MPL) [default: 72]
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "warmup-s")]
    pub warmup_s: Option<f64>,
    #[arg(long = "duration-s")]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub runs: Option<u32>,
    /// Items in the cache (Bernoulli mode)
    #[arg(long)]
    pub capacity: Option<usize>,
    /// bernoulli or trace
    #[arg(long)]
    pub mode: Option<String>,
    /// Zipf universe for trace mode
    #[arg(long)]
    pub universe: Option<u64>,
    /// Operations per worker during calibration
    #[arg(long = "calibration-ops")]
    pub calibration_ops: Option<usize>,
    /// Where to save the calibration profile [default: <out>.profile]
    #[arg(long = "profile-out")]
    pub profile_out: Option<PathBuf>,
    /// Also write summary rows in the report schema
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Do not pin workers to CPUs
    #[arg(long = "no-pin")]
    pub no_pin: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Smaller simulations and traces; a smoke run, too short for the
    /// statistical tolerances of the simulation checks
    #[arg(long)]
    pub quick: bool,
    /// Skip the hardware-dependent bench check
    #[arg(long = "no-bench")]
    pub no_bench: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sweep_spec(a: &SweepArgs, cfg: &ConfigFile, section: &str) -> Result<SweepSpec> {
    let fraction_paths: Vec<PathBuf> = if a.fractions_file.is_empty() {
        cfg.pick_list(&[], section, "fractions-file")
            .into_iter()
            .map(PathBuf::from)
            .collect()
    } else {
        a.fractions_file.clone()
    };
    let fractions = Fractions::load(&fraction_paths)?;
    let qs: Vec<f64> = parse_list(&cfg.pick_list(&a.q, section, "q"))?;
    let mut policies = Vec::new();
    for name in parse_list::<String>(&cfg.pick_list(&a.policy, section, "policy"))? {
        policies.extend(parse_policy(&name, &qs, &fractions)?);
    }
    let mut disks: Vec<f64> = parse_list(&cfg.pick_list(&a.disk_us, section, "disk-us"))?;
    if disks.is_empty() {
        disks = cachequeue::policy::STANDARD_DISKS.to_vec();
    }
    let mut mpls: Vec<u32> = parse_list(&cfg.pick_list(&a.mpl, section, "mpl"))?;
    if mpls.is_empty() {
        mpls = vec![cachequeue::policy::DEFAULT_MPL];
    }
    let grid = match cfg.pick(a.grid.clone(), section, "grid")? {
        Some(g) => parse_grid(&g)?,
        None => default_grid(),
    };
    let profile = match cfg.pick(a.profile.clone(), section, "profile")? {
        Some(p) => Some(load_profile(&p)?),
        None => None,
    };
    let spec = SweepSpec {
        policies,
        disks,
        mpls,
        grid,
        seed: cfg.pick(a.seed, section, "seed")?.unwrap_or(1),
        profile,
    };
    spec.validate()?;
    Ok(spec)
}

fn load_profile(path: &Path) -> Result<CalibratedProfile> {
    let f = File::open(path).with_context(|| format!("opening profile {}", path.display()))?;
    Ok(CalibratedProfile::load(f)?)
}

fn cmd_bound(a: &SweepArgs, cfg: &ConfigFile) -> Result<()> {
    let spec = sweep_spec(a, cfg, "bound")?;
    let rows = bound_rows(&spec)?;
    let out = cfg.pick(a.out.clone(), "bound", "out")?;
    write_report(&rows, output(out.as_deref())?)
}

fn cmd_simulate(a: &SimulateArgs, cfg: &ConfigFile) -> Result<()> {
    const S: &str = "simulate";
    let spec = sweep_spec(&a.sweep, cfg, S)?;
    let mut sim = SimConfig::default();
    if let Some(c) = cfg.pick(a.cycles, S, "cycles")? {
        sim = sim.with_cycles(c);
    }
    if let Some(r) = cfg.pick(a.reps, S, "reps")? {
        sim = sim.with_replications(r);
    }
    if let Some(d) = cfg.pick(a.dist.clone(), S, "dist")? {
        sim = sim.with_distribution(Some(d.parse::<DistKind>()?));
    }
    let rows = sim_rows(&spec, &sim)?;
    let out = cfg.pick(a.sweep.out.clone(), S, "out")?;
    write_report(&rows, output(out.as_deref())?)
}

fn cmd_trace(a: &TraceArgs, cfg: &ConfigFile) -> Result<()> {
    const S: &str = "trace";
    let defaults = LabConfig::default();
    let workload = Workload::new(
        cfg.pick(a.universe, S, "universe")?
            .unwrap_or(defaults.workload.universe),
        cfg.pick(a.theta, S, "theta")?.unwrap_or(defaults.workload.theta),
        cfg.pick(a.length, S, "length")?.unwrap_or(defaults.workload.length),
        cfg.pick(a.seed, S, "seed")?.unwrap_or(1),
    )?;
    let lab = LabConfig::new(workload)
        .with_tolerance(cfg.pick(a.tolerance, S, "tolerance")?.unwrap_or(defaults.tolerance));
    let grid = match cfg.pick(a.grid.clone(), S, "grid")? {
        Some(g) => parse_grid(&g)?,
        None => default_grid(),
    };
    let mut kinds = Vec::new();
    for t in parse_list::<String>(&cfg.pick_list(&a.table, S, "table"))? {
        match t.to_ascii_lowercase().replace('-', "").as_str() {
            "slru" => kinds.push(TableKind::SlruTFraction),
            "s3fifo" => kinds.push(TableKind::S3Fifo),
            "clock" => kinds.push(TableKind::ClockScan),
            "all" => kinds.extend([TableKind::SlruTFraction, TableKind::S3Fifo, TableKind::ClockScan]),
            other => bail!("unknown table `{other}`"),
        }
    }
    if kinds.is_empty() {
        kinds = vec![TableKind::SlruTFraction, TableKind::S3Fifo, TableKind::ClockScan];
    }
    kinds.dedup();
    let dir = cfg
        .pick(a.out.clone(), S, "out")?
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for kind in kinds {
        let table = match kind {
            TableKind::SlruTFraction => estimate_slru_t_fraction(&lab, &grid)?,
            TableKind::S3Fifo => estimate_s3fifo_params(&lab, &grid)?,
            TableKind::ClockScan => clock_scan_profile(&lab, &grid)?,
        };
        for r in table.rows.iter().filter(|r| !r.reached) {
            log::warn!(
                "{kind:?}: target {} not reached, best {:.4} at capacity {}",
                r.target,
                r.p_hit,
                r.capacity
            );
        }
        if kind == TableKind::ClockScan && !table.is_non_decreasing(0, 0.0) {
            log::warn!("CLOCK scan depth is not non-decreasing in p_hit");
        }
        let path = dir.join(table_file_name(kind));
        write_fraction_table(&table, output(Some(&path))?)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, cfg: &ConfigFile) -> Result<()> {
    const S: &str = "bench";
    let spec = sweep_spec(&a.sweep, cfg, S)?;
    let policies = spec
        .policies
        .iter()
        .map(|p| BenchPolicy::try_from(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let base = BenchConfig::default();
    let workers = cfg.pick(a.workers, S, "workers")?.unwrap_or(base.workers);
    let profile = match &spec.profile {
        Some(p) => p.clone(),
        None => {
            let mut c = CalibrationConfig {
                workers,
                seed: spec.seed,
                ..CalibrationConfig::default()
            };
            if let Some(ops) = cfg.pick(a.calibration_ops, S, "calibration-ops")? {
                c.ops_per_worker = ops;
            }
            calibrate(&c)?
        }
    };
    let out_path = cfg.pick(a.sweep.out.clone(), S, "out")?;
    let profile_path = cfg.pick(a.profile_out.clone(), S, "profile-out")?.or_else(|| {
        out_path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".profile");
            PathBuf::from(s)
        })
    });
    match &profile_path {
        Some(p) => std::fs::write(p, profile.to_text())
            .with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{}", profile.to_text()),
    }
    let template = BenchConfig {
        workers,
        warmup: Duration::from_secs_f64(cfg.pick(a.warmup_s, S, "warmup-s")?.unwrap_or(5.0)),
        duration: Duration::from_secs_f64(cfg.pick(a.duration_s, S, "duration-s")?.unwrap_or(10.0)),
        runs: cfg.pick(a.runs, S, "runs")?.unwrap_or(base.runs),
        capacity: cfg.pick(a.capacity, S, "capacity")?.unwrap_or(base.capacity),
        seed: spec.seed,
        pin: !a.no_pin,
        ..base
    };
    let trace_mode = match cfg.pick(a.mode.clone(), S, "mode")?.as_deref() {
        None | Some("bernoulli") => false,
        Some("trace") => true,
        Some(other) => bail!("unknown bench mode `{other}`"),
    };
    let mut results = Vec::new();
    for &policy in &policies {
        for &disk in &spec.disks {
            for &p in &spec.grid {
                let mode = if trace_mode {
                    let mut lab = LabConfig::default();
                    lab.workload.seed = spec.seed;
                    if let Some(u) = cfg.pick(a.universe, S, "universe")? {
                        lab.workload.universe = u;
                    }
                    trace_mode_for(policy, &lab, p)?
                } else {
                    BenchMode::Bernoulli { p_hit: p }
                };
                let r = run_bench(&BenchConfig {
                    policy,
                    mode,
                    disk_us: disk,
                    ..template.clone()
                })?;
                log::info!(
                    "{policy} disk {disk} p {p}: {:.0} rps +- {:.0}, hit ratio {:.4}",
                    r.mean_rps,
                    r.ci_half_rps,
                    r.hit_ratio
                );
                results.push(r);
            }
        }
    }
    write_bench_csv(&results, output(out_path.as_deref())?)?;
    if let Some(path) = cfg.pick(a.report.clone(), S, "report")? {
        write_report(&bench_rows(&results), output(Some(&path))?)?;
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, cfg: &ConfigFile) -> Result<bool> {
    const S: &str = "verify";
    let seed = cfg.pick(a.seed, S, "seed")?.unwrap_or(1);
    let quick = a.quick || cfg.parsed::<bool>(S, "quick")?.unwrap_or(false);
    let mut opts = if quick {
        VerifyOptions::quick(seed)
    } else {
        VerifyOptions::full(seed)
    };
    opts.bench = !a.no_bench;
    let checks = run_all(&opts, |c| log::info!("criterion {} done: {}", c.id, c.passed))?;
    print_table(&checks, io::stdout().lock())?;
    Ok(all_gated_pass(&checks))
}

/// Runs the parsed command. `Ok(false)` means verification failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Bound(a) => cmd_bound(a, &cfg).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a, &cfg).map(|_| true),
        Command::Trace(a) => cmd_trace(a, &cfg).map(|_| true),
        Command::Bench(a) => cmd_bench(a, &cfg).map(|_| true),
        Command::Verify(a) => cmd_verify(a, &cfg),
    }
}
