//! Closed queueing networks and operational analysis.
//!
//! A [`ClosedNetwork`] describes one full request cycle as a probability tree
//! of [`PathBranch`]es. Every branch carries an ordered list of [`Visit`]s to
//! either a think station (infinite server, pure delay) or a queue station
//! (single FCFS server). A fixed population of `mpl` jobs cycles through the
//! tree forever.
//!
//! The analysis here is the classic asymptotic bound for closed systems:
//!
//! ```text
//! X <= min( N / (D + Z), 1 / Dmax )
//! ```
//!
//! where `Z` is the mean think time per cycle, `D` the total queue demand and
//! `Dmax` the largest per-station demand. Stations whose mean is only known to
//! lie in an interval (tail updates) contribute their lower bound to `D` and
//! `Dmax`, which keeps the result an upper bound for any mean in the interval.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Name of the think station every request cycle starts with.
pub const LOOKUP: &str = "cache-lookup";

/// Tolerance on sibling branch probabilities.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Shape of the bounded-Pareto fit for head-update service times.
pub const HEAD_PARETO_ALPHA: f64 = 0.45;
/// Range of the bounded-Pareto head-update fit, in µs.
pub const HEAD_PARETO_RANGE: (f64, f64) = (0.1, 1.2);

/// Distribution family of a [`ServiceDist`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    Deterministic,
    Exponential,
    BoundedPareto,
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistKind::Deterministic => "deterministic",
            DistKind::Exponential => "exponential",
            DistKind::BoundedPareto => "bounded-pareto",
        })
    }
}

impl std::str::FromStr for DistKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" | "det" => Ok(DistKind::Deterministic),
            "exponential" | "exp" => Ok(DistKind::Exponential),
            "bounded-pareto" | "pareto" | "bp" => Ok(DistKind::BoundedPareto),
            other => Err(Error::Parse(format!("unknown distribution kind `{other}`"))),
        }
    }
}

/// A service-time distribution, in µs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceDist {
    Deterministic {
        mean: f64,
    },
    Exponential {
        mean: f64,
    },
    BoundedPareto {
        alpha: f64,
        lower: f64,
        upper: f64,
        mean: f64,
    },
}

impl ServiceDist {
    /// A fixed delay. A zero mean is accepted and models an instantaneous
    /// server.
    pub fn deterministic(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "deterministic mean must be finite and >= 0, got {mean}"
            )));
        }
        Ok(ServiceDist::Deterministic { mean })
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "exponential mean must be finite and > 0, got {mean}"
            )));
        }
        Ok(ServiceDist::Exponential { mean })
    }

    /// Truncated Pareto with shape `alpha` on `[lower, upper]`; the mean is
    /// derived analytically.
    pub fn bounded_pareto(alpha: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "pareto shape must be > 0, got {alpha}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && 0.0 < lower && lower < upper) {
            return Err(Error::InvalidDistribution(format!(
                "pareto bounds need 0 < lower < upper, got [{lower}, {upper}]"
            )));
        }
        let mean = bounded_pareto_mean(alpha, lower, upper);
        Ok(ServiceDist::BoundedPareto {
            alpha,
            lower,
            upper,
            mean,
        })
    }

    /// Bounded Pareto with shape `alpha` and `upper / lower = ratio`, scaled so
    /// that its mean is `mean`.
    pub fn bounded_pareto_with_mean(alpha: f64, ratio: f64, mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "pareto mean must be > 0, got {mean}"
            )));
        }
        if !(ratio.is_finite() && ratio > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "pareto range ratio must be > 1, got {ratio}"
            )));
        }
        let unit = bounded_pareto_mean(alpha, 1.0, ratio);
        let lower = mean / unit;
        Self::bounded_pareto(alpha, lower, lower * ratio)
    }

    /// Same family as `kind` with the given mean. Bounded-Pareto uses the
    /// head-update fit's shape and range ratio, rescaled to `mean`.
    ///
    /// A zero mean always yields the instantaneous deterministic server.
    pub fn of_kind(kind: DistKind, mean: f64) -> Result<Self> {
        if mean == 0.0 {
            return Self::deterministic(0.0);
        }
        match kind {
            DistKind::Deterministic => Self::deterministic(mean),
            DistKind::Exponential => Self::exponential(mean),
            DistKind::BoundedPareto => Self::bounded_pareto_with_mean(
                HEAD_PARETO_ALPHA,
                HEAD_PARETO_RANGE.1 / HEAD_PARETO_RANGE.0,
                mean,
            ),
        }
    }

    pub fn kind(&self) -> DistKind {
        match self {
            ServiceDist::Deterministic { .. } => DistKind::Deterministic,
            ServiceDist::Exponential { .. } => DistKind::Exponential,
            ServiceDist::BoundedPareto { .. } => DistKind::BoundedPareto,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceDist::Deterministic { mean }
            | ServiceDist::Exponential { mean }
            | ServiceDist::BoundedPareto { mean, .. } => mean,
        }
    }

    /// Multiply every time parameter by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            ServiceDist::Deterministic { mean } => ServiceDist::Deterministic {
                mean: mean * factor,
            },
            ServiceDist::Exponential { mean } => ServiceDist::Exponential {
                mean: mean * factor,
            },
            ServiceDist::BoundedPareto {
                alpha,
                lower,
                upper,
                mean,
            } => ServiceDist::BoundedPareto {
                alpha,
                lower: lower * factor,
                upper: upper * factor,
                mean: mean * factor,
            },
        }
    }

    /// Draw one service time.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceDist::Deterministic { mean } => mean,
            ServiceDist::Exponential { mean } => {
                // 1 - U lies in (0, 1], so the log is finite.
                let u: f64 = rng.random();
                -(1.0 - u).ln() * mean
            }
            ServiceDist::BoundedPareto {
                alpha,
                lower,
                upper,
                ..
            } => {
                let u: f64 = rng.random();
                let tail = (lower / upper).powf(alpha);
                let x = lower / (1.0 - u * (1.0 - tail)).powf(1.0 / alpha);
                x.clamp(lower, upper)
            }
        }
    }
}

/// Analytic mean of the truncated Pareto on `[lower, upper]`.
pub fn bounded_pareto_mean(alpha: f64, lower: f64, upper: f64) -> f64 {
    let norm = 1.0 - (lower / upper).powf(alpha);
    let integral = if (alpha - 1.0).abs() < 1e-12 {
        lower * (upper / lower).ln()
    } else {
        alpha * lower.powf(alpha) * (upper.powf(1.0 - alpha) - lower.powf(1.0 - alpha))
            / (1.0 - alpha)
    };
    integral / norm
}

/// Symbolic station label, unique within one network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StationId(Arc<str>);

impl StationId {
    pub fn new(name: &str) -> Self {
        StationId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        StationId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StationClass {
    /// Single FCFS server.
    Queue,
    /// Infinite server; jobs never wait.
    Think,
}

/// What the bound analysis knows about a station's mean service time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanBound {
    /// The mean is the distribution's mean.
    Exact,
    /// Only `lo <= mean <= hi` is known.
    Interval { lo: f64, hi: f64 },
}

/// One stop on a request's path.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub station: StationId,
    pub class: StationClass,
    pub service: ServiceDist,
    pub bound: MeanBound,
}

impl Visit {
    pub fn think(station: &str, service: ServiceDist) -> Self {
        Visit {
            station: StationId::new(station),
            class: StationClass::Think,
            service,
            bound: MeanBound::Exact,
        }
    }

    pub fn queue(station: &str, service: ServiceDist) -> Self {
        Visit {
            station: StationId::new(station),
            class: StationClass::Queue,
            service,
            bound: MeanBound::Exact,
        }
    }

    /// Queue visit whose true mean is only known to lie in `[lo, hi]`; the
    /// simulator still serves it from `service`.
    pub fn queue_bounded(station: &str, service: ServiceDist, lo: f64, hi: f64) -> Self {
        Visit {
            bound: MeanBound::Interval { lo, hi },
            ..Visit::queue(station, service)
        }
    }

    fn mean_interval(&self) -> (f64, f64) {
        match self.bound {
            MeanBound::Exact => (self.service.mean(), self.service.mean()),
            MeanBound::Interval { lo, hi } => (lo, hi),
        }
    }
}

/// A node of the request-cycle probability tree: with `probability` (relative
/// to its siblings) the request performs `visits` in order and then continues
/// into one of `children`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBranch {
    pub probability: f64,
    pub visits: Vec<Visit>,
    pub children: Vec<PathBranch>,
}

impl PathBranch {
    pub fn new(probability: f64, visits: Vec<Visit>) -> Self {
        PathBranch {
            probability,
            visits,
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<PathBranch>) -> Self {
        self.children = children;
        self
    }
}

/// A leaf-to-root path through the tree with its absolute probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPath {
    pub probability: f64,
    pub visits: Vec<Visit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub class: StationClass,
}

/// A policy's request-cycle description plus its population.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedNetwork {
    label: String,
    mpl: u32,
    root: PathBranch,
    stations: Vec<Station>,
}

impl ClosedNetwork {
    /// Validate and build. The canonical station order is the order of first
    /// appearance in a depth-first walk of the tree.
    pub fn new(label: impl Into<String>, mpl: u32, root: PathBranch) -> Result<Self> {
        if mpl == 0 {
            return Err(Error::InvalidNetwork("mpl must be >= 1".into()));
        }
        let mut stations: Vec<Station> = Vec::new();
        validate_branch(&root, &mut stations)?;
        let net = ClosedNetwork {
            label: label.into(),
            mpl,
            root,
            stations,
        };
        let paths = net.leaf_paths();
        if paths.iter().all(|p| p.visits.is_empty()) {
            return Err(Error::InvalidNetwork("network has no visits".into()));
        }
        for path in &paths {
            let lookups = path
                .visits
                .iter()
                .filter(|v| v.station.as_str() == LOOKUP && v.class == StationClass::Think)
                .count();
            if lookups != 1 {
                return Err(Error::InvalidNetwork(format!(
                    "every path must visit the `{LOOKUP}` think station exactly once, found {lookups}"
                )));
            }
        }
        Ok(net)
    }

    /// Reorder stations; `order` lists station names and must name every
    /// station exactly once. Used for demand tie-breaking.
    pub fn with_station_order(mut self, order: &[&str]) -> Result<Self> {
        if order.len() != self.stations.len() {
            return Err(Error::InvalidNetwork(format!(
                "station order names {} stations, network has {}",
                order.len(),
                self.stations.len()
            )));
        }
        let mut reordered = Vec::with_capacity(order.len());
        for name in order {
            let s = self
                .stations
                .iter()
                .find(|s| s.id.as_str() == *name)
                .ok_or_else(|| Error::InvalidNetwork(format!("unknown station `{name}`")))?;
            if reordered.iter().any(|r: &Station| r.id == s.id) {
                return Err(Error::InvalidNetwork(format!("station `{name}` listed twice")));
            }
            reordered.push(s.clone());
        }
        self.stations = reordered;
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn mpl(&self) -> u32 {
        self.mpl
    }

    pub fn root(&self) -> &PathBranch {
        &self.root
    }

    /// Stations in canonical order.
    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn queue_stations(&self) -> impl Iterator<Item = &Station> {
        self.stations
            .iter()
            .filter(|s| s.class == StationClass::Queue)
    }

    /// Same tree with a different population.
    pub fn with_mpl(&self, mpl: u32) -> Result<Self> {
        if mpl == 0 {
            return Err(Error::InvalidNetwork("mpl must be >= 1".into()));
        }
        Ok(ClosedNetwork {
            mpl,
            ..self.clone()
        })
    }

    /// Apply `f` to every visit, keeping the tree shape.
    pub fn map_visits(&self, mut f: impl FnMut(&Visit) -> Visit) -> Self {
        fn walk(b: &PathBranch, f: &mut dyn FnMut(&Visit) -> Visit) -> PathBranch {
            PathBranch {
                probability: b.probability,
                visits: b.visits.iter().map(&mut *f).collect(),
                children: b.children.iter().map(|c| walk(c, f)).collect(),
            }
        }
        ClosedNetwork {
            root: walk(&self.root, &mut f),
            ..self.clone()
        }
    }

    /// All root-to-leaf paths with their absolute probabilities, in tree
    /// order. Zero-probability paths are kept.
    pub fn leaf_paths(&self) -> Vec<FlatPath> {
        fn walk(b: &PathBranch, prob: f64, prefix: &mut Vec<Visit>, out: &mut Vec<FlatPath>) {
            let p = prob * b.probability;
            let mark = prefix.len();
            prefix.extend(b.visits.iter().cloned());
            if b.children.is_empty() {
                out.push(FlatPath {
                    probability: p,
                    visits: prefix.clone(),
                });
            } else {
                for c in &b.children {
                    walk(c, p, prefix, out);
                }
            }
            prefix.truncate(mark);
        }
        let mut out = Vec::new();
        walk(&self.root, 1.0, &mut Vec::new(), &mut out);
        out
    }

    /// Visit probability (expected visits per cycle) and probability-weighted
    /// mean for every visit, walked over the tree without flattening.
    fn weighted_visits(&self, mut f: impl FnMut(f64, &Visit)) {
        fn walk(b: &PathBranch, prob: f64, f: &mut dyn FnMut(f64, &Visit)) {
            let p = prob * b.probability;
            for v in &b.visits {
                f(p, v);
            }
            for c in &b.children {
                walk(c, p, f);
            }
        }
        walk(&self.root, 1.0, &mut f);
    }
}

fn validate_branch(b: &PathBranch, stations: &mut Vec<Station>) -> Result<()> {
    if !(b.probability.is_finite() && (0.0..=1.0).contains(&b.probability)) {
        return Err(Error::InvalidNetwork(format!(
            "branch probability {} outside [0, 1]",
            b.probability
        )));
    }
    for v in &b.visits {
        match stations.iter().find(|s| s.id == v.station) {
            Some(s) if s.class != v.class => {
                return Err(Error::InvalidNetwork(format!(
                    "station `{}` used as both queue and think station",
                    v.station
                )))
            }
            Some(_) => {}
            None => stations.push(Station {
                id: v.station.clone(),
                class: v.class,
            }),
        }
        if let MeanBound::Interval { lo, hi } = v.bound {
            let m = v.service.mean();
            if !(0.0 <= lo && lo <= hi && lo <= m && m <= hi) {
                return Err(Error::InvalidNetwork(format!(
                    "station `{}`: mean {m} outside its bound interval [{lo}, {hi}]",
                    v.station
                )));
            }
        }
    }
    if !b.children.is_empty() {
        let sum: f64 = b.children.iter().map(|c| c.probability).sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::InvalidNetwork(format!(
                "sibling branch probabilities sum to {sum}, expected 1"
            )));
        }
        for c in &b.children {
            validate_branch(c, stations)?;
        }
    }
    Ok(())
}

/// Demand on one queue station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationDemand {
    pub station: StationId,
    /// Expected visits per request cycle.
    pub visits: f64,
    /// Demand using the distribution mean (what the simulator serves).
    pub demand: f64,
    pub demand_lo: f64,
    pub demand_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Queue stations in canonical order.
    pub stations: Vec<StationDemand>,
    pub total: f64,
    pub total_lo: f64,
    pub total_hi: f64,
    /// Largest lower-bound demand.
    pub dmax: f64,
    /// Station achieving `dmax`; ties go to the first in canonical order.
    pub bottleneck: Option<StationId>,
    pub think_time: f64,
}

impl DemandProfile {
    pub fn get(&self, name: &str) -> Option<&StationDemand> {
        self.stations.iter().find(|s| s.station.as_str() == name)
    }

    /// Lower-bound demand of `name`, or 0 when the station is absent.
    pub fn demand_of(&self, name: &str) -> f64 {
        self.get(name).map_or(0.0, |s| s.demand_lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BindingTerm {
    PopulationLimited,
    BottleneckLimited,
}

impl fmt::Display for BindingTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BindingTerm::PopulationLimited => "population",
            BindingTerm::BottleneckLimited => "bottleneck",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    /// Requests per µs.
    pub x_upper: f64,
    pub binding: BindingTerm,
    pub dmax: f64,
    pub think_time: f64,
    pub bottleneck: Option<StationId>,
}

/// Expected think time per request cycle, in µs.
pub fn mean_think_time(network: &ClosedNetwork) -> f64 {
    let mut z = 0.0;
    network.weighted_visits(|p, v| {
        if v.class == StationClass::Think {
            z += p * v.service.mean();
        }
    });
    z
}

/// Per-station demands `D_i = visits_i * E[S_i]`, totals and the bottleneck.
pub fn device_demands(network: &ClosedNetwork) -> DemandProfile {
    let mut stations: Vec<StationDemand> = network
        .queue_stations()
        .map(|s| StationDemand {
            station: s.id.clone(),
            visits: 0.0,
            demand: 0.0,
            demand_lo: 0.0,
            demand_hi: 0.0,
        })
        .collect();
    let mut think_time = 0.0;
    network.weighted_visits(|p, v| match v.class {
        StationClass::Think => think_time += p * v.service.mean(),
        StationClass::Queue => {
            let entry = stations
                .iter_mut()
                .find(|s| s.station == v.station)
                .expect("queue station registered at construction");
            let (lo, hi) = v.mean_interval();
            entry.visits += p;
            entry.demand += p * v.service.mean();
            entry.demand_lo += p * lo;
            entry.demand_hi += p * hi;
        }
    });
    let mut dmax = 0.0;
    let mut bottleneck = None;
    for s in &stations {
        if bottleneck.is_none() || s.demand_lo > dmax {
            dmax = s.demand_lo;
            bottleneck = Some(s.station.clone());
        }
    }
    DemandProfile {
        total: stations.iter().map(|s| s.demand).sum(),
        total_lo: stations.iter().map(|s| s.demand_lo).sum(),
        total_hi: stations.iter().map(|s| s.demand_hi).sum(),
        dmax,
        bottleneck,
        think_time,
        stations,
    }
}

/// Two-term asymptotic bound `min(N / (D_lo + Z), 1 / Dmax)` in requests/µs.
pub fn throughput_upper_bound(network: &ClosedNetwork) -> BoundResult {
    bound_from_demands(&device_demands(network), network.mpl())
}

/// The same bound from an already computed profile.
pub fn bound_from_demands(profile: &DemandProfile, mpl: u32) -> BoundResult {
    let population = f64::from(mpl) / (profile.total_lo + profile.think_time);
    let bottleneck = 1.0 / profile.dmax;
    let (x_upper, binding) = if population <= bottleneck {
        (population, BindingTerm::PopulationLimited)
    } else {
        (bottleneck, BindingTerm::BottleneckLimited)
    };
    BoundResult {
        x_upper,
        binding,
        dmax: profile.dmax,
        think_time: profile.think_time,
        bottleneck: profile.bottleneck.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(m: f64) -> ServiceDist {
        ServiceDist::exponential(m).unwrap()
    }

    /// Hand-built LRU network, independent of the policy builders.
    fn lru(p: f64, disk: f64, n: u32) -> ClosedNetwork {
        let hit = PathBranch::new(
            p,
            vec![Visit::queue("delink", exp(0.7)), Visit::queue("head", exp(0.59))],
        );
        let miss = PathBranch::new(
            1.0 - p,
            vec![
                Visit::think("disk", exp(disk)),
                Visit::queue_bounded("tail", exp(0.59), 0.0, 0.59),
                Visit::queue("head", exp(0.59)),
            ],
        );
        let root = PathBranch::new(1.0, vec![Visit::think(LOOKUP, exp(0.51))])
            .with_children(vec![hit, miss]);
        ClosedNetwork::new("lru", n, root).unwrap()
    }

    #[test]
    fn think_time_lru() {
        assert!((mean_think_time(&lru(0.4, 100.0, 72)) - 60.51).abs() < 1e-9);
        assert!((mean_think_time(&lru(1.0, 100.0, 72)) - 0.51).abs() < 1e-12);
    }

    #[test]
    fn demands_lru() {
        let d = device_demands(&lru(0.9, 100.0, 72));
        assert!((d.demand_of("delink") - 0.63).abs() < 1e-12);
        assert!((d.demand_of("head") - 0.59).abs() < 1e-12);
        assert_eq!(d.bottleneck.as_ref().unwrap().as_str(), "delink");
        assert!(d.total_lo <= d.total && d.total <= d.total_hi);

        let d0 = device_demands(&lru(0.0, 100.0, 72));
        assert_eq!(d0.demand_of("delink"), 0.0);
        assert_eq!(d0.bottleneck.as_ref().unwrap().as_str(), "head");
    }

    #[test]
    fn bound_spot_values() {
        let b = throughput_upper_bound(&lru(0.5, 100.0, 72));
        assert!((b.x_upper - 72.0 / 51.45).abs() < 1e-12);
        assert_eq!(b.binding, BindingTerm::PopulationLimited);

        let b = throughput_upper_bound(&lru(0.9, 100.0, 72));
        assert!((b.x_upper - 1.0 / 0.63).abs() < 1e-12);
        assert_eq!(b.binding, BindingTerm::BottleneckLimited);
    }

    #[test]
    fn branch_tree_matches_closed_form() {
        for i in 0..=1000 {
            let p = f64::from(i) / 1000.0;
            let net = lru(p, 100.0, 72);
            let d = device_demands(&net);
            assert!((d.total_lo - (0.7 * p + 0.59)).abs() < 1e-12, "p={p}");
            assert!((d.think_time - (100.51 - 100.0 * p)).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        let root = PathBranch::new(1.0, vec![Visit::think(LOOKUP, exp(0.5))]).with_children(
            vec![
                PathBranch::new(0.5, vec![]),
                PathBranch::new(0.4, vec![]),
            ],
        );
        assert!(ClosedNetwork::new("bad", 1, root).is_err());
    }

    #[test]
    fn rejects_missing_lookup_and_empty() {
        let root = PathBranch::new(1.0, vec![Visit::think("disk", exp(1.0))]);
        assert!(ClosedNetwork::new("no-lookup", 1, root).is_err());
        assert!(ClosedNetwork::new("empty", 1, PathBranch::new(1.0, vec![])).is_err());
        let double = PathBranch::new(
            1.0,
            vec![Visit::think(LOOKUP, exp(1.0)), Visit::think(LOOKUP, exp(1.0))],
        );
        assert!(ClosedNetwork::new("double", 1, double).is_err());
    }

    #[test]
    fn rejects_mixed_station_class() {
        let root = PathBranch::new(
            1.0,
            vec![Visit::think(LOOKUP, exp(1.0)), Visit::queue(LOOKUP, exp(1.0))],
        );
        assert!(ClosedNetwork::new("mixed", 1, root).is_err());
    }

    #[test]
    fn tie_goes_to_first_station() {
        let p = 0.59 / 0.7;
        let d = device_demands(&lru(p, 100.0, 72));
        // delink appears before head in the walk
        assert!((d.demand_of("delink") - d.demand_of("head")).abs() < 1e-15);
        let reordered = lru(0.0, 100.0, 72)
            .with_station_order(&[LOOKUP, "disk", "tail", "head", "delink"])
            .unwrap();
        let d = device_demands(&reordered);
        assert_eq!(d.stations[0].station.as_str(), "tail");
    }

    #[test]
    fn deterministic_sample_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = ServiceDist::deterministic(0.7).unwrap();
        assert_eq!(d.sample(&mut rng), 0.7);
    }

    #[test]
    fn exponential_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = exp(0.59);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / f64::from(n);
        assert!((mean - 0.59).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn bounded_pareto_support_and_mean() {
        let d = ServiceDist::bounded_pareto(0.45, 0.1, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = d.sample(&mut rng);
            assert!((0.1..=1.2).contains(&x));
            sum += x;
        }
        let mean = sum / f64::from(n);
        assert!((mean - d.mean()).abs() / d.mean() < 0.005, "{mean} vs {}", d.mean());
    }

    #[test]
    fn bounded_pareto_mean_by_quadrature() {
        // Midpoint-rule integral of x f(x) over [L, H].
        let (a, lo, hi) = (0.45_f64, 0.1_f64, 1.2_f64);
        let norm = 1.0 - (lo / hi).powf(a);
        let steps = 200_000;
        let h = (hi - lo) / f64::from(steps);
        let mut acc = 0.0;
        for i in 0..steps {
            let x = lo + (f64::from(i) + 0.5) * h;
            acc += x * a * lo.powf(a) * x.powf(-a - 1.0) / norm * h;
        }
        assert!((bounded_pareto_mean(a, lo, hi) - acc).abs() / acc < 1e-6);
    }

    #[test]
    fn scaled_pareto_hits_mean() {
        let d = ServiceDist::of_kind(DistKind::BoundedPareto, 0.59).unwrap();
        assert!((d.mean() - 0.59).abs() / 0.59 < 1e-6);
        if let ServiceDist::BoundedPareto { lower, upper, alpha, .. } = d {
            assert!((upper / lower - 12.0).abs() < 1e-9);
            assert!((bounded_pareto_mean(alpha, lower, upper) - 0.59).abs() < 1e-9);
        } else {
            panic!("expected bounded pareto");
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(ServiceDist::exponential(0.0).is_err());
        assert!(ServiceDist::deterministic(-1.0).is_err());
        assert!(ServiceDist::bounded_pareto(0.45, 1.2, 0.1).is_err());
        assert!(ServiceDist::bounded_pareto(0.0, 0.1, 1.2).is_err());
        assert!(ServiceDist::deterministic(0.0).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bound_terms_dominate(p in 0.0f64..=1.0, disk in 1.0f64..1000.0, n in 1u32..300) {
                let net = lru(p, disk, n);
                let d = device_demands(&net);
                let b = throughput_upper_bound(&net);
                prop_assert!(1.0 / d.dmax >= b.x_upper);
                prop_assert!(f64::from(n) / (d.total_lo + d.think_time) >= b.x_upper);
            }

            #[test]
            fn bound_nondecreasing_in_mpl(p in 0.0f64..=1.0, disk in 1.0f64..1000.0, n in 1u32..300) {
                let a = throughput_upper_bound(&lru(p, disk, n)).x_upper;
                let b = throughput_upper_bound(&lru(p, disk, n + 1)).x_upper;
                prop_assert!(b >= a);
            }

            #[test]
            fn scaling_homogeneity(p in 0.0f64..=1.0, disk in 1.0f64..1000.0, c in 0.01f64..100.0) {
                let net = lru(p, disk, 72);
                let scaled = net.map_visits(|v| {
                    let bound = match v.bound {
                        MeanBound::Exact => MeanBound::Exact,
                        MeanBound::Interval { lo, hi } => MeanBound::Interval { lo: lo * c, hi: hi * c },
                    };
                    Visit { service: v.service.scaled(c), bound, ..v.clone() }
                });
                let x = throughput_upper_bound(&net).x_upper;
                let xs = throughput_upper_bound(&scaled).x_upper;
                prop_assert!((xs * c - x).abs() / x < 1e-12);
            }
        }
    }
}
