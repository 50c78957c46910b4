use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

/// Independent Zipf draws over `universe` keys; key `k` has rank `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub universe: u64,
    pub theta: f64,
    pub length: usize,
    pub seed: u64,
}

impl Workload {
    pub fn new(universe: u64, theta: f64, length: usize, seed: u64) -> Result<Self> {
        let w = Workload {
            universe,
            theta,
            length,
            seed,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.universe == 0 || self.length == 0 {
            return Err(Error::InvalidConfig(
                "workload universe and length must be >= 1".into(),
            ));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::InvalidConfig(format!("zipf theta {} must be >= 0", self.theta)));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_length(mut self, length: usize) -> Self {
        self.length = length;
        self
    }
}

/// Draw the trace described by `workload`.
pub fn zipf_trace(workload: &Workload) -> Result<Vec<u64>> {
    workload.validate()?;
    let zipf = Zipf::new(workload.universe as f64, workload.theta)
        .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(workload.seed);
    Ok((0..workload.length)
        .map(|_| zipf.sample(&mut rng) as u64 - 1)
        .collect())
}

/// One decimal key per line.
pub fn write_trace<W: Write>(trace: &[u64], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for k in trace {
        writeln!(w, "{k}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one decimal key per line; blank lines are skipped.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| Error::Parse(format!("line {}: bad key `{t}`", n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_when_theta_zero() {
        let t = zipf_trace(&Workload::new(10, 0.0, 1_000_000, 5).unwrap()).unwrap();
        let mut counts = [0u64; 10];
        for k in &t {
            counts[*k as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e6 - 0.1).abs() < 0.003);
        }
    }

    #[test]
    fn rank_one_matches_harmonic_sum() {
        let n = 1_000_000u64;
        let h: f64 = (1..=n).map(|k| (k as f64).powf(-0.99)).sum();
        let t = zipf_trace(&Workload::new(n, 0.99, 1_000_000, 11).unwrap()).unwrap();
        let f = t.iter().filter(|&&k| k == 0).count() as f64 / t.len() as f64;
        assert!((f - 1.0 / h).abs() / (1.0 / h) < 0.02, "{f} vs {}", 1.0 / h);
    }

    #[test]
    fn deterministic_and_in_range() {
        let w = Workload::new(50, 0.99, 10_000, 3).unwrap();
        let a = zipf_trace(&w).unwrap();
        assert_eq!(a, zipf_trace(&w).unwrap());
        assert!(a.iter().all(|&k| k < 50));
        assert_ne!(a, zipf_trace(&w.with_seed(4)).unwrap());
    }

    #[test]
    fn rejects_bad_workloads() {
        assert!(Workload::new(0, 0.5, 10, 0).is_err());
        assert!(Workload::new(10, -0.1, 10, 0).is_err());
        assert!(Workload::new(10, 0.5, 0, 0).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let t = vec![3, 0, 18_446_744_073_709_551_615, 7];
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), t);
        assert!(read_trace(&b"1\nx\n"[..]).is_err());
    }
}
