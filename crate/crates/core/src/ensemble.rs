//! Ensemble plumbing shared by every simulator: initial distributions, the
//! deterministic parallel map, and result containers.
//!
//! Particles run independently on their own random streams and results are
//! collected in particle order, so the output does not depend on the number
//! of threads.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fine::JumpRecord;
use crate::rng::std_normal;
use crate::stats::{Diagnostics, EnsembleSummary, DEFAULT_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDist {
    Point { x: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: f64 },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitDist {
    pub fn origin(dim: usize) -> Self {
        InitDist::Point { x: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitDist::Point { x } => x.len(),
            InitDist::Gaussian { mean, .. } => mean.len(),
            InitDist::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitDist::Point { x } if x.is_empty() => Err(Error::config("initial point is empty")),
            InitDist::Gaussian { std, .. } if !(*std >= 0.0) => {
                Err(Error::config("initial gaussian std must be nonnegative"))
            }
            InitDist::Uniform { lo, hi } if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(b > a)) => {
                Err(Error::config("initial uniform box needs hi > lo componentwise"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitDist::Point { x } => x.clone(),
            InitDist::Gaussian { mean, std } => mean.iter().map(|m| m + std * std_normal(rng)).collect(),
            InitDist::Uniform { lo, hi } => lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    /// End time on the diffusive scale `t̄ = ε² t`.
    pub t_end: f64,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub init: InitDist,
    /// Initial internal deviation; zero when `None`.
    pub z0: Option<Vec<f64>>,
    /// Keep the jump log of the first `record_jumps` particles.
    pub record_jumps: usize,
    pub bins: usize,
}

impl EnsembleConfig {
    pub fn new(n_particles: usize, t_end: f64, seed: u64, dim: usize) -> Self {
        Self {
            n_particles,
            t_end,
            seed,
            threads: 0,
            init: InitDist::origin(dim),
            z0: None,
            record_jumps: 0,
            bins: DEFAULT_BINS,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::config(format!("t_end must be finite and nonnegative, got {}", self.t_end)));
        }
        if self.bins == 0 {
            return Err(Error::config("histogram bins must be positive"));
        }
        self.init.validate()
    }
}

/// What a single particle reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleOutput {
    pub x: Vec<f64>,
    pub diag: Diagnostics,
    pub jumps: Vec<JumpRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub summary: EnsembleSummary,
    pub dim: usize,
    /// Terminal positions, particle-major.
    pub positions: Vec<f64>,
    /// `(particle index, jump log)` for the recorded particles.
    pub jumps: Vec<(usize, Vec<JumpRecord>)>,
}

impl EnsembleResult {
    pub fn from_outputs(outputs: Vec<ParticleOutput>, dim: usize, bins: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(outputs.len() * dim);
        let mut diag = Diagnostics::default();
        let mut jumps = Vec::new();
        for (i, o) in outputs.into_iter().enumerate() {
            positions.extend_from_slice(&o.x);
            diag.merge(&o.diag);
            if !o.jumps.is_empty() {
                jumps.push((i, o.jumps));
            }
        }
        let summary = EnsembleSummary::from_samples(&positions, dim, bins, diag)?;
        Ok(Self {
            summary,
            dim,
            positions,
            jumps,
        })
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.positions.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn write_positions_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        writeln!(w, "particle,{}", header.join(","))?;
        for (i, x) in self.positions.chunks(self.dim).enumerate() {
            let cols: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{i},{}", cols.join(","))?;
        }
        Ok(())
    }

    /// Columns: particle, n, T_n, dT, x…, v_old…, v_new…, theta, newton_iters.
    pub fn write_jumps_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.dim;
        let names = |p: &str| (0..d).map(|k| format!("{p}{k}")).collect::<Vec<_>>().join(",");
        writeln!(
            w,
            "particle,n,T_n,dT,{},{},{},theta,newton_iters",
            names("x"),
            names("v_old"),
            names("v_new")
        )?;
        let join = |v: &[f64]| v.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(",");
        for (p, log) in &self.jumps {
            for r in log {
                writeln!(
                    w,
                    "{p},{},{:?},{:?},{},{},{},{:?},{}",
                    r.n,
                    r.t,
                    r.dt,
                    join(&r.x),
                    join(&r.v_old),
                    join(&r.v_new),
                    r.theta,
                    r.newton_iters
                )?;
            }
        }
        Ok(())
    }
}

/// Maps `f` over `0..n` on `threads` workers (0 = default) and returns the
/// results in index order. The first failing index is reported.
pub fn par_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&f).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Particle {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}
