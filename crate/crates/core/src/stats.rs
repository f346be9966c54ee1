//! Ensemble statistics and the comparisons used by the acceptance checks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::gauss_legendre;

pub const DEFAULT_BINS: usize = 64;

/// Streaming central moments up to order four (Pébay's update), mergeable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.merge(&Moments {
            n: 1,
            mean: x,
            ..Default::default()
        });
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        let d = o.mean - self.mean;
        let d_n = d / n;
        let d2 = d * d_n * na * nb;
        let m2 = self.m2 + o.m2 + d2;
        let m3 = self.m3 + o.m3 + d2 * d_n * (na - nb) + 3.0 * d_n * (na * o.m2 - nb * self.m2);
        let m4 = self.m4
            + o.m4
            + d2 * d_n * d_n * (na * na - na * nb + nb * nb)
            + 6.0 * d_n * d_n * (na * na * o.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * o.m3 - nb * self.m3);
        self.n += o.n;
        self.mean += d_n * nb;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// `k`-th central moment (population normalization), `k ∈ 2..=4`.
    pub fn central(&self, k: u32) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        match k {
            2 => self.m2 / n,
            3 => self.m3 / n,
            4 => self.m4 / n,
            _ => panic!("central moment order must be 2, 3 or 4"),
        }
    }

    pub fn std_err_mean(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }

    /// Standard error of the sample variance, from the fourth moment.
    pub fn std_err_variance(&self) -> f64 {
        let n = self.n as f64;
        let m2 = self.central(2);
        ((self.central(4) - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// Mean and covariance of vector samples plus per-component moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    dim: usize,
    comps: Vec<Moments>,
    /// Σ (x - mean)(x - mean)ᵀ.
    comoment: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            comps: vec![Moments::default(); dim],
            comoment: DMatrix::zeros(dim, dim),
        }
    }

    pub fn n(&self) -> u64 {
        self.comps.first().map_or(0, |m| m.n)
    }

    pub fn push(&mut self, x: &[f64]) {
        let n_old = self.n() as f64;
        let delta: Vec<f64> = x.iter().zip(&self.comps).map(|(x, m)| x - m.mean).collect();
        for (m, &xi) in self.comps.iter_mut().zip(x) {
            m.push(xi);
        }
        let f = n_old / (n_old + 1.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.comoment[(i, j)] += f * delta[i] * delta[j];
            }
        }
    }

    pub fn merge(&mut self, o: &MomentAccumulator) {
        let (na, nb) = (self.n() as f64, o.n() as f64);
        if nb == 0.0 {
            return;
        }
        let delta: Vec<f64> = o.comps.iter().zip(&self.comps).map(|(b, a)| b.mean - a.mean).collect();
        let f = na * nb / (na + nb);
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.comoment[(i, j)] += o.comoment[(i, j)] + f * delta[i] * delta[j];
            }
        }
        for (a, b) in self.comps.iter_mut().zip(&o.comps) {
            a.merge(b);
        }
    }

    pub fn component(&self, i: usize) -> &Moments {
        &self.comps[i]
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps.iter().map(|m| m.mean).collect()
    }

    /// Unbiased covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        if n < 2 {
            return DMatrix::zeros(self.dim, self.dim);
        }
        let c = &self.comoment / (n - 1) as f64;
        (&c + c.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins on `[lo, hi]`; samples outside land in the end bins.
    pub fn with_range(samples: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::domain(format!("invalid histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let mut counts = vec![0u64; bins];
        let w = (hi - lo) / bins as f64;
        for x in samples {
            let k = ((x - lo) / w).floor();
            let k = if k.is_nan() { 0 } else { k.clamp(0.0, (bins - 1) as f64) as usize };
            counts[k] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    /// Bins over `mean ± 5σ`. A degenerate sample gets a unit-width range.
    pub fn auto(samples: &[f64], bins: usize) -> Result<Self> {
        let mut m = Moments::default();
        samples.iter().for_each(|&x| m.push(x));
        let s = m.variance().sqrt();
        let half = if s > 0.0 { 5.0 * s } else { 0.5 };
        Self::with_range(samples.iter().copied(), m.mean - half, m.mean + half, bins)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|k| self.lo + k as f64 * self.width()).collect()
    }

    /// Bin probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// Piecewise-constant density on a uniform grid of cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDensity {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl CellDensity {
    /// Cell averages of `f` on `cells` equal cells of `[lo, hi]`.
    pub fn from_fn(lo: f64, hi: f64, cells: usize, f: impl Fn(f64) -> f64) -> Self {
        let dx = (hi - lo) / cells as f64;
        let values = (0..cells)
            .map(|i| {
                let a = lo + i as f64 * dx;
                gauss_legendre(&f, a, a + dx, 2) / dx
            })
            .collect();
        Self { lo, hi, values }
    }

    /// Unit mass concentrated in the cell containing `x0`.
    pub fn point_mass(lo: f64, hi: f64, cells: usize, x0: f64) -> Result<Self> {
        if !(lo <= x0 && x0 < hi) {
            return Err(Error::domain(format!("point {x0} outside [{lo}, {hi})")));
        }
        let dx = (hi - lo) / cells as f64;
        let mut values = vec![0.0; cells];
        values[(((x0 - lo) / dx) as usize).min(cells - 1)] = 1.0 / dx;
        Ok(Self { lo, hi, values })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.values.len()).map(|i| self.lo + (i as f64 + 0.5) * dx).collect()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    /// `∫ₐᵇ n dx`, exact for the piecewise-constant representation.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let dx = self.dx();
        let (a, b) = (a.max(self.lo), b.min(self.hi));
        if b <= a {
            return 0.0;
        }
        let first = ((a - self.lo) / dx).floor() as usize;
        let last = (((b - self.lo) / dx).ceil() as usize).min(self.values.len());
        let mut acc = 0.0;
        for i in first..last {
            let c0 = self.lo + i as f64 * dx;
            let overlap = (c0 + dx).min(b) - c0.max(a);
            if overlap > 0.0 {
                acc += overlap * self.values[i];
            }
        }
        acc
    }
}

/// `Σ |pᵢ - qᵢ|` between the histogram's bin probabilities and the density's
/// normalized bin masses. Density mass beyond the histogram range is assigned
/// to the end bins, as the histogram does with outlying samples.
pub fn hist_l1_distance(hist: &Histogram, density: &CellDensity) -> Result<f64> {
    let tol = 1e-9 * (density.hi - density.lo);
    if hist.lo < density.lo - tol || hist.hi > density.hi + tol {
        return Err(Error::domain(format!(
            "histogram range [{}, {}] is not inside the density domain [{}, {}]",
            hist.lo, hist.hi, density.lo, density.hi
        )));
    }
    if density.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::domain("density must be nonnegative and finite"));
    }
    let total = density.mass();
    if !(total > 0.0) || hist.total() == 0 {
        return Err(Error::domain("empty histogram or zero-mass density"));
    }
    let edges = hist.edges();
    let bins = hist.bins();
    let p = hist.probabilities();
    let mut l1 = 0.0;
    for k in 0..bins {
        let a = if k == 0 { density.lo } else { edges[k] };
        let b = if k == bins - 1 { density.hi } else { edges[k + 1] };
        let q = density.integral(a, b) / total;
        l1 += (p[k] - q).abs();
    }
    Ok(l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("KS test needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = ((na * nb) as f64 / (na + nb) as f64).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
    })
}

/// `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`, the Kolmogorov survival function.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Least-squares slope of `ln(error)` against `ln(h)`.
pub fn order_fit(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::domain("order fit needs at least three points"));
    }
    if pairs.iter().any(|&(h, e)| !(h > 0.0) || !(e > 0.0)) {
        return Err(Error::domain("order fit needs positive step sizes and errors"));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    Ok(polyfit(&xs, &ys, 1)?[1])
}

/// Least-squares polynomial coefficients `c₀ + c₁x + ... + c_deg x^deg`.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::domain(format!(
            "polynomial fit of degree {degree} needs more than {degree} points, got {}",
            xs.len()
        )));
    }
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let c = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::domain(format!("polynomial fit failed: {e}")))?;
    Ok(c.iter().copied().collect())
}

/// Counters reported by the particle simulators.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub jumps: u64,
    pub steps: u64,
    pub clip_events: u64,
    pub newton_solves: u64,
    pub newton_iterations: u64,
    pub newton_max_iterations: u64,
    pub bisections: u64,
    pub z_max: f64,
    pub z_bound_violations: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Self) {
        self.jumps += other.jumps;
        self.steps += other.steps;
        self.clip_events += other.clip_events;
        self.newton_solves += other.newton_solves;
        self.newton_iterations += other.newton_iterations;
        self.newton_max_iterations = self.newton_max_iterations.max(other.newton_max_iterations);
        self.bisections += other.bisections;
        self.z_max = self.z_max.max(other.z_max);
        self.z_bound_violations += other.z_bound_violations;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentStats {
    pub mean: f64,
    pub variance: f64,
    pub central_moment_3: f64,
    pub central_moment_4: f64,
    pub std_err_mean: f64,
    pub std_err_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n: u64,
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub covariance: Vec<f64>,
    pub components: Vec<ComponentStats>,
    /// One histogram per component.
    pub histograms: Vec<Histogram>,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_mass: Option<f64>,
}

impl EnsembleSummary {
    pub fn empty(dim: usize) -> Self {
        Self {
            n: 0,
            dim,
            mean: vec![0.0; dim],
            covariance: vec![0.0; dim * dim],
            components: Vec::new(),
            histograms: Vec::new(),
            diagnostics: Diagnostics::default(),
            boundary_mass: None,
        }
    }

    /// Summarizes particle-major samples (`dim` consecutive values per particle).
    pub fn from_samples(samples: &[f64], dim: usize, bins: usize, diagnostics: Diagnostics) -> Result<Self> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                context: "ensemble samples",
                expected: dim,
                got: samples.len() % dim.max(1),
            });
        }
        if samples.is_empty() {
            let mut s = Self::empty(dim);
            s.diagnostics = diagnostics;
            return Ok(s);
        }
        let mut acc = MomentAccumulator::new(dim);
        for x in samples.chunks(dim) {
            acc.push(x);
        }
        let mut histograms = Vec::with_capacity(dim);
        let mut components = Vec::with_capacity(dim);
        for k in 0..dim {
            let col: Vec<f64> = samples.iter().skip(k).step_by(dim).copied().collect();
            histograms.push(Histogram::auto(&col, bins)?);
            let m = acc.component(k);
            components.push(ComponentStats {
                mean: m.mean,
                variance: m.variance(),
                central_moment_3: m.central(3),
                central_moment_4: m.central(4),
                std_err_mean: m.std_err_mean(),
                std_err_variance: m.std_err_variance(),
            });
        }
        let cov = acc.covariance();
        Ok(Self {
            n: acc.n(),
            dim,
            mean: acc.mean(),
            covariance: (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect(),
            components,
            histograms,
            diagnostics,
            boundary_mass: None,
        })
    }
}
