//! The common drift-diffusion limit: closed-form objects, an Euler-Maruyama
//! simulator for the limiting SDE and a 1D finite-volume solver for its
//! Fokker-Planck equation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::coarse::AField;
use crate::ensemble::{par_map, EnsembleConfig, EnsembleResult, ParticleOutput};
use crate::error::{check_dim, Error, Result};
use crate::model::{ChemoField, VelocityMeasure};
use crate::rng::{std_normal, StreamFactory};
use crate::stats::{CellDensity, Diagnostics};
use crate::tau::TauOperator;

/// `m(t) = tτ - (I - e^{-tτ⁻¹})τ²`.
pub fn m_func(t: f64, tau: &TauOperator) -> DMatrix<f64> {
    tau.m(t)
}

/// `m′(t) = τ(I - e^{-tτ⁻¹})`.
pub fn m_prime(t: f64, tau: &TauOperator) -> DMatrix<f64> {
    tau.m_prime(t)
}

/// `M = τ(λ₀τ + I)⁻¹`.
fn response_matrix(lambda0: f64, tau: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(lambda0 > 0.0) {
        return Err(Error::domain(format!("lambda0 must be positive, got {lambda0}")));
    }
    let n = tau.nrows();
    let shifted = tau * lambda0 + DMatrix::identity(n, n);
    let inv = shifted
        .try_inverse()
        .ok_or_else(|| Error::domain("lambda0*tau + I is singular"))?;
    Ok(tau * inv)
}

/// `E[m(θ/λ₀)]` for `θ ~ Exp(1)`, which equals `τ(I + λ₀τ)⁻¹ / λ₀`.
pub fn expected_m(lambda0: f64, tau: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(response_matrix(lambda0, tau)? / lambda0)
}

/// Weights `w = Mᵀb` with `A₀(x) = ∇S(x) w`.
pub fn drift_weights(b: &DVector<f64>, tau: &DMatrix<f64>, lambda0: f64) -> Result<DVector<f64>> {
    check_dim("sensitivity vs tau", tau.nrows(), b.len())?;
    Ok(response_matrix(lambda0, tau)?.transpose() * b)
}

/// `A₀(x) = [bᵀ τ(λ₀τ + I)⁻¹ ∇S(x)ᵀ]ᵀ`.
pub fn drift_field_a0(field: &ChemoField, b: &DVector<f64>, tau: &DMatrix<f64>, lambda0: f64) -> Result<AField> {
    AField::from_chemo(field.clone(), drift_weights(b, tau, lambda0)?)
}

/// `dX = D A₀(X)/λ₀ dt̄ + √(2D/λ₀) dW`.
#[derive(Debug, Clone)]
pub struct LimitModel {
    pub d: DMatrix<f64>,
    pub lambda0: f64,
    pub a0: AField,
    sigma: DMatrix<f64>,
}

impl LimitModel {
    pub fn new(d: DMatrix<f64>, lambda0: f64, a0: AField) -> Result<Self> {
        if !d.is_square() {
            return Err(Error::domain("diffusion matrix must be square"));
        }
        check_dim("drift field vs diffusion matrix", d.nrows(), a0.dim())?;
        if !(lambda0 > 0.0) {
            return Err(Error::domain("lambda0 must be positive"));
        }
        let scale = d.amax().max(1.0);
        if (&d - d.transpose()).amax() > 1e-12 * scale {
            return Err(Error::domain("diffusion matrix must be symmetric"));
        }
        let eig = SymmetricEigen::new(d.clone() * (2.0 / lambda0));
        if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
            return Err(Error::domain("diffusion matrix must be positive semidefinite"));
        }
        let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let sigma = &eig.eigenvectors * roots * eig.eigenvectors.transpose();
        Ok(Self { d, lambda0, a0, sigma })
    }

    /// `D` taken as the covariance of the velocity measure.
    pub fn from_measure(measure: &VelocityMeasure, lambda0: f64, a0: AField) -> Result<Self> {
        Self::new(measure.covariance(), lambda0, a0)
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    /// `μ(x) = D A₀(x) / λ₀`.
    pub fn drift(&self, x: &[f64]) -> DVector<f64> {
        &self.d * DVector::from_vec(self.a0.eval(x)) / self.lambda0
    }

    /// `σ = √(2D/λ₀)`, the symmetric square root.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

/// Euler-Maruyama paths up to `cfg.t_end` (diffusive time) with step `dt`;
/// the last step is shortened to land on `t_end`.
pub fn sde_simulate(limit: &LimitModel, cfg: &EnsembleConfig, dt: f64) -> Result<EnsembleResult> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::config("sde time step must be positive"));
    }
    let d = limit.dim();
    check_dim("initial position", d, cfg.init.dim())?;
    let streams = StreamFactory::new(cfg.seed);
    let full = (cfg.t_end / dt).floor() as usize;
    let tail = cfg.t_end - full as f64 * dt;
    let outputs = par_map(cfg.n_particles, cfg.threads, |i| {
        let mut x = DVector::from_vec(cfg.init.sample(&mut streams.init(i)));
        let mut rng = streams.dynamics(i);
        let mut noise = DVector::zeros(d);
        let mut step = |x: &mut DVector<f64>, h: f64| {
            noise.iter_mut().for_each(|w| *w = std_normal(&mut rng));
            let mu = limit.drift(x.as_slice());
            *x += mu * h + limit.sigma() * &noise * h.sqrt();
        };
        for _ in 0..full {
            step(&mut x, dt);
        }
        if tail > 1e-14 * dt.max(cfg.t_end) {
            step(&mut x, tail);
        }
        let diag = Diagnostics {
            steps: full as u64 + u64::from(tail > 0.0),
            ..Default::default()
        };
        Ok(ParticleOutput {
            x: x.iter().copied().collect(),
            diag,
            jumps: Vec::new(),
        })
    })?;
    EnsembleResult::from_outputs(outputs, d, cfg.bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    NoFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    Upwind,
    /// MUSCL reconstruction with the van Leer limiter.
    VanLeer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    pub t_end: f64,
    pub boundary: Boundary,
    pub advection: Advection,
    /// Time step; `None` picks 90% of the stability limit.
    pub dt: Option<f64>,
    /// Width fraction at each end counted as boundary mass.
    pub edge_fraction: f64,
}

impl PdeConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            boundary: Boundary::Periodic,
            advection: Advection::VanLeer,
            dt: None,
            edge_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeSolution {
    pub density: CellDensity,
    pub steps: usize,
    pub dt: f64,
    pub mass_initial: f64,
    /// Largest relative change of total mass over a single step.
    pub max_step_mass_drift: f64,
    /// Largest mass seen in the edge bands.
    pub boundary_mass: f64,
}

fn van_leer(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

struct Fv {
    n: usize,
    dx: f64,
    kappa: f64,
    /// Advection velocity at faces `0..=n`; face `i` is the left face of cell `i`.
    u: Vec<f64>,
    boundary: Boundary,
    advection: Advection,
    slopes: Vec<f64>,
    flux: Vec<f64>,
}

impl Fv {
    fn cell(&self, q: &[f64], i: isize) -> f64 {
        let n = self.n as isize;
        match self.boundary {
            Boundary::Periodic => q[i.rem_euclid(n) as usize],
            Boundary::NoFlux => q[i.clamp(0, n - 1) as usize],
        }
    }

    fn rhs(&mut self, q: &[f64], out: &mut [f64]) {
        let n = self.n;
        if self.advection == Advection::VanLeer {
            for i in 0..n {
                let ii = i as isize;
                let c = q[i];
                self.slopes[i] = van_leer(c - self.cell(q, ii - 1), self.cell(q, ii + 1) - c);
            }
        }
        let slope = |s: &[f64], i: isize| -> f64 {
            let n = n as isize;
            match self.boundary {
                Boundary::Periodic => s[i.rem_euclid(n) as usize],
                Boundary::NoFlux if i < 0 || i >= n => 0.0,
                Boundary::NoFlux => s[i as usize],
            }
        };
        for f in 0..=n {
            let (l, r) = (f as isize - 1, f as isize);
            if self.boundary == Boundary::NoFlux && (f == 0 || f == n) {
                self.flux[f] = 0.0;
                continue;
            }
            let (ql, qr) = (self.cell(q, l), self.cell(q, r));
            let (left, right) = match self.advection {
                Advection::Upwind => (ql, qr),
                Advection::VanLeer => (ql + 0.5 * slope(&self.slopes, l), qr - 0.5 * slope(&self.slopes, r)),
            };
            let u = self.u[f];
            let adv = if u >= 0.0 { u * left } else { u * right };
            self.flux[f] = adv - self.kappa * (qr - ql) / self.dx;
        }
        if self.boundary == Boundary::Periodic {
            self.flux[n] = self.flux[0];
        }
        for (o, f) in out.iter_mut().zip(self.flux.windows(2)) {
            *o = -(f[1] - f[0]) / self.dx;
        }
    }
}

/// Explicit finite-volume solve of `∂n = (1/λ₀) ∂ₓ(D ∂ₓn - D A₀ n)` from the
/// cell averages in `n0` up to `cfg.t_end`, using Heun's method in time.
pub fn pde_solve_1d(limit: &LimitModel, n0: &CellDensity, cfg: &PdeConfig) -> Result<PdeSolution> {
    if limit.dim() != 1 {
        return Err(Error::config(format!("the PDE solver is one-dimensional, got dimension {}", limit.dim())));
    }
    let n = n0.values.len();
    if n < 3 || !(n0.hi > n0.lo) {
        return Err(Error::config("PDE grid needs at least 3 cells on a nonempty interval"));
    }
    if !(cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
        return Err(Error::config("PDE end time must be finite and nonnegative"));
    }
    let dx = n0.dx();
    let dcoef = limit.d[(0, 0)];
    let kappa = dcoef / limit.lambda0;
    let u: Vec<f64> = (0..=n)
        .map(|f| dcoef * limit.a0.eval(&[n0.lo + f as f64 * dx])[0] / limit.lambda0)
        .collect();
    let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dt_stable = 1.0 / (2.0 * kappa / (dx * dx) + umax / dx);
    let dt_req = match cfg.dt {
        Some(dt) if dt > dt_stable => {
            return Err(Error::config(format!(
                "PDE time step {dt:e} exceeds the stability limit {dt_stable:e} for dx={dx:e}; use dt <= {:e}",
                0.9 * dt_stable
            )));
        }
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::config(format!("PDE time step must be positive, got {dt}"))),
        None => 0.9 * dt_stable,
    };
    let steps = (cfg.t_end / dt_req).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { cfg.t_end / steps as f64 };

    let mut fv = Fv {
        n,
        dx,
        kappa,
        u,
        boundary: cfg.boundary,
        advection: cfg.advection,
        slopes: vec![0.0; n],
        flux: vec![0.0; n + 1],
    };
    let band = ((cfg.edge_fraction * n as f64).ceil() as usize).min(n / 2);
    let edge_mass = |q: &[f64]| (q[..band].iter().sum::<f64>() + q[n - band..].iter().sum::<f64>()) * dx;

    let mut q = n0.values.clone();
    let mass = |q: &[f64]| q.iter().sum::<f64>() * dx;
    let mass_initial = mass(&q);
    let mut boundary_mass = edge_mass(&q);
    let mut max_drift = 0.0f64;
    let (mut k1, mut k2, mut stage) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut m_prev = mass_initial;
    for _ in 0..steps {
        fv.rhs(&q, &mut k1);
        for i in 0..n {
            stage[i] = q[i] + dt * k1[i];
        }
        fv.rhs(&stage, &mut k2);
        for i in 0..n {
            q[i] += 0.5 * dt * (k1[i] + k2[i]);
        }
        let m = mass(&q);
        max_drift = max_drift.max((m - m_prev).abs() / mass_initial.abs().max(f64::MIN_POSITIVE));
        m_prev = m;
        boundary_mass = boundary_mass.max(edge_mass(&q));
    }
    Ok(PdeSolution {
        density: CellDensity {
            lo: n0.lo,
            hi: n0.hi,
            values: q,
        },
        steps,
        dt,
        mass_initial,
        max_step_mass_drift: max_drift,
        boundary_mass,
    })
}

/// Cell averages of the 1D heat solution started from `N(mean, s0²)` with
/// diffusivity `kappa`, advected at constant speed `u`, on an unbounded line.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_solution_cells(lo: f64, hi: f64, cells: usize, mean: f64, s0: f64, kappa: f64, u: f64, t: f64) -> CellDensity {
    use statrs::function::erf::erfc;
    let s = (s0 * s0 + 2.0 * kappa * t).sqrt();
    let c = mean + u * t;
    let dx = (hi - lo) / cells as f64;
    // Upper-tail mass via erfc keeps relative accuracy in the far tails.
    let tail = |x: f64| 0.5 * erfc((x - c) / (s * std::f64::consts::SQRT_2));
    let values = (0..cells)
        .map(|i| {
            let a = lo + i as f64 * dx;
            (tail(a) - tail(a + dx)) / dx
        })
        .collect();
    CellDensity { lo, hi, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inversion::gauss_legendre_adaptive;
    use crate::rng::exp1;
    use crate::stats::{order_fit, Moments};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn diffusion_1d(a: f64) -> LimitModel {
        LimitModel::new(scalar(1.0), 1.0, AField::Constant(vec![a])).unwrap()
    }

    #[test]
    fn m_examples() {
        let t = TauOperator::scalar(1.0).unwrap();
        assert_eq!(m_func(0.0, &t)[(0, 0)], 0.0);
        assert_eq!(m_prime(0.0, &t)[(0, 0)], 0.0);
        assert_relative_eq!(m_func(1.0, &t)[(0, 0)], (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn expected_m_examples_against_quadrature() {
        for &(l0, tau) in &[(1.0, 1.0), (2.0, 3.0), (0.7, 0.05)] {
            let op = TauOperator::scalar(tau).unwrap();
            // ∫₀^∞ m(t/λ₀) e^{-t} dt, split at 60 where the weight is below 1e-25.
            let q = gauss_legendre_adaptive(|t| op.m(t / l0)[(0, 0)] * (-t).exp(), 0.0, 60.0, 8, 1e-14, 1e-3);
            let e = expected_m(l0, &scalar(tau)).unwrap()[(0, 0)];
            assert_relative_eq!(e, q, max_relative = 1e-10);
        }
        assert_relative_eq!(expected_m(1.0, &scalar(1.0)).unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(expected_m(2.0, &scalar(3.0)).unwrap()[(0, 0)], 3.0 / 14.0, epsilon = 1e-15);
        assert!(expected_m(1.0, &scalar(1e-12)).unwrap()[(0, 0)] < 1e-11);
        assert!(expected_m(0.0, &scalar(1.0)).is_err());
    }

    #[test]
    fn expected_m_matches_monte_carlo() {
        let tau = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.3]);
        let op = TauOperator::new(tau.clone()).unwrap();
        let l0 = 1.5;
        let exact = expected_m(l0, &tau).unwrap();
        let mut rng = StreamFactory::new(4).dynamics(0);
        let mut acc = [Moments::default(); 4];
        for _ in 0..200_000 {
            let m = op.m(exp1(&mut rng) / l0);
            for (k, a) in acc.iter_mut().enumerate() {
                a.push(m[(k / 2, k % 2)]);
            }
        }
        for (k, a) in acc.iter().enumerate() {
            let e = exact[(k / 2, k % 2)];
            assert!((a.mean - e).abs() <= 4.0 * a.std_err_mean() + 1e-15, "entry {k}: {} vs {e}", a.mean);
        }
    }

    #[test]
    fn a0_examples() {
        let one = DVector::from_element(1, 1.0);
        let a = drift_field_a0(&ChemoField::slope_1d(1.0), &one, &scalar(1.0), 1.0).unwrap();
        assert_relative_eq!(a.eval(&[3.0])[0], 0.5, epsilon = 1e-15);
        let a = drift_field_a0(&ChemoField::uniform(1, 1), &one, &scalar(1.0), 1.0).unwrap();
        assert_eq!(a.eval(&[0.0])[0], 0.0);
    }

    #[test]
    fn a0_is_consistent_with_expected_m() {
        let tau = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 2.0, 0.5]);
        let b = DVector::from_vec(vec![0.3, -1.2]);
        let grad = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, 0.2, 0.9]);
        let field = ChemoField::linear(DVector::zeros(2), grad.clone()).unwrap();
        let l0 = 1.7;
        let a = drift_field_a0(&field, &b, &tau, l0).unwrap().eval(&[0.0, 0.0]);
        let direct = (b.transpose() * expected_m(l0, &tau).unwrap() * grad.transpose() * l0).transpose();
        for k in 0..2 {
            assert_relative_eq!(a[k], direct[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn limit_model_checks() {
        let m = LimitModel::from_measure(&VelocityMeasure::UniformSphere(3), 2.0, AField::Zero(3)).unwrap();
        assert_relative_eq!(m.sigma()[(1, 1)], (2.0 / 3.0 / 2.0f64).sqrt(), epsilon = 1e-14);
        assert!(LimitModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), 1.0, AField::Zero(2)).is_err());
        assert!(LimitModel::new(scalar(-1.0), 1.0, AField::Zero(1)).is_err());
    }

    #[test]
    fn sde_constant_drift_mean_is_exact() {
        // X = a t D/λ₀ + σ W_t exactly, whatever the step.
        let m = diffusion_1d(0.8);
        let cfg = EnsembleConfig::new(20_000, 1.0, 7, 1);
        let r = sde_simulate(&m, &cfg, 0.01).unwrap();
        let c = &r.summary.components[0];
        assert!((c.mean - 0.8).abs() < 3.0 * c.std_err_mean);
        assert!((c.variance - 2.0).abs() < 3.0 * c.std_err_variance);
        assert_eq!(sde_simulate(&m, &EnsembleConfig::new(0, 1.0, 7, 1), 0.01).unwrap().summary.n, 0);
    }

    #[test]
    fn sde_drifts_toward_bump() {
        let bump = ChemoField::gaussian_bump(DVector::from_element(1, 1.0), DVector::from_element(1, 2.0), 1.0).unwrap();
        let a0 = drift_field_a0(&bump, &DVector::from_element(1, 5.0), &scalar(1.0), 1.0).unwrap();
        let m = LimitModel::new(scalar(1.0), 1.0, a0).unwrap();
        let r = sde_simulate(&m, &EnsembleConfig::new(5_000, 0.5, 3, 1), 0.01).unwrap();
        assert!(r.summary.mean[0] > 0.05);
    }

    #[test]
    fn sde_is_deterministic_across_threads() {
        let m = diffusion_1d(0.3);
        let a = sde_simulate(&m, &EnsembleConfig::new(500, 1.0, 9, 1).with_threads(1), 0.05).unwrap();
        let b = sde_simulate(&m, &EnsembleConfig::new(500, 1.0, 9, 1).with_threads(4), 0.05).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    fn l1(a: &CellDensity, b: &CellDensity) -> f64 {
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.dx()
    }

    #[test]
    fn heat_kernel_convergence_order() {
        let (lo, hi, s0, t) = (-8.0, 8.0, 0.5, 0.5);
        let m = diffusion_1d(0.0);
        for adv in [Advection::Upwind, Advection::VanLeer] {
            let mut pairs = Vec::new();
            for cells in [40, 80, 160, 320] {
                let n0 = gaussian_solution_cells(lo, hi, cells, 0.0, s0, 1.0, 0.0, 0.0);
                let cfg = PdeConfig {
                    advection: adv,
                    ..PdeConfig::new(t)
                };
                let sol = pde_solve_1d(&m, &n0, &cfg).unwrap();
                let exact = gaussian_solution_cells(lo, hi, cells, 0.0, s0, 1.0, 0.0, t);
                pairs.push(((hi - lo) / cells as f64, l1(&sol.density, &exact)));
            }
            let order = order_fit(&pairs).unwrap();
            assert!(order >= 1.8, "{adv:?}: order {order}, errors {pairs:?}");
        }
    }

    #[test]
    fn mass_is_conserved() {
        let bump = ChemoField::gaussian_bump(DVector::from_element(1, 2.0), DVector::from_element(1, 0.5), 0.7).unwrap();
        let a0 = drift_field_a0(&bump, &DVector::from_element(1, 1.0), &scalar(1.0), 1.0).unwrap();
        let m = LimitModel::new(scalar(1.0), 1.0, a0).unwrap();
        for boundary in [Boundary::Periodic, Boundary::NoFlux] {
            let n0 = CellDensity::from_fn(-4.0, 4.0, 100, |x| (-(x * x)).exp());
            let mut cfg = PdeConfig::new(1.0);
            cfg.boundary = boundary;
            let probe = pde_solve_1d(&m, &n0, &cfg).unwrap();
            cfg.t_end = probe.dt * 1e4;
            cfg.dt = Some(probe.dt);
            let sol = pde_solve_1d(&m, &n0, &cfg).unwrap();
            assert_eq!(sol.steps, 10_000);
            assert!(sol.max_step_mass_drift < 1e-12, "{boundary:?}: {}", sol.max_step_mass_drift);
            assert!((sol.density.mass() - sol.mass_initial).abs() < 1e-10);
            assert!(sol.density.values.iter().all(|&v| v >= -1e-14));
        }
    }

    #[test]
    fn constant_drift_moves_center_of_mass() {
        let (a, t) = (0.6, 0.8);
        let m = diffusion_1d(a);
        for adv in [Advection::Upwind, Advection::VanLeer] {
            let n0 = gaussian_solution_cells(-10.0, 10.0, 400, -1.0, 0.5, 1.0, 0.0, 0.0);
            let cfg = PdeConfig {
                advection: adv,
                ..PdeConfig::new(t)
            };
            let sol = pde_solve_1d(&m, &n0, &cfg).unwrap();
            let com = |d: &CellDensity| d.centers().iter().zip(&d.values).map(|(x, v)| x * v).sum::<f64>() * d.dx();
            let moved = com(&sol.density) - com(&n0);
            assert_relative_eq!(moved, a * t, max_relative = 1e-6);
            assert!(sol.boundary_mass < 1e-6);
        }
    }

    #[test]
    fn unstable_step_is_rejected_with_suggestion() {
        let n0 = CellDensity::from_fn(-1.0, 1.0, 50, |_| 1.0);
        let mut cfg = PdeConfig::new(0.1);
        cfg.dt = Some(0.01);
        let err = pde_solve_1d(&diffusion_1d(0.0), &n0, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("use dt <="));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn m_bounds(t in 0.0f64..20.0, a in 0.05f64..5.0, c in 0.05f64..5.0, angle in 0.0f64..3.2) {
            // Symmetric positive τ, for which e^{-tτ⁻¹} is a contraction.
            let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
            let tau = &rot * DMatrix::from_diagonal(&DVector::from_vec(vec![a, c])) * rot.transpose();
            let op = TauOperator::new((&tau + tau.transpose()) * 0.5).unwrap();
            let norm = |m: DMatrix<f64>| m.svd(false, false).singular_values.max();
            let tol = 1e-12 * (1.0 + t * t);
            prop_assert!(norm(m_prime(t, &op)) <= t + tol);
            prop_assert!(norm(m_func(t, &op)) <= 0.5 * t * t + tol);
        }
    }
}
