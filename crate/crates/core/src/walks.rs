//! Drifted random walks that approximate the jump processes jump by jump.
//!
//! A chain consumes `v₀, θ₁, V₁, θ₂, V₂, …` from the particle's dynamics
//! stream, in the same order as the jump processes do. Running a chain and a
//! process with the same seed therefore couples them pathwise: step `n` of
//! the chain sees the `θₙ` and the velocity of run `n` of the process.

use nalgebra::DVector;
use rand::Rng;

use crate::coarse::AField;
use crate::ensemble::{par_map, EnsembleConfig, EnsembleResult, ParticleOutput};
use crate::error::{check_dim, Error, Result};
use crate::model::{ChemoField, VelocityMeasure};
use crate::rng::{exp1, StreamFactory};
use crate::stats::Diagnostics;
use crate::tau::{mode_m, Modes, TauOperator};

/// Increment rule of a chain.
#[derive(Debug, Clone)]
pub enum ChainKind {
    /// `ξ + ε(θ/λ₀)(1 + ε A(ξ)ᵀv/λ₀) v`.
    Coarse { a: AField },
    /// `ξ + ε(θ/λ₀) v + ε² (v/λ₀) bᵀ m(θ/λ₀) ∇S(ξ)ᵀ v`.
    Fine {
        b: DVector<f64>,
        tau: TauOperator,
        field: ChemoField,
    },
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub kind: ChainKind,
    pub eps: f64,
    pub lambda0: f64,
    pub measure: VelocityMeasure,
}

impl Chain {
    pub fn coarse(eps: f64, lambda0: f64, a: AField, measure: VelocityMeasure) -> Result<Self> {
        check_dim("drift field vs velocity dimension", measure.dim(), a.dim())?;
        Self::checked(ChainKind::Coarse { a }, eps, lambda0, measure)
    }

    pub fn fine(eps: f64, lambda0: f64, b: DVector<f64>, tau: TauOperator, field: ChemoField, measure: VelocityMeasure) -> Result<Self> {
        check_dim("sensitivity vs tau", tau.dim(), b.len())?;
        check_dim("field components vs tau", tau.dim(), field.components())?;
        check_dim("field vs velocity dimension", measure.dim(), field.dim())?;
        Self::checked(ChainKind::Fine { b, tau, field }, eps, lambda0, measure)
    }

    fn checked(kind: ChainKind, eps: f64, lambda0: f64, measure: VelocityMeasure) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::config(format!("chain eps must be finite and nonnegative, got {eps}")));
        }
        if !(lambda0 > 0.0) {
            return Err(Error::config("chain lambda0 must be positive"));
        }
        measure.validate()?;
        Ok(Self {
            kind,
            eps,
            lambda0,
            measure,
        })
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    /// The increment `ξₙ₊₁ - ξₙ` for a given `θ` and `v`.
    pub fn increment(&self, xi: &[f64], theta: f64, v: &[f64]) -> Vec<f64> {
        let (e, l0) = (self.eps, self.lambda0);
        let scale = match &self.kind {
            ChainKind::Coarse { a } => {
                let av: f64 = a.eval(xi).iter().zip(v).map(|(a, v)| a * v).sum();
                e * theta / l0 * (1.0 + e * av / l0)
            }
            ChainKind::Fine { b, tau, field } => {
                let g = field.directional(xi, v);
                let t = theta / l0;
                let bmg = match tau.modal() {
                    Some(Modes { taus, basis: None }) => taus.iter().zip(b.iter()).zip(g.iter()).map(|((&tk, bk), gk)| bk * mode_m(t, tk) * gk).sum(),
                    _ => (b.transpose() * tau.m(t) * g)[(0, 0)],
                };
                e * t + e * e * bmg / l0
            }
        };
        v.iter().map(|v| scale * v).collect()
    }

    pub fn step(&self, xi: &mut [f64], theta: f64, v: &[f64]) {
        let inc = self.increment(xi, theta, v);
        for (x, d) in xi.iter_mut().zip(inc) {
            *x += d;
        }
    }

    /// Number of whole steps and the fractional remainder for diffusive time
    /// `t_end`, i.e. `N = λ₀ t̄ / ε²` split as `⌊N⌋ + r`.
    pub fn step_count(&self, t_end: f64) -> Result<(u64, f64)> {
        if !(self.eps > 0.0) {
            return Err(Error::config("the diffusive chain needs eps > 0"));
        }
        let n = self.lambda0 * t_end / (self.eps * self.eps);
        let whole = n.round();
        // Absorb rounding error in ratios that are meant to be integral.
        if (n - whole).abs() <= 1e-9 * n.max(1.0) {
            return Ok((whole as u64, 0.0));
        }
        Ok((n.floor() as u64, n - n.floor()))
    }

    /// Interpolated position after `⌊N⌋ + r` steps from `xi`.
    pub fn run_diffusive<R: Rng + ?Sized>(&self, mut xi: Vec<f64>, rng: &mut R, t_end: f64) -> Result<Vec<f64>> {
        let (whole, frac) = self.step_count(t_end)?;
        let mut v = self.measure.sample(rng);
        for _ in 0..whole {
            let theta = exp1(rng);
            self.step(&mut xi, theta, &v);
            self.measure.sample_into(rng, &mut v);
        }
        if frac > 0.0 {
            let theta = exp1(rng);
            let inc = self.increment(&xi, theta, &v);
            for (x, d) in xi.iter_mut().zip(inc) {
                *x += frac * d;
            }
        }
        Ok(xi)
    }
}

/// Ensemble of interpolated chains at diffusive time `cfg.t_end`.
pub fn run_chain_diffusive(chain: &Chain, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let d = chain.dim();
    check_dim("initial position", d, cfg.init.dim())?;
    let (whole, frac) = chain.step_count(cfg.t_end)?;
    let streams = StreamFactory::new(cfg.seed);
    let outputs = par_map(cfg.n_particles, cfg.threads, |i| {
        let x0 = cfg.init.sample(&mut streams.init(i));
        let x = chain.run_diffusive(x0, &mut streams.dynamics(i), cfg.t_end)?;
        Ok(ParticleOutput {
            x,
            diag: Diagnostics {
                steps: whole + u64::from(frac > 0.0),
                ..Default::default()
            },
            jumps: Vec::new(),
        })
    })?;
    EnsembleResult::from_outputs(outputs, d, cfg.bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limits::{drift_field_a0, expected_m};
    use crate::stats::Moments;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn fine_1d(eps: f64, g: f64) -> Chain {
        Chain::fine(
            eps,
            1.0,
            DVector::from_element(1, 1.0),
            TauOperator::scalar(1.0).unwrap(),
            ChemoField::slope_1d(g),
            VelocityMeasure::PlusMinusOne,
        )
        .unwrap()
    }

    #[test]
    fn step_examples() {
        let c = Chain::coarse(0.1, 1.0, AField::Zero(1), VelocityMeasure::PlusMinusOne).unwrap();
        assert_relative_eq!(c.increment(&[2.0], 1.0, &[1.0])[0], 0.1, epsilon = 1e-16);
        let c = Chain::coarse(0.0, 1.0, AField::Constant(vec![3.0]), VelocityMeasure::PlusMinusOne).unwrap();
        assert_eq!(c.increment(&[2.0], 1.0, &[1.0])[0], 0.0);
        assert_relative_eq!(fine_1d(0.1, 1.0).increment(&[0.0], 1.0, &[1.0])[0], 0.103_678_794_411_714_4, epsilon = 1e-15);
        assert_relative_eq!(fine_1d(0.1, 0.0).increment(&[0.0], 1.3, &[-1.0])[0], -0.13, epsilon = 1e-15);
    }

    #[test]
    fn general_tau_matches_modal_path() {
        let field = ChemoField::linear(DVector::zeros(2), DMatrix::from_row_slice(1, 2, &[0.7, -0.4])).unwrap();
        let b = DVector::from_vec(vec![1.0, 0.5]);
        let diag = TauOperator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        // Lower-triangular with a tiny coupling forces the general path.
        let full = TauOperator::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1e-13, 2.0])).unwrap();
        let c1 = Chain::fine(0.2, 1.3, b.clone(), diag, field.clone(), VelocityMeasure::PlusMinusOne).unwrap();
        let c2 = Chain::fine(0.2, 1.3, b, full, field, VelocityMeasure::PlusMinusOne).unwrap();
        for &theta in &[0.01, 0.7, 4.0] {
            assert_relative_eq!(c1.increment(&[0.0], theta, &[1.0])[0], c2.increment(&[0.0], theta, &[1.0])[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn per_step_drift_expectations() {
        // Coarse: E[Δξ] = ε² D A / λ₀² with E[θ] = 1, E[θv v] = D.
        let (eps, l0, a) = (0.2, 1.5, 0.8);
        let c = Chain::coarse(eps, l0, AField::Constant(vec![a]), VelocityMeasure::PlusMinusOne).unwrap();
        let f = fine_1d(eps, 1.0);
        let mut rng = StreamFactory::new(11).dynamics(0);
        let (mut mc, mut mf) = (Moments::default(), Moments::default());
        for _ in 0..1_000_000 {
            let theta = exp1(&mut rng);
            let v = VelocityMeasure::PlusMinusOne.sample(&mut rng);
            mc.push(c.increment(&[0.0], theta, &v)[0]);
            mf.push(f.increment(&[0.0], theta, &v)[0]);
        }
        let coarse_exact = eps * eps * a / (l0 * l0);
        assert!((mc.mean - coarse_exact).abs() < 4.0 * mc.std_err_mean());
        let fine_exact = eps * eps * expected_m(1.0, &DMatrix::from_element(1, 1, 1.0)).unwrap()[(0, 0)];
        assert!((mf.mean - fine_exact).abs() < 4.0 * mf.std_err_mean());
    }

    #[test]
    fn step_count_splits_fraction() {
        let c = fine_1d(0.1, 0.0);
        assert_eq!(c.step_count(1.0).unwrap(), (100, 0.0));
        let (n, r) = c.step_count(1.0055).unwrap();
        assert_eq!(n, 100);
        assert_relative_eq!(r, 0.55, epsilon = 1e-9);
    }

    #[test]
    fn undrifted_variance() {
        let c = fine_1d(0.1, 0.0);
        let cfg = EnsembleConfig::new(50_000, 1.0, 5, 1);
        let r = run_chain_diffusive(&c, &cfg).unwrap();
        let s = &r.summary.components[0];
        assert!((s.variance - 2.0).abs() < 3.0 * s.std_err_variance, "{}", s.variance);
        assert_eq!(run_chain_diffusive(&c, &EnsembleConfig::new(0, 1.0, 5, 1)).unwrap().summary.n, 0);
    }

    #[test]
    fn coarse_chain_with_a0_drifts_like_the_limit() {
        let a0 = drift_field_a0(&ChemoField::slope_1d(1.0), &DVector::from_element(1, 1.0), &DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        let c = Chain::coarse(0.1, 1.0, a0, VelocityMeasure::PlusMinusOne).unwrap();
        let r = run_chain_diffusive(&c, &EnsembleConfig::new(50_000, 1.0, 6, 1)).unwrap();
        let s = &r.summary.components[0];
        assert!((s.mean - 0.5).abs() < 3.0 * s.std_err_mean, "{}", s.mean);
    }
}
