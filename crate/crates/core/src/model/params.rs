use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::tau::TauOperator;

/// Default lower clip for the arctan rate, relative to λ₀.
pub const ARCTAN_LAMBDA_MIN_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum RateForm {
    /// `λ(z) = λ₀ - bᵀz`, clipped to `[λ_min, λ_max]`.
    Linear,
    /// `λ(ζ) = 2λ₀(½ - arctan(πβζ / 2λ₀)/π)` with `ζ = z[component]`.
    Arctan { beta: f64, component: usize },
}

/// Internal dynamics `dy/dt = F(y, S(x))`.
#[derive(Debug, Clone, PartialEq)]
pub enum InternalModel {
    /// `F(y, s) = -τ⁻¹(y - s)`.
    GeneralLinear { tau: DMatrix<f64> },
    /// Two-variable excitation/adaptation cartoon; `S = (ρ, 0)`.
    ExcitationAdaptation { t_a: f64, t_e: f64 },
    /// `F(y, s) = (s - y) / t_a`.
    ScalarAdaptation { t_a: f64 },
}

impl InternalModel {
    pub fn scalar_tau(tau: f64) -> Self {
        InternalModel::GeneralLinear {
            tau: DMatrix::from_element(1, 1, tau),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InternalModel::GeneralLinear { tau } => tau.nrows(),
            InternalModel::ExcitationAdaptation { .. } => 2,
            InternalModel::ScalarAdaptation { .. } => 1,
        }
    }

    /// The relaxation matrix τ such that `dz/dt = -τ⁻¹z + ε∇Sᵀv`.
    pub fn tau(&self) -> Result<DMatrix<f64>> {
        match *self {
            InternalModel::GeneralLinear { ref tau } => Ok(tau.clone()),
            InternalModel::ExcitationAdaptation { t_a, t_e } => {
                positive("t_a", t_a)?;
                positive("t_e", t_e)?;
                // τ⁻¹ = [[1/t_a, 0], [-1/t_e, 1/t_e]]
                Ok(DMatrix::from_row_slice(2, 2, &[t_a, 0.0, t_a, t_e]))
            }
            InternalModel::ScalarAdaptation { t_a } => {
                positive("t_a", t_a)?;
                Ok(DMatrix::from_element(1, 1, t_a))
            }
        }
    }

    pub fn rhs(&self, y: &[f64], s: &[f64]) -> Result<DVector<f64>> {
        internal_rhs(y, s, self)
    }
}

/// `F(y, s)` for the built-in internal models.
pub fn internal_rhs(y: &[f64], s: &[f64], model: &InternalModel) -> Result<DVector<f64>> {
    let n = model.dim();
    check_dim("internal state y", n, y.len())?;
    check_dim("signal s", n, s.len())?;
    Ok(match *model {
        InternalModel::GeneralLinear { ref tau } => {
            let inv = tau
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::config("tau is not invertible"))?;
            let diff = DVector::from_iterator(n, y.iter().zip(s).map(|(y, s)| y - s));
            -(inv * diff)
        }
        InternalModel::ExcitationAdaptation { t_a, t_e } => DVector::from_vec(vec![
            (s[0] - y[0]) / t_a,
            (-s[0] + y[0] - y[1]) / t_e,
        ]),
        InternalModel::ScalarAdaptation { t_a } => DVector::from_element(1, (s[0] - y[0]) / t_a),
    })
}

/// Arctan turning rate; strictly decreasing with range `(0, 2λ₀)`.
#[inline]
pub fn turning_rate(zeta: f64, lambda0: f64, beta: f64) -> f64 {
    2.0 * lambda0 * (0.5 - (PI * beta * zeta / (2.0 * lambda0)).atan() / PI)
}

/// `dλ/dζ` of [`turning_rate`].
#[inline]
pub fn turning_rate_derivative(zeta: f64, lambda0: f64, beta: f64) -> f64 {
    let u = PI * beta * zeta / (2.0 * lambda0);
    -beta / (1.0 + u * u)
}

/// `clip(λ₀ - bᵀz, λ_min, λ_max)`; the flag reports whether clipping fired.
#[inline]
pub fn linear_rate(z: &[f64], lambda0: f64, b: &[f64], lambda_min: f64, lambda_max: f64) -> (f64, bool) {
    let raw = lambda0 - b.iter().zip(z).map(|(b, z)| b * z).sum::<f64>();
    clip(raw, lambda_min, lambda_max)
}

#[inline]
pub(crate) fn clip(raw: f64, lo: f64, hi: f64) -> (f64, bool) {
    if raw < lo {
        (lo, true)
    } else if raw > hi {
        (hi, true)
    } else {
        (raw, false)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub eps: f64,
    pub lambda0: f64,
    /// Linear rate sensitivity; unused by the arctan rate.
    pub b: DVector<f64>,
    pub internal: InternalModel,
    /// Exponent of the `|Z| ≤ C ε^δ` bound used by the diagnostics.
    pub delta: f64,
    pub k: u32,
    pub rate: RateForm,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub dt: f64,
}

impl ModelParams {
    /// Scalar internal state, linear rate, `λ ∈ [10⁻³λ₀, 10³λ₀]`.
    pub fn scalar_linear(eps: f64, lambda0: f64, b: f64, tau: f64, dt: f64) -> Self {
        Self {
            eps,
            lambda0,
            b: DVector::from_element(1, b),
            internal: InternalModel::scalar_tau(tau),
            delta: 1.0,
            k: 2,
            rate: RateForm::Linear,
            lambda_min: 1e-3 * lambda0,
            lambda_max: 1e3 * lambda0,
            dt,
        }
    }

    /// Arctan rate with the bounds `λ_max = 2λ₀`, `λ_min = 10⁻⁶λ₀`.
    pub fn arctan(eps: f64, lambda0: f64, beta: f64, internal: InternalModel, dt: f64) -> Self {
        let n = internal.dim();
        Self {
            eps,
            lambda0,
            b: DVector::zeros(n),
            internal,
            delta: 1.0,
            k: 2,
            rate: RateForm::Arctan {
                beta,
                component: n - 1,
            },
            lambda_min: ARCTAN_LAMBDA_MIN_REL * lambda0,
            lambda_max: 2.0 * lambda0,
            dt,
        }
    }

    pub fn n_internal(&self) -> usize {
        self.internal.dim()
    }

    pub fn validate(&self) -> Result<()> {
        positive("eps", self.eps)?;
        positive("lambda0", self.lambda0)?;
        positive("dt", self.dt)?;
        positive("lambda_min", self.lambda_min)?;
        positive("lambda_max", self.lambda_max)?;
        if !(self.lambda_min <= self.lambda0 && self.lambda0 <= self.lambda_max) {
            return Err(Error::config(format!(
                "need lambda_min <= lambda0 <= lambda_max, got {} / {} / {}",
                self.lambda_min, self.lambda0, self.lambda_max
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.k < 2 {
            return Err(Error::config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.delta * f64::from(self.k) <= 1.0 {
            return Err(Error::config(format!(
                "need delta * k > 1, got {} * {}",
                self.delta, self.k
            )));
        }
        let n = self.n_internal();
        check_dim("rate sensitivity b", n, self.b.len())?;
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("b has non-finite entries"));
        }
        if let RateForm::Arctan { beta, component } = self.rate {
            positive("beta", beta)?;
            if component >= n {
                return Err(Error::config(format!(
                    "arctan rate component {component} out of range for n = {n}"
                )));
            }
            if (self.lambda_max - 2.0 * self.lambda0).abs() > 1e-12 * self.lambda0 {
                return Err(Error::config("arctan rate requires lambda_max = 2 lambda0"));
            }
        }
        TauOperator::new(self.internal.tau()?)?;
        Ok(())
    }

    pub fn tau_operator(&self) -> Result<TauOperator> {
        TauOperator::new(self.internal.tau()?)
    }

    /// The linear sensitivity `b` of `λ ≈ λ₀ - bᵀz` near `z = 0`.
    pub fn linear_sensitivity(&self) -> DVector<f64> {
        match self.rate {
            RateForm::Linear => self.b.clone(),
            RateForm::Arctan { beta, component } => {
                let mut b = DVector::zeros(self.n_internal());
                b[component] = beta;
                b
            }
        }
    }

    /// Rate at internal deviation `z`, with the clip flag.
    pub fn rate_at(&self, z: &[f64]) -> (f64, bool) {
        match self.rate {
            RateForm::Linear => linear_rate(z, self.lambda0, self.b.as_slice(), self.lambda_min, self.lambda_max),
            RateForm::Arctan { beta, component } => {
                clip(turning_rate(z[component], self.lambda0, beta), self.lambda_min, self.lambda_max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn turning_rate_examples() {
        assert_relative_eq!(turning_rate(0.0, 1.0, 1.0), 1.0);
        assert_relative_eq!(turning_rate(2.0 / PI, 1.0, 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(turning_rate(-2.0 / PI, 1.0, 1.0), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn turning_rate_derivative_matches_fd() {
        for &z in &[-3.0, -0.2, 0.0, 0.4, 5.0] {
            let h = 1e-6;
            let fd = (turning_rate(z + h, 1.3, 0.7) - turning_rate(z - h, 1.3, 0.7)) / (2.0 * h);
            assert_relative_eq!(fd, turning_rate_derivative(z, 1.3, 0.7), epsilon = 1e-8);
        }
    }

    #[test]
    fn linear_rate_examples() {
        assert_eq!(linear_rate(&[0.0], 1.0, &[3.0], 0.05, 2.0), (1.0, false));
        let (r, c) = linear_rate(&[0.1], 1.0, &[1.0], 0.05, 2.0);
        assert_relative_eq!(r, 0.9, epsilon = 1e-15);
        assert!(!c);
        assert_eq!(linear_rate(&[2.0], 1.0, &[1.0], 0.05, 2.0), (0.05, true));
    }

    #[test]
    fn internal_rhs_examples() {
        let models = [
            InternalModel::scalar_tau(4.0),
            InternalModel::ExcitationAdaptation { t_a: 2.0, t_e: 0.5 },
            InternalModel::ScalarAdaptation { t_a: 3.0 },
        ];
        for m in &models {
            let s: Vec<f64> = (0..m.dim()).map(|i| 0.3 + i as f64).collect();
            // Fixed point y = s, except for the excitation model where y* = (s₁, 0).
            let y = match m {
                InternalModel::ExcitationAdaptation { .. } => vec![s[0], 0.0],
                _ => s.clone(),
            };
            assert!(m.rhs(&y, &s).unwrap().amax() < 1e-15);
        }
        let ea = InternalModel::ExcitationAdaptation { t_a: 2.0, t_e: 0.5 };
        let r = ea.rhs(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(r[0], 0.5);
        assert_relative_eq!(r[1], -2.0);
        let gl = InternalModel::scalar_tau(4.0).rhs(&[0.0], &[1.0]).unwrap();
        assert_relative_eq!(gl[0], 0.25);
        assert!(ea.rhs(&[0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn excitation_tau_reproduces_rhs() {
        // In deviation variables z = S - y with S = (ρ, 0): F = τ⁻¹ z.
        let ea = InternalModel::ExcitationAdaptation { t_a: 2.0, t_e: 0.5 };
        let tau_inv = ea.tau().unwrap().try_inverse().unwrap();
        let (rho, y) = (0.7, [0.2, -0.4]);
        let z = DVector::from_vec(vec![rho - y[0], -y[1]]);
        let f = ea.rhs(&y, &[rho, 0.0]).unwrap();
        assert!((tau_inv * z - f).amax() < 1e-14);
    }

    #[test]
    fn excitation_fixed_point_is_unique() {
        let ea = InternalModel::ExcitationAdaptation { t_a: 2.0, t_e: 0.5 };
        // F is affine in y with invertible Jacobian, so F = 0 has one root.
        let r = ea.rhs(&[0.3, 0.1], &[0.3, 0.0]).unwrap();
        assert!(r.amax() > 0.0);
    }

    #[test]
    fn validation() {
        let ok = ModelParams::scalar_linear(0.1, 1.0, 1.0, 1.0, 0.1);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.lambda_min = 2.0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.delta = 0.4;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.internal = InternalModel::GeneralLinear {
            tau: DMatrix::zeros(1, 1),
        };
        assert!(bad.validate().is_err());
        let arc = ModelParams::arctan(0.1, 1.0, 1.0, InternalModel::ExcitationAdaptation { t_a: 2.0, t_e: 0.5 }, 0.1);
        arc.validate().unwrap();
        assert_eq!(arc.linear_sensitivity().as_slice(), &[0.0, 1.0]);
        assert_relative_eq!(arc.lambda_min, 1e-6);
    }

    proptest! {
        #[test]
        fn turning_rate_is_strictly_decreasing(a in -50.0f64..50.0, d in 1e-6f64..10.0, l in 0.1f64..5.0, beta in 0.1f64..5.0) {
            prop_assert!(turning_rate(a, l, beta) > turning_rate(a + d, l, beta));
        }

        #[test]
        fn turning_rate_bounds_and_symmetry(z in -1e3f64..1e3, l in 0.1f64..5.0, beta in 0.1f64..5.0) {
            let r = turning_rate(z, l, beta);
            prop_assert!(r > 0.0 && r < 2.0 * l);
            prop_assert!((r + turning_rate(-z, l, beta) - 2.0 * l).abs() < 1e-12 * l);
        }
    }
}
