//! Exponential integration of the linear internal dynamics `dz/dt = -τ⁻¹ z + ...`.
//!
//! Everything the simulators need from τ is expressed through three matrix
//! functions of the elapsed time `t`:
//!
//! ```text
//! E(t)  = exp(-t τ⁻¹)
//! m'(t) = τ (I - E(t))               = t  φ₁(-t τ⁻¹)
//! m(t)  = t τ - (I - E(t)) τ²        = t² φ₂(-t τ⁻¹)
//! ```
//!
//! with `φ₁(X) = (eˣ - I)/X` and `φ₂(X) = (eˣ - I - X)/X²`. Writing `m` and `m'`
//! through the φ-functions avoids the cancellation of the textbook form for
//! small `t`. Scalar and diagonal τ use closed forms per mode, symmetric τ is
//! diagonalized once, and a general τ goes through the exponential of an
//! augmented block matrix (scaling-and-squaring Padé).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Below this value of `‖t τ⁻¹‖` the φ-functions are summed from their Taylor
/// series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

const CONDITION_LIMIT: f64 = 1e12;

/// Largest condition number of a non-orthogonal eigenbasis used for modal
/// evaluation; beyond it the augmented exponential is used instead.
const EIGEN_CONDITION_LIMIT: f64 = 1e3;

#[derive(Debug, Clone)]
enum Repr {
    /// τ = diag(taus).
    Diagonal { taus: Vec<f64> },
    /// τ = Q diag(taus) Qᵀ with Q orthogonal.
    Symmetric { taus: Vec<f64>, q: DMatrix<f64>, qt: DMatrix<f64> },
    /// τ = V diag(taus) V⁻¹ with real, well-separated eigenvalues.
    Eigen { taus: Vec<f64>, v: DMatrix<f64>, v_inv: DMatrix<f64> },
    General,
}

/// The relaxation-time matrix τ together with everything needed to evaluate
/// `E`, `m'` and `m` at arbitrary times.
#[derive(Debug, Clone)]
pub struct TauOperator {
    tau: DMatrix<f64>,
    tau_inv: DMatrix<f64>,
    repr: Repr,
}

/// `E(t)`, `m'(t)` and `m(t)` evaluated at a single time.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub t: f64,
    pub exp_neg: DMatrix<f64>,
    pub m_prime: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl TauOperator {
    pub fn new(tau: DMatrix<f64>) -> Result<Self> {
        let n = tau.nrows();
        if n == 0 || tau.ncols() != n {
            return Err(Error::config(format!(
                "tau must be a nonempty square matrix, got {}x{}",
                tau.nrows(),
                tau.ncols()
            )));
        }
        if tau.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("tau has non-finite entries"));
        }
        let sv = tau.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
            return Err(Error::config(format!(
                "tau is singular or ill-conditioned (condition number {:e})",
                if smin > 0.0 { smax / smin } else { f64::INFINITY }
            )));
        }
        let tau_inv = tau
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::config("tau is not invertible"))?;

        let scale = tau.amax();
        let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || tau[(i, j)] == 0.0));
        let is_symmetric = (&tau - tau.transpose()).amax() <= 1e-13 * scale;

        let repr = if is_diagonal {
            Repr::Diagonal {
                taus: (0..n).map(|i| tau[(i, i)]).collect(),
            }
        } else if is_symmetric {
            let sym = (&tau + tau.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            Repr::Symmetric {
                taus: eig.eigenvalues.iter().copied().collect(),
                qt: eig.eigenvectors.transpose(),
                q: eig.eigenvectors,
            }
        } else {
            real_eigenbasis(&tau).map_or(Repr::General, |(taus, v, v_inv)| Repr::Eigen { taus, v, v_inv })
        };

        // Assumption of decaying internal dynamics: every eigenvalue of τ⁻¹
        // must have a positive real part.
        let stable = match &repr {
            Repr::Diagonal { taus } | Repr::Symmetric { taus, .. } | Repr::Eigen { taus, .. } => {
                taus.iter().all(|&t| t > 0.0)
            }
            Repr::General => tau_inv
                .clone()
                .complex_eigenvalues()
                .iter()
                .all(|c| c.re > 0.0),
        };
        if !stable {
            return Err(Error::config(
                "internal dynamics are not decaying: eigenvalues of tau^-1 must have positive real part",
            ));
        }

        Ok(Self { tau, tau_inv, repr })
    }

    pub fn scalar(tau: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, tau))
    }

    pub fn dim(&self) -> usize {
        self.tau.nrows()
    }

    pub fn tau(&self) -> &DMatrix<f64> {
        &self.tau
    }

    pub fn tau_inv(&self) -> &DMatrix<f64> {
        &self.tau_inv
    }

    /// The decomposition `τ = V diag(taus) V⁻¹` when τ has one with real
    /// eigenvalues and a well-conditioned basis.
    pub fn modal(&self) -> Option<Modes<'_>> {
        match &self.repr {
            Repr::Diagonal { taus } => Some(Modes { taus, basis: None }),
            Repr::Symmetric { taus, q, qt } => Some(Modes {
                taus,
                basis: Some((q, qt)),
            }),
            Repr::Eigen { taus, v, v_inv } => Some(Modes {
                taus,
                basis: Some((v, v_inv)),
            }),
            Repr::General => None,
        }
    }

    pub fn exp_neg(&self, t: f64) -> DMatrix<f64> {
        match &self.repr {
            Repr::General => (&self.tau_inv * (-t)).exp(),
            _ => self.modal_fn(|tau_i| (-t / tau_i).exp()),
        }
    }

    pub fn m_prime(&self, t: f64) -> DMatrix<f64> {
        match &self.repr {
            Repr::General => self.general(t).m_prime,
            _ => self.modal_fn(|tau_i| mode_m_prime(t, tau_i)),
        }
    }

    pub fn m(&self, t: f64) -> DMatrix<f64> {
        match &self.repr {
            Repr::General => self.general(t).m,
            _ => self.modal_fn(|tau_i| mode_m(t, tau_i)),
        }
    }

    /// The textbook expression `t τ - (I - exp(-t τ⁻¹)) τ²`, without any
    /// cancellation safeguard.
    pub fn m_direct(&self, t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let e = self.exp_neg(t);
        &self.tau * t - (DMatrix::identity(n, n) - e) * (&self.tau * &self.tau)
    }

    /// Taylor sums of `t φ₁(-tτ⁻¹)` and `t² φ₂(-tτ⁻¹)`, carried until the
    /// terms drop below machine precision. Returns `(m', m)`.
    pub fn m_series(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = &self.tau_inv * (-t);
        (phi_series(&x, 1) * t, phi_series(&x, 2) * (t * t))
    }

    pub fn propagator(&self, t: f64) -> Propagator {
        match &self.repr {
            Repr::General => self.general(t),
            _ => Propagator {
                t,
                exp_neg: self.modal_fn(|tau_i| (-t / tau_i).exp()),
                m_prime: self.modal_fn(|tau_i| mode_m_prime(t, tau_i)),
                m: self.modal_fn(|tau_i| mode_m(t, tau_i)),
            },
        }
    }

    /// `∫₀^∞ ‖exp(-s τ⁻¹)‖₂ ds`, the gain from a bounded forcing to the
    /// internal deviation.
    pub fn relaxation_gain(&self) -> f64 {
        match &self.repr {
            Repr::Diagonal { taus } | Repr::Symmetric { taus, .. } => {
                taus.iter().copied().fold(0.0, f64::max)
            }
            Repr::Eigen { .. } | Repr::General => {
                // Trapezoid on a geometric-ish grid until the norm is negligible.
                let rates: Vec<f64> = self
                    .tau_inv
                    .clone()
                    .complex_eigenvalues()
                    .iter()
                    .map(|c| c.re)
                    .collect();
                let slowest = rates.iter().copied().fold(f64::INFINITY, f64::min);
                let horizon = 40.0 / slowest;
                let steps = 4000;
                let h = horizon / steps as f64;
                let norm = |s: f64| self.exp_neg(s).norm();
                let mut acc = 0.5 * (norm(0.0) + norm(horizon));
                for i in 1..steps {
                    acc += norm(i as f64 * h);
                }
                acc * h
            }
        }
    }

    /// `sup_s ‖exp(-s τ⁻¹)‖₂`; 1 for symmetric τ, possibly larger otherwise.
    pub fn transient_peak(&self) -> f64 {
        match &self.repr {
            Repr::Diagonal { .. } | Repr::Symmetric { .. } => 1.0,
            Repr::Eigen { .. } | Repr::General => {
                let slowest = self
                    .tau_inv
                    .clone()
                    .complex_eigenvalues()
                    .iter()
                    .map(|c| c.re)
                    .fold(f64::INFINITY, f64::min);
                let horizon = 20.0 / slowest;
                (0..=2000)
                    .map(|i| self.exp_neg(horizon * i as f64 / 2000.0).norm())
                    .fold(1.0, f64::max)
            }
        }
    }

    fn modal_fn(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        match &self.repr {
            Repr::Diagonal { taus } => {
                DMatrix::from_diagonal(&DVector::from_iterator(taus.len(), taus.iter().map(|&t| f(t))))
            }
            Repr::Symmetric { taus, q, qt: v_inv } | Repr::Eigen { taus, v: q, v_inv } => {
                let d = DVector::from_iterator(taus.len(), taus.iter().map(|&t| f(t)));
                q * DMatrix::from_diagonal(&d) * v_inv
            }
            Repr::General => unreachable!("modal evaluation of a general tau"),
        }
    }

    fn general(&self, t: f64) -> Propagator {
        let n = self.dim();
        let x = &self.tau_inv * (-t);
        if x.norm() < SERIES_THRESHOLD {
            let (m_prime, m) = self.m_series(t);
            return Propagator {
                t,
                exp_neg: x.exp(),
                m_prime,
                m,
            };
        }
        // exp([[X, I, 0], [0, 0, I], [0, 0, 0]]) = [[e^X, φ₁(X), φ₂(X)], ...]
        let mut big = DMatrix::zeros(3 * n, 3 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&x);
        for i in 0..n {
            big[(i, n + i)] = 1.0;
            big[(n + i, 2 * n + i)] = 1.0;
        }
        let e = big.exp();
        Propagator {
            t,
            exp_neg: e.view((0, 0), (n, n)).into_owned(),
            m_prime: e.view((0, n), (n, n)).into_owned() * t,
            m: e.view((0, 2 * n), (n, n)).into_owned() * (t * t),
        }
    }
}

/// Modal coordinates of τ: `z = V ẑ`, `ẑ = V⁻¹ z`. `basis` is `(V, V⁻¹)`,
/// or `None` when τ is diagonal.
#[derive(Debug, Clone, Copy)]
pub struct Modes<'a> {
    pub taus: &'a [f64],
    pub basis: Option<(&'a DMatrix<f64>, &'a DMatrix<f64>)>,
}

/// Eigenvalues and a unit-column eigenbasis of a non-symmetric τ, provided
/// the eigenvalues are real and distinct and the basis is well conditioned.
fn real_eigenbasis(tau: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = tau.nrows();
    let scale = tau.amax();
    let taus: Vec<f64> = tau.clone().schur().eigenvalues()?.iter().copied().collect();
    for i in 0..n {
        for j in 0..i {
            if (taus[i] - taus[j]).abs() <= 1e-6 * scale {
                return None;
            }
        }
    }
    let mut v = DMatrix::zeros(n, n);
    for (k, &t) in taus.iter().enumerate() {
        let shifted = tau - DMatrix::identity(n, n) * t;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t?;
        let (imin, _) = svd.singular_values.argmin();
        let col = vt.row(imin).transpose();
        v.set_column(k, &(&col / col.norm()));
    }
    let sv = v.clone().singular_values();
    if sv.min() <= 0.0 || sv.max() / sv.min() > EIGEN_CONDITION_LIMIT {
        return None;
    }
    let v_inv = v.clone().try_inverse()?;
    let recon = &v * DMatrix::from_diagonal(&DVector::from_vec(taus.clone())) * &v_inv;
    if (recon - tau).amax() > 1e-12 * scale {
        return None;
    }
    Some((taus, v, v_inv))
}

fn phi_series(x: &DMatrix<f64>, order: u32) -> DMatrix<f64> {
    let n = x.nrows();
    // Σ_k X^k / (k + order)!
    let mut denom: f64 = (1..=order).map(f64::from).product();
    let mut term = DMatrix::identity(n, n) / denom;
    let mut sum = term.clone();
    for k in 1..40u32 {
        denom = f64::from(k + order);
        term = (&term * x) / denom;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-2 * sum.amax() {
            break;
        }
    }
    sum
}

/// `(1 - e^{-u}) / u`.
#[inline]
pub fn phi1_neg(u: f64) -> f64 {
    if u.abs() < SERIES_THRESHOLD {
        // 1 - u/2 + u²/6 - u³/24
        1.0 - u * (0.5 - u * (1.0 / 6.0 - u / 24.0))
    } else {
        -(-u).exp_m1() / u
    }
}

/// `(e^{-u} - 1 + u) / u²`.
#[inline]
pub fn phi2_neg(u: f64) -> f64 {
    if u.abs() < SERIES_THRESHOLD {
        // 1/2 - u/6 + u²/24 - u³/120
        0.5 - u * (1.0 / 6.0 - u * (1.0 / 24.0 - u / 120.0))
    } else {
        ((-u).exp_m1() + u) / (u * u)
    }
}

/// Scalar `m'(t) = τ(1 - e^{-t/τ})`.
#[inline]
pub fn mode_m_prime(t: f64, tau: f64) -> f64 {
    t * phi1_neg(t / tau)
}

/// Scalar `m(t) = tτ - (1 - e^{-t/τ}) τ²`.
#[inline]
pub fn mode_m(t: f64, tau: f64) -> f64 {
    t * t * phi2_neg(t / tau)
}
