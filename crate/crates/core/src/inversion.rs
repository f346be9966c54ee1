//! Root finding for `∫₀ʰ λ ds = θ` and Gauss-Legendre quadrature.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub h: f64,
    pub iterations: usize,
    pub bisections: usize,
}

/// Solves `I(h) = target` on `[0, h_max]` for an increasing `I` with
/// `I(0) = 0` and `I(h_max) >= target`.
///
/// `f(h)` returns `(I(h), I'(h))`. Newton iterates that leave the current
/// bracket are replaced by bisection. Converged when
/// `|I(h) - target| <= tol * target`, or when the bracket has shrunk to a few
/// ulps of `h`.
pub fn solve_increasing(
    mut f: impl FnMut(f64) -> (f64, f64),
    target: f64,
    h_max: f64,
    guess: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Root> {
    debug_assert!(target > 0.0 && h_max > 0.0);
    let (mut lo, mut hi) = (0.0f64, h_max);
    let mut h = if guess > 0.0 && guess < h_max { guess } else { 0.5 * h_max };
    let mut bisections = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let (val, deriv) = f(h);
        residual = val - target;
        if residual.abs() <= tol * target {
            // One last Newton correction: quadratic convergence takes the
            // root from the tolerance down to rounding.
            let polished = h - residual / deriv;
            if deriv > 0.0 && polished > lo && polished <= hi {
                h = polished;
            }
            return Ok(Root {
                h,
                iterations: it,
                bisections,
            });
        }
        if residual > 0.0 {
            hi = h;
        } else {
            lo = h;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(Root {
                h,
                iterations: it,
                bisections,
            });
        }
        let newton = h - residual / deriv;
        h = if deriv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            bisections += 1;
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
        state: format!("target={target:e} bracket=[{lo:e}, {hi:e}] h={h:e}"),
    })
}

/// 4-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
pub const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_86,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_86,
];

/// `∫ₐᵇ f` with `panels` equal 4-point Gauss-Legendre panels.
pub fn gauss_legendre(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        let half = 0.5 * w;
        let mut s = 0.0;
        for (x, wt) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
            s += wt * f(mid + half * x);
        }
        acc += s * half;
    }
    acc
}

/// Composite Gauss-Legendre, doubling the panel count until two successive
/// estimates agree to `tol` (relative to the larger of the value and `scale`).
pub fn gauss_legendre_adaptive(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64, scale: f64) -> f64 {
    let mut panels = panels.max(1);
    let mut prev = gauss_legendre(&mut f, a, b, panels);
    for _ in 0..12 {
        panels *= 2;
        let next = gauss_legendre(&mut f, a, b, panels);
        if (next - prev).abs() <= tol * next.abs().max(scale) {
            return next;
        }
        prev = next;
    }
    prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_rate_halfway() {
        let r = solve_increasing(|h| (2.0 * h, 2.0), 0.5, 0.5, 0.1, 1e-14, 50).unwrap();
        assert_relative_eq!(r.h, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn matches_bisection_oracle() {
        // h - 0.1(1 - e^{-h}) = 0.5
        let f = |h: f64| (h - 0.1 * (1.0 - (-h).exp()), 1.0 - 0.1 * (-h).exp());
        let r = solve_increasing(f, 0.5, 1.0, 0.5, 1e-14, 50).unwrap();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if f(mid).0 < 0.5 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((r.h - lo).abs() < 1e-12);
        assert!((r.h - 0.541_831_826_4).abs() < 1e-9);
    }

    #[test]
    fn bad_derivative_falls_back_to_bisection() {
        // Derivative reported as zero: pure bisection must still converge.
        let r = solve_increasing(|h| (h * h * h, 0.0), 0.125, 1.0, 0.9, 1e-12, 200).unwrap();
        assert!((r.h - 0.5).abs() < 1e-10);
        assert!(r.bisections > 0);
    }

    #[test]
    fn gauss_legendre_is_exact_for_cubics() {
        let v = gauss_legendre(|x| 4.0 * x * x * x - x + 2.0, -1.0, 2.0, 1);
        assert_relative_eq!(v, 15.0 - 1.5 + 6.0, epsilon = 1e-13);
        let e = gauss_legendre_adaptive(f64::exp, 0.0, 3.0, 1, 1e-14, 1.0);
        assert_relative_eq!(e, 3f64.exp() - 1.0, epsilon = 1e-12);
    }
}
