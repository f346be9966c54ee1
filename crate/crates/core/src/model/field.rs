//! Chemoattractant landscapes `S: ℝᵈ → ℝⁿ`.
//!
//! Gradients follow the column convention `∇S(x) ∈ ℝ^{d×n}`: column `j` is
//! the spatial gradient of component `j`. The quantity the internal dynamics
//! see along a run with velocity `v` is `∇S(x)ᵀ v ∈ ℝⁿ`.

use nalgebra::{DMatrix, DVector};

use super::tabulated::TabulatedField;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub enum FieldKind {
    /// `S(x) = s0 + gradᵀ x`.
    Linear {
        s0: DVector<f64>,
        grad: DMatrix<f64>,
    },
    /// `S(x) = amplitude · exp(-|x - center|² / 2σ²)`.
    GaussianBump {
        amplitude: DVector<f64>,
        center: DVector<f64>,
        sigma: f64,
    },
    Tabulated(TabulatedField),
}

#[derive(Debug, Clone)]
pub struct ChemoField {
    kind: FieldKind,
    dim: usize,
    components: usize,
}

impl ChemoField {
    pub fn linear(s0: DVector<f64>, grad: DMatrix<f64>) -> Result<Self> {
        if grad.ncols() != s0.len() {
            return Err(Error::Dimension {
                context: "linear field gradient columns",
                expected: s0.len(),
                got: grad.ncols(),
            });
        }
        if grad.nrows() == 0 || s0.is_empty() {
            return Err(Error::config("linear field needs d >= 1 and n >= 1"));
        }
        let (dim, components) = (grad.nrows(), grad.ncols());
        Ok(Self {
            kind: FieldKind::Linear { s0, grad },
            dim,
            components,
        })
    }

    /// Constant field with zero gradient.
    pub fn uniform(dim: usize, components: usize) -> Self {
        Self::linear(DVector::zeros(components), DMatrix::zeros(dim, components))
            .expect("positive dimensions")
    }

    /// One-dimensional scalar field `S(x) = g x`.
    pub fn slope_1d(g: f64) -> Self {
        Self::linear(DVector::zeros(1), DMatrix::from_element(1, 1, g)).expect("1x1")
    }

    pub fn gaussian_bump(amplitude: DVector<f64>, center: DVector<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::config("gaussian bump sigma must be positive"));
        }
        if amplitude.is_empty() || center.is_empty() {
            return Err(Error::config("gaussian bump needs d >= 1 and n >= 1"));
        }
        let (dim, components) = (center.len(), amplitude.len());
        Ok(Self {
            kind: FieldKind::GaussianBump {
                amplitude,
                center,
                sigma,
            },
            dim,
            components,
        })
    }

    pub fn tabulated(table: TabulatedField) -> Self {
        let (dim, components) = (table.dim(), table.components());
        Self {
            kind: FieldKind::Tabulated(table),
            dim,
            components,
        }
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// True when the gradient is the same everywhere.
    pub fn is_affine(&self) -> bool {
        matches!(self.kind, FieldKind::Linear { .. })
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FieldKind::Linear { s0, grad } => {
                s0 + grad.tr_mul(&DVector::from_column_slice(x))
            }
            FieldKind::GaussianBump {
                amplitude,
                center,
                sigma,
            } => amplitude * gaussian_weight(x, center.as_slice(), *sigma),
            FieldKind::Tabulated(t) => t.eval_grad(x).0,
        }
    }

    /// `∇S(x)` as a `d × n` matrix.
    pub fn grad(&self, x: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FieldKind::Linear { grad, .. } => grad.clone(),
            FieldKind::GaussianBump {
                amplitude,
                center,
                sigma,
            } => {
                let w = gaussian_weight(x, center.as_slice(), *sigma);
                let s2 = sigma * sigma;
                let r = DVector::from_iterator(self.dim, x.iter().zip(center.iter()).map(|(a, c)| -(a - c) * w / s2));
                &r * amplitude.transpose()
            }
            FieldKind::Tabulated(t) => t.eval_grad(x).1,
        }
    }

    /// Writes `∇S(x)ᵀ v` (the rate of change of `S` along a run) into `out`.
    pub fn directional_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.components);
        match &self.kind {
            FieldKind::Linear { grad, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = grad.column(j).iter().zip(v).map(|(g, v)| g * v).sum();
                }
            }
            FieldKind::GaussianBump {
                amplitude,
                center,
                sigma,
            } => {
                let w = gaussian_weight(x, center.as_slice(), *sigma);
                let rv: f64 = x
                    .iter()
                    .zip(center.iter())
                    .zip(v)
                    .map(|((a, c), v)| (a - c) * v)
                    .sum();
                let s = -rv * w / (sigma * sigma);
                for (o, a) in out.iter_mut().zip(amplitude.iter()) {
                    *o = a * s;
                }
            }
            FieldKind::Tabulated(t) => {
                let g = t.eval_grad(x).1;
                for (j, o) in out.iter_mut().enumerate() {
                    *o = g.column(j).iter().zip(v).map(|(g, v)| g * v).sum();
                }
            }
        }
    }

    pub fn directional(&self, x: &[f64], v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.components);
        self.directional_into(x, v, out.as_mut_slice());
        out
    }

    /// `c_S = sup_x max_j ‖∇²S_j(x)‖₂`; analytic for the built-ins, sampled for
    /// tabulated fields.
    pub fn hessian_bound(&self) -> f64 {
        match &self.kind {
            FieldKind::Linear { .. } => 0.0,
            FieldKind::GaussianBump {
                amplitude, sigma, ..
            } => amplitude.amax() / (sigma * sigma),
            FieldKind::Tabulated(t) => t.hessian_bound(),
        }
    }

    /// Upper bound on `sup_x ‖∇S(x)‖₂`.
    pub fn gradient_bound(&self) -> f64 {
        match &self.kind {
            FieldKind::Linear { grad, .. } => grad.norm(),
            FieldKind::GaussianBump {
                amplitude, sigma, ..
            } => amplitude.norm() * (-0.5f64).exp() / sigma,
            FieldKind::Tabulated(t) => t.gradient_bound(),
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim("field position", self.dim, x.len())
    }
}

fn gaussian_weight(x: &[f64], center: &[f64], sigma: f64) -> f64 {
    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
    (-r2 / (2.0 * sigma * sigma)).exp()
}
