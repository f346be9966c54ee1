//! Grid-sampled landscapes with tensor-product cubic (Catmull-Rom) interpolation.
//!
//! Text layout (see `docs/formats.md`):
//!
//! ```text
//! chemofield-grid v1
//! dimension 2
//! components 1
//! min 0.0 0.0
//! max 1.0 2.0
//! spacing 0.5 0.5
//! data
//! <Π points × components values, row-major, last axis fastest, components innermost>
//! ```
//!
//! Outside `[min, max]` the position is clamped to the box, so the field is
//! constant along the outward normal there.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const GRID_MAGIC: &str = "chemofield-grid v1";

#[derive(Debug, Clone)]
pub struct TabulatedField {
    dim: usize,
    components: usize,
    min: Vec<f64>,
    spacing: Vec<f64>,
    points: Vec<usize>,
    values: Vec<f64>,
    hessian_bound: f64,
    gradient_bound: f64,
}

impl TabulatedField {
    /// `values` is row-major over the grid (last axis fastest) with the
    /// components innermost.
    pub fn new(min: Vec<f64>, spacing: Vec<f64>, points: Vec<usize>, components: usize, values: Vec<f64>) -> Result<Self> {
        let dim = min.len();
        if dim == 0 || spacing.len() != dim || points.len() != dim {
            return Err(Error::config("grid min/spacing/points must have the same nonzero length"));
        }
        if components == 0 {
            return Err(Error::config("grid needs at least one component"));
        }
        if spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::config("grid spacing must be positive"));
        }
        if points.iter().any(|&p| p < 2) {
            return Err(Error::config("grid needs at least two points per axis"));
        }
        let expected = points.iter().product::<usize>() * components;
        if values.len() != expected {
            return Err(Error::Parse(format!(
                "grid expects {expected} values, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("grid values must be finite".into()));
        }
        let mut t = Self {
            dim,
            components,
            min,
            spacing,
            points,
            values,
            hessian_bound: 0.0,
            gradient_bound: 0.0,
        };
        let (hb, gb) = t.estimate_bounds();
        t.hessian_bound = hb;
        t.gradient_bound = gb;
        Ok(t)
    }

    /// Samples `f` on a grid.
    pub fn sample(min: Vec<f64>, spacing: Vec<f64>, points: Vec<usize>, components: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let total: usize = points.iter().product();
        let mut values = Vec::with_capacity(total * components);
        let mut idx = vec![0usize; points.len()];
        for _ in 0..total {
            let x: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| min[k] + i as f64 * spacing[k]).collect();
            let s = f(&x);
            if s.len() != components {
                return Err(Error::Dimension {
                    context: "sampled field components",
                    expected: components,
                    got: s.len(),
                });
            }
            values.extend(s);
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < points[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::new(min, spacing, points, components, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.min[k] + (self.points[k] - 1) as f64 * self.spacing[k])
            .collect()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn hessian_bound(&self) -> f64 {
        self.hessian_bound
    }

    pub fn gradient_bound(&self) -> f64 {
        self.gradient_bound
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        match lines.next() {
            Some(GRID_MAGIC) => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header line '{GRID_MAGIC}', found {other:?}"
                )))
            }
        }
        let mut dim = None;
        let mut components = None;
        let mut min = None;
        let mut max = None;
        let mut spacing = None;
        for line in lines.by_ref() {
            if line == "data" {
                break;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let floats = || -> Result<Vec<f64>> {
                rest.iter()
                    .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{key}: {e}"))))
                    .collect()
            };
            let single_usize = || -> Result<usize> {
                match rest.as_slice() {
                    [s] => s.parse::<usize>().map_err(|e| Error::Parse(format!("{key}: {e}"))),
                    _ => Err(Error::Parse(format!("{key} expects one integer"))),
                }
            };
            match key {
                "dimension" => dim = Some(single_usize()?),
                "components" => components = Some(single_usize()?),
                "min" => min = Some(floats()?),
                "max" => max = Some(floats()?),
                "spacing" => spacing = Some(floats()?),
                other => return Err(Error::Parse(format!("unknown grid header key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("grid header is missing '{k}'"));
        let dim = dim.ok_or_else(|| missing("dimension"))?;
        let components = components.ok_or_else(|| missing("components"))?;
        let min = min.ok_or_else(|| missing("min"))?;
        let max = max.ok_or_else(|| missing("max"))?;
        let spacing = spacing.ok_or_else(|| missing("spacing"))?;
        if min.len() != dim || max.len() != dim || spacing.len() != dim {
            return Err(Error::Parse(format!(
                "min/max/spacing must each have {dim} entries"
            )));
        }
        let mut points = Vec::with_capacity(dim);
        for k in 0..dim {
            let extent = max[k] - min[k];
            if !(extent > 0.0) || !(spacing[k] > 0.0) {
                return Err(Error::Parse(format!("axis {k}: need max > min and spacing > 0")));
            }
            let cells = (extent / spacing[k]).round();
            if (cells * spacing[k] - extent).abs() > 1e-9 * extent {
                return Err(Error::Parse(format!(
                    "axis {k}: extent {extent} is not a multiple of spacing {}",
                    spacing[k]
                )));
            }
            points.push(cells as usize + 1);
        }
        let values: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("grid value '{s}': {e}"))))
            .collect::<Result<_>>()?;
        Self::new(min, spacing, points, components, values)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "{GRID_MAGIC}");
        let _ = writeln!(s, "dimension {}", self.dim);
        let _ = writeln!(s, "components {}", self.components);
        let _ = writeln!(s, "min {}", join(&self.min));
        let _ = writeln!(s, "max {}", join(&self.max()));
        let _ = writeln!(s, "spacing {}", join(&self.spacing));
        let _ = writeln!(s, "data");
        let row = self.points[self.dim - 1] * self.components;
        for chunk in self.values.chunks(row) {
            let _ = writeln!(s, "{}", join(chunk));
        }
        s
    }

    /// Value and `d × n` gradient at `x`.
    pub fn eval_grad(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let n = self.components;
        // Per axis: the four stencil indices, weights and derivative weights.
        let mut idx = [[0usize; 4]; 3];
        let mut w = [[0.0f64; 4]; 3];
        let mut dw = [[0.0f64; 4]; 3];
        assert!(d <= 3, "tabulated fields support up to three dimensions");
        for k in 0..d {
            let last = self.points[k] - 1;
            let s = (x[k] - self.min[k]) / self.spacing[k];
            let inside = s >= 0.0 && s <= last as f64;
            let s = s.clamp(0.0, last as f64);
            let cell = (s.floor() as usize).min(last - 1);
            let u = s - cell as f64;
            for (j, o) in [-1isize, 0, 1, 2].iter().enumerate() {
                idx[k][j] = (cell as isize + o).clamp(0, last as isize) as usize;
            }
            let (u2, u3) = (u * u, u * u * u);
            w[k] = [
                0.5 * (-u3 + 2.0 * u2 - u),
                0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
                0.5 * (-3.0 * u3 + 4.0 * u2 + u),
                0.5 * (u3 - u2),
            ];
            dw[k] = if inside {
                let h = self.spacing[k];
                [
                    0.5 * (-3.0 * u2 + 4.0 * u - 1.0) / h,
                    0.5 * (9.0 * u2 - 10.0 * u) / h,
                    0.5 * (-9.0 * u2 + 8.0 * u + 1.0) / h,
                    0.5 * (3.0 * u2 - 2.0 * u) / h,
                ]
            } else {
                [0.0; 4]
            };
        }

        let mut value = DVector::zeros(n);
        let mut grad = DMatrix::zeros(d, n);
        let combos = 4usize.pow(d as u32);
        let mut deriv = [0.0f64; 3];
        for c in 0..combos {
            let mut offset = 0usize;
            let mut weight = 1.0;
            let mut rem = c;
            let mut sel = [0usize; 3];
            for k in (0..d).rev() {
                sel[k] = rem % 4;
                rem /= 4;
            }
            for k in 0..d {
                offset = offset * self.points[k] + idx[k][sel[k]];
                weight *= w[k][sel[k]];
            }
            for (k, dk) in deriv.iter_mut().enumerate().take(d) {
                let mut p = dw[k][sel[k]];
                for l in 0..d {
                    if l != k {
                        p *= w[l][sel[l]];
                    }
                }
                *dk = p;
            }
            let base = offset * n;
            for j in 0..n {
                let v = self.values[base + j];
                value[j] += weight * v;
                for k in 0..d {
                    grad[(k, j)] += deriv[k] * v;
                }
            }
        }
        (value, grad)
    }

    /// Sampled `(sup ‖∇²S_j‖₂, sup ‖∇S‖₂)` over cell centers and quarter
    /// points, capped at a few thousand probes.
    fn estimate_bounds(&self) -> (f64, f64) {
        let d = self.dim;
        let cells: Vec<usize> = self.points.iter().map(|p| p - 1).collect();
        let per_axis = [0.25, 0.5, 0.75];
        let total_cells: usize = cells.iter().product();
        let probes_per_cell = per_axis.len().pow(d as u32);
        let stride = (total_cells * probes_per_cell / 4096).max(1);
        let mut hb = 0.0f64;
        let mut gb = 0.0f64;
        let mut x = vec![0.0; d];
        let mut counter = 0usize;
        for cell in 0..total_cells {
            for probe in 0..probes_per_cell {
                counter += 1;
                if !counter.is_multiple_of(stride) {
                    continue;
                }
                let (mut rc, mut rp) = (cell, probe);
                for k in (0..d).rev() {
                    let ci = rc % cells[k];
                    rc /= cells[k];
                    let pi = rp % per_axis.len();
                    rp /= per_axis.len();
                    x[k] = self.min[k] + (ci as f64 + per_axis[pi]) * self.spacing[k];
                }
                let g = self.eval_grad(&x).1;
                gb = gb.max(g.norm());
                for j in 0..self.components {
                    let mut hess = DMatrix::zeros(d, d);
                    for k in 0..d {
                        let h = 1e-4 * self.spacing[k];
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[k] += h;
                        xm[k] -= h;
                        let gp = self.eval_grad(&xp).1;
                        let gm = self.eval_grad(&xm).1;
                        for l in 0..d {
                            hess[(l, k)] = (gp[(l, j)] - gm[(l, j)]) / (2.0 * h);
                        }
                    }
                    let sym = (&hess + hess.transpose()) * 0.5;
                    let spec = sym.symmetric_eigenvalues().amax();
                    hb = hb.max(spec);
                }
            }
        }
        (hb, gb)
    }
}
