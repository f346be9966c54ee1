use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::std_normal;

/// Distribution `M(dv)` of post-tumble velocities.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityMeasure {
    UniformSphere(usize),
    /// `½(δ₊₁ + δ₋₁)` in one dimension.
    PlusMinusOne,
    Discrete(Vec<(Vec<f64>, f64)>),
}

impl VelocityMeasure {
    pub fn discrete(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let m = VelocityMeasure::Discrete(atoms);
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        match self {
            VelocityMeasure::UniformSphere(d) => *d,
            VelocityMeasure::PlusMinusOne => 1,
            VelocityMeasure::Discrete(atoms) => atoms.first().map_or(0, |a| a.0.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VelocityMeasure::UniformSphere(0) => Err(Error::config("sphere dimension must be >= 1")),
            VelocityMeasure::UniformSphere(_) | VelocityMeasure::PlusMinusOne => Ok(()),
            VelocityMeasure::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::config("discrete velocity measure has no atoms"));
                }
                let d = atoms[0].0.len();
                let mut total = 0.0;
                let mut mean = vec![0.0; d];
                for (v, w) in atoms {
                    if v.len() != d {
                        return Err(Error::config("discrete velocities differ in dimension"));
                    }
                    if !(*w > 0.0) {
                        return Err(Error::config("discrete velocity weights must be positive"));
                    }
                    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-9 {
                        return Err(Error::config(format!("velocity {v:?} is not a unit vector")));
                    }
                    total += w;
                    for (m, c) in mean.iter_mut().zip(v) {
                        *m += w * c;
                    }
                }
                if mean.iter().any(|m| (m / total).abs() > 1e-9) {
                    return Err(Error::config("discrete velocity measure must have mean zero"));
                }
                Ok(())
            }
        }
    }

    /// Draws one velocity into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            VelocityMeasure::PlusMinusOne => {
                out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            VelocityMeasure::UniformSphere(1) => {
                out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            VelocityMeasure::UniformSphere(_) => loop {
                let mut n2 = 0.0;
                for o in out.iter_mut() {
                    *o = std_normal(rng);
                    n2 += *o * *o;
                }
                if n2 > 1e-300 {
                    let inv = 1.0 / n2.sqrt();
                    out.iter_mut().for_each(|o| *o *= inv);
                    break;
                }
            },
            VelocityMeasure::Discrete(atoms) => {
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                let mut u = rng.random::<f64>() * total;
                let mut chosen = &atoms[atoms.len() - 1].0;
                for (v, w) in atoms {
                    if u < *w {
                        chosen = v;
                        break;
                    }
                    u -= w;
                }
                out.copy_from_slice(chosen);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.sample_into(rng, &mut v);
        v
    }

    /// `D = ∫ v vᵀ M(dv)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            VelocityMeasure::UniformSphere(d) => DMatrix::identity(*d, *d) / (*d as f64),
            VelocityMeasure::PlusMinusOne => DMatrix::identity(1, 1),
            VelocityMeasure::Discrete(atoms) => {
                let d = self.dim();
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                let mut c = DMatrix::zeros(d, d);
                for (v, w) in atoms {
                    for i in 0..d {
                        for j in 0..d {
                            c[(i, j)] += w * v[i] * v[j] / total;
                        }
                    }
                }
                c
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    fn empirical(m: &VelocityMeasure, n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let d = m.dim();
        let mut rng = StreamFactory::new(11).dynamics(0);
        let mut mean = vec![0.0; d];
        let mut cov = DMatrix::zeros(d, d);
        let mut v = vec![0.0; d];
        for _ in 0..n {
            m.sample_into(&mut rng, &mut v);
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for i in 0..d {
                mean[i] += v[i];
                for j in 0..d {
                    cov[(i, j)] += v[i] * v[j];
                }
            }
        }
        (mean.iter().map(|m| m / n as f64).collect(), cov / n as f64)
    }

    #[test]
    fn measures_are_centered_with_expected_covariance() {
        let n = 1_000_000;
        let measures = [
            VelocityMeasure::PlusMinusOne,
            VelocityMeasure::UniformSphere(2),
            VelocityMeasure::UniformSphere(3),
            VelocityMeasure::discrete(vec![
                (vec![1.0, 0.0], 1.0),
                (vec![-1.0, 0.0], 1.0),
                (vec![0.0, 1.0], 2.0),
                (vec![0.0, -1.0], 2.0),
            ])
            .unwrap(),
        ];
        for m in &measures {
            let (mean, cov) = empirical(m, n);
            for c in mean {
                assert!(c.abs() < 4.0 * (1.0 / n as f64).sqrt(), "{m:?} mean {c}");
            }
            assert!((cov - m.covariance()).amax() < 5e-3, "{m:?}");
        }
    }

    #[test]
    fn rejects_biased_discrete() {
        assert!(VelocityMeasure::discrete(vec![(vec![1.0], 1.0)]).is_err());
        assert!(VelocityMeasure::discrete(vec![(vec![0.5], 1.0), (vec![-0.5], 1.0)]).is_err());
    }
}
