//! Model ingredients shared by all simulators.

mod field;
mod params;
mod tabulated;
mod velocity;

use std::collections::VecDeque;

pub use field::{ChemoField, FieldKind};
pub use params::{
    internal_rhs, linear_rate, turning_rate, turning_rate_derivative, InternalModel, ModelParams, RateForm,
    ARCTAN_LAMBDA_MIN_REL,
};
pub(crate) use params::clip;
pub use tabulated::{TabulatedField, GRID_MAGIC};
pub use velocity::VelocityMeasure;

/// State of one bacterium on the fast time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Deviation `Z = S(X) - Y` from the internal equilibrium.
    pub z: Vec<f64>,
    pub jumps: u64,
    pub theta_log: Option<ThetaLog>,
}

impl ParticleState {
    pub fn new(x: Vec<f64>, v: Vec<f64>, z: Vec<f64>) -> Self {
        Self {
            t: 0.0,
            x,
            v,
            z,
            jumps: 0,
            theta_log: None,
        }
    }

    pub fn with_theta_log(mut self, capacity: usize) -> Self {
        self.theta_log = Some(ThetaLog::new(capacity));
        self
    }

    pub fn z_norm(&self) -> f64 {
        self.z.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Ring buffer of the most recent θ draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaLog {
    capacity: usize,
    buf: VecDeque<f64>,
}

impl ThetaLog {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buf: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, theta: f64) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(theta);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.buf.iter()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
