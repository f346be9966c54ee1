//! The direct-gradient-sensing process: the rate depends on `A(x)ᵀv`
//! instead of an internal state.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::ensemble::{par_map, EnsembleConfig, EnsembleResult, ParticleOutput};
use crate::error::{check_dim, Error, Result};
use crate::fine::{JumpRecord, StepOutcome};
use crate::inversion::{gauss_legendre_adaptive, solve_increasing, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::model::{clip, ChemoField, ParticleState, VelocityMeasure};
use crate::rng::{exp1, StreamFactory};
use crate::stats::Diagnostics;

pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// The drift field `A(x)` of the rate.
#[derive(Clone)]
pub enum AField {
    Zero(usize),
    Constant(Vec<f64>),
    /// `A(x) = ∇S(x) w`, a combination of the gradient columns.
    FromChemo { field: ChemoField, weights: DVector<f64> },
    Custom { dim: usize, f: VectorFn },
}

impl fmt::Debug for AField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AField::Zero(d) => write!(f, "Zero({d})"),
            AField::Constant(a) => write!(f, "Constant({a:?})"),
            AField::FromChemo { weights, .. } => write!(f, "FromChemo {{ weights: {:?} }}", weights.as_slice()),
            AField::Custom { dim, .. } => write!(f, "Custom({dim})"),
        }
    }
}

impl AField {
    pub fn from_chemo(field: ChemoField, weights: DVector<f64>) -> Result<Self> {
        check_dim("drift weights", field.components(), weights.len())?;
        Ok(AField::FromChemo { field, weights })
    }

    pub fn dim(&self) -> usize {
        match self {
            AField::Zero(d) => *d,
            AField::Constant(a) => a.len(),
            AField::FromChemo { field, .. } => field.dim(),
            AField::Custom { dim, .. } => *dim,
        }
    }

    /// `A(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            AField::Zero(d) => vec![0.0; *d],
            AField::Constant(a) => a.clone(),
            AField::FromChemo { field, weights } => (field.grad(x) * weights).iter().copied().collect(),
            AField::Custom { f, .. } => f(x),
        }
    }

    /// `A(x)ᵀv`.
    pub fn dot_v(&self, x: &[f64], v: &[f64], scratch: &mut [f64]) -> f64 {
        match self {
            AField::Zero(_) => 0.0,
            AField::Constant(a) => a.iter().zip(v).map(|(a, v)| a * v).sum(),
            AField::FromChemo { field, weights } => {
                field.directional_into(x, v, scratch);
                scratch.iter().zip(weights.iter()).map(|(g, w)| g * w).sum()
            }
            AField::Custom { f, .. } => f(x).iter().zip(v).map(|(a, v)| a * v).sum(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            AField::Zero(_) | AField::Constant(_) => true,
            AField::FromChemo { field, .. } => field.is_affine(),
            AField::Custom { .. } => false,
        }
    }

    fn scratch_len(&self) -> usize {
        match self {
            AField::FromChemo { field, .. } => field.components(),
            _ => 0,
        }
    }
}

/// The optional `O(ε²)` term `q(x, v)` of the rate.
#[derive(Clone, Default)]
pub enum SecondOrder {
    #[default]
    Zero,
    Constant(f64),
    Custom(ScalarFn),
}

impl fmt::Debug for SecondOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecondOrder::Zero => write!(f, "Zero"),
            SecondOrder::Constant(q) => write!(f, "Constant({q})"),
            SecondOrder::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl SecondOrder {
    fn eval(&self, x: &[f64], v: &[f64]) -> f64 {
        match self {
            SecondOrder::Zero => 0.0,
            SecondOrder::Constant(q) => *q,
            SecondOrder::Custom(f) => f(x, v),
        }
    }
}

/// `clip(λ₀ - ε A(x)ᵀv + ε² q(x, v), λ_min, λ_max)`.
#[derive(Debug, Clone)]
pub struct CoarseRate {
    pub lambda0: f64,
    pub eps: f64,
    pub a_field: AField,
    pub second_order: SecondOrder,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl CoarseRate {
    /// Bounds `[10⁻³λ₀, 10³λ₀]` and no second-order term.
    pub fn new(lambda0: f64, eps: f64, a_field: AField) -> Self {
        Self {
            lambda0,
            eps,
            a_field,
            second_order: SecondOrder::Zero,
            lambda_min: 1e-3 * lambda0,
            lambda_max: 1e3 * lambda0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0 && self.eps > 0.0) {
            return Err(Error::config("coarse rate needs lambda0 > 0 and eps > 0"));
        }
        if !(0.0 < self.lambda_min && self.lambda_min <= self.lambda0 && self.lambda0 <= self.lambda_max) {
            return Err(Error::config("coarse rate needs 0 < lambda_min <= lambda0 <= lambda_max"));
        }
        Ok(())
    }

    /// Rate with the clip flag.
    pub fn eval(&self, x: &[f64], v: &[f64], scratch: &mut [f64]) -> (f64, bool) {
        let raw = self.lambda0 - self.eps * self.a_field.dot_v(x, v, scratch)
            + self.eps * self.eps * self.second_order.eval(x, v);
        clip(raw, self.lambda_min, self.lambda_max)
    }

    pub fn coarse_rate(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.a_field.scratch_len()];
        self.eval(x, v, &mut scratch).0
    }

    fn is_constant_along_runs(&self) -> bool {
        self.a_field.is_constant() && !matches!(self.second_order, SecondOrder::Custom(_))
    }
}

#[derive(Debug, Clone)]
pub struct CoarseStepper {
    rate: CoarseRate,
    measure: VelocityMeasure,
    /// Quadrature panel length on the fast time scale.
    panel: f64,
    quad_tol: f64,
    newton_tol: f64,
    newton_max_iter: usize,
}

/// Scratch for one particle.
#[derive(Debug, Clone)]
pub struct CoarseWorkspace {
    scratch: Vec<f64>,
    xs: Vec<f64>,
    pub diag: Diagnostics,
}

impl CoarseStepper {
    pub fn new(rate: CoarseRate, measure: VelocityMeasure, panel: f64) -> Result<Self> {
        rate.validate()?;
        measure.validate()?;
        check_dim("drift field vs velocity dimension", measure.dim(), rate.a_field.dim())?;
        if !(panel > 0.0) {
            return Err(Error::config("quadrature panel length must be positive"));
        }
        Ok(Self {
            rate,
            measure,
            panel,
            quad_tol: 1e-12,
            newton_tol: DEFAULT_TOL,
            newton_max_iter: DEFAULT_MAX_ITER,
        })
    }

    pub fn rate(&self) -> &CoarseRate {
        &self.rate
    }

    pub fn measure(&self) -> &VelocityMeasure {
        &self.measure
    }

    pub fn workspace(&self) -> CoarseWorkspace {
        CoarseWorkspace {
            scratch: vec![0.0; self.rate.a_field.scratch_len()],
            xs: vec![0.0; self.measure.dim()],
            diag: Diagnostics::default(),
        }
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, x: Vec<f64>, rng: &mut R) -> Result<ParticleState> {
        check_dim("initial position", self.measure.dim(), x.len())?;
        let v = self.measure.sample(rng);
        Ok(ParticleState::new(x, v, Vec::new()))
    }

    /// Rate at `s` along the run from `state`.
    fn rate_along(&self, state: &ParticleState, ws: &mut CoarseWorkspace, s: f64) -> (f64, bool) {
        let e = self.rate.eps;
        for ((o, x), v) in ws.xs.iter_mut().zip(&state.x).zip(&state.v) {
            *o = x + e * v * s;
        }
        let (scratch, xs) = (&mut ws.scratch, &ws.xs);
        self.rate.eval(xs, &state.v, scratch)
    }

    /// `∫ₐᵇ λ` along the run: 4-point Gauss-Legendre on the panel, refined
    /// by halving until successive estimates agree.
    fn panel_integral(&self, state: &ParticleState, ws: &mut CoarseWorkspace, a: f64, b: f64) -> f64 {
        let scale = self.rate.lambda0 * (b - a);
        gauss_legendre_adaptive(|s| self.rate_along(state, ws, s).0, a, b, 1, self.quad_tol, scale)
    }

    /// Integral of the rate over `[0, h]` from `state`.
    pub fn integrated_rate(&self, state: &ParticleState, h: f64) -> f64 {
        let mut ws = self.workspace();
        if self.rate.is_constant_along_runs() {
            return self.rate_along(state, &mut ws, 0.0).0 * h;
        }
        self.panel_integral(state, &mut ws, 0.0, h)
    }

    fn solve_in_panel(&self, state: &ParticleState, ws: &mut CoarseWorkspace, h_max: f64, rem: f64) -> Result<StepOutcome> {
        ws.diag.steps += 1;
        if self.rate.is_constant_along_runs() {
            let (r, clipped) = self.rate_along(state, ws, 0.0);
            if clipped {
                ws.diag.clip_events += 1;
            }
            let full = r * h_max;
            return Ok(if full < rem {
                StepOutcome::NoJumpInStep { integral: full }
            } else {
                StepOutcome::Jump {
                    h: (rem / r).min(h_max),
                    iterations: 0,
                }
            });
        }
        let (r0, c0) = self.rate_along(state, ws, 0.0);
        let (_, c1) = self.rate_along(state, ws, h_max);
        if c0 || c1 {
            ws.diag.clip_events += 1;
        }
        let full = self.panel_integral(state, ws, 0.0, h_max);
        if full < rem {
            return Ok(StepOutcome::NoJumpInStep { integral: full });
        }
        let root = {
            let cell = std::cell::RefCell::new(&mut *ws);
            let f = |h: f64| {
                let mut w = cell.borrow_mut();
                (self.panel_integral(state, &mut w, 0.0, h), self.rate_along(state, &mut w, h).0)
            };
            solve_increasing(f, rem, h_max, rem / r0, self.newton_tol, self.newton_max_iter)
        }?;
        ws.diag.newton_solves += 1;
        ws.diag.newton_iterations += root.iterations as u64;
        ws.diag.newton_max_iterations = ws.diag.newton_max_iterations.max(root.iterations as u64);
        ws.diag.bisections += root.bisections as u64;
        Ok(StepOutcome::Jump {
            h: root.h,
            iterations: root.iterations,
        })
    }

    fn run_to_jump(&self, state: &mut ParticleState, ws: &mut CoarseWorkspace, theta: f64, horizon: f64) -> Result<Option<usize>> {
        let mut rem = theta;
        let e = self.rate.eps;
        let panel = if self.rate.is_constant_along_runs() { f64::INFINITY } else { self.panel };
        loop {
            let left = horizon - state.t;
            if left <= 0.0 {
                return Ok(None);
            }
            let truncated = left < panel;
            let h_max = if truncated { left } else { panel };
            let outcome = self.solve_in_panel(state, ws, h_max, rem)?;
            let (h, done) = match outcome {
                StepOutcome::NoJumpInStep { integral } => {
                    rem -= integral;
                    (h_max, None)
                }
                StepOutcome::Jump { h, iterations } => (h, Some(iterations)),
            };
            for (x, v) in state.x.iter_mut().zip(&state.v) {
                *x += e * v * h;
            }
            state.t += h;
            if done.is_some() {
                return Ok(done);
            }
            if truncated {
                state.t = horizon;
                return Ok(None);
            }
        }
    }

    /// Runs to the next jump and draws the new velocity.
    pub fn advance_to_next_jump<R: Rng + ?Sized>(
        &self,
        state: &mut ParticleState,
        rng: &mut R,
        theta: Option<f64>,
    ) -> Result<JumpRecord> {
        let mut ws = self.workspace();
        let t0 = state.t;
        let theta = theta.unwrap_or_else(|| exp1(rng));
        let iters = self
            .run_to_jump(state, &mut ws, theta, f64::INFINITY)?
            .expect("an infinite horizon always ends in a jump");
        let v_old = state.v.clone();
        self.measure.sample_into(rng, &mut state.v);
        state.jumps += 1;
        Ok(JumpRecord {
            n: state.jumps,
            t: state.t,
            dt: state.t - t0,
            x: state.x.clone(),
            v_old,
            v_new: state.v.clone(),
            theta,
            newton_iters: iters,
        })
    }

    pub fn run_until<R: Rng + ?Sized>(
        &self,
        state: &mut ParticleState,
        ws: &mut CoarseWorkspace,
        rng: &mut R,
        t_end: f64,
        mut on_jump: Option<&mut dyn FnMut(JumpRecord)>,
    ) -> Result<()> {
        let mut t_last = state.t;
        while state.t < t_end {
            let theta = exp1(rng);
            match self.run_to_jump(state, ws, theta, t_end)? {
                None => break,
                Some(iters) => {
                    let v_old = on_jump.as_ref().map(|_| state.v.clone());
                    self.measure.sample_into(rng, &mut state.v);
                    state.jumps += 1;
                    ws.diag.jumps += 1;
                    if let (Some(cb), Some(v_old)) = (on_jump.as_mut(), v_old) {
                        cb(JumpRecord {
                            n: state.jumps,
                            t: state.t,
                            dt: state.t - t_last,
                            x: state.x.clone(),
                            v_old,
                            v_new: state.v.clone(),
                            theta,
                            newton_iters: iters,
                        });
                    }
                    t_last = state.t;
                }
            }
        }
        Ok(())
    }
}

/// Mirror of [`crate::fine::run_ensemble`] for the coarse process.
pub fn run_ensemble_coarse(stepper: &CoarseStepper, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let d = stepper.measure().dim();
    check_dim("initial position", d, cfg.init.dim())?;
    let eps = stepper.rate().eps;
    let t_fast = cfg.t_end / (eps * eps);
    let streams = StreamFactory::new(cfg.seed);
    let outputs = par_map(cfg.n_particles, cfg.threads, |i| {
        let x0 = cfg.init.sample(&mut streams.init(i));
        let mut rng = streams.dynamics(i);
        let mut state = stepper.initial_state(x0, &mut rng)?;
        let mut ws = stepper.workspace();
        let mut jumps = Vec::new();
        if i < cfg.record_jumps {
            let mut cb = |r: JumpRecord| jumps.push(r);
            stepper.run_until(&mut state, &mut ws, &mut rng, t_fast, Some(&mut cb))?;
        } else {
            stepper.run_until(&mut state, &mut ws, &mut rng, t_fast, None)?;
        }
        Ok(ParticleOutput {
            x: state.x,
            diag: ws.diag,
            jumps,
        })
    })?;
    EnsembleResult::from_outputs(outputs, d, cfg.bins)
}
