//! The velocity-jump process with internal state.
//!
//! Between jumps the run is cut into steps of length `δt`. Inside a step the
//! gradient is frozen at the step's left endpoint, so with `g = ∇S(x_k)ᵀv`
//!
//! ```text
//! Z(h) = E(h) z_k + ε m'(h) g
//! ∫₀ʰ λ̂ = λ̂₀ h - b̂ᵀ m'(h) z_k - ε b̂ᵀ m(h) g
//! ```
//!
//! where `(λ̂₀, b̂) = (λ₀, b)` for the linear rate and the tangent of the
//! arctan rate at `z_k` otherwise. The clock `θ` is consumed step by step and
//! the jump time inside the final step is found by safeguarded Newton.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ensemble::{par_map, EnsembleConfig, EnsembleResult, ParticleOutput};
use crate::error::{check_dim, Error, Result};
use crate::inversion::{gauss_legendre_adaptive, solve_increasing, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::model::{clip, turning_rate, turning_rate_derivative, ChemoField, ModelParams, ParticleState, RateForm, VelocityMeasure};
use crate::rng::{exp1, StreamFactory};
use crate::stats::Diagnostics;
use crate::tau::{mode_m, mode_m_prime, Propagator, TauOperator};

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub n: u64,
    /// Time of this jump.
    pub t: f64,
    /// Time since the previous jump.
    pub dt: f64,
    pub x: Vec<f64>,
    pub v_old: Vec<f64>,
    pub v_new: Vec<f64>,
    /// The exponential clock of this run (before the factor 2 of the reversal variant).
    pub theta: f64,
    pub newton_iters: usize,
}

/// Outcome of [`FineStepper::solve_jump_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    NoJumpInStep { integral: f64 },
    Jump { h: f64, iterations: usize },
}

/// Scratch buffers for one particle.
#[derive(Debug, Clone)]
pub struct Workspace {
    g: Vec<f64>,
    b_hat: Vec<f64>,
    zt: Vec<f64>,
    gt: Vec<f64>,
    bt: Vec<f64>,
    v_old: Vec<f64>,
    pub diag: Diagnostics,
}

impl Workspace {
    fn new(d: usize, n: usize) -> Self {
        Self {
            g: vec![0.0; n],
            b_hat: vec![0.0; n],
            zt: vec![0.0; n],
            gt: vec![0.0; n],
            bt: vec![0.0; n],
            v_old: vec![0.0; d],
            diag: Diagnostics::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Modal {
    taus: Vec<f64>,
    /// `(V, V⁻¹)` with `τ = V diag(taus) V⁻¹`; `None` when τ is diagonal.
    basis: Option<(DMatrix<f64>, DMatrix<f64>)>,
    /// Per-mode `e^{-δt/τᵢ}`, `m'ᵢ(δt)`, `mᵢ(δt)`.
    e_dt: Vec<f64>,
    mp_dt: Vec<f64>,
    m_dt: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FineStepper {
    params: ModelParams,
    field: ChemoField,
    measure: VelocityMeasure,
    tau: TauOperator,
    exp_cache: Propagator,
    modal: Option<Modal>,
    /// `sup ‖e^{-sτ⁻¹}‖` and `∫ ‖e^{-sτ⁻¹}‖ ds`, for the internal-state bound.
    transient_peak: f64,
    relaxation_gain: f64,
    newton_tol: f64,
    newton_max_iter: usize,
    reversal: bool,
}

/// `Z(h)`-dependent pieces of one step, in whichever coordinates apply.
enum Eval {
    Modal,
    General(Box<Propagator>),
}

impl FineStepper {
    pub fn new(params: ModelParams, field: ChemoField, measure: VelocityMeasure) -> Result<Self> {
        params.validate()?;
        measure.validate()?;
        let n = params.n_internal();
        if field.components() != n {
            return Err(Error::Dimension {
                context: "field components vs internal state",
                expected: n,
                got: field.components(),
            });
        }
        if field.dim() != measure.dim() {
            return Err(Error::Dimension {
                context: "field dimension vs velocity dimension",
                expected: measure.dim(),
                got: field.dim(),
            });
        }
        let tau = params.tau_operator()?;
        let exp_cache = tau.propagator(params.dt);
        let modal = tau.modal().map(|modes| Modal {
            taus: modes.taus.to_vec(),
            basis: modes.basis.map(|(v, v_inv)| (v.clone(), v_inv.clone())),
            e_dt: modes.taus.iter().map(|&t| (-params.dt / t).exp()).collect(),
            mp_dt: modes.taus.iter().map(|&t| mode_m_prime(params.dt, t)).collect(),
            m_dt: modes.taus.iter().map(|&t| mode_m(params.dt, t)).collect(),
        });
        let (transient_peak, relaxation_gain) = (tau.transient_peak(), tau.relaxation_gain());
        Ok(Self {
            params,
            field,
            measure,
            tau,
            exp_cache,
            modal,
            transient_peak,
            relaxation_gain,
            newton_tol: DEFAULT_TOL,
            newton_max_iter: DEFAULT_MAX_ITER,
            reversal: false,
        })
    }

    pub fn with_newton(mut self, tol: f64, max_iter: usize) -> Self {
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        self
    }

    /// Always reverse the velocity and integrate the rate to `2θ`. Requires
    /// the `±1` measure in one dimension.
    pub fn with_reversal(mut self, reversal: bool) -> Result<Self> {
        if reversal && self.measure != crate::model::VelocityMeasure::PlusMinusOne {
            return Err(Error::config("the reversal variant needs the plus-minus-one velocity measure"));
        }
        self.reversal = reversal;
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn field(&self) -> &ChemoField {
        &self.field
    }

    pub fn measure(&self) -> &VelocityMeasure {
        &self.measure
    }

    pub fn tau(&self) -> &TauOperator {
        &self.tau
    }

    pub fn exp_cache(&self) -> &Propagator {
        &self.exp_cache
    }

    pub fn is_reversal(&self) -> bool {
        self.reversal
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.field.dim(), self.params.n_internal())
    }

    /// A priori bound on `|Z|`: `κ|z₀| + ε sup|∇S| ∫‖E‖`, doubled for slack.
    pub fn z_bound(&self, z0_norm: f64) -> f64 {
        2.0 * (self.transient_peak * z0_norm + self.params.eps * self.field.gradient_bound() * self.relaxation_gain)
    }

    /// Draws the initial velocity (the first draw of the dynamics stream).
    pub fn initial_state<R: Rng + ?Sized>(&self, x: Vec<f64>, z: Vec<f64>, rng: &mut R) -> Result<ParticleState> {
        self.field.check_point(&x)?;
        check_dim("initial internal deviation", self.params.n_internal(), z.len())?;
        let v = self.measure.sample(rng);
        Ok(ParticleState::new(x, v, z))
    }

    /// Advances `x`, `z` and `t` by `h` with no jump; the gradient is taken at
    /// the starting point.
    pub fn step_internal(&self, state: &mut ParticleState, h: f64) {
        let mut ws = self.workspace();
        self.field.directional_into(&state.x, &state.v, &mut ws.g);
        self.advance_run(state, &mut ws, h);
    }

    /// `∫₀ʰ λ̂` from the current state, honoring rate clipping.
    pub fn integrated_rate_over_step(&self, state: &ParticleState, h: f64) -> f64 {
        let mut ws = self.workspace();
        let l0 = self.prepare_step(state, &mut ws);
        if self.may_clip(&ws, l0, h) {
            self.clipped_integral(&ws, l0, h).0
        } else {
            self.integral(&ws, l0, h, &self.eval_at(h)).0
        }
    }

    /// One step of the running-sum inversion from the current state.
    pub fn solve_jump_time(&self, state: &ParticleState, theta_rem: f64) -> Result<StepOutcome> {
        if !(theta_rem > 0.0) {
            return Err(Error::domain(format!("theta_rem must be positive, got {theta_rem}")));
        }
        let mut ws = self.workspace();
        self.solve_in_step(state, &mut ws, self.params.dt, theta_rem)
    }

    /// Runs to the next jump and applies it. `theta` overrides the draw.
    pub fn advance_to_next_jump<R: Rng + ?Sized>(
        &self,
        state: &mut ParticleState,
        rng: &mut R,
        theta: Option<f64>,
    ) -> Result<JumpRecord> {
        let mut ws = self.workspace();
        let t_start = state.t;
        let theta = theta.unwrap_or_else(|| exp1(rng));
        let (_, iters) = self
            .run_to_jump(state, &mut ws, theta, f64::INFINITY)?
            .expect("an infinite horizon always ends in a jump");
        let v_old = state.v.clone();
        self.apply_jump(state, rng, theta);
        Ok(JumpRecord {
            n: state.jumps,
            t: state.t,
            dt: state.t - t_start,
            x: state.x.clone(),
            v_old,
            v_new: state.v.clone(),
            theta,
            newton_iters: iters,
        })
    }

    /// Simulates until `state.t == t_end`. `on_jump` sees every jump record.
    pub fn run_until<R: Rng + ?Sized>(
        &self,
        state: &mut ParticleState,
        ws: &mut Workspace,
        rng: &mut R,
        t_end: f64,
        mut on_jump: Option<&mut dyn FnMut(JumpRecord)>,
    ) -> Result<()> {
        let bound = self.z_bound(state.z_norm());
        let mut t_last = state.t;
        while state.t < t_end {
            let theta = exp1(rng);
            match self.run_to_jump(state, ws, theta, t_end)? {
                None => break,
                Some((_, iters)) => {
                    ws.v_old.copy_from_slice(&state.v);
                    self.apply_jump(state, rng, theta);
                    ws.diag.jumps += 1;
                    if let Some(cb) = on_jump.as_mut() {
                        cb(JumpRecord {
                            n: state.jumps,
                            t: state.t,
                            dt: state.t - t_last,
                            x: state.x.clone(),
                            v_old: ws.v_old.clone(),
                            v_new: state.v.clone(),
                            theta,
                            newton_iters: iters,
                        });
                    }
                    t_last = state.t;
                }
            }
        }
        if ws.diag.z_max > bound {
            ws.diag.z_bound_violations += 1;
        }
        Ok(())
    }

    fn apply_jump<R: Rng + ?Sized>(&self, state: &mut ParticleState, rng: &mut R, theta: f64) {
        if self.reversal {
            state.v.iter_mut().for_each(|c| *c = -*c);
        } else {
            self.measure.sample_into(rng, &mut state.v);
        }
        state.jumps += 1;
        if let Some(log) = state.theta_log.as_mut() {
            log.push(theta);
        }
    }

    /// Consumes `θ` (or `2θ`) step by step. Returns `None` when the horizon is
    /// reached first, otherwise the run length and Newton iterations.
    fn run_to_jump(&self, state: &mut ParticleState, ws: &mut Workspace, theta: f64, horizon: f64) -> Result<Option<(f64, usize)>> {
        let t0 = state.t;
        let mut rem = if self.reversal { 2.0 * theta } else { theta };
        loop {
            let left = horizon - state.t;
            if left <= 0.0 {
                return Ok(None);
            }
            let truncated = left < self.params.dt;
            let h_max = if truncated { left } else { self.params.dt };
            match self.solve_in_step(state, ws, h_max, rem)? {
                StepOutcome::NoJumpInStep { integral } => {
                    self.advance_run(state, ws, h_max);
                    rem -= integral;
                    if truncated {
                        state.t = horizon;
                        return Ok(None);
                    }
                }
                StepOutcome::Jump { h, iterations } => {
                    self.advance_run(state, ws, h);
                    return Ok(Some((state.t - t0, iterations)));
                }
            }
        }
    }

    fn solve_in_step(&self, state: &ParticleState, ws: &mut Workspace, h_max: f64, rem: f64) -> Result<StepOutcome> {
        let l0 = self.prepare_step(state, ws);
        ws.diag.steps += 1;
        let clipped = self.may_clip(ws, l0, h_max);
        if clipped {
            ws.diag.clip_events += 1;
        }
        let full = if clipped {
            self.clipped_integral(ws, l0, h_max).0
        } else {
            self.integral(ws, l0, h_max, &self.eval_at(h_max)).0
        };
        if full < rem {
            return Ok(StepOutcome::NoJumpInStep { integral: full });
        }
        let rate0 = if clipped {
            self.clipped_integral(ws, l0, 0.0).1
        } else {
            self.integral(ws, l0, 0.0, &Eval::Modal).1
        };
        let guess = rem / rate0;
        let root = {
            let ws_ro: &Workspace = ws;
            let f = |h: f64| {
                if clipped {
                    self.clipped_integral(ws_ro, l0, h)
                } else {
                    self.integral(ws_ro, l0, h, &self.eval_at(h))
                }
            };
            solve_increasing(f, rem, h_max, guess, self.newton_tol, self.newton_max_iter)
        };
        let root = root.map_err(|e| match e {
            Error::NonConvergence {
                iterations,
                residual,
                state: s,
            } => Error::NonConvergence {
                iterations,
                residual,
                state: format!("{s}; particle t={} x={:?} v={:?} z={:?}", state.t, state.x, state.v, state.z),
            },
            other => other,
        })?;
        ws.diag.newton_solves += 1;
        ws.diag.newton_iterations += root.iterations as u64;
        ws.diag.newton_max_iterations = ws.diag.newton_max_iterations.max(root.iterations as u64);
        ws.diag.bisections += root.bisections as u64;
        Ok(StepOutcome::Jump {
            h: root.h,
            iterations: root.iterations,
        })
    }

    /// Fills the gradient and the rate linearization for a step starting at
    /// `state`; returns `λ̂₀`.
    fn prepare_step(&self, state: &ParticleState, ws: &mut Workspace) -> f64 {
        self.field.directional_into(&state.x, &state.v, &mut ws.g);
        let l0 = match self.params.rate {
            RateForm::Linear => {
                ws.b_hat.copy_from_slice(self.params.b.as_slice());
                self.params.lambda0
            }
            RateForm::Arctan { beta, component } => {
                let zeta = state.z[component];
                let lam = turning_rate(zeta, self.params.lambda0, beta);
                let dlam = turning_rate_derivative(zeta, self.params.lambda0, beta);
                ws.b_hat.iter_mut().for_each(|b| *b = 0.0);
                ws.b_hat[component] = -dlam;
                lam - dlam * zeta
            }
        };
        if let Some(modal) = &self.modal {
            match &modal.basis {
                None => {
                    ws.zt.copy_from_slice(&state.z);
                    ws.gt.copy_from_slice(&ws.g);
                    ws.bt.copy_from_slice(&ws.b_hat);
                }
                Some((v, v_inv)) => {
                    let n = ws.zt.len();
                    for i in 0..n {
                        let (mut zi, mut gi, mut bi) = (0.0, 0.0, 0.0);
                        for j in 0..n {
                            zi += v_inv[(i, j)] * state.z[j];
                            gi += v_inv[(i, j)] * ws.g[j];
                            bi += v[(j, i)] * ws.b_hat[j];
                        }
                        ws.zt[i] = zi;
                        ws.gt[i] = gi;
                        ws.bt[i] = bi;
                    }
                }
            }
        } else {
            ws.zt.copy_from_slice(&state.z);
        }
        l0
    }

    fn eval_at(&self, h: f64) -> Eval {
        if self.modal.is_some() {
            Eval::Modal
        } else if h == self.params.dt {
            Eval::General(Box::new(self.exp_cache.clone()))
        } else {
            Eval::General(Box::new(self.tau.propagator(h)))
        }
    }

    /// Unclipped `(∫₀ʰ λ̂, λ̂(h))`.
    fn integral(&self, ws: &Workspace, l0: f64, h: f64, eval: &Eval) -> (f64, f64) {
        let eps = self.params.eps;
        match (eval, &self.modal) {
            (Eval::Modal, Some(modal)) => {
                let mut int = l0 * h;
                let mut rate = l0;
                for i in 0..modal.taus.len() {
                    let tau = modal.taus[i];
                    let (e, mp, m) = if h == self.params.dt {
                        (modal.e_dt[i], modal.mp_dt[i], modal.m_dt[i])
                    } else {
                        ((-h / tau).exp(), mode_m_prime(h, tau), mode_m(h, tau))
                    };
                    let (b, z, g) = (ws.bt[i], ws.zt[i], ws.gt[i]);
                    int -= b * (mp * z + eps * m * g);
                    rate -= b * (e * z + eps * mp * g);
                }
                (int, rate)
            }
            (Eval::Modal, None) => {
                // h = 0 without modal data: the rate at the step start.
                (0.0, l0 - dot(&ws.b_hat, &ws.zt))
            }
            (Eval::General(p), _) => {
                let n = ws.zt.len();
                let mut int = l0 * h;
                let mut rate = l0;
                for i in 0..n {
                    let (mut zi_int, mut zi) = (0.0, 0.0);
                    for j in 0..n {
                        zi_int += p.m_prime[(i, j)] * ws.zt[j] + eps * p.m[(i, j)] * ws.g[j];
                        zi += p.exp_neg[(i, j)] * ws.zt[j] + eps * p.m_prime[(i, j)] * ws.g[j];
                    }
                    int -= ws.b_hat[i] * zi_int;
                    rate -= ws.b_hat[i] * zi;
                }
                (int, rate)
            }
        }
    }

    /// Whether the unclipped `λ̂` may leave `[λ_min, λ_max]` on `[0, h]`.
    fn may_clip(&self, ws: &Workspace, l0: f64, h: f64) -> bool {
        let (lo, hi) = (self.params.lambda_min, self.params.lambda_max);
        let eps = self.params.eps;
        if let Some(modal) = &self.modal {
            // λ̂(s) = λ̂₀ - Σ cᵢ(s) with each cᵢ monotone in s.
            let (mut min_sum, mut max_sum) = (0.0, 0.0);
            for i in 0..modal.taus.len() {
                let tau = modal.taus[i];
                let (b, z, g) = (ws.bt[i], ws.zt[i], ws.gt[i]);
                let c0 = b * z;
                let e = if h == self.params.dt { modal.e_dt[i] } else { (-h / tau).exp() };
                let steady = eps * tau * g;
                let c1 = b * (e * (z - steady) + steady);
                min_sum += c0.min(c1);
                max_sum += c0.max(c1);
            }
            l0 - max_sum < lo || l0 - min_sum > hi
        } else {
            (0..=8).any(|k| {
                let s = h * k as f64 / 8.0;
                let r = if s == 0.0 {
                    l0 - dot(&ws.b_hat, &ws.zt)
                } else {
                    self.integral(ws, l0, s, &self.eval_at(s)).1
                };
                r < lo || r > hi
            })
        }
    }

    /// `(∫₀ʰ clip(λ̂), clip(λ̂(h)))` by adaptive Gauss-Legendre.
    fn clipped_integral(&self, ws: &Workspace, l0: f64, h: f64) -> (f64, f64) {
        let (lo, hi) = (self.params.lambda_min, self.params.lambda_max);
        let rate = |s: f64| {
            let r = if s == 0.0 {
                match &self.modal {
                    Some(_) => l0 - dot(&ws.bt, &ws.zt),
                    None => l0 - dot(&ws.b_hat, &ws.zt),
                }
            } else {
                self.integral(ws, l0, s, &self.eval_at(s)).1
            };
            clip(r, lo, hi).0
        };
        let end = rate(h);
        if h == 0.0 {
            return (0.0, end);
        }
        let int = gauss_legendre_adaptive(rate, 0.0, h, 8, 1e-13, self.params.lambda0 * h);
        (int, end)
    }

    /// `x += εvh`, `Z ← E(h)Z + ε m'(h) g`, `t += h`, with `g` in the workspace.
    fn advance_run(&self, state: &mut ParticleState, ws: &mut Workspace, h: f64) {
        let eps = self.params.eps;
        for (x, v) in state.x.iter_mut().zip(&state.v) {
            *x += eps * v * h;
        }
        state.t += h;
        let n = state.z.len();
        match &self.modal {
            Some(modal) => {
                let basis = modal.basis.as_ref();
                // Modal coordinates of z and g (recomputed: the workspace may
                // hold stale values when called from `step_internal`).
                for i in 0..n {
                    let (zi, gi) = match basis {
                        None => (state.z[i], ws.g[i]),
                        Some((_, v_inv)) => {
                            let row = v_inv.row(i);
                            (dot_iter(row.iter(), &state.z), dot_iter(row.iter(), &ws.g))
                        }
                    };
                    let tau = modal.taus[i];
                    let (e, mp) = if h == self.params.dt {
                        (modal.e_dt[i], modal.mp_dt[i])
                    } else {
                        ((-h / tau).exp(), mode_m_prime(h, tau))
                    };
                    ws.zt[i] = e * zi + eps * mp * gi;
                }
                match basis {
                    None => state.z.copy_from_slice(&ws.zt),
                    Some((v, _)) => {
                        for j in 0..n {
                            state.z[j] = (0..n).map(|i| v[(j, i)] * ws.zt[i]).sum();
                        }
                    }
                }
            }
            None => {
                let p = if h == self.params.dt {
                    std::borrow::Cow::Borrowed(&self.exp_cache)
                } else {
                    std::borrow::Cow::Owned(self.tau.propagator(h))
                };
                let z = DVector::from_column_slice(&state.z);
                let g = DVector::from_column_slice(&ws.g);
                let znew = &p.exp_neg * z + (&p.m_prime * g) * eps;
                state.z.copy_from_slice(znew.as_slice());
            }
        }
        let zn = state.z_norm();
        if zn > ws.diag.z_max {
            ws.diag.z_max = zn;
        }
    }
}

/// Simulates `cfg.n_particles` independent particles to diffusive time
/// `cfg.t_end` (fast time `t_end / ε²`).
pub fn run_ensemble(stepper: &FineStepper, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let d = stepper.field().dim();
    check_dim("initial position", d, cfg.init.dim())?;
    let z0 = cfg.z0.clone().unwrap_or_else(|| vec![0.0; stepper.params().n_internal()]);
    check_dim("initial internal deviation", stepper.params().n_internal(), z0.len())?;
    let eps = stepper.params().eps;
    let t_fast = cfg.t_end / (eps * eps);
    let streams = StreamFactory::new(cfg.seed);
    let outputs = par_map(cfg.n_particles, cfg.threads, |i| {
        let x0 = cfg.init.sample(&mut streams.init(i));
        let mut rng = streams.dynamics(i);
        let mut state = stepper.initial_state(x0, z0.clone(), &mut rng)?;
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
    let result = EnsembleResult::from_outputs(outputs, d, cfg.bins)?;
    let diag = &result.summary.diagnostics;
    if diag.z_bound_violations > 0 {
        log::warn!(
            "{} of {} particles exceeded the a priori internal-state bound {:.3e} (max |z| = {:.3e})",
            diag.z_bound_violations,
            cfg.n_particles,
            stepper.z_bound(z0.iter().map(|c| c * c).sum::<f64>().sqrt()),
            diag.z_max
        );
    }
    if diag.clip_events > 0 {
        log::info!("rate clipping fired in {} steps", diag.clip_events);
    }
    Ok(result)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[inline]
fn dot_iter<'a>(a: impl Iterator<Item = &'a f64>, b: &[f64]) -> f64 {
    a.zip(b).map(|(a, b)| a * b).sum()
}
