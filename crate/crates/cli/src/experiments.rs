//! Experiment drivers. Each returns a JSON-serializable result block; none
//! of them reads the clock, so reports are reproducible byte for byte.

use chemotaxis_core::coarse::{run_ensemble_coarse, CoarseRate, CoarseStepper};
use chemotaxis_core::ensemble::{EnsembleResult, InitDist};
use chemotaxis_core::fine::{run_ensemble, FineStepper};
use chemotaxis_core::inversion::gauss_legendre_adaptive;
use chemotaxis_core::limits::{expected_m, gaussian_solution_cells, m_func, m_prime, pde_solve_1d, sde_simulate, PdeSolution};
use chemotaxis_core::model::{ModelParams, ParticleState, RateForm};
use chemotaxis_core::rng::{exp1, StreamFactory};
use chemotaxis_core::stats::{hist_l1_distance, ks_two_sample, order_fit, polyfit, CellDensity, EnsembleSummary, Histogram, Moments};
use chemotaxis_core::tau::TauOperator;
use chemotaxis_core::walks::{run_chain_diffusive, Chain};
use log::info;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind, ModelKind};
use crate::error::{CliError, Result};

/// Offset separating the seed streams of two samples that must be independent.
const INDEPENDENT_SEED_OFFSET: u64 = 1 << 32;

/// Output of a single model run.
pub enum Sim {
    Particles(EnsembleResult),
    Density(PdeSolution),
}

#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `(empirical - reference) / standard error`, per component.
    pub z_mean: Vec<f64>,
    pub z_variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeRecord {
    pub steps: usize,
    pub dt: f64,
    pub cells: usize,
    pub mass_initial: f64,
    pub mass_final: f64,
    pub max_step_mass_drift: f64,
    pub boundary_mass: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub model: &'static str,
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<EnsembleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KsRow {
    pub eps: f64,
    pub a: &'static str,
    pub b: &'static str,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct L1Row {
    pub eps: Option<f64>,
    pub model: &'static str,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResults {
    pub runs: Vec<RunRecord>,
    pub ks: Vec<KsRow>,
    pub l1: Vec<L1Row>,
}

/// A run kept in memory for the comparison tables and CSV output.
pub struct Collected {
    pub model: ModelKind,
    pub eps: Option<f64>,
    pub sim: Sim,
}

pub struct EnsembleOutcome {
    pub results: EnsembleResults,
    pub collected: Vec<Collected>,
}

/// Runs one model. `eps` is ignored by the limit models.
pub fn simulate(cfg: &ExperimentConfig, model: ModelKind, eps: f64, seed: u64, threads: usize) -> Result<Sim> {
    let ens = cfg.ensemble(seed, threads);
    let measure = cfg.measure()?;
    let lambda0 = cfg.params.lambda0;
    let sim = match model {
        ModelKind::Fine => Sim::Particles(run_ensemble(&fine_stepper(cfg, cfg.model_params(eps)?)?, &ens)?),
        ModelKind::Coarse => {
            let rate = CoarseRate::new(lambda0, eps, cfg.a_field()?);
            Sim::Particles(run_ensemble_coarse(&CoarseStepper::new(rate, measure, cfg.params.dt)?, &ens)?)
        }
        ModelKind::FineChain => {
            let p = cfg.model_params(eps)?;
            let chain = Chain::fine(eps, lambda0, p.linear_sensitivity(), p.tau_operator()?, cfg.chemo_field()?, measure)?;
            Sim::Particles(run_chain_diffusive(&chain, &ens)?)
        }
        ModelKind::CoarseChain => {
            let chain = Chain::coarse(eps, lambda0, cfg.a_field()?, measure)?;
            Sim::Particles(run_chain_diffusive(&chain, &ens)?)
        }
        ModelKind::Sde => Sim::Particles(sde_simulate(&cfg.limit_model()?, &ens, cfg.sde.dt)?),
        ModelKind::Pde => {
            let n0 = initial_density(cfg)?;
            Sim::Density(pde_solve_1d(&cfg.limit_model()?, &n0, &cfg.pde_config())?)
        }
    };
    Ok(sim)
}

fn fine_stepper(cfg: &ExperimentConfig, params: ModelParams) -> Result<FineStepper> {
    let mut s = FineStepper::new(params, cfg.chemo_field()?, cfg.measure()?)?;
    if cfg.params.newton_tol.is_some() || cfg.params.newton_max_iter.is_some() {
        s = s.with_newton(
            cfg.params.newton_tol.unwrap_or(chemotaxis_core::inversion::DEFAULT_TOL),
            cfg.params.newton_max_iter.unwrap_or(chemotaxis_core::inversion::DEFAULT_MAX_ITER),
        );
    }
    Ok(s.with_reversal(cfg.params.reversal)?)
}

/// The PDE initial data matching the particles' initial distribution.
pub fn initial_density(cfg: &ExperimentConfig) -> Result<CellDensity> {
    let p = &cfg.pde;
    if p.cells < 3 || !(p.hi > p.lo) {
        return Err(CliError::config("`pde` needs hi > lo and at least 3 cells"));
    }
    Ok(match cfg.init_dist() {
        InitDist::Point { x } => CellDensity::point_mass(p.lo, p.hi, p.cells, x[0])?,
        InitDist::Gaussian { mean, std } if std > 0.0 => gaussian_solution_cells(p.lo, p.hi, p.cells, mean[0], std, 0.0, 0.0, 0.0),
        InitDist::Gaussian { mean, .. } => CellDensity::point_mass(p.lo, p.hi, p.cells, mean[0])?,
        InitDist::Uniform { lo, hi } => {
            let (a, b) = (lo[0], hi[0]);
            let dx = (p.hi - p.lo) / p.cells as f64;
            let values = (0..p.cells)
                .map(|i| {
                    let c0 = p.lo + i as f64 * dx;
                    ((c0 + dx).min(b) - c0.max(a)).max(0.0) / ((b - a) * dx)
                })
                .collect();
            CellDensity {
                lo: p.lo,
                hi: p.hi,
                values,
            }
        }
    })
}

/// Limit mean and variance when the drift is constant and the initial
/// distribution is a point or a Gaussian.
fn reference(cfg: &ExperimentConfig, summary: &EnsembleSummary) -> Result<Option<Reference>> {
    let a = cfg.a_field()?;
    if !a.is_constant() || summary.n < 2 {
        return Ok(None);
    }
    let (m0, var0) = match cfg.init_dist() {
        InitDist::Point { x } => (x, 0.0),
        InitDist::Gaussian { mean, std } => (mean, std * std),
        InitDist::Uniform { .. } => return Ok(None),
    };
    let limit = cfg.limit_model()?;
    let drift = limit.drift(&m0);
    let d = limit.dim();
    let mean: Vec<f64> = (0..d).map(|k| m0[k] + drift[k] * cfg.t_end).collect();
    let variance: Vec<f64> = (0..d).map(|k| var0 + 2.0 * limit.d[(k, k)] * cfg.t_end / limit.lambda0).collect();
    let comps = &summary.components;
    Ok(Some(Reference {
        z_mean: (0..d).map(|k| (comps[k].mean - mean[k]) / comps[k].std_err_mean).collect(),
        z_variance: (0..d).map(|k| (comps[k].variance - variance[k]) / comps[k].std_err_variance).collect(),
        mean,
        variance,
    }))
}

fn pde_record(sol: &PdeSolution) -> PdeRecord {
    let d = &sol.density;
    let mass = d.mass();
    let centers = d.centers();
    let mean = centers.iter().zip(&d.values).map(|(x, v)| x * v).sum::<f64>() * d.dx() / mass;
    let variance = centers.iter().zip(&d.values).map(|(x, v)| (x - mean).powi(2) * v).sum::<f64>() * d.dx() / mass;
    PdeRecord {
        steps: sol.steps,
        dt: sol.dt,
        cells: d.values.len(),
        mass_initial: sol.mass_initial,
        mass_final: mass,
        max_step_mass_drift: sol.max_step_mass_drift,
        boundary_mass: sol.boundary_mass,
        mean,
        variance,
    }
}

/// Runs every model at every `ε` (the limit models once) and tabulates
/// pairwise KS distances and histogram/PDE L¹ distances on component 0.
pub fn run_ensemble_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<EnsembleOutcome> {
    let mut collected = Vec::new();
    for &model in &cfg.models {
        let eps_list: Vec<Option<f64>> = if model.scaled() { cfg.eps.iter().map(|&e| Some(e)).collect() } else { vec![None] };
        for eps in eps_list {
            info!("running {} at eps={eps:?} with {} particles", model.name(), cfg.n_particles);
            let sim = simulate(cfg, model, eps.unwrap_or(cfg.eps[0]), cfg.seed, threads)?;
            collected.push(Collected { model, eps, sim });
        }
    }
    let mut runs = Vec::new();
    for c in &collected {
        let (summary, reference_block, pde) = match &c.sim {
            Sim::Particles(r) => (Some(r.summary.clone()), reference(cfg, &r.summary)?, None),
            Sim::Density(s) => (None, None, Some(pde_record(s))),
        };
        runs.push(RunRecord {
            model: c.model.name(),
            eps: c.eps,
            summary,
            reference: reference_block,
            pde,
        });
    }
    let particle_runs: Vec<(&Collected, &EnsembleResult)> = collected
        .iter()
        .filter_map(|c| match &c.sim {
            Sim::Particles(r) if r.summary.n > 0 => Some((c, r)),
            _ => None,
        })
        .collect();
    let mut ks = Vec::new();
    for &eps in &cfg.eps {
        let at_eps: Vec<_> = particle_runs.iter().filter(|(c, _)| c.eps.is_none() || c.eps == Some(eps)).collect();
        for (i, (ca, ra)) in at_eps.iter().enumerate() {
            for (cb, rb) in at_eps.iter().skip(i + 1) {
                if ca.eps.is_none() && cb.eps.is_none() && eps != cfg.eps[0] {
                    continue;
                }
                let r = ks_two_sample(&ra.component(0), &rb.component(0))?;
                ks.push(KsRow {
                    eps,
                    a: ca.model.name(),
                    b: cb.model.name(),
                    statistic: r.statistic,
                    p_value: r.p_value,
                });
            }
        }
    }
    let mut l1 = Vec::new();
    for pde in collected.iter().filter_map(|c| match &c.sim {
        Sim::Density(s) => Some(s),
        _ => None,
    }) {
        for (c, r) in &particle_runs {
            // The summary histogram spans mean ± 5 sd, which may reach past
            // the PDE domain for small samples.
            let h = &r.summary.histograms[0];
            let (lo, hi) = (h.lo.max(pde.density.lo), h.hi.min(pde.density.hi));
            let hist = Histogram::with_range(r.component(0), lo, hi, h.bins())?;
            l1.push(L1Row {
                eps: c.eps,
                model: c.model.name(),
                distance: hist_l1_distance(&hist, &pde.density)?,
            });
        }
    }
    Ok(EnsembleOutcome {
        results: EnsembleResults { runs, ks, l1 },
        collected,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpTimeFit {
    pub model: &'static str,
    pub eps: Vec<f64>,
    pub delta_t: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub expected_intercept: f64,
    pub intercept_rel_err: f64,
    pub slope: f64,
    pub expected_slope: f64,
    pub slope_rel_err: f64,
}

fn unit_velocity(cfg: &ExperimentConfig, v: &Option<Vec<f64>>) -> Vec<f64> {
    v.clone().unwrap_or_else(|| {
        let mut e = vec![0.0; cfg.dim()];
        e[0] = 1.0;
        e
    })
}

fn rel_err(x: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        x.abs()
    } else {
        ((x - reference) / reference).abs()
    }
}

/// First jump time from a fixed state with injected `θ`.
fn first_jump(cfg: &ExperimentConfig, model: ModelKind, eps: f64, x0: &[f64], v: &[f64], theta: f64) -> Result<f64> {
    let mut rng = StreamFactory::new(cfg.seed).dynamics(0);
    match model {
        ModelKind::Fine => {
            let params = cfg.model_params(eps)?;
            let n = params.n_internal();
            let stepper = fine_stepper(cfg, params)?;
            let z = cfg.z0.clone().unwrap_or_else(|| vec![0.0; n]);
            let mut st = ParticleState::new(x0.to_vec(), v.to_vec(), z);
            Ok(stepper.advance_to_next_jump(&mut st, &mut rng, Some(theta))?.dt)
        }
        ModelKind::Coarse => {
            let rate = CoarseRate::new(cfg.params.lambda0, eps, cfg.a_field()?);
            let stepper = CoarseStepper::new(rate, cfg.measure()?, cfg.params.dt)?;
            let mut st = ParticleState::new(x0.to_vec(), v.to_vec(), Vec::new());
            Ok(stepper.advance_to_next_jump(&mut st, &mut rng, Some(theta))?.dt)
        }
        other => Err(CliError::config(format!("jump-time experiment supports fine and coarse, not {}", other.name()))),
    }
}

/// Fits `ΔT₁(ε)` with a polynomial and compares the constant and linear
/// coefficients with their closed forms.
pub fn run_jump_time(cfg: &ExperimentConfig) -> Result<Vec<JumpTimeFit>> {
    let jt = &cfg.jump_time;
    let x0 = jt.x0.clone().unwrap_or_else(|| vec![0.0; cfg.dim()]);
    let v = unit_velocity(cfg, &jt.v);
    let l0 = cfg.params.lambda0;
    let mut fits = Vec::new();
    for &model in &cfg.models {
        let delta_t = cfg
            .eps
            .iter()
            .map(|&e| first_jump(cfg, model, e, &x0, &v, jt.theta))
            .collect::<Result<Vec<_>>>()?;
        let coefficients = polyfit(&cfg.eps, &delta_t, jt.degree)?;
        let expected_slope = match model {
            ModelKind::Coarse => {
                let a = cfg.a_field()?.eval(&x0);
                jt.theta * a.iter().zip(&v).map(|(a, v)| a * v).sum::<f64>() / (l0 * l0)
            }
            _ => {
                let p = cfg.model_params(cfg.eps[0])?;
                let m = m_func(jt.theta / l0, &p.tau_operator()?);
                let g = cfg.chemo_field()?.directional(&x0, &v);
                (p.linear_sensitivity().transpose() * m * g)[(0, 0)] / l0
            }
        };
        let expected_intercept = jt.theta / l0;
        fits.push(JumpTimeFit {
            model: model.name(),
            eps: cfg.eps.clone(),
            delta_t,
            intercept: coefficients[0],
            intercept_rel_err: rel_err(coefficients[0], expected_intercept),
            slope: coefficients.get(1).copied().unwrap_or(0.0),
            slope_rel_err: rel_err(coefficients.get(1).copied().unwrap_or(0.0), expected_slope),
            expected_intercept,
            expected_slope,
            coefficients,
        });
    }
    Ok(fits)
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineryResults {
    pub bound_samples: usize,
    pub max_m_prime_ratio: f64,
    pub max_m_ratio: f64,
    pub bound_violations: usize,
    pub lambda0: f64,
    pub expected_m: Vec<f64>,
    pub quadrature: Vec<f64>,
    pub max_quadrature_rel_err: f64,
    pub mc_draws: usize,
    pub mc_mean: Vec<f64>,
    pub mc_std_err: Vec<f64>,
    /// Largest `|mc - exact| / std_err` over the entries.
    pub max_mc_z: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Random symmetric positive `τ` with eigenvalues in `[0.05, tau_max]`.
fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, tau_max: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let eig = DVector::from_fn(n, |_, _| rng.random_range(0.05..tau_max));
    let t = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&t + t.transpose()) * 0.5
}

pub fn run_m_machinery(cfg: &ExperimentConfig) -> Result<MachineryResults> {
    let mc = &cfg.machinery;
    let streams = StreamFactory::new(cfg.seed);
    let mut rng = streams.init(0);
    let (mut max_mp, mut max_m, mut violations) = (0.0f64, 0.0f64, 0);
    for _ in 0..mc.bound_samples {
        let t = rng.random_range(0.0..mc.t_max);
        let op = TauOperator::new(random_spd(&mut rng, mc.n, mc.tau_max))?;
        if t == 0.0 {
            continue;
        }
        let rp = spectral_norm(&m_prime(t, &op)) / t;
        let rm = spectral_norm(&m_func(t, &op)) / (0.5 * t * t);
        if rp > 1.0 + 1e-12 || rm > 1.0 + 1e-12 {
            violations += 1;
        }
        max_mp = max_mp.max(rp);
        max_m = max_m.max(rm);
    }

    let p = cfg.model_params(cfg.eps[0])?;
    let tau = p.internal.tau()?;
    let op = p.tau_operator()?;
    let l0 = p.lambda0;
    let exact = expected_m(l0, &tau)?;
    let n = tau.nrows();
    let mut quadrature = Vec::with_capacity(n * n);
    let mut max_q = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            // The integrand decays like e^{-t}; beyond t = 80 it is below 1e-30.
            let q = gauss_legendre_adaptive(|t| op.m(t / l0)[(i, j)] * (-t).exp(), 0.0, 80.0, 16, 1e-14, exact.amax());
            max_q = max_q.max(rel_err(q, exact[(i, j)]));
            quadrature.push(q);
        }
    }
    let mut rng = streams.dynamics(0);
    let mut acc = vec![Moments::default(); n * n];
    for _ in 0..cfg.n_particles {
        let m = op.m(exp1(&mut rng) / l0);
        for (k, a) in acc.iter_mut().enumerate() {
            a.push(m[(k / n, k % n)]);
        }
    }
    let mut max_z = 0.0f64;
    for (k, a) in acc.iter().enumerate() {
        let se = a.std_err_mean();
        let diff = (a.mean - exact[(k / n, k % n)]).abs();
        if se > 0.0 {
            max_z = max_z.max(diff / se);
        } else if diff > 1e-14 {
            max_z = f64::INFINITY;
        }
    }
    Ok(MachineryResults {
        bound_samples: mc.bound_samples,
        max_m_prime_ratio: max_mp,
        max_m_ratio: max_m,
        bound_violations: violations,
        lambda0: l0,
        expected_m: exact.transpose().iter().copied().collect(),
        quadrature,
        max_quadrature_rel_err: max_q,
        mc_draws: cfg.n_particles,
        mc_mean: acc.iter().map(|a| a.mean).collect(),
        mc_std_err: acc.iter().map(|a| a.std_err_mean()).collect(),
        max_mc_z: max_z,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactnessResults {
    pub dt: f64,
    pub divisor: u32,
    pub particles: usize,
    pub jumps_per_particle: usize,
    pub max_abs_diff_dt: f64,
    pub max_abs_diff_t: f64,
}

/// Jump times from `δt` and `δt/divisor` runs on identical streams.
pub fn run_linear_exactness(cfg: &ExperimentConfig) -> Result<ExactnessResults> {
    let ex = &cfg.exactness;
    let eps = cfg.eps[0];
    let coarse = cfg.model_params(eps)?;
    if coarse.rate != RateForm::Linear || !cfg.chemo_field()?.is_affine() {
        return Err(CliError::config("linear-exactness needs a linear rate and a linear field"));
    }
    let mut fine_p = coarse.clone();
    fine_p.dt = coarse.dt / f64::from(ex.divisor);
    let a = fine_stepper(cfg, coarse)?;
    let b = fine_stepper(cfg, fine_p)?;
    let streams = StreamFactory::new(cfg.seed);
    let (mut dmax, mut tmax) = (0.0f64, 0.0f64);
    for i in 0..cfg.n_particles {
        let x0 = cfg.init_dist().sample(&mut streams.init(i));
        let z0 = cfg.z0.clone().unwrap_or_else(|| vec![0.0; a.params().n_internal()]);
        let (mut ra, mut rb) = (streams.dynamics(i), streams.dynamics(i));
        let mut sa = a.initial_state(x0.clone(), z0.clone(), &mut ra)?;
        let mut sb = b.initial_state(x0, z0, &mut rb)?;
        for _ in 0..ex.jumps {
            let ja = a.advance_to_next_jump(&mut sa, &mut ra, None)?;
            let jb = b.advance_to_next_jump(&mut sb, &mut rb, None)?;
            dmax = dmax.max((ja.dt - jb.dt).abs());
            tmax = tmax.max((ja.t - jb.t).abs());
        }
    }
    Ok(ExactnessResults {
        dt: a.params().dt,
        divisor: ex.divisor,
        particles: cfg.n_particles,
        jumps_per_particle: ex.jumps,
        max_abs_diff_dt: dmax,
        max_abs_diff_t: tmax,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderSweep {
    pub rate: String,
    /// `(δt, error)` at fixed `ε`.
    pub dt_errors: Vec<(f64, f64)>,
    pub dt_slope: f64,
    /// `(ε, error)` at fixed `δt`.
    pub eps_errors: Vec<(f64, f64)>,
    pub eps_slope: f64,
}

fn params_for_rate(cfg: &ExperimentConfig, rate: &str, eps: f64, dt: f64) -> Result<ModelParams> {
    let mut p = match rate {
        "linear" => {
            let mut c = cfg.clone();
            c.params.rate = crate::config::RateSpec::Linear;
            c.params.lambda_min = None;
            c.params.lambda_max = None;
            c.model_params(eps)?
        }
        "arctan" => {
            let p = ModelParams::arctan(eps, cfg.params.lambda0, cfg.orders.arctan_beta, cfg.internal()?, dt);
            p.validate()?;
            p
        }
        other => return Err(CliError::config(format!("unknown rate `{other}` in `orders.rates`"))),
    };
    p.dt = dt;
    Ok(p)
}

fn single_jump_error(cfg: &ExperimentConfig, rate: &str, eps: f64, dt: f64, x0: &[f64], v: &[f64]) -> Result<f64> {
    let o = &cfg.orders;
    let jump = |dt: f64| -> Result<f64> {
        let p = params_for_rate(cfg, rate, eps, dt)?;
        let n = p.n_internal();
        let stepper = FineStepper::new(p, cfg.chemo_field()?, cfg.measure()?)?;
        let mut st = ParticleState::new(x0.to_vec(), v.to_vec(), vec![0.0; n]);
        let mut rng = StreamFactory::new(cfg.seed).dynamics(0);
        Ok(stepper.advance_to_next_jump(&mut st, &mut rng, Some(o.theta))?.dt)
    };
    Ok((jump(dt)? - jump(dt / f64::from(o.ref_divisor))?).abs())
}

/// Single-jump error against a `δt / ref_divisor` reference, swept over
/// `δt` and over `ε`, with fitted log-log slopes.
pub fn run_consistency_orders(cfg: &ExperimentConfig) -> Result<Vec<OrderSweep>> {
    let o = &cfg.orders;
    let x0 = o.x0.clone().unwrap_or_else(|| vec![0.0; cfg.dim()]);
    let v = unit_velocity(cfg, &None);
    let mut out = Vec::new();
    for rate in &o.rates {
        let dt_errors = o
            .dts
            .iter()
            .map(|&dt| Ok((dt, single_jump_error(cfg, rate, o.eps_at_dt, dt, &x0, &v)?)))
            .collect::<Result<Vec<_>>>()?;
        let eps_errors = o
            .eps_list
            .iter()
            .map(|&e| Ok((e, single_jump_error(cfg, rate, e, o.dt_at_eps, &x0, &v)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(OrderSweep {
            rate: rate.clone(),
            dt_slope: order_fit(&dt_errors)?,
            eps_slope: order_fit(&eps_errors)?,
            dt_errors,
            eps_errors,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReversalRow {
    pub seed: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReversalResults {
    pub eps: f64,
    pub alpha: f64,
    pub rows: Vec<ReversalRow>,
    pub rejections: usize,
}

/// Two-sample KS test between the always-reverse variant and the ±1
/// measure. The variant runs on an offset seed so the samples are independent.
pub fn run_reversal(cfg: &ExperimentConfig, threads: usize) -> Result<ReversalResults> {
    let eps = cfg.eps[0];
    let mut plain_cfg = cfg.clone();
    plain_cfg.params.reversal = false;
    let mut rev_cfg = cfg.clone();
    rev_cfg.params.reversal = true;
    let mut rows = Vec::new();
    for &seed in &cfg.reversal.seeds {
        let plain = simulate(&plain_cfg, ModelKind::Fine, eps, seed, threads)?;
        let rev = simulate(&rev_cfg, ModelKind::Fine, eps, seed.wrapping_add(INDEPENDENT_SEED_OFFSET), threads)?;
        let (Sim::Particles(a), Sim::Particles(b)) = (plain, rev) else {
            unreachable!("fine runs produce particles")
        };
        let r = ks_two_sample(&a.component(0), &b.component(0))?;
        rows.push(ReversalRow {
            seed,
            statistic: r.statistic,
            p_value: r.p_value,
            rejected: r.p_value < cfg.reversal.alpha,
        });
    }
    Ok(ReversalResults {
        eps,
        alpha: cfg.reversal.alpha,
        rejections: rows.iter().filter(|r| r.rejected).count(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeterminismResults {
    pub threads: Vec<usize>,
    pub bytes: Vec<usize>,
    pub identical: bool,
}

pub fn run_determinism(cfg: &ExperimentConfig) -> Result<DeterminismResults> {
    let mut texts = Vec::new();
    for &t in &cfg.determinism.threads {
        let out = run_ensemble_experiment(cfg, t)?;
        texts.push(serde_json::to_string(&out.results)?);
    }
    Ok(DeterminismResults {
        threads: cfg.determinism.threads.clone(),
        bytes: texts.iter().map(String::len).collect(),
        identical: texts.windows(2).all(|w| w[0] == w[1]),
    })
}

/// Result block plus the in-memory runs (ensemble experiments only).
pub struct Outcome {
    pub results: Value,
    pub collected: Vec<Collected>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let threads = cfg.threads;
    let (results, collected) = match cfg.experiment {
        ExperimentKind::Ensemble => {
            let out = run_ensemble_experiment(cfg, threads)?;
            (serde_json::to_value(&out.results)?, out.collected)
        }
        ExperimentKind::JumpTime => (serde_json::to_value(run_jump_time(cfg)?)?, Vec::new()),
        ExperimentKind::MMachinery => (serde_json::to_value(run_m_machinery(cfg)?)?, Vec::new()),
        ExperimentKind::LinearExactness => (serde_json::to_value(run_linear_exactness(cfg)?)?, Vec::new()),
        ExperimentKind::ConsistencyOrders => (serde_json::to_value(run_consistency_orders(cfg)?)?, Vec::new()),
        ExperimentKind::Reversal => (serde_json::to_value(run_reversal(cfg, threads)?)?, Vec::new()),
        ExperimentKind::Determinism => (serde_json::to_value(run_determinism(cfg)?)?, Vec::new()),
    };
    Ok(Outcome { results, collected })
}
