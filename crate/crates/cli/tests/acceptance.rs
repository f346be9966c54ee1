//! Acceptance suite: one PASS/FAIL line per criterion. Each check runs the
//! matching preset at full size; tolerances are pinned below.

use std::process::ExitCode;
use std::time::Instant;

use chemotaxis_cli::config::ExperimentConfig;
use chemotaxis_cli::experiments::{self, EnsembleResults};
use chemotaxis_cli::presets;
use chemotaxis_core::limits::{gaussian_solution_cells, pde_solve_1d, Advection, PdeConfig};
use chemotaxis_core::stats::{order_fit, CellDensity};

type Check = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Check);

/// 3 standard errors on the Monte Carlo moments.
const MC_SIGMAS: f64 = 3.0;
const RUNTIME_LIMIT_S: f64 = 60.0;
const KS_MAX_AT_SMALLEST_EPS: f64 = 0.02;
/// Allowed increase between neighbouring rungs of the ε ladder: the 5%
/// two-sample KS critical value `1.358 sqrt((n + m) / (n m))`.
const KS_NOISE_COEFF: f64 = 1.358;
const JUMP_INTERCEPT_REL: f64 = 1e-3;
const JUMP_SLOPE_REL: f64 = 0.05;
const QUADRATURE_REL: f64 = 1e-10;
const MC_Z_MAX: f64 = 4.0;
const MC_DRAWS: usize = 1_000_000;
const BOUND_SAMPLES: usize = 1000;
const EXACT_LINEAR_TOL: f64 = 1e-12;
const DT_SLOPE: (f64, f64) = (0.8, 1.2);
const EPS_SLOPE: (f64, f64) = (1.7, 2.3);
const L1_MAX: f64 = 0.05;
const MASS_DRIFT_MAX: f64 = 1e-12;
const GRID_ORDER_MIN: f64 = 1.8;
const MAX_REJECTIONS: usize = 1;
const DETERMINISM_PARTICLES: usize = 2000;

fn preset(name: &str, overrides: &[(&str, &str)]) -> Result<ExperimentConfig, String> {
    let ov: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    presets::get(name)
        .and_then(|p| p.config(&ov))
        .map_err(|e| e.to_string())
}

fn ensemble(cfg: &ExperimentConfig) -> Result<EnsembleResults, String> {
    experiments::run_ensemble_experiment(cfg, cfg.threads)
        .map(|o| o.results)
        .map_err(|e| e.to_string())
}

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Scalar `m(t) = tτ - (1 - e^{-t/τ})τ²`.
fn m_scalar(t: f64, tau: f64) -> f64 {
    t * tau - (1.0 - (-t / tau).exp()) * tau * tau
}

fn diffusion_variance() -> Check {
    let cfg = preset("diffusion-variance", &[("threads", "1")])?;
    let start = Instant::now();
    let res = ensemble(&cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let c = &res.runs[0].summary.as_ref().ok_or("no summary")?.components[0];
    // D = E[v²] = 1 and A₀ = 0: Var = 2 D t / λ₀.
    let expected = 2.0 * cfg.t_end / cfg.params.lambda0;
    let dev = c.variance - expected;
    let pass = dev.abs() <= MC_SIGMAS * c.std_err_variance && secs < RUNTIME_LIMIT_S;
    Ok((
        pass,
        format!(
            "Var = {:.4} vs {expected} (SE {:.4}, z = {:.2}); {secs:.1} s single-threaded",
            c.variance,
            c.std_err_variance,
            dev / c.std_err_variance
        ),
    ))
}

fn drift_formula() -> Check {
    let cfg = preset("drift-formula", &[])?;
    // A₀ = b τ g / (λ₀ τ + 1) for scalar τ.
    let (b, tau, g, l0) = (1.0, 1.0, 1.0, cfg.params.lambda0);
    let a0_oracle = b * tau * g / (l0 * tau + 1.0);
    let a0 = cfg.a_field().map_err(err)?.eval(&[0.0])[0];
    let res = ensemble(&cfg)?;
    let c = &res.runs[0].summary.as_ref().ok_or("no summary")?.components[0];
    let expected = a0_oracle * cfg.t_end / l0;
    let dev = c.mean - expected;
    let pass = (a0 - 0.5).abs() < 1e-15 && (a0_oracle - 0.5).abs() < 1e-15 && dev.abs() <= MC_SIGMAS * c.std_err_mean;
    Ok((
        pass,
        format!(
            "A0 = {a0}; mean = {:.4} vs {expected} (SE {:.4}, z = {:.2})",
            c.mean,
            c.std_err_mean,
            dev / c.std_err_mean
        ),
    ))
}

fn model_agreement() -> Check {
    let cfg = preset("epsilon-ladder", &[])?;
    let res = ensemble(&cfg)?;
    let n = cfg.n_particles as f64;
    let allowance = KS_NOISE_COEFF * (2.0 / n).sqrt();
    let smallest = cfg.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let mut eps_desc = cfg.eps.clone();
    eps_desc.sort_by(|a, b| b.total_cmp(a));
    let mut pass = true;
    let mut detail = Vec::new();
    for (a, b) in [("fine", "coarse"), ("fine", "sde"), ("coarse", "sde")] {
        let series: Vec<f64> = eps_desc
            .iter()
            .map(|&e| {
                res.ks
                    .iter()
                    .find(|r| r.eps == e && r.a == a && r.b == b)
                    .map(|r| r.statistic)
                    .ok_or_else(|| format!("missing KS row {a}/{b} at eps {e}"))
            })
            .collect::<Result<_, _>>()?;
        let last = *series.last().unwrap();
        let monotone = series.windows(2).all(|w| w[1] <= w[0] + allowance);
        pass &= last < KS_MAX_AT_SMALLEST_EPS && monotone;
        detail.push(format!(
            "{a}/{b} [{}]",
            series.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")
        ));
    }
    Ok((
        pass,
        format!("KS over eps {eps_desc:?} (limit {KS_MAX_AT_SMALLEST_EPS} at eps {smallest}, noise {allowance:.4}): {}", detail.join("; ")),
    ))
}

fn jump_fit(name: &str) -> Result<experiments::JumpTimeFit, String> {
    let cfg = preset(name, &[])?;
    let mut fits = experiments::run_jump_time(&cfg).map_err(err)?;
    fits.pop().ok_or_else(|| "no fit".to_string())
}

fn jump_time_coarse() -> Check {
    let fit = jump_fit("jump-time-coarse")?;
    // θ = 1, v = 1, λ₀ = 1, A = A₀ = 0.5.
    let (theta, l0, a) = (1.0, 1.0, 0.5);
    let (i_rel, s_rel) = (
        (fit.intercept - 1.0 / l0).abs() * l0,
        (fit.slope - theta * a / (l0 * l0)).abs() / (theta * a / (l0 * l0)),
    );
    Ok((
        i_rel < JUMP_INTERCEPT_REL && s_rel < JUMP_SLOPE_REL,
        format!("intercept {:.6} (rel err {i_rel:.1e}), slope {:.5} vs {a} (rel err {s_rel:.2e})", fit.intercept, fit.slope),
    ))
}

fn jump_time_fine() -> Check {
    let fit = jump_fit("jump-time-fine")?;
    let (theta, l0, b, tau, g, v) = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
    let expected = b * m_scalar(theta / l0, tau) * g * v / l0;
    let s_rel = (fit.slope - expected).abs() / expected;
    Ok((
        s_rel < JUMP_SLOPE_REL,
        format!("slope {:.5} vs e^-1 = {expected:.5} (rel err {s_rel:.2e}); intercept {:.6}", fit.slope, fit.intercept),
    ))
}

fn m_machinery() -> Check {
    let cfg = preset("m-machinery", &[])?;
    let r = experiments::run_m_machinery(&cfg).map_err(err)?;
    let pass = r.bound_samples == BOUND_SAMPLES
        && r.bound_violations == 0
        && r.max_quadrature_rel_err <= QUADRATURE_REL
        && r.mc_draws == MC_DRAWS
        && r.max_mc_z <= MC_Z_MAX;
    Ok((
        pass,
        format!(
            "{} bound violations in {} samples (max ratios {:.4}, {:.4}); quadrature rel err {:.1e}; MC max z {:.2} over {} draws",
            r.bound_violations, r.bound_samples, r.max_m_prime_ratio, r.max_m_ratio, r.max_quadrature_rel_err, r.max_mc_z, r.mc_draws
        ),
    ))
}

fn linear_exactness() -> Check {
    let general = experiments::run_linear_exactness(&preset("linear-exactness", &[])?).map_err(err)?;
    let scalar_cfg = preset(
        "linear-exactness",
        &[
            ("params.internal", "{ kind = \"general_linear\", tau = [[1.0]] }"),
            ("params.b", "[1.0]"),
            ("field.grad", "[[1.0]]"),
        ],
    )?;
    let scalar = experiments::run_linear_exactness(&scalar_cfg).map_err(err)?;
    let worst = general.max_abs_diff_dt.max(scalar.max_abs_diff_dt);
    Ok((
        worst <= EXACT_LINEAR_TOL,
        format!(
            "max per-jump |dT| dt vs dt/{}: {:.1e} (excitation/adaptation), {:.1e} (scalar); {} particles x {} jumps each",
            general.divisor, general.max_abs_diff_dt, scalar.max_abs_diff_dt, general.particles, general.jumps_per_particle
        ),
    ))
}

fn consistency_orders() -> Check {
    let cfg = preset("consistency-orders", &[])?;
    let sweeps = experiments::run_consistency_orders(&cfg).map_err(err)?;
    let within = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
    let pass = sweeps.len() == 2 && sweeps.iter().all(|s| within(s.dt_slope, DT_SLOPE) && within(s.eps_slope, EPS_SLOPE));
    let detail = sweeps
        .iter()
        .map(|s| format!("{}: dt slope {:.3}, eps slope {:.3}", s.rate, s.dt_slope, s.eps_slope))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((pass, detail))
}

fn grid_order(cfg: &ExperimentConfig) -> Result<f64, String> {
    // Pure diffusion with the preset's diffusivity D/λ₀ and scheme.
    let mut heat = cfg.clone();
    heat.drift = chemotaxis_cli::config::DriftSpec::Zero;
    let limit = heat.limit_model().map_err(err)?;
    let kappa = 1.0 / cfg.params.lambda0;
    let (lo, hi, s0, t) = (cfg.pde.lo, cfg.pde.hi, 0.5, 0.5);
    let l1 = |a: &CellDensity, b: &CellDensity| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.dx();
    let mut pairs = Vec::new();
    for cells in [40, 80, 160, 320] {
        let n0 = gaussian_solution_cells(lo, hi, cells, 0.0, s0, kappa, 0.0, 0.0);
        let pde = PdeConfig {
            advection: cfg.pde.advection,
            boundary: cfg.pde.boundary,
            ..PdeConfig::new(t)
        };
        let sol = pde_solve_1d(&limit, &n0, &pde).map_err(err)?;
        let exact = gaussian_solution_cells(lo, hi, cells, 0.0, s0, kappa, 0.0, t);
        pairs.push(((hi - lo) / cells as f64, l1(&sol.density, &exact)));
    }
    order_fit(&pairs).map_err(err)
}

fn pde_particle() -> Check {
    let cfg = preset("pde-particle", &[])?;
    if cfg.pde.advection != Advection::VanLeer {
        return Err("preset is expected to use the van Leer scheme".into());
    }
    let res = ensemble(&cfg)?;
    let l1 = res.l1.first().ok_or("no L1 row")?.distance;
    let pde = res.runs.iter().find_map(|r| r.pde.as_ref()).ok_or("no PDE run")?;
    let order = grid_order(&cfg)?;
    Ok((
        l1 < L1_MAX && pde.max_step_mass_drift <= MASS_DRIFT_MAX && order >= GRID_ORDER_MIN,
        format!(
            "L1 = {l1:.4} ({} bins); max per-step mass drift {:.1e} over {} steps; heat-kernel order {order:.3}",
            cfg.bins, pde.max_step_mass_drift, pde.steps
        ),
    ))
}

fn reversal() -> Check {
    let cfg = preset("reversal-equivalence", &[])?;
    let r = experiments::run_reversal(&cfg, cfg.threads).map_err(err)?;
    let ps = r.rows.iter().map(|row| format!("{}: p = {:.3}", row.seed, row.p_value)).collect::<Vec<_>>().join(", ");
    Ok((
        r.rows.len() == 3 && cfg.n_particles == 100_000 && r.rejections <= MAX_REJECTIONS,
        format!("{} rejections at alpha {} ({ps})", r.rejections, r.alpha),
    ))
}

fn determinism() -> Check {
    let n = DETERMINISM_PARTICLES.to_string();
    let mut failed = Vec::new();
    for name in presets::names() {
        let mut texts = Vec::new();
        for threads in ["1", "8"] {
            let cfg = preset(name, &[("n_particles", &n), ("threads", threads)])?;
            let out = experiments::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
            texts.push(serde_json::to_string(&out.results).map_err(err)?);
            if let Some(flag) = out.results.get("identical") {
                if flag != true {
                    failed.push(format!("{name} (internal)"));
                }
            }
        }
        if texts[0] != texts[1] {
            failed.push(name.to_string());
        }
    }
    let count = presets::names().count();
    Ok((
        failed.is_empty(),
        if failed.is_empty() {
            format!("{count} presets at n = {n}: results byte-identical with 1 and 8 threads")
        } else {
            format!("differences in {}", failed.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("pure-diffusion variance", diffusion_variance),
        ("drift formula", drift_formula),
        ("fine/coarse/SDE agreement", model_agreement),
        ("jump-time expansion, coarse", jump_time_coarse),
        ("jump-time expansion, fine", jump_time_fine),
        ("m machinery", m_machinery),
        ("exact linear case", linear_exactness),
        ("discretization consistency orders", consistency_orders),
        ("PDE/particle agreement", pde_particle),
        ("1D reversal equivalence", reversal),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {:2} {title}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
