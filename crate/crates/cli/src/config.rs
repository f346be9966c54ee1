//! Experiment configuration: a TOML file plus `--key=value` overrides.

use std::path::{Path, PathBuf};

use chemotaxis_core::coarse::AField;
use chemotaxis_core::ensemble::{EnsembleConfig, InitDist};
use chemotaxis_core::limits::{drift_field_a0, Advection, Boundary, LimitModel, PdeConfig};
use chemotaxis_core::model::{ChemoField, InternalModel, ModelParams, RateForm, TabulatedField, VelocityMeasure};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CHEMOTAXIS_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Fine,
    Coarse,
    FineChain,
    CoarseChain,
    Sde,
    Pde,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fine => "fine",
            ModelKind::Coarse => "coarse",
            ModelKind::FineChain => "fine-chain",
            ModelKind::CoarseChain => "coarse-chain",
            ModelKind::Sde => "sde",
            ModelKind::Pde => "pde",
        }
    }

    /// Whether the model has an `ε`.
    pub fn scaled(self) -> bool {
        !matches!(self, ModelKind::Sde | ModelKind::Pde)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Ensemble,
    JumpTime,
    MMachinery,
    LinearExactness,
    ConsistencyOrders,
    Reversal,
    Determinism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InternalSpec {
    GeneralLinear { tau: Vec<Vec<f64>> },
    ExcitationAdaptation { t_a: f64, t_e: f64 },
    ScalarAdaptation { t_a: f64 },
}

impl Default for InternalSpec {
    fn default() -> Self {
        InternalSpec::GeneralLinear { tau: vec![vec![1.0]] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    #[default]
    Linear,
    /// `component` defaults to the last internal variable.
    Arctan { beta: f64, component: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSpec {
    pub lambda0: f64,
    /// Linear rate sensitivity; defaults to all ones.
    pub b: Option<Vec<f64>>,
    pub internal: InternalSpec,
    pub rate: RateSpec,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub delta: f64,
    pub k: u32,
    /// Fine-process step; also the coarse quadrature panel.
    pub dt: f64,
    /// Always reverse at jumps (1D, ±1 velocities) and integrate to `2θ`.
    pub reversal: bool,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            b: None,
            internal: InternalSpec::default(),
            rate: RateSpec::default(),
            lambda_min: None,
            lambda_max: None,
            delta: 1.0,
            k: 2,
            dt: 1.0,
            reversal: false,
            newton_tol: None,
            newton_max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `S(x) = s0 + gradᵀx`; `grad` has one row per spatial dimension.
    Linear { s0: Option<Vec<f64>>, grad: Vec<Vec<f64>> },
    Uniform { dim: usize, components: usize },
    GaussianBump { amplitude: Vec<f64>, center: Vec<f64>, sigma: f64 },
    Tabulated { path: PathBuf },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Linear {
            s0: None,
            grad: vec![vec![1.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub v: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    #[default]
    PlusMinusOne,
    UniformSphere { dim: usize },
    Discrete { atoms: Vec<AtomSpec> },
}

/// Drift field `A` of the coarse process, its chain and the limit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// The limiting drift computed from the fine-model parameters.
    #[default]
    A0,
    Zero,
    Constant { a: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSpec {
    pub dt: f64,
}

impl Default for SdeSpec {
    fn default() -> Self {
        Self { dt: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    pub boundary: Boundary,
    pub advection: Advection,
    pub dt: Option<f64>,
    pub edge_fraction: f64,
}

impl Default for PdeSpec {
    fn default() -> Self {
        Self {
            lo: -8.0,
            hi: 8.0,
            cells: 801,
            boundary: Boundary::Periodic,
            advection: Advection::VanLeer,
            dt: None,
            edge_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpTimeSpec {
    pub theta: f64,
    /// Start position; the origin by default.
    pub x0: Option<Vec<f64>>,
    /// Run velocity; the first unit vector by default.
    pub v: Option<Vec<f64>>,
    /// Degree of the polynomial fitted to `ΔT₁(ε)`.
    pub degree: usize,
}

impl Default for JumpTimeSpec {
    fn default() -> Self {
        Self {
            theta: 1.0,
            x0: None,
            v: None,
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdersSpec {
    /// Step sizes for the `δt` sweep, run at `eps_at_dt`.
    pub dts: Vec<f64>,
    pub eps_at_dt: f64,
    /// `ε` values for the `ε` sweep, run at `dt_at_eps`.
    pub eps_list: Vec<f64>,
    pub dt_at_eps: f64,
    /// The reference run uses `δt / ref_divisor`.
    pub ref_divisor: u32,
    pub theta: f64,
    pub x0: Option<Vec<f64>>,
    pub arctan_beta: f64,
    pub rates: Vec<String>,
}

impl Default for OrdersSpec {
    fn default() -> Self {
        Self {
            dts: vec![0.5, 0.25, 0.125, 0.0625],
            eps_at_dt: 0.1,
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            dt_at_eps: 0.5,
            ref_divisor: 1024,
            theta: 1.0,
            x0: None,
            arctan_beta: 1.0,
            rates: vec!["linear".into(), "arctan".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactnessSpec {
    pub divisor: u32,
    pub jumps: usize,
}

impl Default for ExactnessSpec {
    fn default() -> Self {
        Self { divisor: 7, jumps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReversalSpec {
    pub seeds: Vec<u64>,
    pub alpha: f64,
}

impl Default for ReversalSpec {
    fn default() -> Self {
        Self {
            seeds: vec![42, 43, 44],
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachinerySpec {
    pub bound_samples: usize,
    pub t_max: f64,
    pub tau_max: f64,
    /// Size of the random `τ` matrices in the bound check.
    pub n: usize,
}

impl Default for MachinerySpec {
    fn default() -> Self {
        Self {
            bound_samples: 1000,
            t_max: 20.0,
            tau_max: 5.0,
            n: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeterminismSpec {
    pub threads: Vec<usize>,
}

impl Default for DeterminismSpec {
    fn default() -> Self {
        Self { threads: vec![1, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; falls back to `$CHEMOTAXIS_OUT`, then `out`.
    pub dir: Option<PathBuf>,
    pub positions_csv: bool,
    pub jumps_csv: bool,
    pub density_csv: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            positions_csv: false,
            jumps_csv: false,
            density_csv: true,
        }
    }
}

fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Fine]
}

fn default_eps() -> Vec<f64> {
    vec![0.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub experiment: ExperimentKind,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    /// The `ε` ladder.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "defaults::n_particles")]
    pub n_particles: usize,
    /// End time on the diffusive scale.
    #[serde(default = "defaults::one")]
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads, 0 for all cores. Never changes results.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default)]
    pub record_jumps: usize,
    #[serde(default)]
    pub params: ParamsSpec,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default)]
    pub velocity: VelocitySpec,
    pub init: Option<InitDist>,
    pub z0: Option<Vec<f64>>,
    #[serde(default)]
    pub drift: DriftSpec,
    #[serde(default)]
    pub sde: SdeSpec,
    #[serde(default)]
    pub pde: PdeSpec,
    #[serde(default)]
    pub jump_time: JumpTimeSpec,
    #[serde(default)]
    pub orders: OrdersSpec,
    #[serde(default)]
    pub exactness: ExactnessSpec,
    #[serde(default)]
    pub reversal: ReversalSpec,
    #[serde(default)]
    pub machinery: MachinerySpec,
    #[serde(default)]
    pub determinism: DeterminismSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

mod defaults {
    pub fn n_particles() -> usize {
        10_000
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn bins() -> usize {
        chemotaxis_core::stats::DEFAULT_BINS
    }
}

/// Sets `key` (dotted path) in `table` to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::config(format!("override `{key}`: `{}` is not a table", parts[..=i].join(".")))
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `--key=value` (or `key=value`) arguments.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let body = arg.strip_prefix("--").unwrap_or(arg);
    match body.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(CliError::config(format!("override `{arg}` is not of the form --key=value"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        // Round-trip through text so errors point at the offending key.
        let merged = toml::to_string(&table).map_err(|e| CliError::config(e.to_string()))?;
        let cfg: Self = toml::from_str(&merged).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(CliError::config("`name` must not be empty"));
        }
        if self.models.is_empty() {
            return Err(CliError::config("`models` must list at least one model"));
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(CliError::config("`eps` must be a nonempty list of positive numbers"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(CliError::config("`t_end` must be finite and nonnegative"));
        }
        if self.bins == 0 {
            return Err(CliError::config("`bins` must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.measure().map(|m| m.dim()).unwrap_or(1)
    }

    pub fn measure(&self) -> Result<VelocityMeasure> {
        let m = match &self.velocity {
            VelocitySpec::PlusMinusOne => VelocityMeasure::PlusMinusOne,
            VelocitySpec::UniformSphere { dim } => VelocityMeasure::UniformSphere(*dim),
            VelocitySpec::Discrete { atoms } => {
                VelocityMeasure::discrete(atoms.iter().map(|a| (a.v.clone(), a.weight)).collect())?
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn internal(&self) -> Result<InternalModel> {
        Ok(match &self.params.internal {
            InternalSpec::GeneralLinear { tau } => {
                let n = tau.len();
                if n == 0 || tau.iter().any(|r| r.len() != n) {
                    return Err(CliError::config("`params.internal.tau` must be a square matrix"));
                }
                let flat: Vec<f64> = tau.iter().flatten().copied().collect();
                InternalModel::GeneralLinear {
                    tau: DMatrix::from_row_slice(n, n, &flat),
                }
            }
            InternalSpec::ExcitationAdaptation { t_a, t_e } => InternalModel::ExcitationAdaptation { t_a: *t_a, t_e: *t_e },
            InternalSpec::ScalarAdaptation { t_a } => InternalModel::ScalarAdaptation { t_a: *t_a },
        })
    }

    /// Fine-model parameters at `eps`.
    pub fn model_params(&self, eps: f64) -> Result<ModelParams> {
        let p = &self.params;
        let internal = self.internal()?;
        let n = internal.dim();
        let mut mp = match p.rate {
            RateSpec::Linear => {
                let mut mp = ModelParams::scalar_linear(eps, p.lambda0, 1.0, 1.0, p.dt);
                mp.internal = internal;
                mp.b = DVector::from_vec(p.b.clone().unwrap_or_else(|| vec![1.0; n]));
                mp
            }
            RateSpec::Arctan { beta, component } => {
                let mut mp = ModelParams::arctan(eps, p.lambda0, beta, internal, p.dt);
                if let Some(c) = component {
                    mp.rate = RateForm::Arctan { beta, component: c };
                }
                if let Some(b) = &p.b {
                    mp.b = DVector::from_vec(b.clone());
                }
                mp
            }
        };
        if let Some(l) = p.lambda_min {
            mp.lambda_min = l;
        }
        if let Some(l) = p.lambda_max {
            mp.lambda_max = l;
        }
        mp.delta = p.delta;
        mp.k = p.k;
        mp.validate()?;
        Ok(mp)
    }

    pub fn chemo_field(&self) -> Result<ChemoField> {
        let f = match &self.field {
            FieldSpec::Linear { s0, grad } => {
                let d = grad.len();
                let n = grad.first().map_or(0, |r| r.len());
                if d == 0 || n == 0 || grad.iter().any(|r| r.len() != n) {
                    return Err(CliError::config("`field.grad` must be a nonempty rectangular matrix"));
                }
                let flat: Vec<f64> = grad.iter().flatten().copied().collect();
                let s0 = DVector::from_vec(s0.clone().unwrap_or_else(|| vec![0.0; n]));
                ChemoField::linear(s0, DMatrix::from_row_slice(d, n, &flat))?
            }
            FieldSpec::Uniform { dim, components } => ChemoField::uniform(*dim, *components),
            FieldSpec::GaussianBump { amplitude, center, sigma } => ChemoField::gaussian_bump(
                DVector::from_vec(amplitude.clone()),
                DVector::from_vec(center.clone()),
                *sigma,
            )?,
            FieldSpec::Tabulated { path } => ChemoField::tabulated(TabulatedField::from_path(path)?),
        };
        Ok(f)
    }

    /// The drift `A` used by the coarse models and the limit.
    pub fn a_field(&self) -> Result<AField> {
        let d = self.dim();
        match &self.drift {
            DriftSpec::Zero => Ok(AField::Zero(d)),
            DriftSpec::Constant { a } => {
                if a.len() != d {
                    return Err(CliError::config(format!("`drift.a` has length {}, expected {d}", a.len())));
                }
                Ok(AField::Constant(a.clone()))
            }
            DriftSpec::A0 => {
                let mp = self.model_params(self.eps[0])?;
                let tau = mp.internal.tau()?;
                Ok(drift_field_a0(&self.chemo_field()?, &mp.linear_sensitivity(), &tau, mp.lambda0)?)
            }
        }
    }

    pub fn limit_model(&self) -> Result<LimitModel> {
        Ok(LimitModel::from_measure(&self.measure()?, self.params.lambda0, self.a_field()?)?)
    }

    pub fn init_dist(&self) -> InitDist {
        self.init.clone().unwrap_or_else(|| InitDist::origin(self.dim()))
    }

    pub fn ensemble(&self, seed: u64, threads: usize) -> EnsembleConfig {
        let mut e = EnsembleConfig::new(self.n_particles, self.t_end, seed, self.dim());
        e.threads = threads;
        e.init = self.init_dist();
        e.z0 = self.z0.clone();
        e.record_jumps = self.record_jumps;
        e.bins = self.bins;
        e
    }

    pub fn pde_config(&self) -> PdeConfig {
        PdeConfig {
            t_end: self.t_end,
            boundary: self.pde.boundary,
            advection: self.pde.advection,
            dt: self.pde.dt,
            edge_fraction: self.pde.edge_fraction,
        }
    }

    /// Output directory: config, then `$CHEMOTAXIS_OUT`, then `out`.
    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_toml("name = \"x\"", &[]).unwrap();
        assert_eq!(c.models, vec![ModelKind::Fine]);
        assert_eq!(c.params.lambda0, 1.0);
        assert_eq!(c.dim(), 1);
        let p = c.model_params(0.1).unwrap();
        assert_eq!(p.b.as_slice(), &[1.0]);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::from_toml("name = \"x\"\n[params]\nlamda0 = 2.0\n", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("lamda0"), "{e}");
    }

    #[test]
    fn overrides_apply_to_nested_keys() {
        let ov = vec![
            parse_override("--params.lambda0=2.5").unwrap(),
            parse_override("--models=[\"coarse\", \"sde\"]").unwrap(),
            parse_override("--name=renamed").unwrap(),
        ];
        let c = ExperimentConfig::from_toml("name = \"x\"", &ov).unwrap();
        assert_eq!(c.params.lambda0, 2.5);
        assert_eq!(c.models, vec![ModelKind::Coarse, ModelKind::Sde]);
        assert_eq!(c.name, "renamed");
        assert!(ExperimentConfig::from_toml("name = \"x\"", &[parse_override("--bogus=1").unwrap()]).is_err());
        assert!(parse_override("--novalue").is_err());
        let e = ExperimentConfig::from_toml("name = \"x\"", &[parse_override("--name.inner=1").unwrap()]).unwrap_err();
        assert!(e.to_string().contains("name"));
    }

    #[test]
    fn a0_default_matches_closed_form() {
        let c = ExperimentConfig::from_toml("name = \"x\"\n[params]\nlambda0 = 1.0\n", &[]).unwrap();
        assert!((c.a_field().unwrap().eval(&[0.0])[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ExperimentConfig::from_toml("name = \"x\"\nmodels = [\"pde\"]\n[field]\nkind = \"gaussian_bump\"\namplitude = [1.0]\ncenter = [0.0]\nsigma = 1.0\n", &[]).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), c);
    }
}
