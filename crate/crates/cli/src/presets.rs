//! Built-in experiment configs, one per reference experiment.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub struct Preset {
    pub name: &'static str,
    pub toml: &'static str,
}

macro_rules! preset {
    ($name:literal) => {
        Preset {
            name: $name,
            toml: include_str!(concat!("../presets/", $name, ".toml")),
        }
    };
}

pub const PRESETS: &[Preset] = &[
    preset!("diffusion-variance"),
    preset!("drift-formula"),
    preset!("epsilon-ladder"),
    preset!("jump-time-coarse"),
    preset!("jump-time-fine"),
    preset!("m-machinery"),
    preset!("linear-exactness"),
    preset!("consistency-orders"),
    preset!("pde-particle"),
    preset!("reversal-equivalence"),
    preset!("determinism"),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.name)
}

pub fn get(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        CliError::config(format!(
            "unknown preset `{name}`; available: {}",
            names().collect::<Vec<_>>().join(", ")
        ))
    })
}

impl Preset {
    pub fn config(&self, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(self.toml, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("preset {}: {m}", self.name)),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_builds() {
        for p in PRESETS {
            let c = p.config(&[]).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert_eq!(c.name, p.name);
            c.model_params(c.eps[0]).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            c.chemo_field().unwrap();
            c.measure().unwrap();
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let e = get("nope").err().unwrap();
        assert!(e.to_string().contains("drift-formula"));
    }
}
