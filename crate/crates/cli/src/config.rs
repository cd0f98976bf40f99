use std::path::Path;

use parahom_core::corrector::{CorrectorMethod, CorrectorOptions};
use parahom_core::ensemble::EnsembleSpec;
use parahom_core::lattice::Lattice;
use parahom_core::stats::{CommutatorSetup, FluctOptions};
use parahom_core::twoscale::{Geometry, RateSetup, Source};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_theta() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub d: usize,
    pub n: usize,
    pub n_t: usize,
    #[serde(default = "one")]
    pub length: f64,
    /// Time step; `h^2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl LatticeBlock {
    pub fn build(&self) -> parahom_core::Result<Lattice> {
        Lattice::with_tau(self.d, self.n, self.n_t, self.length, self.tau)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlock {
    pub eps: f64,
    #[serde(default = "one")]
    pub r0: f64,
    pub t_end: f64,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub source: Source,
    /// Also run on the lattice with `h / 2` and `tau / 4`.
    #[serde(default = "yes")]
    pub refine: bool,
    /// Also run without the `sigma` terms of `f_eps`.
    #[serde(default)]
    pub drop_sigma_terms: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinradBlock {
    pub n_samples: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpField {
    Coefficient,
    Corrector,
    Flux,
    Sigma,
}

fn all_fields() -> Vec<DumpField> {
    vec![DumpField::Coefficient, DumpField::Corrector, DumpField::Flux, DumpField::Sigma]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpBlock {
    #[serde(default = "all_fields")]
    pub fields: Vec<DumpField>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Relative tolerance of every linear solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub method: CorrectorMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    /// Radii of the growth table of `fluxcor-verify`; dyadic up to `L/2`
    /// when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluct: Option<FluctOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minrad: Option<MinradBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commutator: Option<CommutatorSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump: Option<DumpBlock>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeBlock,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub run: RunBlock,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and checks everything that can be checked without solving.
    /// serde reports line and column of the offending token.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        let schema = |what: &str, e: parahom_core::Error| CliError::Schema(format!("{what}: {e}"));
        let lattice = cfg.lattice.build().map_err(|e| schema("lattice", e))?;
        cfg.ensemble.validate().map_err(|e| schema("ensemble", e))?;
        if let Some(t) = cfg.run.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Schema(format!("run.tol = {t} must lie in (0, 1)")));
            }
        }
        if cfg.run.workers == Some(0) {
            return Err(CliError::Schema("run.workers must be positive".into()));
        }
        if cfg.run.betas.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(CliError::Schema("run.betas must be finite and nonnegative".into()));
        }
        if cfg.run.radii.iter().any(|&r| !(r > 0.0 && r <= 0.5 * lattice.length() + 1e-12)) {
            return Err(CliError::Schema("run.radii must lie in (0, L/2]".into()));
        }
        if let Some(r) = &cfg.run.rate {
            r.validate().map_err(|e| schema("run.rate", e))?;
        }
        if let Some(f) = &cfg.run.fluct {
            f.validate().map_err(|e| schema("run.fluct", e))?;
        }
        if let Some(m) = &cfg.run.minrad {
            if m.n_samples == 0 || !(m.theta > 0.0) {
                return Err(CliError::Schema("run.minrad needs samples and a positive theta".into()));
            }
        }
        if let Some(r) = &cfg.run.residual {
            if !(r.eps > 0.0 && r.eps <= 1.0) || !(r.t_end > 0.0) || !(r.r0 > 0.0) {
                return Err(CliError::Schema("run.residual needs eps in (0, 1] and positive r0, t_end".into()));
            }
        }
        Ok(cfg)
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice.build().expect("validated at load time")
    }

    pub fn corrector_options(&self) -> CorrectorOptions {
        let mut o = CorrectorOptions { method: self.run.method, ..CorrectorOptions::default() };
        if let Some(t) = self.run.tol {
            o.solve.tol = t;
        }
        o
    }
}

/// The JSON schema of configuration files.
pub const SCHEMA: &str = include_str!("../config.schema.json");

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "lattice": {"d": 2, "n": 8, "n_t": 8},
        "ensemble": {"kind": "constant", "phases": [2.0]}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.run.seed, 0);
        assert_eq!(c.lattice.length, 1.0);
        assert_eq!(c.corrector_options().solve.tol, CorrectorOptions::default().solve.tol);
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let text = "{\n \"lattice\": {\"d\": 2, \"n\": 8, \"n_t\": 8, \"color\": 1},\n \"ensemble\": {\"kind\": \"constant\"}\n}";
        let e = ExperimentConfig::parse(text).unwrap_err();
        let m = e.to_string();
        assert!(m.contains("color") && m.contains("line 2"), "{m}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn semantic_errors_are_schema_errors() {
        let bad_lattice = MINIMAL.replace("\"d\": 2", "\"d\": 7");
        assert!(matches!(ExperimentConfig::parse(&bad_lattice), Err(CliError::Schema(_))));
        let bad_tol = MINIMAL.replace("}\n    }", "}, \"run\": {\"tol\": 2.0}\n    }");
        assert!(matches!(ExperimentConfig::parse(&bad_tol), Err(CliError::Schema(_))));
    }

    #[test]
    fn schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert_eq!(v["type"], "object");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&again).unwrap(), text);
    }
}
