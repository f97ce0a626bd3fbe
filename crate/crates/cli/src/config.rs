//! Run configuration: every knob a command reads, serialized into each report.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tei_core::lab::{AMuOptions, ChainOptions, SuiteConfig, T2Options};
use tei_core::measures::ProfileMode;
use tei_core::variational::{Method, MinimizeConfig};
use tei_core::{FunctionalSpec, ScalarProfile, SlopeOperator};

/// Settings file contents. Missing keys take their defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub alpha: ScalarProfile,
    pub beta: ScalarProfile,
    pub a: Option<f64>,
    pub method: Method,
    pub multistarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub hops: usize,
    pub truncation_levels: Option<Vec<f64>>,
    pub seed: u64,
    pub slope: SlopeOperator,
    pub t2_bracket_tol: f64,
    pub t2_defect: Option<f64>,
    pub a_mu_bracket_tol: f64,
    pub a_mu_value_defect: Option<f64>,
    pub suite_tilts: usize,
    pub ascent_steps: usize,
    pub chain_margin: f64,
    pub chain_abs_tol: f64,
    pub chain_rel_tol: f64,
    pub lambda_o: f64,
    pub class_size: usize,
    /// `None` picks exact enumeration when the space is small enough.
    pub profile_mode: Option<ProfileMode>,
    /// Exponential-integral parameter for the `concentration` and `minimize` certificates.
    pub delta: Option<f64>,
    pub dual_multistarts: usize,
    pub dual_max_iter: usize,
    pub dual_tol: f64,
    pub stencil: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let m = MinimizeConfig::default();
        let chain = ChainOptions::default();
        let suite = SuiteConfig::default();
        Self {
            alpha: ScalarProfile::Sqrt,
            beta: ScalarProfile::Sqrt,
            a: None,
            method: Method::Mirror,
            multistarts: m.multistarts,
            max_iter: m.max_iter,
            tol: m.tol,
            hops: m.hops,
            truncation_levels: None,
            seed: 0,
            slope: SlopeOperator::Global,
            t2_bracket_tol: T2Options::default().bracket_tol,
            t2_defect: None,
            a_mu_bracket_tol: AMuOptions::default().bracket_tol,
            a_mu_value_defect: None,
            suite_tilts: suite.tilts,
            ascent_steps: suite.ascent_steps,
            chain_margin: chain.margin,
            chain_abs_tol: chain.abs_tol,
            chain_rel_tol: chain.rel_tol,
            lambda_o: 1.0,
            class_size: 32,
            profile_mode: None,
            delta: None,
            dual_multistarts: 16,
            dual_max_iter: 200,
            dual_tol: 1e-4,
            stencil: None,
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn spec(&self) -> Result<FunctionalSpec, String> {
        let a = self.a.ok_or("this command needs \"a\" (config key or --a)")?;
        FunctionalSpec::new(self.alpha, self.beta, a).map_err(|e| e.to_string())
    }

    pub fn minimize(&self) -> MinimizeConfig {
        MinimizeConfig {
            multistarts: self.multistarts,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            hops: self.hops,
        }
    }

    pub fn t2(&self) -> T2Options {
        T2Options { defect: self.t2_defect, bracket_tol: self.t2_bracket_tol, minimize: self.minimize() }
    }

    pub fn a_mu(&self) -> AMuOptions {
        AMuOptions {
            bracket_tol: self.a_mu_bracket_tol,
            value_defect: self.a_mu_value_defect,
            minimize: self.minimize(),
            ..AMuOptions::default()
        }
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig { tilts: self.suite_tilts, ascent_steps: self.ascent_steps, seed: self.seed }
    }

    pub fn chain(&self) -> ChainOptions {
        ChainOptions { margin: self.chain_margin, abs_tol: self.chain_abs_tol, rel_tol: self.chain_rel_tol }
    }

    pub fn dual(&self) -> MinimizeConfig {
        MinimizeConfig { multistarts: self.dual_multistarts, max_iter: self.dual_max_iter, ..self.minimize() }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub instance: PathBuf,
    pub out_dir: PathBuf,
    pub settings: Settings,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_settings_take_defaults() {
        let s: Settings = serde_json::from_str("{}").unwrap();
        assert_eq!(s, Settings::default());
    }

    #[test]
    fn documented_keys_parse() {
        let s: Settings = serde_json::from_str(
            r#"{"alpha": "sqrt", "beta": "sqrt", "a": 2.0, "multistarts": 32, "max_iter": 5000,
                "tol": 1e-10, "truncation_levels": [0.5, 1.0], "slope": {"mode": "graph", "radius": 0.06}}"#,
        )
        .unwrap();
        assert_eq!(s.a, Some(2.0));
        assert_eq!(s.slope, SlopeOperator::Graph { radius: 0.06 });
        assert!(s.spec().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Settings>(r#"{"multistart": 3}"#).is_err());
    }

    #[test]
    fn missing_a_is_reported() {
        assert!(Settings::default().spec().unwrap_err().contains("\"a\""));
    }
}
