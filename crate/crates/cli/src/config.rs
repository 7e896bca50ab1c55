//! Run configurations. Each subcommand resolves its flags into one of these,
//! and `summary.json` stores it so a run can be repeated with `--config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqtrials::estimators::TreatmentForm;
use seqtrials::simgen::{Method, ScenarioParams};
use seqtrials::{Family, SurvivalTransform};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// Built-in scenario id, when the parameters came from one.
    pub scenario: Option<u8>,
    pub params: ScenarioParams,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub family: Family,
    pub transform: SurvivalTransform,
    pub truncate: Option<f64>,
    pub truth_n: usize,
    pub truth_seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub visits: PathBuf,
    pub subjects: PathBuf,
    pub tau_max: f64,
    pub methods: Vec<Method>,
    pub family: Family,
    /// Overrides each method's default treatment form.
    pub form: Option<TreatmentForm>,
    pub transform: SurvivalTransform,
    pub truncate: Option<f64>,
    pub horizons: Vec<f64>,
    pub bootstrap: usize,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub scenario: Option<u8>,
    pub params: ScenarioParams,
    pub n: usize,
    pub seed: u64,
    pub horizons: Vec<f64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub seed: u64,
    pub lattices: usize,
    pub max_leaf: u64,
    pub lattice_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Analyze(AnalyzeConfig),
    Truth(TruthConfig),
    Oracle(OracleConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Analyze(_) => "analyze",
            RunConfig::Truth(_) => "truth",
            RunConfig::Oracle(_) => "oracle",
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub config: RunConfig,
    pub wall_time_seconds: f64,
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Reads the run configuration stored in a `summary.json`.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{} is not a run summary: {e}", path.display())))?;
    Ok(summary.config)
}

/// Horizons must be positive and strictly increasing.
pub fn check_horizons(v: &[f64]) -> Result<(), CliError> {
    if v.is_empty() || v.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(CliError::usage("horizons must be positive numbers"));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::usage("horizons must be strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_summary() {
        let cfg = RunConfig::Oracle(OracleConfig {
            seed: 3,
            lattices: 10,
            max_leaf: 50,
            lattice_file: None,
        });
        let s = Summary {
            version: "x".into(),
            config: cfg.clone(),
            wall_time_seconds: 0.5,
            details: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.json");
        std::fs::write(&p, serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(load_config(&p).unwrap(), cfg);
        assert!(serde_json::to_string(&s).unwrap().contains("\"command\":\"oracle\""));
    }

    #[test]
    fn horizons_are_checked() {
        assert!(check_horizons(&[1.0, 2.0, 3.5]).is_ok());
        assert!(check_horizons(&[2.0, 1.0]).is_err());
        assert!(check_horizons(&[0.0]).is_err());
        assert!(check_horizons(&[]).is_err());
    }
}
