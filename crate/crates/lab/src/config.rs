//! Experiment configuration: JSON, schema-checked, with per-experiment
//! defaults filled in by [`ExperimentConfig::resolve`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smallball_core::procs::ProcessParams;

use crate::error::{config_err, LabError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Entropy,
    Smallball,
    Dichotomy,
    Sequence,
    Chaining,
    Ultra,
    Sidak,
    Aperiodic,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Entropy,
        ExperimentKind::Smallball,
        ExperimentKind::Dichotomy,
        ExperimentKind::Sequence,
        ExperimentKind::Chaining,
        ExperimentKind::Ultra,
        ExperimentKind::Sidak,
        ExperimentKind::Aperiodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Entropy => "entropy",
            ExperimentKind::Smallball => "smallball",
            ExperimentKind::Dichotomy => "dichotomy",
            ExperimentKind::Sequence => "sequence",
            ExperimentKind::Chaining => "chaining",
            ExperimentKind::Ultra => "ultra",
            ExperimentKind::Sidak => "sidak",
            ExperimentKind::Aperiodic => "aperiodic",
        }
    }
}

/// `(p, A, alpha)` of a Loud family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoudParams {
    pub p: u64,
    pub a: u32,
    pub alpha: f64,
}

impl Default for LoudParams {
    fn default() -> Self {
        Self {
            p: 2,
            a: 2,
            alpha: 0.5,
        }
    }
}

/// Pass/fail thresholds; the defaults are the acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Accepted range of the entropy slopes.
    pub entropy_slope_range: (f64, f64),
    /// `|slope - 1|` for the linear small-ball law.
    pub linear_slope_tol: f64,
    /// `|slope - 2|` for the log-square law.
    pub log_square_slope_tol: f64,
    /// Multiples of the standard error allowed in Monte Carlo comparisons.
    pub se_mult: f64,
    /// Allowed spread around the median for the geometric-series ratios.
    pub band_factor: f64,
    /// `|slope - 2 / (2 beta - 1)|` for the independent sequence.
    pub sequence_slope_tol: f64,
    /// Allowed max/min ratio of the chaining constant over a decade.
    pub stability_factor: f64,
    /// Tolerance for the exact tree identities.
    pub tree_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            entropy_slope_range: (1.6, 2.4),
            linear_slope_tol: 0.02,
            log_square_slope_tol: 0.3,
            se_mult: 3.0,
            band_factor: 4.0,
            sequence_slope_tol: 0.3,
            stability_factor: 3.0,
            tree_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// May be left out when the experiment is named on the command line.
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub n_samples: Option<u64>,
    /// Exponent of the `2^grid_exp + 1` point grid.
    #[serde(default)]
    pub grid_exp: Option<u32>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub loud: Option<LoudParams>,
    /// `beta` of `phi(n) = (ln(n + 2))^beta`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Process for the generic Monte Carlo table of the `smallball`
    /// experiment.
    #[serde(default)]
    pub process: Option<ProcessParams>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sequential: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    20_240_601
}

/// Largest grid exponent accepted from a config.
pub const MAX_GRID_EXP: u32 = 16;

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: Some(kind),
            seed: default_seed(),
            n_samples: None,
            grid_exp: None,
            epsilons: None,
            loud: None,
            beta: None,
            process: None,
            tolerances: Tolerances::default(),
            sequential: false,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| LabError::Config {
            field: "<document>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> Result<ExperimentKind, LabError> {
        self.experiment.ok_or_else(|| LabError::Config {
            field: "experiment".into(),
            message: "no experiment given".into(),
        })
    }

    /// Validates fields and fills the experiment defaults.
    pub fn resolve(mut self) -> Result<Self, LabError> {
        let kind = self.kind()?;
        if let Some(e) = &self.epsilons {
            if e.is_empty() {
                return config_err("epsilons", "empty epsilon schedule");
            }
            if e.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return config_err("epsilons", "every epsilon must be positive and finite");
            }
        }
        if self.n_samples == Some(0) {
            return config_err("n_samples", "must be positive");
        }
        if let Some(g) = self.grid_exp {
            if g == 0 || g > MAX_GRID_EXP {
                return config_err("grid_exp", format!("must be in 1..={MAX_GRID_EXP}"));
            }
        }
        if let Some(b) = self.beta {
            if !(b > 0.5 && b.is_finite()) {
                return config_err("beta", "must exceed 1/2");
            }
        }
        let t = &self.tolerances;
        let positive = [
            ("tolerances.linear_slope_tol", t.linear_slope_tol),
            ("tolerances.log_square_slope_tol", t.log_square_slope_tol),
            ("tolerances.se_mult", t.se_mult),
            ("tolerances.band_factor", t.band_factor),
            ("tolerances.sequence_slope_tol", t.sequence_slope_tol),
            ("tolerances.stability_factor", t.stability_factor),
            ("tolerances.tree_tol", t.tree_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return config_err(name, "must be positive");
            }
        }
        if !(t.entropy_slope_range.0 < t.entropy_slope_range.1) {
            return config_err("tolerances.entropy_slope_range", "lower end must be below upper end");
        }
        let (grid, samples) = match kind {
            ExperimentKind::Entropy => (13, 0),
            ExperimentKind::Dichotomy => (12, 100_000),
            ExperimentKind::Smallball => (12, 20_000),
            ExperimentKind::Sequence => (0, 100_000),
            ExperimentKind::Ultra => (0, 100_000),
            ExperimentKind::Sidak => (0, 1_000_000),
            ExperimentKind::Chaining | ExperimentKind::Aperiodic => (0, 0),
        };
        if grid > 0 {
            self.grid_exp.get_or_insert(grid);
        }
        if samples > 0 {
            self.n_samples.get_or_insert(samples);
        }
        if matches!(kind, ExperimentKind::Entropy | ExperimentKind::Dichotomy | ExperimentKind::Smallball) {
            self.loud.get_or_insert_with(LoudParams::default);
        }
        if matches!(kind, ExperimentKind::Sequence | ExperimentKind::Chaining) {
            self.beta.get_or_insert(1.0);
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_schedule_is_rejected() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "sequence", "epsilons": []}"#).unwrap();
        match c.resolve() {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "epsilons"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment": "ultra", "sedd": 3}"#).is_err());
    }

    #[test]
    fn defaults_are_filled() {
        let c = ExperimentConfig::new(ExperimentKind::Dichotomy).resolve().unwrap();
        assert_eq!(c.grid_exp, Some(12));
        assert_eq!(c.n_samples, Some(100_000));
        assert_eq!(c.loud, Some(LoudParams::default()));
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn process_params_are_accepted() {
        let c = ExperimentConfig::from_json(
            r#"{"experiment": "smallball", "process": {"kind": "ultrametric_z", "branching": 2, "depth": 3, "diameter": 1.0}}"#,
        )
        .unwrap();
        assert!(c.process.is_some());
    }
}
