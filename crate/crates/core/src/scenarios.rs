//! Built-in scenarios and the TOML scenario file.

use std::path::{Path, PathBuf};

use nalgebra::dmatrix;
use serde::{Deserialize, Serialize};

use crate::discretization::PlantSpec;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::{DelayModel, InfoMode, NetworkSpec};
use crate::solver::SolverSettings;

pub const BUILTIN_NAMES: [&str; 2] = ["generic", "lfc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Horizon of the long pass used for converged gains.
    pub n_large: usize,
    pub tol: f64,
    pub lag_cap: usize,
}

impl SolverConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            n_samples: self.n_samples,
            seed: self.seed,
            keep_values: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Decentralized gains, perfect information.
    Perfect,
    /// Decentralized gains, imperfect information.
    Imperfect,
    /// Controller 1 alone.
    Single,
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Perfect => "perfect",
            Baseline::Imperfect => "imperfect",
            Baseline::Single => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_runs: usize,
    pub seed: u64,
    pub baselines: Vec<Baseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantSpec,
    pub network: NetworkSpec,
    pub solver: SolverConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.network.validate_against(&self.plant)?;
        if self.solver.n_samples == 0 {
            return Err(Error::Config("solver.n_samples must be positive".into()));
        }
        if self.solver.n_large < 2 {
            return Err(Error::Config("solver.n_large must be at least 2".into()));
        }
        if self.solver.tol.is_nan() || self.solver.tol < 0.0 {
            return Err(Error::Config("solver.tol must be non-negative".into()));
        }
        if self.experiment.n_runs < 2 {
            return Err(Error::Config("experiment.n_runs must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every controller's delay becomes `Uniform[0, alpha·T]`.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        let delay = DelayModel::uniform(alpha);
        delay.validate()?;
        self.network.delay = vec![delay; self.network.controllers()];
        Ok(self)
    }
}

fn defaults(name: &str, plant: PlantSpec, alpha: f64) -> ScenarioConfig {
    let p = plant.controllers();
    ScenarioConfig {
        name: name.to_string(),
        network: NetworkSpec::homogeneous(p, DelayModel::uniform(alpha), 0.9, InfoMode::Perfect),
        plant,
        solver: SolverConfig {
            n_samples: 20_000,
            seed: 1,
            n_large: 200,
            tol: 1e-6,
            lag_cap: 3,
        },
        experiment: ExperimentConfig {
            n_runs: 1000,
            seed: 7,
            baselines: vec![Baseline::Perfect, Baseline::Imperfect, Baseline::Single],
        },
        output: OutputConfig {
            out_dir: PathBuf::from("out"),
        },
    }
}

/// Second-order plant with two controllers acting on the same input channel.
pub fn builtin_generic() -> ScenarioConfig {
    let s = 35f64.sqrt();
    let q = dmatrix![35.0, s; s, 1.0] * 80.0;
    let plant = PlantSpec {
        a: dmatrix![0.0, 1.0; -3.0, -4.0],
        b: vec![dmatrix![0.0; 1.0]; 2],
        period: 0.05,
        horizon: 50,
        q_terminal: q.clone(),
        q_stage: q,
        r: vec![dmatrix![10.0]; 2],
        x0: vec![0.2, 0.1],
    };
    defaults("generic", plant, 1.0)
}

/// Load frequency control: state `[ΔP_c, Δf, ΔP_g, ΔX_g]`.
pub fn builtin_lfc() -> ScenarioConfig {
    let (kp, tp, tt, tg) = (1.0, 0.2, 0.3, 0.08);
    let a = dmatrix![
        0.0, 0.0, 0.0, 0.0;
        0.0, -1.0 / tp, kp / tp, 0.0;
        0.0, 0.0, -1.0 / tt, 1.0 / tt;
        1.0 / tg, 0.0, 0.0, -1.0 / tg
    ];
    let plant = PlantSpec {
        a,
        b: vec![dmatrix![1.0; 1.0; 0.0; 0.0]; 2],
        period: 0.05,
        horizon: 50,
        q_terminal: Mat::identity(4, 4),
        q_stage: Mat::identity(4, 4),
        r: vec![dmatrix![1.0]; 2],
        x0: vec![0.25, 0.15, 0.2, 0.1],
    };
    defaults("lfc", plant, 1.0)
}

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    match name {
        "generic" => Ok(builtin_generic()),
        "lfc" => Ok(builtin_lfc()),
        other => Err(Error::Config(format!(
            "unknown scenario `{other}`; built-in scenarios: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_round_trip() {
        for name in BUILTIN_NAMES {
            let cfg = builtin(name).unwrap();
            cfg.validate().unwrap();
            let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn generic_weights() {
        let cfg = builtin_generic();
        assert_eq!(cfg.plant.q_stage[(0, 1)], 80.0 * 35f64.sqrt());
        assert_eq!(cfg.plant.q_stage[(0, 0)], 80.0 * 35.0);
        assert_eq!(cfg.plant.q_terminal, cfg.plant.q_stage);
        assert_eq!(cfg.plant.r, vec![dmatrix![10.0]; 2]);
        assert_eq!(cfg.plant.x0, vec![0.2, 0.1]);
        assert_eq!(cfg.plant.period, 0.05);
        assert_eq!(cfg.plant.horizon, 50);
        assert_eq!(cfg.network.p_sc, vec![0.9; 2]);
        assert_eq!(cfg.network.delay[0], DelayModel::uniform(1.0));
    }

    #[test]
    fn lfc_matrices() {
        let cfg = builtin_lfc();
        assert_eq!(cfg.plant.a[(1, 1)], -5.0);
        assert_eq!(cfg.plant.a[(3, 0)], 12.5);
        assert_eq!(cfg.plant.a[(1, 2)], 5.0);
        assert!((cfg.plant.a[(2, 2)] + 1.0 / 0.3).abs() < 1e-15);
        assert_eq!(cfg.plant.q_stage, Mat::identity(4, 4));
        assert_eq!(cfg.plant.r[1], dmatrix![1.0]);
        assert_eq!(cfg.plant.x0, vec![0.25, 0.15, 0.2, 0.1]);
    }

    #[test]
    fn unknown_name_lists_builtins() {
        let err = builtin("nope").unwrap_err().to_string();
        assert!(err.contains("generic") && err.contains("lfc"));
    }

    #[test]
    fn malformed_config_names_the_field() {
        let mut text = builtin_generic().to_toml().unwrap();
        text = text.replace("n_samples = 20000", "n_samples = \"many\"");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("n_samples"), "{err}");
    }

    #[test]
    fn alpha_override() {
        let cfg = builtin_lfc().with_alpha(0.5).unwrap();
        assert!(cfg.network.delay.iter().all(|d| *d == DelayModel::uniform(0.5)));
        assert!(builtin_lfc().with_alpha(1.5).is_err());
    }
}
