//! Experiment configuration, stored as TOML.
//!
//! Phases in the `grid` and `evaluation` tables are written in units of π
//! (`extent_pi = 1.0` is `[0, π]`); prior parameters are in radians.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use qsense_core::ann::TrainConfig;
use qsense_core::data::{make_prior, LabelSampling, PhaseGrid, Prior, PriorKind};
use qsense_core::models::{LikelihoodModel, ModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub prior: PriorKind,
    pub data: DataSpec,
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: TrainSpec,
    pub evaluation: EvaluationSpec,
    /// Parameter lists a figure iterates over; ignored by the plain commands.
    #[serde(default, skip_serializing_if = "Variants::is_empty")]
    pub variants: Variants,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: usize,
    pub extent_pi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Shots per training feature vector, `m`.
    pub shots: u64,
    /// Records in the training set, `M_total`.
    pub total: usize,
    #[serde(default)]
    pub sampling: LabelSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
}

/// Optimiser settings. Seeds are derived per replicate from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    /// Epoch cap.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    /// Stop once the cost reaches `saturate ×` the phase-averaged CRB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturate: Option<f64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            shuffle: d.shuffle,
            saturate: None,
        }
    }
}

impl TrainSpec {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Network,
    Mle,
    AnalyticMle,
    Map,
}

impl EstimatorKind {
    pub fn id(self) -> &'static str {
        match self {
            EstimatorKind::Network => "network",
            EstimatorKind::Mle => "mle",
            EstimatorKind::AnalyticMle => "analytic_mle",
            EstimatorKind::Map => "map",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub thetas_pi: Vec<f64>,
    pub nus: Vec<u64>,
    pub trials: usize,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
}

impl EvaluationSpec {
    pub fn thetas(&self) -> Vec<f64> {
        self.thetas_pi.iter().map(|t| t * PI).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variants {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shots: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<Vec<usize>>,
    /// Shots per estimate for distance and estimator-curve outputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_shots: Option<u64>,
}

impl Variants {
    pub fn is_empty(&self) -> bool {
        self.shots.is_empty() && self.points.is_empty() && self.hidden.is_empty() && self.test_shots.is_none()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn likelihood(&self) -> Result<LikelihoodModel> {
        Ok(self.model.build()?)
    }

    pub fn phase_grid(&self) -> Result<PhaseGrid> {
        Ok(PhaseGrid::new(self.grid.points, self.grid.extent_pi * PI)?)
    }

    pub fn label_prior(&self) -> Result<Prior> {
        Ok(make_prior(self.prior.clone(), &self.phase_grid()?)?)
    }

    /// Checks every field against the invariants of the types it feeds.
    pub fn validate(&self) -> Result<()> {
        self.likelihood()?;
        self.label_prior()?;
        ensure!(self.data.shots >= 1, "data.shots must be >= 1");
        ensure!(self.data.total >= 1, "data.total must be >= 1");
        ensure!(
            !self.network.hidden.is_empty() && self.network.hidden.iter().all(|&w| w >= 1),
            "network.hidden needs at least one layer of width >= 1"
        );
        for h in &self.variants.hidden {
            ensure!(!h.is_empty() && h.iter().all(|&w| w >= 1), "variants.hidden entries need widths >= 1");
        }
        self.train.to_config(0).validate(self.data.total)?;
        if let Some(s) = self.train.saturate {
            ensure!(s > 0.0, "train.saturate must be > 0");
        }
        let ev = &self.evaluation;
        ensure!(!ev.thetas_pi.is_empty() && !ev.nus.is_empty(), "evaluation needs phases and shot counts");
        ensure!(ev.thetas_pi.iter().all(|t| t.is_finite()), "evaluation phases must be finite");
        ensure!(ev.nus.iter().all(|&n| n >= 1), "evaluation shot counts must be >= 1");
        ensure!(ev.trials >= 2, "evaluation.trials must be >= 2");
        ensure!(ev.replicates >= 1, "evaluation.replicates must be >= 1");
        ensure!(!ev.estimators.is_empty(), "evaluation.estimators is empty");
        if ev.estimators.contains(&EstimatorKind::AnalyticMle) && self.model != ModelSpec::Qubit {
            bail!("analytic_mle exists only for the qubit model");
        }
        if self.variants.shots.contains(&0) || self.variants.points.iter().any(|&d| d < 2) {
            bail!("variants need shots >= 1 and points >= 2");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3

[model]
kind = "twin_fock"
n = 4

[grid]
points = 50
extent_pi = 0.5

[prior]
kind = "gaussian"
mean = 0.6
variance = 0.1

[data]
shots = 1000
total = 5000

[network]
hidden = [64, 64]

[train]
epochs = 10
batch_size = 128
saturate = 1.1

[evaluation]
thetas_pi = [0.2]
nus = [50, 200]
trials = 100
replicates = 2
estimators = ["network", "mle"]
"#;

    #[test]
    fn round_trip_is_idempotent() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
        assert_eq!(cfg.train.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SAMPLE.replace("seed = 3", "seed = 3\ncolour = \"red\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SAMPLE.replace("batch_size = 128", "batch_size = 128\nmomentum = 0.5");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn invariant_violations_are_rejected() {
        for (from, to) in [
            ("batch_size = 128", "batch_size = 9000"),
            ("points = 50", "points = 1"),
            ("trials = 100", "trials = 1"),
            ("hidden = [64, 64]", "hidden = []"),
            ("estimators = [\"network\", \"mle\"]", "estimators = [\"analytic_mle\"]"),
            ("n = 4", "n = 3"),
        ] {
            let bad = SAMPLE.replace(from, to);
            assert!(ExperimentConfig::from_toml(&bad).is_err(), "{to} accepted");
        }
    }
}
