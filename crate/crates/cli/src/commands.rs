//! The generate, train and evaluate steps, as library functions and as
//! file-producing commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;

use qsense_core::ann::{init_network, train, train_until_crb, CostHistory, MlpParams, ModelFile};
use qsense_core::data::{generate_training_set_with, PhaseGrid, Prior, TrainingSet};
use qsense_core::estimators::{AnalyticQubitMle, Estimator, MapEstimator, MleEstimator, SearchConfig};
use qsense_core::evaluation::{phase_averaged_crb, sweep, EstimatorFamily, EvaluationReport, SweepSpec};
use qsense_core::models::LikelihoodModel;
use qsense_core::seed::derive_seed;

use crate::config::{EstimatorKind, ExperimentConfig, TrainSpec};
use crate::output::{write_atomic, Artifact};

pub const TRAINING_SET_FILE: &str = "training_set.txt";
pub const COST_HISTORY_FILE: &str = "cost_history.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";

pub fn model_file_name(replicate: usize) -> String {
    format!("model_{replicate}.txt")
}

/// Child seeds of one experiment.
pub mod seeds {
    use super::derive_seed;

    pub fn data(master: u64, path: &[u64]) -> u64 {
        derive_seed(master, "data", path)
    }

    pub fn init(master: u64, replicate: usize) -> u64 {
        derive_seed(master, "init", &[replicate as u64])
    }

    pub fn train(master: u64, replicate: usize) -> u64 {
        derive_seed(master, "train", &[replicate as u64])
    }

    pub fn eval(master: u64, path: &[u64]) -> u64 {
        derive_seed(master, "eval", path)
    }
}

/// Draws the configured training set with the data seed at `path`.
pub fn generate(cfg: &ExperimentConfig, path: &[u64]) -> Result<TrainingSet> {
    let model = cfg.likelihood()?;
    let grid = cfg.phase_grid()?;
    let prior = cfg.label_prior()?;
    Ok(generate_training_set_with(
        &model,
        &grid,
        &prior,
        cfg.data.total,
        cfg.data.shots,
        seeds::data(cfg.seed, path),
        cfg.data.sampling,
    )?)
}

/// One line per grid point: index, phase, record count.
pub fn label_histogram(ts: &TrainingSet) -> String {
    let mut s = String::from("label,theta,records\n");
    for (j, c) in ts.label_counts().into_iter().enumerate() {
        let _ = writeln!(s, "{j},{:?},{c}", ts.grid().theta(j));
    }
    s
}

/// Phase-averaged CRB of the set's own model, prior and shot count.
pub fn training_crb(ts: &TrainingSet) -> Result<f64> {
    let model = ts.model().build()?;
    Ok(phase_averaged_crb(&model, ts.prior(), ts.grid(), ts.shots())?)
}

#[derive(Clone, Debug)]
pub struct TrainedReplicate {
    pub replicate: usize,
    pub params: MlpParams,
    pub history: CostHistory,
    pub saturated: bool,
    pub train_seed: u64,
}

impl TrainedReplicate {
    pub fn final_cost(&self) -> Option<f64> {
        self.history.last()
    }

    pub fn model_file(&self, ts: &TrainingSet) -> ModelFile {
        ModelFile {
            params: self.params.clone(),
            train_seed: self.train_seed,
            training_header: ts.header(),
        }
    }
}

/// Trains one network from `start`, stopping at saturation when configured.
pub fn train_one(ts: &TrainingSet, start: MlpParams, spec: &TrainSpec, train_seed: u64) -> Result<(MlpParams, CostHistory, bool)> {
    let cfg = spec.to_config(train_seed);
    match spec.saturate {
        Some(slack) => {
            let out = train_until_crb(ts, start, &cfg, training_crb(ts)?, slack)?;
            Ok((out.params, out.history, out.saturated))
        }
        None => {
            let (p, h) = train(ts, start, &cfg)?;
            Ok((p, h, false))
        }
    }
}

/// Trains `replicates` networks in parallel. Seeds depend only on the
/// master seed and replicate index.
pub fn train_replicates(
    ts: &TrainingSet,
    hidden: &[usize],
    spec: &TrainSpec,
    replicates: usize,
    master: u64,
) -> Result<Vec<TrainedReplicate>> {
    let width = ts.model().build()?.outcome_count();
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let start = init_network(width, hidden, seeds::init(master, r))?;
            let train_seed = seeds::train(master, r);
            let (params, history, saturated) =
                train_one(ts, start, spec, train_seed).with_context(|| format!("training replicate {r}"))?;
            Ok(TrainedReplicate {
                replicate: r,
                params,
                history,
                saturated,
                train_seed,
            })
        })
        .collect()
}

/// Columns: `epoch,replicate,cost,phase_averaged_crb` (epochs are 1-based).
pub fn cost_history_csv(runs: &[TrainedReplicate], crb: f64) -> String {
    let mut s = String::from("epoch,replicate,cost,phase_averaged_crb\n");
    for run in runs {
        for (e, c) in run.history.as_slice().iter().enumerate() {
            let _ = writeln!(s, "{},{},{c:?},{crb:?}", e + 1, run.replicate);
        }
    }
    s
}

/// Baseline estimator for `kind`; `None` for the network kind.
pub fn baseline(
    kind: EstimatorKind,
    model: &LikelihoodModel,
    grid: &PhaseGrid,
    prior: &Prior,
    shots: u64,
) -> Result<Option<Arc<dyn Estimator>>> {
    Ok(match kind {
        EstimatorKind::Network => None,
        EstimatorKind::Mle => Some(Arc::new(MleEstimator::new(model.clone()))),
        EstimatorKind::AnalyticMle => Some(Arc::new(AnalyticQubitMle)),
        EstimatorKind::Map => {
            let (lo, hi) = (0.0, grid.extent());
            Some(Arc::new(MapEstimator {
                model: model.clone(),
                prior: prior.clone(),
                grid: *grid,
                m: shots,
                search: SearchConfig::for_model(model).with_domain(lo, hi)?,
            }))
        }
    })
}

/// Runs the configured sweep over networks and baselines.
pub fn evaluate(cfg: &ExperimentConfig, networks: &[MlpParams], eval_path: &[u64]) -> Result<EvaluationReport> {
    let model = cfg.likelihood()?;
    let grid = cfg.phase_grid()?;
    let prior = cfg.label_prior()?;
    let mut families = Vec::new();
    for &kind in &cfg.evaluation.estimators {
        match baseline(kind, &model, &grid, &prior, cfg.data.shots)? {
            Some(est) => families.push(EstimatorFamily::single(kind.id(), est)),
            None => {
                ensure!(!networks.is_empty(), "network evaluation requested but no models supplied");
                families.push(EstimatorFamily {
                    id: kind.id().to_string(),
                    replicates: networks
                        .iter()
                        .map(|p| Arc::new(p.clone()) as Arc<dyn Estimator>)
                        .collect(),
                });
            }
        }
    }
    let spec = SweepSpec {
        thetas: cfg.evaluation.thetas(),
        nus: cfg.evaluation.nus.clone(),
        trials: cfg.evaluation.trials,
        seed: seeds::eval(cfg.seed, eval_path),
    };
    let report = sweep(&families, &model, &spec, Some((&grid, &prior)))?;
    if report.rows.iter().all(|r| r.stats.trials == 0) {
        bail!("every evaluation cell failed");
    }
    Ok(report)
}

pub fn report_artifacts(prefix: &str, report: &EvaluationReport) -> Vec<Artifact> {
    vec![
        Artifact::new(format!("{prefix}{EVALUATION_FILE}"), report.to_csv()),
        Artifact::new(format!("{prefix}{SUMMARY_FILE}"), report.summary_csv()),
        Artifact::new(format!("{prefix}{THRESHOLDS_FILE}"), report.thresholds_csv()),
    ]
}

/// Writes the training set and returns its path and label histogram.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, String)> {
    let ts = generate(cfg, &[])?;
    let path = out.join(TRAINING_SET_FILE);
    write_atomic(&path, ts.to_text().as_bytes())?;
    Ok((path, label_histogram(&ts)))
}

/// Trains the configured replicates on the set at `data`, optionally
/// continuing from persisted models, and writes model files and the cost history.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, resume: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let ts = TrainingSet::read(data).with_context(|| format!("reading {}", data.display()))?;
    let replicates = cfg.evaluation.replicates;
    let runs = if resume.is_empty() {
        train_replicates(&ts, &cfg.network.hidden, &cfg.train, replicates, cfg.seed)?
    } else {
        ensure!(resume.len() == replicates, "need {replicates} models to resume, got {}", resume.len());
        resume
            .par_iter()
            .enumerate()
            .map(|(r, path)| {
                let start = ModelFile::read(path).with_context(|| format!("reading {}", path.display()))?;
                let train_seed = derive_seed(start.train_seed, "resume", &[r as u64]);
                let (params, history, saturated) = train_one(&ts, start.params, &cfg.train, train_seed)?;
                Ok(TrainedReplicate {
                    replicate: r,
                    params,
                    history,
                    saturated,
                    train_seed,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut written = Vec::new();
    for run in &runs {
        let path = out.join(model_file_name(run.replicate));
        write_atomic(&path, run.model_file(&ts).to_text().as_bytes())?;
        written.push(path);
    }
    let path = out.join(COST_HISTORY_FILE);
    write_atomic(&path, cost_history_csv(&runs, training_crb(&ts)?).as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Evaluates the models at `models` (ignored unless the network estimator is
/// configured) and writes the report, summary and threshold CSVs.
pub fn cmd_evaluate(cfg: &ExperimentConfig, models: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let networks = if cfg.evaluation.estimators.contains(&EstimatorKind::Network) {
        models
            .iter()
            .map(|p| Ok(ModelFile::read(p).with_context(|| format!("reading {}", p.display()))?.params))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let report = evaluate(cfg, &networks, &[])?;
    crate::output::write_artifacts(out, &report_artifacts("", &report))
}

/// Default model paths for `replicates` models under `dir`.
pub fn default_model_paths(dir: &Path, replicates: usize) -> Vec<PathBuf> {
    (0..replicates).map(|r| dir.join(model_file_name(r))).collect()
}
