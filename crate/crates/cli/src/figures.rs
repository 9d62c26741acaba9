//! Bundled experiments. Each figure id maps to a TOML config under
//! `configs/` and a runner that emits named CSV artifacts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Result};

use qsense_core::ann::MlpParams;
use qsense_core::data::TrainingSet;
use qsense_core::estimators::{AnalyticQubitMle, Estimator, MleEstimator};
use qsense_core::evaluation::{achievable_frequency_vectors, estimator_distance, outcome_probabilities, EvaluationReport};
use qsense_core::models::{FrequencyVector, LikelihoodModel, ModelSpec};
use qsense_core::seed::derive_seed;

use crate::commands::{self, baseline, cost_history_csv, report_artifacts, train_replicates, training_crb, TrainedReplicate};
use crate::config::{EstimatorKind, ExperimentConfig};
use crate::output::{write_artifacts, Artifact};

pub const FIGURE_IDS: [u8; 8] = [3, 4, 5, 6, 7, 8, 9, 10];

pub fn bundled_config_text(id: u8) -> Option<&'static str> {
    Some(match id {
        3 => include_str!("../configs/fig3.toml"),
        4 => include_str!("../configs/fig4.toml"),
        5 => include_str!("../configs/fig5.toml"),
        6 => include_str!("../configs/fig6.toml"),
        7 => include_str!("../configs/fig7.toml"),
        8 => include_str!("../configs/fig8.toml"),
        9 => include_str!("../configs/fig9.toml"),
        10 => include_str!("../configs/fig10.toml"),
        _ => return None,
    })
}

pub fn bundled_config(id: u8) -> Result<ExperimentConfig> {
    match bundled_config_text(id) {
        Some(text) => ExperimentConfig::from_toml(text),
        None => bail!("unknown figure id {id}; expected one of {FIGURE_IDS:?}"),
    }
}

/// Runs figure `id` with `cfg` and returns its artifacts in a fixed order.
pub fn run_figure(id: u8, cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    match id {
        3 => Ok(training_costs_artifacts(&training_costs(cfg)?)),
        4 => prior_curves(cfg),
        5 => Ok(convergence(cfg)?.artifacts),
        6 => Ok(step_prior(cfg)?.artifacts),
        7 => Ok(saturation(cfg)?.artifacts),
        8 => Ok(resolution(cfg)?.artifacts),
        9 => Ok(noise_limit(cfg)?.artifacts),
        10 => Ok(twin_fock(cfg)?.artifacts),
        _ => bail!("unknown figure id {id}; expected one of {FIGURE_IDS:?}"),
    }
}

/// Runs a bundled figure, optionally with another master seed, and writes its
/// CSVs under `out/fig<id>/`.
pub fn cmd_figure(id: u8, seed: Option<u64>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut cfg = bundled_config(id)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let artifacts = run_figure(id, &cfg)?;
    write_artifacts(&out.join(format!("fig{id}")), &artifacts)
}

/// Copy of `cfg` on a `points` grid, with `data.total` scaled to keep the
/// mean records per grid point.
pub fn with_points(cfg: &ExperimentConfig, points: usize) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.data.total = (cfg.data.total * points).div_ceil(cfg.grid.points);
    c.grid.points = points;
    c.train.batch_size = c.train.batch_size.min(c.data.total);
    c.validate()?;
    Ok(c)
}

pub fn with_shots(cfg: &ExperimentConfig, shots: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.data.shots = shots;
    c
}

/// Mean-square error of `estimator` over the records of `ts`, estimating
/// each distinct frequency vector once.
pub fn training_cost(estimator: &dyn Estimator, ts: &TrainingSet) -> Result<f64> {
    let mut distinct: Vec<FrequencyVector> = Vec::new();
    let mut index: HashMap<&FrequencyVector, usize> = HashMap::new();
    for r in ts.records() {
        index.entry(&r.fv).or_insert_with(|| {
            distinct.push(r.fv.clone());
            distinct.len() - 1
        });
    }
    let estimates = estimator.estimate_batch(&distinct).into_iter().collect::<Result<Vec<_>, _>>()?;
    let total: f64 = ts
        .records()
        .iter()
        .map(|r| (estimates[index[&r.fv]] - ts.label_theta(r)).powi(2))
        .sum();
    Ok(total / ts.len() as f64)
}

fn require_qubit(cfg: &ExperimentConfig) -> Result<()> {
    ensure!(cfg.model == ModelSpec::Qubit, "this figure is defined for the qubit model");
    Ok(())
}

fn test_shots(cfg: &ExperimentConfig) -> u64 {
    cfg.variants.test_shots.unwrap_or(100)
}

/// All qubit frequency vectors with `shots` shots, ordered by increasing `f_↑`.
pub fn qubit_inputs(shots: u64) -> Vec<FrequencyVector> {
    (0..=shots)
        .map(|k| FrequencyVector::from_tallies(vec![k, shots - k]).expect("shots >= 1"))
        .collect()
}

/// Table of estimates along `f_↑`: one column per named estimator.
/// Failed estimates are written as `NaN`.
pub fn estimator_curves(inputs: &[FrequencyVector], columns: &[(String, Arc<dyn Estimator>)]) -> String {
    let mut s = String::from("f_up");
    for (name, _) in columns {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    let values: Vec<Vec<f64>> = columns
        .iter()
        .map(|(_, e)| e.estimate_batch(inputs).into_iter().map(|r| r.unwrap_or(f64::NAN)).collect())
        .collect();
    for (i, fv) in inputs.iter().enumerate() {
        let _ = write!(s, "{:?}", fv.freq(0));
        for col in &values {
            let _ = write!(s, ",{:?}", col[i]);
        }
        s.push('\n');
    }
    s
}

fn baseline_columns(cfg: &ExperimentConfig) -> Result<Vec<(String, Arc<dyn Estimator>)>> {
    let model = cfg.likelihood()?;
    let grid = cfg.phase_grid()?;
    let prior = cfg.label_prior()?;
    let mut cols = Vec::new();
    for &kind in &cfg.evaluation.estimators {
        if let Some(e) = baseline(kind, &model, &grid, &prior, cfg.data.shots)? {
            cols.push((kind.id().to_string(), e));
        }
    }
    Ok(cols)
}

fn reference_mle(model: &LikelihoodModel) -> Arc<dyn Estimator> {
    match model {
        LikelihoodModel::Qubit => Arc::new(AnalyticQubitMle),
        _ => Arc::new(MleEstimator::new(model.clone())),
    }
}

// ----- training cost of MAP and MLE -----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostRow {
    pub shots: u64,
    pub map: f64,
    pub mle: f64,
    pub phase_averaged_crb: f64,
}

/// MAP and MLE training-set cost for each shot count in `variants.shots`.
pub fn training_costs(cfg: &ExperimentConfig) -> Result<Vec<CostRow>> {
    require_qubit(cfg)?;
    ensure!(!cfg.variants.shots.is_empty(), "variants.shots is empty");
    let model = cfg.likelihood()?;
    let grid = cfg.phase_grid()?;
    let prior = cfg.label_prior()?;
    cfg.variants
        .shots
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let c = with_shots(cfg, m);
            let ts = commands::generate(&c, &[i as u64])?;
            let map = baseline(EstimatorKind::Map, &model, &grid, &prior, m)?.expect("baseline");
            Ok(CostRow {
                shots: m,
                map: training_cost(map.as_ref(), &ts)?,
                mle: training_cost(&AnalyticQubitMle, &ts)?,
                phase_averaged_crb: training_crb(&ts)?,
            })
        })
        .collect()
}

pub fn training_costs_artifacts(rows: &[CostRow]) -> Vec<Artifact> {
    let mut s = String::from("m,cost_map,cost_mle,phase_averaged_crb\n");
    for r in rows {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", r.shots, r.map, r.mle, r.phase_averaged_crb);
    }
    vec![Artifact::new("cost_vs_m.csv", s)]
}

// ----- estimator curves for a prior on growing grids -----

fn prior_curves(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    require_qubit(cfg)?;
    ensure!(!cfg.variants.points.is_empty(), "variants.points is empty");
    let inputs = qubit_inputs(test_shots(cfg));
    let mut artifacts = Vec::new();
    let mut costs = String::from("d,cost_network,cost_map,cost_mle\n");
    for (i, &d) in cfg.variants.points.iter().enumerate() {
        let c = with_points(cfg, d)?;
        let ts = commands::generate(&c, &[i as u64])?;
        let run = train_replicates(&ts, &c.network.hidden, &c.train, 1, c.seed)?.remove(0);
        let mut cols: Vec<(String, Arc<dyn Estimator>)> = vec![("network".into(), Arc::new(run.params.clone()))];
        cols.extend(baseline_columns(&c)?);
        artifacts.push(Artifact::new(format!("d{d}_estimators.csv"), estimator_curves(&inputs, &cols)));
        let model = c.likelihood()?;
        let map = baseline(EstimatorKind::Map, &model, &c.phase_grid()?, &c.label_prior()?, c.data.shots)?.expect("baseline");
        let _ = writeln!(
            costs,
            "{d},{:?},{:?},{:?}",
            run.final_cost().unwrap_or(f64::NAN),
            training_cost(map.as_ref(), &ts)?,
            training_cost(&AnalyticQubitMle, &ts)?
        );
    }
    artifacts.push(Artifact::new("costs.csv", costs));
    Ok(artifacts)
}

// ----- convergence toward the MLE with m -----

pub struct ConvergenceModel {
    pub shots: u64,
    pub network: MlpParams,
    pub final_cost: f64,
    /// RMS distance to the MLE over `f_↑ ∈ [0.05, 0.95]`.
    pub distance: f64,
}

pub struct Convergence {
    pub models: Vec<ConvergenceModel>,
    pub artifacts: Vec<Artifact>,
}

/// Frequency vectors with `shots` shots and `f_↑` in `[lo, hi]`.
pub fn qubit_inputs_within(shots: u64, lo: f64, hi: f64) -> Vec<FrequencyVector> {
    qubit_inputs(shots)
        .into_iter()
        .filter(|fv| {
            let f = fv.freq(0);
            f >= lo - 1e-12 && f <= hi + 1e-12
        })
        .collect()
}

pub fn convergence(cfg: &ExperimentConfig) -> Result<Convergence> {
    require_qubit(cfg)?;
    ensure!(!cfg.variants.shots.is_empty(), "variants.shots is empty");
    let inputs = qubit_inputs(test_shots(cfg));
    let interior = qubit_inputs_within(test_shots(cfg), 0.05, 0.95);
    let mut models = Vec::new();
    let mut artifacts = Vec::new();
    let mut dist_csv = String::from("m,final_cost,distance_to_mle\n");
    for (i, &m) in cfg.variants.shots.iter().enumerate() {
        let c = with_shots(cfg, m);
        let ts = commands::generate(&c, &[i as u64])?;
        let run = train_replicates(&ts, &c.network.hidden, &c.train, 1, c.seed)?.remove(0);
        let distance = estimator_distance(&run.params, &AnalyticQubitMle, &interior, None)?;
        let mut cols: Vec<(String, Arc<dyn Estimator>)> = vec![("network".into(), Arc::new(run.params.clone()))];
        cols.extend(baseline_columns(&c)?);
        artifacts.push(Artifact::new(format!("m{m}_estimators.csv"), estimator_curves(&inputs, &cols)));
        let final_cost = run.final_cost().unwrap_or(f64::NAN);
        let _ = writeln!(dist_csv, "{m},{final_cost:?},{distance:?}");
        models.push(ConvergenceModel {
            shots: m,
            network: run.params,
            final_cost,
            distance,
        });
    }
    artifacts.push(Artifact::new("distance.csv", dist_csv));
    Ok(Convergence { models, artifacts })
}

// ----- step prior -----

pub struct StepPrior {
    pub network: TrainedReplicate,
    pub report: EvaluationReport,
    pub artifacts: Vec<Artifact>,
}

pub fn step_prior(cfg: &ExperimentConfig) -> Result<StepPrior> {
    require_qubit(cfg)?;
    let ts = commands::generate(cfg, &[])?;
    let network = train_replicates(&ts, &cfg.network.hidden, &cfg.train, 1, cfg.seed)?.remove(0);
    let report = commands::evaluate(cfg, std::slice::from_ref(&network.params), &[])?;
    let mut cols: Vec<(String, Arc<dyn Estimator>)> = vec![("network".into(), Arc::new(network.params.clone()))];
    cols.extend(baseline_columns(cfg)?);
    let mut artifacts = vec![
        Artifact::new("label_histogram.csv", commands::label_histogram(&ts)),
        Artifact::new("estimators.csv", estimator_curves(&qubit_inputs(test_shots(cfg)), &cols)),
        Artifact::new("cost_history.csv", cost_history_csv(std::slice::from_ref(&network), training_crb(&ts)?)),
    ];
    artifacts.extend(report_artifacts("", &report));
    Ok(StepPrior {
        network,
        report,
        artifacts,
    })
}

// ----- cost saturation versus hidden width -----

pub struct SaturationRun {
    pub hidden: Vec<usize>,
    pub run: TrainedReplicate,
}

pub struct Saturation {
    pub runs: Vec<SaturationRun>,
    pub phase_averaged_crb: f64,
    pub artifacts: Vec<Artifact>,
}

pub fn saturation(cfg: &ExperimentConfig) -> Result<Saturation> {
    ensure!(!cfg.variants.hidden.is_empty(), "variants.hidden is empty");
    let ts = commands::generate(cfg, &[])?;
    let crb = training_crb(&ts)?;
    let mut runs = Vec::new();
    let mut csv = String::from("epoch,hidden,cost,phase_averaged_crb\n");
    for (k, hidden) in cfg.variants.hidden.iter().enumerate() {
        let master = derive_seed(cfg.seed, "width", &[k as u64]);
        let run = train_replicates(&ts, hidden, &cfg.train, 1, master)?.remove(0);
        let label = hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        for (e, c) in run.history.as_slice().iter().enumerate() {
            let _ = writeln!(csv, "{},{label},{c:?},{crb:?}", e + 1);
        }
        runs.push(SaturationRun {
            hidden: hidden.clone(),
            run,
        });
    }
    Ok(Saturation {
        runs,
        phase_averaged_crb: crb,
        artifacts: vec![Artifact::new("cost_history.csv", csv)],
    })
}

// ----- grid resolution -----

pub struct ResolutionGrid {
    pub points: usize,
    pub runs: Vec<TrainedReplicate>,
    pub report: EvaluationReport,
}

pub struct Resolution {
    pub grids: Vec<ResolutionGrid>,
    pub artifacts: Vec<Artifact>,
}

pub fn resolution(cfg: &ExperimentConfig) -> Result<Resolution> {
    ensure!(!cfg.variants.points.is_empty(), "variants.points is empty");
    let mut grids = Vec::new();
    let mut artifacts = Vec::new();
    for (i, &d) in cfg.variants.points.iter().enumerate() {
        let c = with_points(cfg, d)?;
        let ts = commands::generate(&c, &[i as u64])?;
        let runs = train_replicates(&ts, &c.network.hidden, &c.train, c.evaluation.replicates, c.seed)?;
        let nets: Vec<MlpParams> = runs.iter().map(|r| r.params.clone()).collect();
        let report = commands::evaluate(&c, &nets, &[i as u64])?;
        artifacts.push(Artifact::new(format!("d{d}_cost_history.csv"), cost_history_csv(&runs, training_crb(&ts)?)));
        artifacts.extend(report_artifacts(&format!("d{d}_"), &report));
        grids.push(ResolutionGrid { points: d, runs, report });
    }
    Ok(Resolution { grids, artifacts })
}

// ----- training noise limits useful grid size -----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistancePoint {
    pub shots: u64,
    pub points: usize,
    pub mean: f64,
    pub sd: f64,
    /// Grid size at which the spacing equals the training noise width.
    pub d_star: f64,
}

pub struct NoiseLimit {
    pub points: Vec<DistancePoint>,
    pub per_replicate: Vec<(u64, usize, usize, f64)>,
    pub artifacts: Vec<Artifact>,
}

/// `L·sqrt(m F) + 1`.
pub fn noise_limited_points(extent: f64, shots: u64, fisher: f64) -> f64 {
    extent * (shots as f64 * fisher).sqrt() + 1.0
}

pub fn noise_limit(cfg: &ExperimentConfig) -> Result<NoiseLimit> {
    ensure!(!cfg.variants.shots.is_empty() && !cfg.variants.points.is_empty(), "variants.shots and variants.points are required");
    let model = cfg.likelihood()?;
    let theta = cfg.evaluation.thetas()[0];
    let inputs = achievable_frequency_vectors(model.outcome_count(), test_shots(cfg))?;
    let weights = outcome_probabilities(&model, theta, &inputs);
    let reference = reference_mle(&model);
    let fisher = model.fisher_information(theta)?;
    let mut per_replicate = Vec::new();
    let mut points = Vec::new();
    let mut rows = String::from("m,d,replicate,distance\n");
    let mut summary = String::from("m,d,mean_distance,sd_distance,d_star\n");
    for (mi, &m) in cfg.variants.shots.iter().enumerate() {
        let d_star = noise_limited_points(cfg.grid.extent_pi * std::f64::consts::PI, m, fisher);
        for (di, &d) in cfg.variants.points.iter().enumerate() {
            let c = with_points(&with_shots(cfg, m), d)?;
            let ts = commands::generate(&c, &[mi as u64, di as u64])?;
            let runs = train_replicates(&ts, &c.network.hidden, &c.train, c.evaluation.replicates, c.seed)?;
            let mut ds = Vec::new();
            for run in &runs {
                let dist = estimator_distance(&run.params, reference.as_ref(), &inputs, Some(&weights))?;
                let _ = writeln!(rows, "{m},{d},{},{dist:?}", run.replicate);
                per_replicate.push((m, d, run.replicate, dist));
                ds.push(dist);
            }
            let n = ds.len() as f64;
            let mean = ds.iter().sum::<f64>() / n;
            let sd = if ds.len() > 1 {
                (ds.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let _ = writeln!(summary, "{m},{d},{mean:?},{sd:?},{d_star:?}");
            points.push(DistancePoint {
                shots: m,
                points: d,
                mean,
                sd,
                d_star,
            });
        }
    }
    Ok(NoiseLimit {
        points,
        per_replicate,
        artifacts: vec![Artifact::new("distance.csv", rows), Artifact::new("distance_summary.csv", summary)],
    })
}

// ----- twin-Fock -----

pub struct TwinFock {
    pub runs: Vec<TrainedReplicate>,
    pub report: EvaluationReport,
    pub artifacts: Vec<Artifact>,
}

pub fn twin_fock(cfg: &ExperimentConfig) -> Result<TwinFock> {
    let ts = commands::generate(cfg, &[])?;
    let runs = train_replicates(&ts, &cfg.network.hidden, &cfg.train, cfg.evaluation.replicates, cfg.seed)?;
    let nets: Vec<MlpParams> = runs.iter().map(|r| r.params.clone()).collect();
    let report = commands::evaluate(cfg, &nets, &[])?;
    let mut artifacts = vec![Artifact::new("cost_history.csv", cost_history_csv(&runs, training_crb(&ts)?))];
    artifacts.extend(report_artifacts("", &report));
    Ok(TwinFock {
        runs,
        report,
        artifacts,
    })
}
