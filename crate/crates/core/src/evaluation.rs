//! Frequentist performance of estimators: Monte-Carlo bias and variance,
//! bounds, estimator distances and grid-resolution thresholds.
//!
//! # Report CSV
//!
//! [`EvaluationReport::to_csv`] writes one row per (estimator, replicate,
//! θ, ν) with the fixed column order of [`REPORT_COLUMNS`]. Every cell draws
//! its measurements from a stream seeded by `(seed, θ index, ν index,
//! replicate)`, so estimators evaluated in the same sweep see the same data
//! and any cell can be recomputed on its own.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{prior_fisher_information, PhaseGrid, Prior};
use crate::estimators::Estimator;
use crate::models::{sql_variance, FrequencyVector, LikelihoodModel};
use crate::seed::{derive_seed, rng_from};
use crate::{Error, Result};

pub const REPORT_COLUMNS: &str = "estimator,replicate,theta,nu,mean,bias,variance,mse,crb,sql,trials,failures";

/// Monte-Carlo statistics of one estimator at one `(θ, ν)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Successful estimates.
    pub trials: usize,
    pub failures: usize,
}

impl CellStats {
    /// Statistics of `estimates` about the true phase. Variances use the
    /// `1/n` normalisation so that `mse = variance + bias²`.
    pub fn from_estimates(estimates: &[f64], theta: f64, failures: usize) -> Self {
        let n = estimates.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                bias: f64::NAN,
                variance: f64::NAN,
                mse: f64::NAN,
                trials: 0,
                failures,
            };
        }
        let nf = n as f64;
        let mean = estimates.iter().sum::<f64>() / nf;
        let variance = if n >= 2 {
            estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf
        } else {
            f64::NAN
        };
        let mse = estimates.iter().map(|x| (x - theta).powi(2)).sum::<f64>() / nf;
        Self {
            mean,
            bias: mean - theta,
            variance,
            mse,
            trials: n,
            failures,
        }
    }

    /// Standard error of the mean estimate.
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.trials as f64).sqrt()
    }

    /// `|bias| ≤ k · sqrt(variance / trials)`.
    pub fn unbiased_within(&self, k: f64) -> bool {
        self.bias.abs() <= k * self.standard_error()
    }
}

/// Applies `estimator` to `trials` independent `ν`-shot measurements at `θ`.
pub fn estimator_statistics(
    estimator: &dyn Estimator,
    model: &LikelihoodModel,
    theta: f64,
    nu: u64,
    trials: usize,
    seed: u64,
) -> Result<CellStats> {
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    if nu == 0 {
        return Err(Error::invalid("shot count must be >= 1"));
    }
    if !theta.is_finite() {
        return Err(Error::invalid("phase must be finite"));
    }
    let mut rng = rng_from(seed);
    // Draws repeat heavily at small ν; each distinct vector is estimated once.
    let mut index: HashMap<FrequencyVector, usize> = HashMap::new();
    let mut distinct = Vec::new();
    let mut slots = Vec::with_capacity(trials);
    for _ in 0..trials {
        let fv = model.sample(theta, nu, &mut rng);
        let slot = *index.entry(fv).or_insert_with_key(|fv| {
            distinct.push(fv.clone());
            distinct.len() - 1
        });
        slots.push(slot);
    }
    let results: Vec<Option<f64>> = estimator
        .estimate_batch(&distinct)
        .into_iter()
        .map(|r| r.ok().filter(|x| x.is_finite()))
        .collect();
    let mut estimates = Vec::with_capacity(trials);
    let mut failures = 0;
    for slot in slots {
        match results[slot] {
            Some(x) => estimates.push(x),
            None => failures += 1,
        }
    }
    Ok(CellStats::from_estimates(&estimates, theta, failures))
}

/// Prior-weighted CRB over the grid, `Σ_j P(θ_j) / (m F(θ_j))`.
pub fn phase_averaged_crb(model: &LikelihoodModel, prior: &Prior, grid: &PhaseGrid, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("shot count must be >= 1"));
    }
    if prior.weights().len() != grid.points() {
        return Err(Error::invalid("prior and grid sizes differ"));
    }
    let mut total = 0.0;
    for (j, &w) in prior.weights().iter().enumerate() {
        if w > 0.0 {
            total += w * model.crb_variance(grid.theta(j), m)?;
        }
    }
    Ok(total)
}

/// Root-mean-square difference between two estimators over `inputs`,
/// optionally weighted (weights are normalised internally).
pub fn estimator_distance(
    estimator: &dyn Estimator,
    reference: &dyn Estimator,
    inputs: &[FrequencyVector],
    weights: Option<&[f64]>,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::invalid("distance needs at least one input"));
    }
    if let Some(w) = weights {
        if w.len() != inputs.len() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("weights must be non-negative, nonzero and match the inputs"));
        }
    }
    let a = estimator.estimate_batch(inputs);
    let b = reference.estimate_batch(inputs);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (x, y)) in a.into_iter().zip(b).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let diff = x? - y?;
        num += w * diff * diff;
        den += w;
    }
    Ok((num / den).sqrt())
}

/// Every frequency vector reachable with `nu` shots over `outcomes` outcomes.
pub fn achievable_frequency_vectors(outcomes: usize, nu: u64) -> Result<Vec<FrequencyVector>> {
    if outcomes < 2 || nu == 0 {
        return Err(Error::invalid("need >= 2 outcomes and >= 1 shot"));
    }
    fn rec(prefix: &mut Vec<u64>, left: u64, slots: usize, out: &mut Vec<FrequencyVector>) {
        if slots == 1 {
            prefix.push(left);
            out.push(FrequencyVector::from_tallies(prefix.clone()).expect("nu >= 1"));
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(prefix, left - k, slots - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(outcomes), nu, outcomes, &mut out);
    Ok(out)
}

/// Multinomial probability of each frequency vector's tallies at `θ`.
pub fn outcome_probabilities(model: &LikelihoodModel, theta: f64, fvs: &[FrequencyVector]) -> Vec<f64> {
    let mut probs = vec![0.0; model.outcome_count()];
    model.fill_probs(theta, &mut probs);
    let max_n = fvs.iter().map(FrequencyVector::shots).max().unwrap_or(0) as usize;
    let mut ln_fact = vec![0.0; max_n + 1];
    for k in 1..=max_n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    fvs.iter()
        .map(|fv| {
            let mut lp = ln_fact[fv.shots() as usize];
            for (&t, &p) in fv.tallies().iter().zip(&probs) {
                if t > 0 {
                    if p <= 0.0 {
                        return 0.0;
                    }
                    lp += t as f64 * p.ln() - ln_fact[t as usize];
                }
            }
            lp.exp()
        })
        .collect()
}

/// Grid-resolution and prior thresholds at one phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdReport {
    /// Largest `ν` for which the trained estimator is expected to follow the MLE, `1/(F δθ²)`.
    pub nu_max: f64,
    /// Smallest useful training shot count for this grid, `1/(F δθ²)`.
    pub m_min: f64,
    /// Shots needed to outweigh the prior, `F_prior / F`.
    pub nu_prior: f64,
}

pub fn resolution_thresholds(
    model: &LikelihoodModel,
    grid: &PhaseGrid,
    theta: f64,
    prior: &Prior,
) -> Result<ThresholdReport> {
    let f = model.fisher_information(theta)?;
    if !(f > 0.0) {
        return Err(Error::SingularFisher { theta, outcome: 0 });
    }
    let h = grid.spacing();
    let limit = 1.0 / (f * h * h);
    Ok(ThresholdReport {
        nu_max: limit,
        m_min: limit,
        nu_prior: prior_fisher_information(prior, grid)? / f,
    })
}

/// A named estimator with one instance per replicate.
#[derive(Clone)]
pub struct EstimatorFamily {
    pub id: String,
    pub replicates: Vec<Arc<dyn Estimator>>,
}

impl EstimatorFamily {
    pub fn single(id: impl Into<String>, estimator: Arc<dyn Estimator>) -> Self {
        Self {
            id: id.into(),
            replicates: vec![estimator],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub thetas: Vec<f64>,
    pub nus: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub estimator: String,
    pub replicate: usize,
    pub theta: f64,
    pub nu: u64,
    pub stats: CellStats,
    pub crb: f64,
    pub sql: f64,
}

/// Aggregate over replicates of one estimator at one `(θ, ν)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    pub theta: f64,
    pub nu: u64,
    pub replicates: usize,
    pub bias_mean: f64,
    pub bias_sd: f64,
    pub variance_mean: f64,
    pub variance_sd: f64,
    pub var_over_crb_mean: f64,
    pub var_over_crb_sd: f64,
    pub mse_over_crb_mean: f64,
    pub mse_over_crb_sd: f64,
    pub crb: f64,
    pub sql: f64,
    /// Mean Monte-Carlo standard error of the per-replicate bias.
    pub bias_se_mean: f64,
}

impl SummaryRow {
    /// Standard error of `bias_mean`: replicate scatter plus Monte-Carlo noise.
    pub fn bias_standard_error(&self) -> f64 {
        let r = self.replicates as f64;
        let spread = if self.replicates > 1 { self.bias_sd * self.bias_sd / r } else { 0.0 };
        (spread + self.bias_se_mean * self.bias_se_mean / r).sqrt()
    }
}

pub const SUMMARY_COLUMNS: &str = "estimator,theta,nu,replicates,bias_mean,bias_sd,variance_mean,variance_sd,var_over_crb_mean,var_over_crb_sd,mse_over_crb_mean,mse_over_crb_sd,crb,sql";

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRow {
    pub theta: f64,
    pub report: Option<ThresholdReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub thresholds: Vec<ThresholdRow>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_COLUMNS);
        s.push('\n');
        for r in &self.rows {
            let c = &r.stats;
            let _ = writeln!(
                s,
                "{},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
                r.estimator, r.replicate, r.theta, r.nu, c.mean, c.bias, c.variance, c.mse, r.crb, r.sql, c.trials, c.failures
            );
        }
        s
    }

    pub fn cell(&self, estimator: &str, replicate: usize, theta: f64, nu: u64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.replicate == replicate && r.theta == theta && r.nu == nu)
    }

    /// Mean and standard deviation across replicates, in row order of first appearance.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, u64, u64)> = Vec::new();
        for r in &self.rows {
            let k = (r.estimator.clone(), r.theta.to_bits(), r.nu);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(id, tb, nu)| {
                let rows: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.estimator == id && r.theta.to_bits() == tb && r.nu == nu)
                    .collect();
                let col = |f: &dyn Fn(&ReportRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
                let (bias_mean, bias_sd) = mean_sd(&col(&|r| r.stats.bias));
                let (variance_mean, variance_sd) = mean_sd(&col(&|r| r.stats.variance));
                let (vc_mean, vc_sd) = mean_sd(&col(&|r| r.stats.variance / r.crb));
                let (mc_mean, mc_sd) = mean_sd(&col(&|r| r.stats.mse / r.crb));
                let (se_mean, _) = mean_sd(&col(&|r| r.stats.standard_error()));
                SummaryRow {
                    estimator: id,
                    theta: f64::from_bits(tb),
                    nu,
                    replicates: rows.len(),
                    bias_mean,
                    bias_sd,
                    variance_mean,
                    variance_sd,
                    var_over_crb_mean: vc_mean,
                    var_over_crb_sd: vc_sd,
                    mse_over_crb_mean: mc_mean,
                    mse_over_crb_sd: mc_sd,
                    crb: rows[0].crb,
                    sql: rows[0].sql,
                    bias_se_mean: se_mean,
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_COLUMNS);
        s.push('\n');
        for r in self.summarize() {
            let _ = writeln!(
                s,
                "{},{:?},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.estimator,
                r.theta,
                r.nu,
                r.replicates,
                r.bias_mean,
                r.bias_sd,
                r.variance_mean,
                r.variance_sd,
                r.var_over_crb_mean,
                r.var_over_crb_sd,
                r.mse_over_crb_mean,
                r.mse_over_crb_sd,
                r.crb,
                r.sql
            );
        }
        s
    }

    pub fn thresholds_csv(&self) -> String {
        let mut s = String::from("theta,nu_max,m_min,nu_prior\n");
        for t in &self.thresholds {
            match t.report {
                Some(r) => {
                    let _ = writeln!(s, "{:?},{:?},{:?},{:?}", t.theta, r.nu_max, r.m_min, r.nu_prior);
                }
                None => {
                    let _ = writeln!(s, "{:?},,,", t.theta);
                }
            }
        }
        s
    }
}

/// Seed of the measurement stream for one cell.
pub fn cell_seed(seed: u64, theta_index: usize, nu_index: usize, replicate: usize) -> u64 {
    derive_seed(seed, "cell", &[theta_index as u64, nu_index as u64, replicate as u64])
}

/// Evaluates every family and replicate over the `θ × ν` cross product.
///
/// `annotate` supplies the training grid and prior for threshold rows.
pub fn sweep(
    families: &[EstimatorFamily],
    model: &LikelihoodModel,
    spec: &SweepSpec,
    annotate: Option<(&PhaseGrid, &Prior)>,
) -> Result<EvaluationReport> {
    if families.is_empty() || spec.thetas.is_empty() || spec.nus.is_empty() {
        return Err(Error::invalid("sweep needs estimators, phases and shot counts"));
    }
    if spec.trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let mut jobs = Vec::new();
    for fam in families {
        for (rep, est) in fam.replicates.iter().enumerate() {
            for (ti, &theta) in spec.thetas.iter().enumerate() {
                for (ni, &nu) in spec.nus.iter().enumerate() {
                    jobs.push((fam.id.as_str(), rep, est, ti, theta, ni, nu));
                }
            }
        }
    }
    let probes = model.probe_count();
    let rows = jobs
        .par_iter()
        .map(|&(id, rep, est, ti, theta, ni, nu)| {
            let stats = estimator_statistics(est.as_ref(), model, theta, nu, spec.trials, cell_seed(spec.seed, ti, ni, rep))?;
            Ok(ReportRow {
                estimator: id.to_string(),
                replicate: rep,
                theta,
                nu,
                stats,
                crb: model.crb_variance(theta, nu).unwrap_or(f64::NAN),
                sql: sql_variance(probes, nu)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = match annotate {
        Some((grid, prior)) => spec
            .thetas
            .iter()
            .map(|&theta| ThresholdRow {
                theta,
                report: resolution_thresholds(model, grid, theta, prior).ok(),
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(EvaluationReport { rows, thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_prior, PriorKind};
    use crate::estimators::{AnalyticQubitMle, FnEstimator};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn perfect_estimator_has_no_bias_or_variance() {
        let q = LikelihoodModel::Qubit;
        let truth = FnEstimator(|_: &FrequencyVector| Ok(0.7));
        let c = estimator_statistics(&truth, &q, 0.7, 50, 100, 1).unwrap();
        assert_abs_diff_eq!(c.bias, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.variance, 0.0, epsilon = 1e-28);
        assert_abs_diff_eq!(c.mse, 0.0, epsilon = 1e-28);
        assert_eq!(c.trials, 100);
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let q = LikelihoodModel::Qubit;
        let picky = FnEstimator(|fv: &FrequencyVector| {
            if fv.tallies()[0].is_multiple_of(2) {
                Ok(1.0)
            } else {
                Err(Error::NoFeasibleEstimate)
            }
        });
        let c = estimator_statistics(&picky, &q, 1.0, 9, 200, 3).unwrap();
        assert!(c.failures > 0);
        assert_eq!(c.trials + c.failures, 200);
        assert!(estimator_statistics(&picky, &q, 1.0, 9, 1, 3).is_err());
    }

    #[test]
    fn mse_decomposes_into_variance_and_bias() {
        let c = CellStats::from_estimates(&[0.1, 0.5, 0.35, 0.9], 0.3, 0);
        assert_abs_diff_eq!(c.mse, c.variance + c.bias * c.bias, epsilon = 1e-15);
    }

    #[test]
    fn concentrated_prior_gives_the_local_crb() {
        let tf = LikelihoodModel::twin_fock(4).unwrap();
        let g = PhaseGrid::new(11, PI / 2.0).unwrap();
        let mut w = vec![0.0; 11];
        w[3] = 1.0;
        let p = make_prior(PriorKind::Custom { weights: w }, &g).unwrap();
        let got = phase_averaged_crb(&tf, &p, &g, 100).unwrap();
        assert_abs_diff_eq!(got, tf.crb_variance(g.theta(3), 100).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn distance_examples() {
        let fvs = achievable_frequency_vectors(2, 10).unwrap();
        assert_eq!(fvs.len(), 11);
        let mle = AnalyticQubitMle;
        assert_eq!(estimator_distance(&mle, &mle, &fvs, None).unwrap(), 0.0);
        let shifted = FnEstimator(|fv: &FrequencyVector| Ok(AnalyticQubitMle.estimate(fv)? + 0.25));
        assert_abs_diff_eq!(estimator_distance(&shifted, &mle, &fvs, None).unwrap(), 0.25, epsilon = 1e-12);
        let w = outcome_probabilities(&LikelihoodModel::Qubit, 0.2 * PI, &fvs);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            estimator_distance(&shifted, &mle, &fvs, Some(&w)).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        assert!(estimator_distance(&mle, &mle, &[], None).is_err());
    }

    #[test]
    fn achievable_vectors_count_compositions() {
        // C(ν + D - 1, D - 1)
        assert_eq!(achievable_frequency_vectors(5, 10).unwrap().len(), 1001);
        assert_eq!(achievable_frequency_vectors(3, 4).unwrap().len(), 15);
    }

    #[test]
    fn threshold_examples() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(10, PI).unwrap();
        let flat = make_prior(PriorKind::Flat, &g).unwrap();
        let t = resolution_thresholds(&q, &g, 1.0, &flat).unwrap();
        assert_abs_diff_eq!(t.nu_max, (9.0 / PI).powi(2), epsilon = 1e-9);
        assert_eq!(t.nu_max, t.m_min);
        assert_abs_diff_eq!(t.nu_prior, 0.0, epsilon = 1e-12);
        let g2 = PhaseGrid::new(19, PI).unwrap();
        let flat2 = make_prior(PriorKind::Flat, &g2).unwrap();
        let t2 = resolution_thresholds(&q, &g2, 1.0, &flat2).unwrap();
        assert_abs_diff_eq!(t2.nu_max / t.nu_max, 4.0, epsilon = 1e-9);
        let step = make_prior(PriorKind::Step { cutoff: 1.0 }, &g).unwrap();
        assert!(resolution_thresholds(&q, &g, 1.0, &step).is_err());
    }

    #[test]
    fn single_cell_sweep_matches_estimator_statistics() {
        let q = LikelihoodModel::Qubit;
        let est: Arc<dyn Estimator> = Arc::new(AnalyticQubitMle);
        let spec = SweepSpec { thetas: vec![1.0], nus: vec![40], trials: 500, seed: 77 };
        let rep = sweep(&[EstimatorFamily::single("mle", est.clone())], &q, &spec, None).unwrap();
        let direct = estimator_statistics(est.as_ref(), &q, 1.0, 40, 500, cell_seed(77, 0, 0, 0)).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].stats, direct);
        assert!(rep.to_csv().starts_with(REPORT_COLUMNS));
    }
}
