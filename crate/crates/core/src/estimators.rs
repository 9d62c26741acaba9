//! Likelihood-based baseline estimators and the posterior on the label grid.

use std::f64::consts::PI;

use crate::data::{PhaseGrid, Prior};
use crate::models::{FrequencyVector, LikelihoodModel, MAX_TWIN_FOCK_N, PROB_FLOOR};
use crate::{Error, Result};

/// A map from measured frequencies to a phase estimate.
pub trait Estimator: Send + Sync {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64>;

    fn estimate_batch(&self, fvs: &[FrequencyVector]) -> Vec<Result<f64>> {
        fvs.iter().map(|fv| self.estimate(fv)).collect()
    }
}

/// Adapts a closure into an [`Estimator`].
pub struct FnEstimator<F>(pub F);

impl<F> Estimator for FnEstimator<F>
where
    F: Fn(&FrequencyVector) -> Result<f64> + Send + Sync,
{
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        (self.0)(fv)
    }
}

impl<E: Estimator + ?Sized> Estimator for std::sync::Arc<E> {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        (**self).estimate(fv)
    }

    fn estimate_batch(&self, fvs: &[FrequencyVector]) -> Vec<Result<f64>> {
        (**self).estimate_batch(fvs)
    }
}

/// `Σ_μ f_μ log P(μ|θ)` over outcomes with `f_μ > 0`.
///
/// Returns `-∞` when an observed outcome is impossible at `θ`.
pub fn log_likelihood(model: &LikelihoodModel, fv: &FrequencyVector, theta: f64) -> f64 {
    let mut probs = [0.0; MAX_TWIN_FOCK_N + 1];
    let probs = &mut probs[..model.outcome_count()];
    model.fill_probs(theta, probs);
    let mut total = 0.0;
    for (mu, &p) in probs.iter().enumerate() {
        let f = fv.freq(mu);
        if f > 0.0 {
            // Rounding leaves exact zeros near 1e-32; anything below the
            // squared floor is treated as impossible.
            if p < PROB_FLOOR * PROB_FLOOR {
                return f64::NEG_INFINITY;
            }
            total += f * p.ln();
        }
    }
    total
}

/// Coarse-to-fine argmax search over a phase interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub levels: usize,
    pub points: usize,
    /// Bracket shrink factor between levels.
    pub shrink: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SearchConfig {
    pub fn new(levels: usize, points: usize, lo: f64, hi: f64) -> Result<Self> {
        let cfg = Self {
            levels,
            points,
            shrink: 100.0,
            lo,
            hi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Three levels of 1001 points over the model's identifiable interval.
    pub fn for_model(model: &LikelihoodModel) -> Self {
        let (lo, hi) = model.identifiable_domain();
        Self {
            levels: 3,
            points: 1001,
            shrink: 100.0,
            lo,
            hi,
        }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.lo = lo;
        self.hi = hi;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.points < 3 {
            return Err(Error::invalid("search needs >= 1 level and >= 3 points"));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid("search domain must be a nonempty finite interval"));
        }
        if !(self.shrink > 1.0) {
            return Err(Error::invalid("shrink factor must exceed 1"));
        }
        Ok(())
    }

    fn check_model(&self, model: &LikelihoodModel) -> Result<()> {
        let (lo, hi) = model.identifiable_domain();
        let tol = 1e-12;
        if self.lo < lo - tol || self.hi > hi + tol {
            return Err(Error::invalid(format!(
                "search domain [{}, {}] leaves the identifiable interval [{lo}, {hi}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Grid-refined argmax of `objective`. `-∞` and NaN candidates are
    /// excluded; ties go to the smaller phase.
    pub fn argmax(&self, objective: impl Fn(f64) -> f64) -> Result<f64> {
        self.validate()?;
        let (dom_lo, dom_hi) = (self.lo, self.hi);
        let (mut lo, mut hi) = (dom_lo, dom_hi);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..self.levels {
            let step = (hi - lo) / (self.points - 1) as f64;
            for i in 0..self.points {
                let theta = if i + 1 == self.points { hi } else { lo + i as f64 * step };
                let v = objective(theta);
                if !(v > f64::NEG_INFINITY) {
                    continue;
                }
                best = match best {
                    Some((bt, bv)) if v < bv || (v == bv && theta >= bt) => Some((bt, bv)),
                    _ => Some((theta, v)),
                };
            }
            let (centre, _) = best.ok_or(Error::NoFeasibleEstimate)?;
            let width = (hi - lo) / self.shrink;
            lo = centre - width / 2.0;
            hi = centre + width / 2.0;
            if lo < dom_lo {
                hi += dom_lo - lo;
                lo = dom_lo;
            }
            if hi > dom_hi {
                lo -= hi - dom_hi;
                hi = dom_hi;
            }
        }
        Ok(best.expect("at least one level ran").0)
    }
}

/// Maximum-likelihood estimate by grid-refined search.
pub fn mle(model: &LikelihoodModel, fv: &FrequencyVector, search: &SearchConfig) -> Result<f64> {
    check_dims(model, fv)?;
    search.check_model(model)?;
    search.argmax(|t| log_likelihood(model, fv, t))
}

/// Closed-form qubit MLE `2 arccos √f_↑`.
pub fn qubit_mle_analytic(f_up: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_up) {
        return Err(Error::invalid(format!("frequency must lie in [0, 1], got {f_up}")));
    }
    Ok(2.0 * f_up.sqrt().acos())
}

/// Prior log-weight at an arbitrary phase, linear in `log w` between grid points.
pub fn interpolated_log_prior(prior: &Prior, grid: &PhaseGrid, theta: f64) -> f64 {
    let w = prior.weights();
    let h = grid.spacing();
    let u = theta / h;
    let last = (grid.points() - 1) as f64;
    if !(u >= -1e-9 && u <= last + 1e-9) {
        return f64::NEG_INFINITY;
    }
    let u = u.clamp(0.0, last);
    let j = (u.floor() as usize).min(grid.points() - 2);
    let t = u - j as f64;
    let (a, b) = (w[j], w[j + 1]);
    if t == 0.0 {
        return a.ln();
    }
    if t == 1.0 {
        return b.ln();
    }
    if a <= 0.0 || b <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (1.0 - t) * a.ln() + t * b.ln()
}

/// Maximum a-posteriori estimate: argmax of `Σ f_μ log P(μ|θ) + log P(θ)/m`.
pub fn map_estimate(
    model: &LikelihoodModel,
    fv: &FrequencyVector,
    m: u64,
    prior: &Prior,
    grid: &PhaseGrid,
    search: &SearchConfig,
) -> Result<f64> {
    check_dims(model, fv)?;
    check_prior(prior, grid)?;
    if m == 0 {
        return Err(Error::invalid("MAP needs m >= 1"));
    }
    search.check_model(model)?;
    let inv_m = 1.0 / m as f64;
    search.argmax(|t| {
        let lp = interpolated_log_prior(prior, grid, t);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        log_likelihood(model, fv, t) + lp * inv_m
    })
}

fn check_dims(model: &LikelihoodModel, fv: &FrequencyVector) -> Result<()> {
    if fv.len() != model.outcome_count() {
        return Err(Error::invalid(format!(
            "frequency vector has {} outcomes, model has {}",
            fv.len(),
            model.outcome_count()
        )));
    }
    Ok(())
}

fn check_prior(prior: &Prior, grid: &PhaseGrid) -> Result<()> {
    if prior.weights().len() != grid.points() {
        return Err(Error::invalid("prior and grid sizes differ"));
    }
    Ok(())
}

/// Posterior weights `∝ exp(m Σ f_μ log P(μ|θ_j)) P(θ_j)` on the label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorOnGrid {
    grid: PhaseGrid,
    probs: Vec<f64>,
}

impl PosteriorOnGrid {
    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Posterior mass on `[lo, hi]`.
    pub fn mass_within(&self, lo: f64, hi: f64) -> f64 {
        self.grid
            .thetas()
            .iter()
            .zip(&self.probs)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, p)| p)
            .sum()
    }
}

pub fn posterior_on_grid(
    model: &LikelihoodModel,
    fv: &FrequencyVector,
    m: u64,
    prior: &Prior,
    grid: &PhaseGrid,
) -> Result<PosteriorOnGrid> {
    check_dims(model, fv)?;
    check_prior(prior, grid)?;
    let logs: Vec<f64> = grid
        .thetas()
        .iter()
        .zip(prior.weights())
        .map(|(&t, &w)| {
            if w <= 0.0 {
                return f64::NEG_INFINITY;
            }
            if m == 0 {
                return w.ln();
            }
            let ll = log_likelihood(model, fv, t);
            if ll == f64::NEG_INFINITY {
                ll
            } else {
                m as f64 * ll + w.ln()
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::DegeneratePosterior);
    }
    let unnorm: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    Ok(PosteriorOnGrid {
        grid: *grid,
        probs: unnorm.into_iter().map(|p| p / z).collect(),
    })
}

/// Largest absolute gap between the grid posterior density and the
/// asymptotic normal `N(θ̂, 1/(mF))`.
pub fn gaussian_posterior_check(post: &PosteriorOnGrid, theta_hat: f64, m: u64, fisher: f64) -> Result<f64> {
    if m == 0 || !(fisher > 0.0) {
        return Err(Error::invalid("need m >= 1 and F > 0"));
    }
    let precision = m as f64 * fisher;
    let width = 1.0 / precision.sqrt();
    let h = post.grid.spacing();
    if h >= 0.2 * width {
        return Err(Error::Resolution { spacing: h, width });
    }
    let norm = (precision / (2.0 * PI)).sqrt();
    Ok(post
        .grid
        .thetas()
        .iter()
        .zip(&post.probs)
        .map(|(&t, &p)| {
            let gauss = norm * (-precision * (t - theta_hat).powi(2) / 2.0).exp();
            (p / h - gauss).abs()
        })
        .fold(0.0, f64::max))
}

/// Grid-search MLE as an [`Estimator`].
#[derive(Clone, Debug)]
pub struct MleEstimator {
    pub model: LikelihoodModel,
    pub search: SearchConfig,
}

impl MleEstimator {
    pub fn new(model: LikelihoodModel) -> Self {
        let search = SearchConfig::for_model(&model);
        Self { model, search }
    }
}

impl Estimator for MleEstimator {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        mle(&self.model, fv, &self.search)
    }
}

/// Closed-form qubit MLE as an [`Estimator`].
#[derive(Clone, Copy, Debug, Default)]
pub struct AnalyticQubitMle;

impl Estimator for AnalyticQubitMle {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        if fv.len() != 2 {
            return Err(Error::invalid("analytic MLE needs a two-outcome qubit vector"));
        }
        qubit_mle_analytic(fv.freq(0))
    }
}

/// MAP estimator with a fixed assumed shot count `m`.
#[derive(Clone, Debug)]
pub struct MapEstimator {
    pub model: LikelihoodModel,
    pub prior: Prior,
    pub grid: PhaseGrid,
    pub m: u64,
    pub search: SearchConfig,
}

impl Estimator for MapEstimator {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        map_estimate(&self.model, fv, self.m, &self.prior, &self.grid, &self.search)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_prior, PriorKind};
    use approx::assert_abs_diff_eq;

    fn fv(t: &[u64]) -> FrequencyVector {
        FrequencyVector::from_tallies(t.to_vec()).unwrap()
    }

    #[test]
    fn log_likelihood_examples() {
        let q = LikelihoodModel::Qubit;
        assert_eq!(log_likelihood(&q, &fv(&[5, 0]), 0.0), 0.0);
        assert_eq!(log_likelihood(&q, &fv(&[5, 0]), PI), f64::NEG_INFINITY);
        assert_abs_diff_eq!(
            log_likelihood(&q, &fv(&[3, 3]), PI / 2.0),
            0.5f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn analytic_mle_examples() {
        assert_eq!(qubit_mle_analytic(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(qubit_mle_analytic(0.0).unwrap(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(qubit_mle_analytic(0.5).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(qubit_mle_analytic(-0.1).is_err());
        assert!(qubit_mle_analytic(1.1).is_err());
        assert!(qubit_mle_analytic(f64::NAN).is_err());
    }

    #[test]
    fn grid_mle_at_symmetry_point() {
        let q = LikelihoodModel::Qubit;
        let t = mle(&q, &fv(&[50, 50]), &SearchConfig::for_model(&q)).unwrap();
        assert_abs_diff_eq!(t, PI / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn mle_rejects_dimension_mismatch_and_foreign_domain() {
        let q = LikelihoodModel::Qubit;
        assert!(mle(&q, &fv(&[1, 2, 3]), &SearchConfig::for_model(&q)).is_err());
        let tf = LikelihoodModel::twin_fock(4).unwrap();
        let wide = SearchConfig::new(3, 1001, 0.0, PI).unwrap();
        assert!(mle(&tf, &fv(&[1, 1, 1, 1, 1]), &wide).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_smaller_phase() {
        let s = SearchConfig::new(1, 11, 0.0, 1.0).unwrap();
        assert_eq!(s.argmax(|_| 1.0).unwrap(), 0.0);
        let s = SearchConfig::new(3, 101, 0.0, 1.0).unwrap();
        assert!(matches!(s.argmax(|_| f64::NEG_INFINITY), Err(Error::NoFeasibleEstimate)));
    }

    #[test]
    fn interpolated_prior_hits_grid_weights() {
        let g = PhaseGrid::new(5, PI).unwrap();
        let p = make_prior(PriorKind::Gaussian { mean: 1.0, variance: 0.3 }, &g).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(
                interpolated_log_prior(&p, &g, g.theta(j)),
                p.weight(j).ln(),
                epsilon = 1e-12
            );
        }
        assert_eq!(interpolated_log_prior(&p, &g, -0.5), f64::NEG_INFINITY);
        let step = make_prior(PriorKind::Step { cutoff: PI / 2.0 }, &g).unwrap();
        assert_eq!(interpolated_log_prior(&step, &g, 0.6 * PI), f64::NEG_INFINITY);
        assert!(interpolated_log_prior(&step, &g, PI / 2.0).is_finite());
    }

    #[test]
    fn map_with_zero_prior_everywhere_on_domain_is_infeasible() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(9, PI).unwrap();
        let p = make_prior(PriorKind::Step { cutoff: PI / 4.0 }, &g).unwrap();
        let search = SearchConfig::new(3, 101, 0.6 * PI, PI).unwrap();
        assert!(matches!(
            map_estimate(&q, &fv(&[2, 8]), 10, &p, &g, &search),
            Err(Error::NoFeasibleEstimate)
        ));
    }

    #[test]
    fn posterior_without_evidence_is_the_prior() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(7, PI).unwrap();
        let p = make_prior(PriorKind::Gaussian { mean: 1.2, variance: 0.4 }, &g).unwrap();
        let post = posterior_on_grid(&q, &fv(&[3, 1]), 0, &p, &g).unwrap();
        for (a, b) in post.probs().iter().zip(p.weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn posterior_is_confined_to_prior_support() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(10, PI).unwrap();
        let p = make_prior(PriorKind::Step { cutoff: PI / 2.0 }, &g).unwrap();
        let post = posterior_on_grid(&q, &fv(&[1, 9]), 10, &p, &g).unwrap();
        for (t, &x) in g.thetas().iter().zip(post.probs()) {
            if *t > PI / 2.0 {
                assert_eq!(x, 0.0);
            }
        }
        assert_abs_diff_eq!(post.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn posterior_with_no_compatible_label_is_degenerate() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(2, PI).unwrap();
        let p = make_prior(PriorKind::Custom { weights: vec![1.0, 0.0] }, &g).unwrap();
        // all-down outcomes are impossible at θ = 0
        assert!(matches!(
            posterior_on_grid(&q, &fv(&[0, 4]), 4, &p, &g),
            Err(Error::DegeneratePosterior)
        ));
    }

    #[test]
    fn gaussian_check_requires_resolution() {
        let q = LikelihoodModel::Qubit;
        let g = PhaseGrid::new(10, PI).unwrap();
        let p = make_prior(PriorKind::Flat, &g).unwrap();
        let post = posterior_on_grid(&q, &fv(&[5, 5]), 10_000, &p, &g).unwrap();
        assert!(matches!(
            gaussian_posterior_check(&post, PI / 2.0, 10_000, 1.0),
            Err(Error::Resolution { .. })
        ));
    }
}
