//! Measurement likelihoods, Fisher information and sensitivity bounds.
//!
//! Two sensors are modelled:
//!
//! * a single qubit prepared in `|↑⟩`, rotated by `exp(-iσ_y θ/2)` and read
//!   out in the `σ_z` basis (outcome 0 is `↑`);
//! * an `N`-qubit twin-Fock state `|j = N/2, m = 0⟩` rotated by
//!   `exp(-i J_y θ)` and read out by counting `J_z`. Outcome `μ` maps to the
//!   eigenvalue `m = μ - N/2`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Central finite-difference step used for numerically differentiated likelihoods.
pub const FD_STEP: f64 = 1e-5;

/// Probabilities below this are tested for a removable 0/0 limit in the
/// Fisher information.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest supported twin-Fock particle number.
pub const MAX_TWIN_FOCK_N: usize = 64;

/// A probability distribution over the `D` discrete outcomes of one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDistribution {
    probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid("a distribution needs at least two outcomes"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Relative frequencies of the outcomes of `m` shots, stored as integer tallies.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FrequencyVector {
    tallies: Vec<u64>,
    shots: u64,
}

impl FrequencyVector {
    pub fn from_tallies(tallies: Vec<u64>) -> Result<Self> {
        if tallies.len() < 2 {
            return Err(Error::invalid("a frequency vector needs at least two outcomes"));
        }
        let shots: u64 = tallies.iter().sum();
        if shots == 0 {
            return Err(Error::invalid("a frequency vector needs at least one shot"));
        }
        Ok(Self { tallies, shots })
    }

    pub fn tallies(&self) -> &[u64] {
        &self.tallies
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn len(&self) -> usize {
        self.tallies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tallies.is_empty()
    }

    pub fn freq(&self, outcome: usize) -> f64 {
        self.tallies[outcome] as f64 / self.shots as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.tallies.len()).map(|i| self.freq(i)).collect()
    }
}

/// Serializable description of a likelihood model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Qubit,
    TwinFock { n: usize },
}

impl ModelSpec {
    pub fn build(self) -> Result<LikelihoodModel> {
        match self {
            ModelSpec::Qubit => Ok(LikelihoodModel::Qubit),
            ModelSpec::TwinFock { n } => LikelihoodModel::twin_fock(n),
        }
    }
}

impl std::fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelSpec::Qubit => write!(f, "qubit"),
            ModelSpec::TwinFock { n } => write!(f, "twin_fock {n}"),
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("qubit"), None, None) => Ok(ModelSpec::Qubit),
            (Some("twin_fock"), Some(n), None) => n
                .parse()
                .map(|n| ModelSpec::TwinFock { n })
                .map_err(|_| Error::invalid(format!("bad particle number {n:?}"))),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// Rotated twin-Fock state with its `J_y` eigendecomposition cached.
#[derive(Clone, Debug)]
pub struct TwinFock {
    n: usize,
    /// `J_y` eigenvalues (integers, since `N` is even).
    eigvals: Vec<f64>,
    /// `coeffs[μ * D + k] = V[μ, k] · conj(V[centre, k])`, so that
    /// `d^j_{m(μ),0}(θ) = Σ_k coeffs[μ, k] · exp(-i θ λ_k)`.
    coeffs: Vec<Complex64>,
}

impl TwinFock {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "twin-Fock particle number must be even and >= 2, got {n}"
            )));
        }
        if n > MAX_TWIN_FOCK_N {
            return Err(Error::invalid(format!(
                "twin-Fock particle number {n} exceeds {MAX_TWIN_FOCK_N}"
            )));
        }
        let dim = n + 1;
        let jy = spin_jy(n);
        let eig = jy.symmetric_eigen();
        let centre = n / 2;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); dim * dim];
        for mu in 0..dim {
            for k in 0..dim {
                coeffs[mu * dim + k] = eig.eigenvectors[(mu, k)] * eig.eigenvectors[(centre, k)].conj();
            }
        }
        let eigvals = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                let r = l.round();
                debug_assert!((l - r).abs() < 1e-9, "J_y eigenvalue {l} is not an integer");
                r
            })
            .collect();
        Ok(Self { n, eigvals, coeffs })
    }

    pub fn particle_count(&self) -> usize {
        self.n
    }

    /// Wigner small-d column `d^j_{m,0}(θ)` for `m = -j..=j`.
    pub fn rotation_column(&self, theta: f64) -> Vec<Complex64> {
        let dim = self.n + 1;
        let phases: Vec<Complex64> = self
            .eigvals
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -theta * l))
            .collect();
        (0..dim)
            .map(|mu| {
                let row = &self.coeffs[mu * dim..(mu + 1) * dim];
                row.iter().zip(&phases).map(|(c, p)| c * p).sum()
            })
            .collect()
    }

    fn fill_probs(&self, theta: f64, out: &mut [f64]) {
        let dim = self.n + 1;
        let mut phases = [Complex64::new(0.0, 0.0); MAX_TWIN_FOCK_N + 1];
        for (p, &l) in phases.iter_mut().zip(&self.eigvals) {
            *p = Complex64::from_polar(1.0, -theta * l);
        }
        for (mu, o) in out.iter_mut().enumerate().take(dim) {
            let row = &self.coeffs[mu * dim..(mu + 1) * dim];
            let amp: Complex64 = row.iter().zip(&phases[..dim]).map(|(c, p)| c * p).sum();
            *o = amp.norm_sqr().min(1.0);
        }
    }
}

/// `J_y` for spin `j = n/2` in the Dicke basis ordered by ascending `m`.
fn spin_jy(n: usize) -> DMatrix<Complex64> {
    let dim = n + 1;
    let j = n as f64 / 2.0;
    let mut jy = DMatrix::<Complex64>::zeros(dim, dim);
    for k in 0..dim - 1 {
        let m = k as f64 - j;
        // ⟨m+1| J_+ |m⟩
        let c = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
        // J_y = (J_+ - J_-) / 2i
        jy[(k + 1, k)] = Complex64::new(0.0, -c / 2.0);
        jy[(k, k + 1)] = Complex64::new(0.0, c / 2.0);
    }
    jy
}

/// A parameter-conditioned distribution over discrete measurement outcomes.
#[derive(Clone, Debug)]
pub enum LikelihoodModel {
    Qubit,
    TwinFock(TwinFock),
}

impl LikelihoodModel {
    pub fn twin_fock(n: usize) -> Result<Self> {
        TwinFock::new(n).map(LikelihoodModel::TwinFock)
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            LikelihoodModel::Qubit => ModelSpec::Qubit,
            LikelihoodModel::TwinFock(tf) => ModelSpec::TwinFock { n: tf.n },
        }
    }

    pub fn outcome_count(&self) -> usize {
        match self {
            LikelihoodModel::Qubit => 2,
            LikelihoodModel::TwinFock(tf) => tf.n + 1,
        }
    }

    /// Number of probes `N` entering the standard quantum limit.
    pub fn probe_count(&self) -> usize {
        match self {
            LikelihoodModel::Qubit => 1,
            LikelihoodModel::TwinFock(tf) => tf.n,
        }
    }

    /// Phase interval on which the likelihood is identifiable.
    pub fn identifiable_domain(&self) -> (f64, f64) {
        match self {
            LikelihoodModel::Qubit => (0.0, PI),
            LikelihoodModel::TwinFock(_) => (0.0, PI / 2.0),
        }
    }

    pub fn probabilities(&self, theta: f64) -> Result<OutcomeDistribution> {
        check_finite(theta)?;
        let mut probs = vec![0.0; self.outcome_count()];
        self.fill_probs(theta, &mut probs);
        OutcomeDistribution::new(probs)
    }

    /// Writes `P(μ|θ)` into `out` without validation. `out` must have
    /// [`outcome_count`](Self::outcome_count) entries.
    pub fn fill_probs(&self, theta: f64, out: &mut [f64]) {
        match self {
            LikelihoodModel::Qubit => {
                let (s, c) = (theta / 2.0).sin_cos();
                out[0] = c * c;
                out[1] = s * s;
            }
            LikelihoodModel::TwinFock(tf) => tf.fill_probs(theta, out),
        }
    }

    /// First and second θ-derivatives of every outcome probability.
    fn derivatives(&self, theta: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.outcome_count();
        match self {
            LikelihoodModel::Qubit => {
                let (s, c) = (theta / 2.0).sin_cos();
                let (sin, cos) = theta.sin_cos();
                (
                    vec![c * c, s * s],
                    vec![-sin / 2.0, sin / 2.0],
                    vec![-cos / 2.0, cos / 2.0],
                )
            }
            LikelihoodModel::TwinFock(_) => {
                let h = FD_STEP;
                let mut p = vec![0.0; d];
                let mut lo = vec![0.0; d];
                let mut hi = vec![0.0; d];
                self.fill_probs(theta, &mut p);
                self.fill_probs(theta - h, &mut lo);
                self.fill_probs(theta + h, &mut hi);
                let first = hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                let second = hi
                    .iter()
                    .zip(&lo)
                    .zip(&p)
                    .map(|((a, b), c)| (a - 2.0 * c + b) / (h * h))
                    .collect();
                (p, first, second)
            }
        }
    }

    /// Fisher information `F(θ) = Σ_μ [∂_θ P(μ|θ)]² / P(μ|θ)`.
    ///
    /// Outcomes with `P < PROB_FLOOR` contribute their removable limit
    /// `2 ∂²_θ P` when the probability vanishes quadratically (the
    /// eigenstate points of both models). A vanishing probability with a
    /// non-vanishing slope is reported as singular.
    pub fn fisher_information(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        let (p, dp, d2p) = self.derivatives(theta);
        let mut total = 0.0;
        for (mu, ((&p, &dp), &d2p)) in p.iter().zip(&dp).zip(&d2p).enumerate() {
            let num = dp * dp;
            if p >= PROB_FLOOR {
                total += num / p;
            } else if num < PROB_FLOOR * PROB_FLOOR || num <= 3.0 * d2p.max(0.0) * p {
                total += 2.0 * d2p.max(0.0);
            } else {
                return Err(Error::SingularFisher { theta, outcome: mu });
            }
        }
        Ok(total)
    }

    /// Cramér-Rao variance bound `1 / (ν F(θ))`.
    pub fn crb_variance(&self, theta: f64, nu: u64) -> Result<f64> {
        crb_variance(self, theta, nu)
    }

    /// Draws `m` shots at `θ` and tallies the outcomes.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, m: u64, rng: &mut R) -> FrequencyVector {
        let mut probs = vec![0.0; self.outcome_count()];
        self.fill_probs(theta, &mut probs);
        FrequencyVector {
            tallies: sample_multinomial(&probs, m, rng),
            shots: m,
        }
    }
}

fn check_finite(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("phase must be finite, got {theta}")))
    }
}

/// Multinomial tallies via sequential conditional binomials.
pub(crate) fn sample_multinomial<R: Rng + ?Sized>(probs: &[f64], m: u64, rng: &mut R) -> Vec<u64> {
    let mut tallies = vec![0u64; probs.len()];
    let mut remaining = m;
    let mut rest = 1.0;
    let last = probs.len() - 1;
    for (mu, &p) in probs.iter().enumerate().take(last) {
        if remaining == 0 {
            break;
        }
        let q = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 1.0 };
        let k = if q <= 0.0 {
            0
        } else if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q)
                .expect("conditional probability lies in (0, 1)")
                .sample(rng)
        };
        tallies[mu] = k;
        remaining -= k;
        rest -= p;
    }
    tallies[last] += remaining;
    tallies
}

/// Single-qubit likelihood `[cos²(θ/2), sin²(θ/2)]`.
pub fn qubit_likelihood(theta: f64) -> Result<OutcomeDistribution> {
    LikelihoodModel::Qubit.probabilities(theta)
}

/// Twin-Fock likelihood `|d^{N/2}_{m,0}(θ)|²` over `m = -N/2..=N/2`.
pub fn twin_fock_likelihood(n: usize, theta: f64) -> Result<OutcomeDistribution> {
    LikelihoodModel::twin_fock(n)?.probabilities(theta)
}

pub fn fisher_information(model: &LikelihoodModel, theta: f64) -> Result<f64> {
    model.fisher_information(theta)
}

pub fn crb_variance(model: &LikelihoodModel, theta: f64, nu: u64) -> Result<f64> {
    if nu == 0 {
        return Err(Error::invalid("shot count must be >= 1"));
    }
    let f = model.fisher_information(theta)?;
    if f <= 0.0 {
        // F = 0: the bound is infinite, no finite CRB exists here.
        return Err(Error::SingularFisher { theta, outcome: 0 });
    }
    Ok(1.0 / (nu as f64 * f))
}

/// Standard quantum limit `1 / (ν N)`.
pub fn sql_variance(n: usize, nu: u64) -> Result<f64> {
    if n == 0 || nu == 0 {
        return Err(Error::invalid("probe and shot counts must be >= 1"));
    }
    Ok(1.0 / (nu as f64 * n as f64))
}

pub fn sample_frequencies<R: Rng + ?Sized>(
    model: &LikelihoodModel,
    theta: f64,
    m: u64,
    rng: &mut R,
) -> Result<FrequencyVector> {
    check_finite(theta)?;
    if m == 0 {
        return Err(Error::invalid("shot count must be >= 1"));
    }
    Ok(model.sample(theta, m, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;

    #[test]
    fn qubit_trivial_points() {
        assert_eq!(qubit_likelihood(0.0).unwrap().probs(), &[1.0, 0.0]);
        let p = qubit_likelihood(PI).unwrap();
        assert_abs_diff_eq!(p.probs()[0], 0.0, epsilon = 1e-30);
        assert_abs_diff_eq!(p.probs()[1], 1.0, epsilon = 1e-15);
        let p = qubit_likelihood(PI / 2.0).unwrap();
        assert_abs_diff_eq!(p.probs()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_phase_is_rejected() {
        assert!(matches!(qubit_likelihood(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            twin_fock_likelihood(4, f64::INFINITY),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn twin_fock_rejects_bad_particle_numbers() {
        for n in [0, 1, 3, 5, 66] {
            assert!(LikelihoodModel::twin_fock(n).is_err(), "n = {n}");
        }
    }

    #[test]
    fn twin_fock_identity_rotation() {
        let p = twin_fock_likelihood(4, 0.0).unwrap();
        for (mu, &x) in p.probs().iter().enumerate() {
            let expect = if mu == 2 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(x, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn twin_fock_outcome_order_is_symmetric() {
        // P(m) = P(-m) for the m = 0 column
        let p = twin_fock_likelihood(6, 0.77).unwrap();
        let q = p.probs();
        for mu in 0..q.len() {
            assert_abs_diff_eq!(q[mu], q[q.len() - 1 - mu], epsilon = 1e-13);
        }
    }

    #[test]
    fn fisher_at_eigenstate_points_uses_the_removable_limit() {
        let q = LikelihoodModel::Qubit;
        assert_abs_diff_eq!(q.fisher_information(0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.fisher_information(PI).unwrap(), 1.0, epsilon = 1e-12);
        let tf = LikelihoodModel::twin_fock(4).unwrap();
        for theta in [0.0, 1e-7, PI / 2.0] {
            let f = tf.fisher_information(theta).unwrap();
            assert!((f - 12.0).abs() < 1e-3, "F({theta}) = {f}");
        }
    }

    #[test]
    fn crb_scales_inversely_with_shots() {
        let tf = LikelihoodModel::twin_fock(4).unwrap();
        let a = tf.crb_variance(0.4, 10).unwrap();
        let b = tf.crb_variance(0.4, 20).unwrap();
        assert_abs_diff_eq!(a / b, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            LikelihoodModel::Qubit.crb_variance(1.0, 100).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        assert!(crb_variance(&tf, 0.4, 0).is_err());
    }

    #[test]
    fn sql_values() {
        assert_eq!(sql_variance(4, 1).unwrap(), 0.25);
        assert_eq!(sql_variance(1, 50).unwrap(), 1.0 / 50.0);
        assert!(sql_variance(0, 1).is_err());
        assert!(sql_variance(1, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_exact_at_eigenstates() {
        let q = LikelihoodModel::Qubit;
        let mut rng = rng_from(3);
        for m in [1, 7, 1000] {
            let fv = sample_frequencies(&q, 0.0, m, &mut rng).unwrap();
            assert_eq!(fv.tallies(), &[m, 0]);
            assert_eq!(fv.freqs(), vec![1.0, 0.0]);
        }
        let a = sample_frequencies(&q, 1.1, 500, &mut rng_from(9)).unwrap();
        let b = sample_frequencies(&q, 1.1, 500, &mut rng_from(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_frequencies(&q, 1.1, 0, &mut rng_from(9)).is_err());
    }

    #[test]
    fn frequency_vector_invariants() {
        let fv = FrequencyVector::from_tallies(vec![3, 1, 0]).unwrap();
        assert_eq!(fv.shots(), 4);
        assert_eq!(fv.freqs().iter().sum::<f64>(), 1.0);
        assert!(FrequencyVector::from_tallies(vec![0, 0]).is_err());
        assert!(FrequencyVector::from_tallies(vec![5]).is_err());
    }

    #[test]
    fn model_spec_text_round_trip() {
        for spec in [ModelSpec::Qubit, ModelSpec::TwinFock { n: 4 }] {
            assert_eq!(spec.to_string().parse::<ModelSpec>().unwrap(), spec);
        }
        assert!("qutrit".parse::<ModelSpec>().is_err());
    }
}
