//! Phase grids, label priors and synthetic training sets.
//!
//! A training set is built by drawing a label `θ_j` from the prior and then
//! `m` shots at that label, repeated `M_total` times. Records keep the
//! integer tallies so frequencies and `m` are recovered exactly.
//!
//! # File format
//!
//! ```text
//! # qsense training-set v1
//! # model: qubit
//! # grid: 10 3.141592653589793
//! # prior: gaussian 1.5707963267948966 0.5
//! # sampling: iid
//! # shots: 1000
//! # seed: 42
//! # records: 3
//! 4,612,388
//! 0,1000,0
//! 7,91,909
//! ```
//!
//! Each record line is `j,m_0,...,m_{D-1}`: the label index followed by the
//! outcome tallies. Floats in the header use the shortest representation
//! that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::models::{FrequencyVector, LikelihoodModel, ModelSpec};
use crate::seed::rng_from;
use crate::{Error, Result};

const MAGIC: &str = "# qsense training-set v1";

/// `d` uniformly spaced labels `θ_j = j·L/(d-1)` on `[0, L]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    points: usize,
    extent: f64,
}

impl PhaseGrid {
    pub fn new(points: usize, extent: f64) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid("a phase grid needs at least two points"));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::invalid(format!("grid extent must be positive, got {extent}")));
        }
        Ok(Self { points, extent })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Grid spacing `δθ = L/(d-1)`.
    pub fn spacing(&self) -> f64 {
        self.extent / (self.points - 1) as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.theta(j)).collect()
    }
}

/// Shape of a label prior before it is evaluated on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorKind {
    Flat,
    /// `exp[-(θ - mean)² / (2 variance)]`.
    Gaussian { mean: f64, variance: f64 },
    /// Uniform on `[0, cutoff]`, zero beyond.
    Step { cutoff: f64 },
    /// Explicit (unnormalised) weights, one per grid point.
    Custom { weights: Vec<f64> },
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorKind::Flat => write!(f, "flat"),
            PriorKind::Gaussian { mean, variance } => write!(f, "gaussian {mean:?} {variance:?}"),
            PriorKind::Step { cutoff } => write!(f, "step {cutoff:?}"),
            PriorKind::Custom { weights } => {
                write!(f, "custom")?;
                for w in weights {
                    write!(f, " {w:?}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let name = parts.next().unwrap_or("");
        let nums: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {p:?}"))))
            .collect::<Result<_>>()?;
        match (name, nums.as_slice()) {
            ("flat", []) => Ok(PriorKind::Flat),
            ("gaussian", &[mean, variance]) => Ok(PriorKind::Gaussian { mean, variance }),
            ("step", &[cutoff]) => Ok(PriorKind::Step { cutoff }),
            ("custom", w) if !w.is_empty() => Ok(PriorKind::Custom { weights: w.to_vec() }),
            _ => Err(Error::invalid(format!("unknown prior {s:?}"))),
        }
    }
}

/// Normalised prior weights aligned with a [`PhaseGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    kind: PriorKind,
    weights: Vec<f64>,
}

impl Prior {
    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }
}

/// Evaluates `kind` at the grid points and renormalises.
pub fn make_prior(kind: PriorKind, grid: &PhaseGrid) -> Result<Prior> {
    let thetas = grid.thetas();
    let raw: Vec<f64> = match &kind {
        PriorKind::Flat => vec![1.0; grid.points()],
        PriorKind::Gaussian { mean, variance } => {
            if !(variance.is_finite() && *variance > 0.0) || !mean.is_finite() {
                return Err(Error::invalid("gaussian prior needs a finite mean and variance > 0"));
            }
            thetas
                .iter()
                .map(|t| (-(t - mean).powi(2) / (2.0 * variance)).exp())
                .collect()
        }
        PriorKind::Step { cutoff } => {
            if !(*cutoff > 0.0 && *cutoff <= grid.extent() * (1.0 + 1e-12)) {
                return Err(Error::invalid(format!(
                    "step cutoff must lie in (0, {}], got {cutoff}",
                    grid.extent()
                )));
            }
            // grid points are computed as j·δθ; tolerate an ulp at the cutoff
            let edge = cutoff + 1e-12 * grid.extent();
            thetas.iter().map(|&t| if t <= edge { 1.0 } else { 0.0 }).collect()
        }
        PriorKind::Custom { weights } => {
            if weights.len() != grid.points() {
                return Err(Error::invalid(format!(
                    "custom prior has {} weights for {} grid points",
                    weights.len(),
                    grid.points()
                )));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::invalid("custom prior weights must be finite and >= 0"));
            }
            weights.clone()
        }
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegeneratePrior);
    }
    let weights = raw.iter().map(|w| w / total).collect();
    Ok(Prior { kind, weights })
}

/// Fisher information of the prior, `∫ dθ [∂_θ P(θ)]² / P(θ)`, from central
/// differences of the continuum density `w_j / δθ` over interior points.
pub fn prior_fisher_information(prior: &Prior, grid: &PhaseGrid) -> Result<f64> {
    if matches!(prior.kind, PriorKind::Step { .. }) {
        return Err(Error::NonDifferentiablePrior("step prior".into()));
    }
    if prior.weights.len() != grid.points() {
        return Err(Error::invalid("prior and grid sizes differ"));
    }
    if grid.points() < 3 {
        return Err(Error::NonDifferentiablePrior("grid has no interior points".into()));
    }
    let h = grid.spacing();
    let density: Vec<f64> = prior.weights.iter().map(|w| w / h).collect();
    let mut total = 0.0;
    for j in 1..grid.points() - 1 {
        let slope = (density[j + 1] - density[j - 1]) / (2.0 * h);
        if density[j] > 0.0 {
            total += slope * slope / density[j] * h;
        } else if slope != 0.0 {
            return Err(Error::NonDifferentiablePrior(format!(
                "zero density with non-zero slope at grid point {j}"
            )));
        }
    }
    Ok(total)
}

/// How labels are assigned to records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSampling {
    /// Each record's label is an independent draw from the prior.
    #[default]
    Iid,
    /// `M_j = M_total·P(θ_j)` rounded by largest remainder.
    FixedQuota,
}

impl LabelSampling {
    fn as_str(self) -> &'static str {
        match self {
            LabelSampling::Iid => "iid",
            LabelSampling::FixedQuota => "fixed_quota",
        }
    }
}

/// One training example: a label index and the measured tallies.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub label: usize,
    pub fv: FrequencyVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    model: ModelSpec,
    grid: PhaseGrid,
    prior: Prior,
    sampling: LabelSampling,
    shots: u64,
    seed: u64,
    records: Vec<Record>,
}

impl TrainingSet {
    pub fn model(&self) -> ModelSpec {
        self.model
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn sampling(&self) -> LabelSampling {
        self.sampling
    }

    /// Shots per record, `m`.
    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_theta(&self, record: &Record) -> f64 {
        self.grid.theta(record.label)
    }

    /// Realised `M_j` per grid point.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.points()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Header block of the record file (every line starts with `#`).
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "# model: {}", self.model);
        let _ = writeln!(s, "# grid: {} {:?}", self.grid.points, self.grid.extent);
        let _ = writeln!(s, "# prior: {}", self.prior.kind);
        let _ = writeln!(s, "# sampling: {}", self.sampling.as_str());
        let _ = writeln!(s, "# shots: {}", self.shots);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# records: {}", self.records.len());
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header();
        for r in &self.records {
            let _ = write!(s, "{}", r.label);
            for t in r.fv.tallies() {
                let _ = write!(s, ",{t}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(Error::parse(1, "missing training-set magic line")),
        }
        let mut fields: Vec<(usize, String, String)> = Vec::new();
        let mut body = Vec::new();
        for (i, line) in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                if !body.is_empty() {
                    return Err(Error::parse(i + 1, "header line after records"));
                }
                let (k, v) = rest
                    .split_once(": ")
                    .ok_or_else(|| Error::parse(i + 1, "expected `# key: value`"))?;
                fields.push((i + 1, k.to_string(), v.to_string()));
            } else if !line.is_empty() {
                body.push((i + 1, line));
            }
        }
        let get = |key: &str| -> Result<(usize, &str)> {
            fields
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(l, _, v)| (*l, v.as_str()))
                .ok_or_else(|| Error::parse(0, format!("missing header field {key:?}")))
        };
        let wrap = |line: usize| move |e: Error| Error::parse(line, e.to_string());

        let (l, v) = get("model")?;
        let model: ModelSpec = v.parse().map_err(wrap(l))?;
        let (l, v) = get("grid")?;
        let grid = {
            let mut it = v.split_whitespace();
            let d = it.next().and_then(|x| x.parse().ok());
            let ext = it.next().and_then(|x| x.parse().ok());
            match (d, ext, it.next()) {
                (Some(d), Some(ext), None) => PhaseGrid::new(d, ext).map_err(wrap(l))?,
                _ => return Err(Error::parse(l, "expected `grid: <points> <extent>`")),
            }
        };
        let (l, v) = get("prior")?;
        let prior = make_prior(v.parse().map_err(wrap(l))?, &grid).map_err(wrap(l))?;
        let (l, v) = get("sampling")?;
        let sampling = match v {
            "iid" => LabelSampling::Iid,
            "fixed_quota" => LabelSampling::FixedQuota,
            _ => return Err(Error::parse(l, format!("unknown sampling {v:?}"))),
        };
        let parse_u64 = |key: &str| -> Result<u64> {
            let (l, v) = get(key)?;
            v.parse().map_err(|_| Error::parse(l, format!("bad {key} {v:?}")))
        };
        let shots = parse_u64("shots")?;
        let seed = parse_u64("seed")?;
        let count = parse_u64("records")? as usize;

        let dim = model.build()?.outcome_count();
        let mut records = Vec::with_capacity(count);
        for (l, line) in body {
            let nums: Vec<u64> = line
                .split(',')
                .map(|x| x.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(l, "record fields must be non-negative integers"))?;
            if nums.len() != dim + 1 {
                return Err(Error::parse(l, format!("expected {} fields", dim + 1)));
            }
            let label = nums[0] as usize;
            if label >= grid.points() {
                return Err(Error::parse(l, format!("label {label} is off the grid")));
            }
            let fv = FrequencyVector::from_tallies(nums[1..].to_vec()).map_err(wrap(l))?;
            if fv.shots() != shots {
                return Err(Error::parse(l, format!("record has {} shots, header says {shots}", fv.shots())));
            }
            records.push(Record { label, fv });
        }
        if records.len() != count {
            return Err(Error::parse(0, format!("header says {count} records, found {}", records.len())));
        }
        Ok(Self {
            model,
            grid,
            prior,
            sampling,
            shots,
            seed,
            records,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Draws `total` records: a label from the prior, then `m` shots there.
pub fn generate_training_set(
    model: &LikelihoodModel,
    grid: &PhaseGrid,
    prior: &Prior,
    total: usize,
    m: u64,
    seed: u64,
) -> Result<TrainingSet> {
    generate_training_set_with(model, grid, prior, total, m, seed, LabelSampling::Iid)
}

pub fn generate_training_set_with(
    model: &LikelihoodModel,
    grid: &PhaseGrid,
    prior: &Prior,
    total: usize,
    m: u64,
    seed: u64,
    sampling: LabelSampling,
) -> Result<TrainingSet> {
    if total == 0 || m == 0 {
        return Err(Error::invalid("record count and shots must be >= 1"));
    }
    if prior.weights.len() != grid.points() {
        return Err(Error::invalid("prior and grid sizes differ"));
    }
    let mut rng = rng_from(seed);
    let dim = model.outcome_count();
    let probs: Vec<Vec<f64>> = grid
        .thetas()
        .iter()
        .map(|&t| {
            let mut p = vec![0.0; dim];
            model.fill_probs(t, &mut p);
            p
        })
        .collect();
    let labels: Vec<usize> = match sampling {
        LabelSampling::Iid => {
            let dist = WeightedIndex::new(&prior.weights).map_err(|_| Error::DegeneratePrior)?;
            (0..total).map(|_| dist.sample(&mut rng)).collect()
        }
        LabelSampling::FixedQuota => fixed_quotas(&prior.weights, total)
            .into_iter()
            .enumerate()
            .flat_map(|(j, n)| std::iter::repeat_n(j, n))
            .collect(),
    };
    let records = labels
        .into_iter()
        .map(|label| {
            let tallies = crate::models::sample_multinomial(&probs[label], m, &mut rng);
            let fv = FrequencyVector::from_tallies(tallies).expect("m >= 1 shots");
            Record { label, fv }
        })
        .collect();
    Ok(TrainingSet {
        model: model.spec(),
        grid: *grid,
        prior: prior.clone(),
        sampling,
        shots: m,
        seed,
        records,
    })
}

/// Largest-remainder apportionment of `total` records to the weights.
fn fixed_quotas(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        quotas[j] += 1;
    }
    quotas
}
