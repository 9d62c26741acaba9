use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, mse_cost, training_arrays, MlpParams};
use crate::data::TrainingSet;
use crate::seed::rng_from;
use crate::{Error, Result};

/// Abort when the cost exceeds this multiple of `L²`.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, set_size: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > set_size {
            return Err(Error::invalid(format!(
                "batch size {} must lie in [1, {set_size}]",
                self.batch_size
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Full-training-set MSE recorded after every epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostHistory(pub Vec<f64>);

impl CostHistory {
    pub fn epochs(&self) -> usize {
        self.0.len()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: CostHistory,
    /// Whether the stopping target was reached before the epoch cap.
    pub saturated: bool,
}

struct Adam {
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
    step: i32,
}

impl Adam {
    fn new(params: &MlpParams) -> Self {
        let zeros = || {
            params
                .layers()
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut MlpParams, grads: &[super::Layer], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (cfg.learning_rate, cfg.epsilon);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), (mw, mb)), (vw, vb)) in params
            .layers_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(&g.weights)
                .for_each(apply);
            Zip::from(&mut layer.bias).and(mb).and(vb).and(&g.bias).for_each(apply);
        }
    }
}

/// Shared epoch loop. `stop` sees the 1-based epoch and the epoch's cost and
/// ends training when it returns true.
fn run(
    inputs: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    mut params: MlpParams,
    cfg: &TrainConfig,
    extent: f64,
    mut stop: impl FnMut(usize, f64) -> bool,
) -> Result<(MlpParams, CostHistory, bool)> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    cfg.validate(n)?;
    let limit = DIVERGENCE_FACTOR * extent * extent;
    let mut rng = rng_from(cfg.seed);
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let y = targets.select(Axis(0), chunk);
            let (_, grads) = backward(&params, x.view(), y.view())?;
            adam.update(&mut params, &grads, cfg);
        }
        let cost = mse_cost(&params, inputs, targets)?;
        if !cost.is_finite() || cost > limit {
            return Err(Error::Divergence { epoch, cost });
        }
        history.push(cost);
        if stop(epoch, cost) {
            return Ok((params, CostHistory(history), true));
        }
    }
    Ok((params, CostHistory(history), false))
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch ADAM.
pub fn train(dataset: &TrainingSet, params: MlpParams, cfg: &TrainConfig) -> Result<(MlpParams, CostHistory)> {
    let (x, y) = training_arrays(dataset);
    check_width(&params, x.ncols())?;
    let (params, history, _) = run(x.view(), y.view(), params, cfg, dataset.grid().extent(), |_, _| false)?;
    Ok((params, history))
}

/// Trains until the full-set cost drops to `slack · target` or the
/// `cfg.epochs` cap is reached.
pub fn train_until_crb(
    dataset: &TrainingSet,
    params: MlpParams,
    cfg: &TrainConfig,
    target: f64,
    slack: f64,
) -> Result<TrainOutcome> {
    if !(target > 0.0 && slack > 0.0) {
        return Err(Error::invalid("target and slack must be > 0"));
    }
    let (x, y) = training_arrays(dataset);
    check_width(&params, x.ncols())?;
    let threshold = slack * target;
    if mse_cost(&params, x.view(), y.view())? <= threshold {
        return Ok(TrainOutcome {
            params,
            history: CostHistory::default(),
            saturated: true,
        });
    }
    let (params, history, saturated) = run(
        x.view(),
        y.view(),
        params,
        cfg,
        dataset.grid().extent(),
        |_, cost| cost <= threshold,
    )?;
    Ok(TrainOutcome {
        params,
        history,
        saturated,
    })
}

fn check_width(params: &MlpParams, width: usize) -> Result<()> {
    if params.input_width() != width {
        return Err(Error::invalid(format!(
            "network takes {} inputs, training set has {width} outcomes",
            params.input_width()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::init_network;
    use crate::data::{generate_training_set, make_prior, PhaseGrid, PriorKind};
    use crate::models::LikelihoodModel;
    use std::f64::consts::PI;

    fn small_set() -> TrainingSet {
        let g = PhaseGrid::new(5, PI).unwrap();
        let p = make_prior(PriorKind::Flat, &g).unwrap();
        generate_training_set(&LikelihoodModel::Qubit, &g, &p, 200, 50, 4).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let ts = small_set();
        let p0 = init_network(2, &[8], 1).unwrap();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let (p1, h) = train(&ts, p0.clone(), &cfg).unwrap();
        assert_eq!(p0, p1);
        assert_eq!(h.epochs(), 3);
        assert!(h.as_slice().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_deterministic() {
        let ts = small_set();
        let cfg = TrainConfig { epochs: 4, batch_size: 16, seed: 9, ..Default::default() };
        let a = train(&ts, init_network(2, &[8], 1).unwrap(), &cfg).unwrap();
        let b = train(&ts, init_network(2, &[8], 1).unwrap(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn training_reduces_cost() {
        let ts = small_set();
        let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 3e-3, ..Default::default() };
        let (_, h) = train(&ts, init_network(2, &[32], 1).unwrap(), &cfg).unwrap();
        assert!(h.last().unwrap() < 0.2 * h.as_slice()[0].max(0.5), "{:?}", h.as_slice());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let ts = small_set();
        let p = init_network(2, &[4], 1).unwrap();
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { batch_size: 201, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { beta2: 0.0, ..Default::default() },
        ] {
            assert!(train(&ts, p.clone(), &cfg).is_err());
        }
        assert!(train(&ts, init_network(3, &[4], 1).unwrap(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let ts = small_set();
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e12, ..Default::default() };
        match train(&ts, init_network(2, &[8], 1).unwrap(), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_target_hits_the_cap() {
        let ts = small_set();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let out = train_until_crb(&ts, init_network(2, &[8], 1).unwrap(), &cfg, 1e-9, 0.01).unwrap();
        assert!(!out.saturated);
        assert_eq!(out.history.epochs(), 3);
    }

    #[test]
    fn already_saturated_network_trains_zero_epochs() {
        let ts = small_set();
        let p = init_network(2, &[8], 1).unwrap();
        let out = train_until_crb(&ts, p.clone(), &TrainConfig::default(), 1e6, 1.0).unwrap();
        assert!(out.saturated);
        assert_eq!(out.history.epochs(), 0);
        assert_eq!(out.params, p);
    }
}
