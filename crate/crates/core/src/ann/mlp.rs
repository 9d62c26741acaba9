use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};

use crate::data::TrainingSet;
use crate::estimators::Estimator;
use crate::models::FrequencyVector;
use crate::seed::rng_from;
use crate::{Error, Result};

/// One dense layer; `weights` has shape `(fan_in, fan_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Weights and biases of a `D → hidden… → 1` network. Hidden layers use
/// the rectifier, the output is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    seed: u64,
}

/// Gradients with the same layout as [`MlpParams`].
pub type Gradients = Vec<Layer>;

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::invalid(format!("layer {i}: bias length differs from fan-out")));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::invalid(format!("layer {i}: fan-in differs from previous fan-out")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|w| !w.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: non-finite parameter")));
            }
        }
        if layers.last().map(Layer::fan_out) != Some(1) {
            return Err(Error::invalid("output width must be 1"));
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Seed the parameters were initialised from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Layer::fan_out).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Outputs for a batch of inputs, one row per example.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array1<f64> {
        let mut a = inputs.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|x| x.max(0.0));
            }
            a = z;
        }
        a.index_axis_move(Axis(1), 0)
    }

    pub fn forward_slice(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_width() {
            return Err(Error::invalid(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_width()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)[0])
    }

    pub fn forward(&self, fv: &FrequencyVector) -> Result<f64> {
        self.forward_slice(&fv.freqs())
    }
}

impl Estimator for MlpParams {
    fn estimate(&self, fv: &FrequencyVector) -> Result<f64> {
        self.forward(fv)
    }

    fn estimate_batch(&self, fvs: &[FrequencyVector]) -> Vec<Result<f64>> {
        let d = self.input_width();
        if fvs.iter().any(|fv| fv.len() != d) {
            return fvs.iter().map(|fv| self.forward(fv)).collect();
        }
        let mut x = Array2::zeros((fvs.len(), d));
        for (mut row, fv) in x.rows_mut().into_iter().zip(fvs) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = fv.freq(k);
            }
        }
        self.forward_batch(x.view()).into_iter().map(Ok).collect()
    }
}

/// Fan-in scaled zero-mean normal weights (variance `2/fan_in`), zero biases.
pub fn init_network(input_width: usize, hidden: &[usize], seed: u64) -> Result<MlpParams> {
    if input_width == 0 || hidden.contains(&0) {
        return Err(Error::invalid("layer widths must be >= 1"));
    }
    let mut rng = rng_from(seed);
    let widths: Vec<usize> = std::iter::once(input_width)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive scale");
            Layer {
                weights: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    MlpParams::from_layers(layers, seed)
}

/// Network inputs (relative frequencies) and labels of a training set.
pub fn training_arrays(ts: &TrainingSet) -> (Array2<f64>, Array1<f64>) {
    let dim = ts.records().first().map_or(0, |r| r.fv.len());
    let mut x = Array2::zeros((ts.len(), dim));
    let mut y = Array1::zeros(ts.len());
    for (i, r) in ts.records().iter().enumerate() {
        for k in 0..dim {
            x[(i, k)] = r.fv.freq(k);
        }
        y[i] = ts.label_theta(r);
    }
    (x, y)
}

/// Mean of `(Θ_W(f) - θ)²` over the rows.
pub fn mse_cost(params: &MlpParams, inputs: ArrayView2<f64>, targets: ArrayView1<f64>) -> Result<f64> {
    if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
        return Err(Error::invalid("cost needs a nonempty batch with one target per row"));
    }
    if inputs.ncols() != params.input_width() {
        return Err(Error::invalid("input width differs from the network's"));
    }
    let out = params.forward_batch(inputs);
    Ok(Zip::from(&out)
        .and(&targets)
        .fold(0.0, |acc, o, t| acc + (o - t) * (o - t))
        / targets.len() as f64)
}

/// Batch MSE and its exact gradient with respect to every parameter.
pub fn backward(
    params: &MlpParams,
    inputs: ArrayView2<f64>,
    targets: ArrayView1<f64>,
) -> Result<(f64, Gradients)> {
    if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
        return Err(Error::invalid("gradient needs a nonempty batch with one target per row"));
    }
    if inputs.ncols() != params.input_width() {
        return Err(Error::invalid("input width differs from the network's"));
    }
    let n = inputs.nrows() as f64;
    let layers = params.layers();
    let last = layers.len() - 1;

    // activations[i] is the input to layer i
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
    activations.push(inputs.to_owned());
    let mut out = Array2::zeros((0, 0));
    for (i, l) in layers.iter().enumerate() {
        let mut z = activations[i].dot(&l.weights);
        z += &l.bias;
        if i < last {
            z.mapv_inplace(|x| x.max(0.0));
            activations.push(z);
        } else {
            out = z;
        }
    }
    let residual = &out.column(0) - &targets;
    let cost = residual.dot(&residual) / n;

    let mut delta = (residual * (2.0 / n)).insert_axis(Axis(1));
    let mut grads: Vec<Layer> = Vec::with_capacity(layers.len());
    for i in (0..layers.len()).rev() {
        let gw = activations[i].t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut prev = delta.dot(&layers[i].weights.t());
            // rectifier derivative: the stored activation is zero where the unit was off
            Zip::from(&mut prev)
                .and(&activations[i])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = prev;
        }
        grads.push(Layer { weights: gw, bias: gb });
    }
    grads.reverse();
    Ok((cost, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn zero_network(d: usize, h: usize) -> MlpParams {
        let mut p = init_network(d, &[h], 1).unwrap();
        for l in p.layers_mut() {
            l.weights.fill(0.0);
        }
        p
    }

    #[test]
    fn equal_seeds_give_identical_networks() {
        assert_eq!(init_network(2, &[16, 8], 5).unwrap(), init_network(2, &[16, 8], 5).unwrap());
        assert_ne!(init_network(2, &[16], 5).unwrap(), init_network(2, &[16], 6).unwrap());
    }

    #[test]
    fn zero_weights_output_the_output_bias() {
        let mut p = zero_network(3, 4);
        let fv = FrequencyVector::from_tallies(vec![1, 2, 3]).unwrap();
        assert_eq!(p.forward(&fv).unwrap(), 0.0);
        p.layers_mut()[1].bias[0] = 0.7;
        assert_eq!(p.forward(&fv).unwrap(), 0.7);
    }

    #[test]
    fn he_initialisation_variance() {
        let p = init_network(1024, &[1024], 11).unwrap();
        let w = &p.layers()[0].weights;
        let mean = w.mean().unwrap();
        let var = w.mapv(|x| (x - mean).powi(2)).mean().unwrap();
        let expect = 2.0 / 1024.0;
        assert!((var / expect - 1.0).abs() < 0.2, "variance {var} vs {expect}");
        assert!(p.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = init_network(2, &[4], 1).unwrap();
        let fv = FrequencyVector::from_tallies(vec![1, 2, 3]).unwrap();
        assert!(matches!(p.forward(&fv), Err(Error::InvalidArgument(_))));
        assert!(init_network(2, &[0], 1).is_err());
    }

    #[test]
    fn negative_preactivations_are_cut() {
        // one hidden unit with weight -1: output = relu(-x) = 0 for x > 0
        let layers = vec![
            Layer { weights: array![[-1.0], [-1.0]], bias: array![0.0] },
            Layer { weights: array![[1.0]], bias: array![0.0] },
        ];
        let p = MlpParams::from_layers(layers, 0).unwrap();
        assert_eq!(p.forward_slice(&[0.3, 0.7]).unwrap(), 0.0);
    }

    #[test]
    fn output_bias_gradient_is_twice_the_mean_residual() {
        let p = init_network(2, &[5], 3).unwrap();
        let x = array![[0.1, 0.9], [0.5, 0.5], [0.8, 0.2]];
        let y = array![0.3, 1.1, 2.0];
        let out = p.forward_batch(x.view());
        let expect = 2.0 * (&out - &y).mean().unwrap();
        let (_, g) = backward(&p, x.view(), y.view()).unwrap();
        assert_abs_diff_eq!(g[1].bias[0], expect, epsilon = 1e-14);
    }

    #[test]
    fn perfect_constant_fit_has_zero_gradient() {
        let mut p = zero_network(2, 3);
        p.layers_mut()[1].bias[0] = 0.4;
        let x = array![[0.2, 0.8], [0.6, 0.4]];
        let y = array![0.4, 0.4];
        let (cost, g) = backward(&p, x.view(), y.view()).unwrap();
        assert_eq!(cost, 0.0);
        for l in g {
            assert!(l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_network_cost_is_mean_squared_offset() {
        let mut p = zero_network(2, 3);
        p.layers_mut()[1].bias[0] = 1.0;
        let x = array![[0.2, 0.8], [0.6, 0.4], [1.0, 0.0]];
        let y = array![0.0, 1.0, 3.0];
        let expect = (1.0 + 0.0 + 4.0) / 3.0;
        assert_abs_diff_eq!(mse_cost(&p, x.view(), y.view()).unwrap(), expect, epsilon = 1e-15);
        assert!(mse_cost(&p, x.slice(ndarray::s![0..0, ..]), y.slice(ndarray::s![0..0])).is_err());
    }
}
