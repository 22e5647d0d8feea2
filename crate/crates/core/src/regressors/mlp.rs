//! Feed-forward perceptron trained by full-batch Adagrad.
//!
//! Inputs and outputs are min-max scaled to [0, 1] per column before
//! training; the scaling travels with the model. Hidden layers use the
//! configured activation, the output layer is linear, and the loss is the
//! mean squared error over all samples and outputs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_data, mse, Family, FittedModel, ModelParams};
use crate::error::{HpmError, Result};
use crate::serde_matrix;

const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Logistic,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub initial_learning_rate: f64,
    pub epochs: usize,
    pub plateau_tolerance: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub activation: Activation,
    pub weight_init_seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: vec![10, 10, 10],
            initial_learning_rate: 1.0,
            epochs: 5000,
            plateau_tolerance: 1e-8,
            plateau_patience: 2,
            lr_decay_factor: 0.5,
            activation: Activation::Tanh,
            weight_init_seed: 0,
        }
    }
}

impl MlpConfig {
    /// The 150 000-epoch training schedule of the original deep-drawing study.
    pub fn full_schedule() -> Self {
        MlpConfig {
            epochs: 150_000,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(HpmError::InvalidArgument(
                "hidden layer widths must be >= 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(HpmError::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(HpmError::InvalidArgument(
                "lr_decay_factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.initial_learning_rate > 0.0) {
            return Err(HpmError::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_out x fan_in`.
    #[serde(with = "serde_matrix::matrix")]
    pub weights: DMatrix<f64>,
    #[serde(with = "serde_matrix::vector")]
    pub bias: DVector<f64>,
}

/// Layer stack operating in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn initialize(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Network { layers, activation }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer (weights column-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter vector length");
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + b]);
            at += b;
        }
    }

    /// Activations of every layer for a batch (rows = samples); the first
    /// entry is the input itself.
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].clone() * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if i < last {
                let act = self.activation;
                z.apply(|v| *v = act.apply(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_all(x).pop().expect("network has layers")
    }

    /// Mean squared error and its gradient with respect to [`Network::params`].
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let acts = self.forward_all(x);
        let out = acts.last().expect("network has layers");
        let diff = out - y;
        let count = diff.len() as f64;
        let loss = diff.norm_squared() / count;

        let mut delta = diff * (2.0 / count);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let prev = &acts[i];
            let gw = delta.transpose() * prev;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if i > 0 {
                let mut back = &delta * &self.layers[i].weights;
                let act = self.activation;
                back.zip_apply(prev, |d, a| *d *= act.derivative_from_output(a));
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (loss, flat)
    }
}

/// Per-column affine map onto [lower, 1]; constant columns keep unit range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
    pub lower: f64,
}

impl ColumnScaling {
    fn fit(m: &DMatrix<f64>, lower: f64) -> Self {
        let (min, range) = m
            .column_iter()
            .map(|c| {
                let lo = c.min();
                let span = c.max() - lo;
                (lo, if span > 0.0 { span } else { 1.0 })
            })
            .unzip();
        ColumnScaling { min, range, lower }
    }

    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            self.lower + (1.0 - self.lower) * (m[(r, c)] - self.min[c]) / self.range[c]
        })
    }

    fn invert(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            (m[(r, c)] - self.lower) / (1.0 - self.lower) * self.range[c] + self.min[c]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub network: Network,
    pub input_scaling: ColumnScaling,
    pub output_scaling: ColumnScaling,
    /// Training MSE in the [0, 1] scaled output space.
    pub scaled_training_mse: f64,
    pub final_learning_rate: f64,
    pub learning_rate_decays: usize,
}

impl MlpParams {
    pub fn predict(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let scaled = self.network.forward(&self.input_scaling.apply(inputs));
        self.output_scaling.invert(&scaled)
    }
}

/// Full-batch Adagrad training with plateau-triggered learning-rate decay.
pub fn fit_mlp(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    config: &MlpConfig,
) -> Result<FittedModel> {
    check_training_data(inputs, outputs)?;
    config.validate()?;
    if inputs.nrows() < 2 {
        return Err(HpmError::InvalidArgument(
            "MLP training needs at least 2 samples".into(),
        ));
    }
    // Zero-centred inputs keep tanh units out of saturation after the large
    // first Adagrad steps; outputs stay on [0, 1] so the scaled MSE is in
    // unit-range terms.
    let input_scaling = ColumnScaling::fit(inputs, -1.0);
    let output_scaling = ColumnScaling::fit(outputs, 0.0);
    let x = input_scaling.apply(inputs);
    let y = output_scaling.apply(outputs);

    let mut sizes = vec![inputs.ncols()];
    sizes.extend_from_slice(&config.hidden_layers);
    sizes.push(outputs.ncols());
    let mut net = Network::initialize(&sizes, config.activation, config.weight_init_seed);

    let mut params = net.params();
    let mut accum = vec![0.0; params.len()];
    let mut lr = config.initial_learning_rate;
    let mut previous = f64::INFINITY;
    let mut stalled = 0;
    let mut decays = 0;
    for epoch in 0..config.epochs {
        let (loss, grad) = net.loss_and_gradient(&x, &y);
        if !loss.is_finite() {
            return Err(HpmError::Diverged { epoch });
        }
        if previous - loss < config.plateau_tolerance {
            stalled += 1;
            if stalled >= config.plateau_patience {
                lr *= config.lr_decay_factor;
                decays += 1;
                stalled = 0;
            }
        } else {
            stalled = 0;
        }
        previous = loss;
        for ((w, g), acc) in params.iter_mut().zip(&grad).zip(accum.iter_mut()) {
            *acc += g * g;
            *w -= lr * g / (acc.sqrt() + ADAGRAD_EPS);
        }
        net.set_params(&params);
    }

    let scaled_pred = net.forward(&x);
    let scaled_training_mse = mse(&scaled_pred, &y);
    if !scaled_training_mse.is_finite() {
        return Err(HpmError::Diverged {
            epoch: config.epochs,
        });
    }
    let mlp = MlpParams {
        network: net,
        input_scaling,
        output_scaling,
        scaled_training_mse,
        final_learning_rate: lr,
        learning_rate_decays: decays,
    };
    let training_mse = mse(&mlp.predict(inputs), outputs);
    Ok(FittedModel {
        family: Family::Mlp,
        penalty: 0.0,
        input_dim: inputs.ncols(),
        output_dim: outputs.ncols(),
        params: ModelParams::Mlp(mlp),
        training_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.0..1.0));
        let y = DMatrix::from_fn(6, 1, |_, _| rng.random_range(0.0..1.0));
        let h = 1e-5;
        for point in 0..20 {
            let mut net = Network::initialize(&[2, 2, 1], Activation::Tanh, point);
            let p: Vec<f64> = (0..net.n_params())
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            net.set_params(&p);
            let (_, grad) = net.loss_and_gradient(&x, &y);
            for k in 0..p.len() {
                let mut plus = p.clone();
                plus[k] += h;
                let mut minus = p.clone();
                minus[k] -= h;
                net.set_params(&plus);
                let lp = net.loss_and_gradient(&x, &y).0;
                net.set_params(&minus);
                let lm = net.loss_and_gradient(&x, &y).0;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
                assert!(
                    rel < 1e-4,
                    "point {point} param {k}: fd {fd} vs analytic {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn learns_xor() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let y = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 1.0, 0.0]);
        let config = MlpConfig {
            initial_learning_rate: 0.1,
            ..Default::default()
        };
        let m = fit_mlp(&x, &y, &config).unwrap();
        assert!(m.training_mse < 1e-2, "xor mse {}", m.training_mse);
    }

    #[test]
    fn single_epoch_predicts_finite_values() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
        let cfg = MlpConfig {
            epochs: 1,
            ..Default::default()
        };
        let m = fit_mlp(&x, &y, &cfg).unwrap();
        let probe = DMatrix::from_fn(11, 1, |r, _| r as f64 / 10.0);
        let p = m.predict(&probe).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p, m.predict(&probe).unwrap());
    }

    #[test]
    fn rejects_degenerate_configs() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = x.clone();
        assert!(fit_mlp(
            &x,
            &y,
            &MlpConfig {
                epochs: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_mlp(
            &x,
            &y,
            &MlpConfig {
                hidden_layers: vec![3, 0],
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_mlp(
            &x.rows(0, 1).into_owned(),
            &y.rows(0, 1).into_owned(),
            &MlpConfig::default()
        )
        .is_err());
    }
}
