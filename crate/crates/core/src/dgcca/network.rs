use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer composition of a view network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLayout {
    /// Linear -> Sigmoid -> BatchNorm.
    #[default]
    LinearSigmoidBatchNorm,
    /// Linear map only; reduces deep GCCA to linear GCCA on `W x + b`.
    LinearOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One Linear -> Sigmoid -> BatchNorm block mapping a view into the shared
/// output width.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewNetwork {
    /// `o x d`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub layout: BlockLayout,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Intermediates of a train-mode forward pass needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: DMatrix<f64>,
    activation: DMatrix<f64>,
    normalized: DMatrix<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
    inv_std: DVector<f64>,
}

/// Gradients with the same shapes as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

impl ParamGrads {
    /// Flattened as weight (column-major), bias, gamma, beta.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .chain(self.gamma.iter())
            .chain(self.beta.iter())
            .copied()
            .collect()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ViewNetwork {
    /// Uniform weights in `[-1/sqrt(d), 1/sqrt(d)]`, zero bias, unit gain,
    /// zero shift, running statistics `(0, 1)`.
    pub fn init(input_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = DMatrix::from_fn(output_dim, input_dim, |_, _| rng.gen_range(-bound..=bound));
        Self {
            weight,
            bias: DVector::zeros(output_dim),
            gamma: DVector::from_element(output_dim, 1.0),
            beta: DVector::zeros(output_dim),
            running_mean: DVector::zeros(output_dim),
            running_var: DVector::from_element(output_dim, 1.0),
            layout: BlockLayout::default(),
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + 3 * self.output_dim()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input rows, got {}",
                self.input_dim(),
                x.nrows()
            )));
        }
        Ok(())
    }

    fn affine(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = &self.weight * x;
        for mut col in a.column_iter_mut() {
            col += &self.bias;
        }
        a
    }

    /// Train-mode forward with batch statistics; does not touch running
    /// statistics.
    pub fn forward_train(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        self.check_input(x)?;
        let b = x.ncols();
        if b < 2 {
            return Err(Error::Invalid(format!(
                "train-mode forward needs a batch of at least 2, got {b}"
            )));
        }
        let a = self.affine(x);
        let o = self.output_dim();
        if self.layout == BlockLayout::LinearOnly {
            let cache = ForwardCache {
                input: x.clone(),
                activation: a.clone(),
                normalized: DMatrix::zeros(0, 0),
                batch_mean: DVector::zeros(o),
                batch_var: DVector::zeros(o),
                inv_std: DVector::zeros(o),
            };
            return Ok((a, cache));
        }
        let s = a.map(sigmoid);
        let mean = s.column_sum() / b as f64;
        let mut centered = s.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let var = centered.map(|v| v * v).column_sum() / b as f64;
        let inv_std = var.map(|v| 1.0 / (v + self.bn_eps).sqrt());
        let mut normalized = centered;
        for (i, mut row) in normalized.row_iter_mut().enumerate() {
            row *= inv_std[i];
        }
        let mut out = normalized.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row.apply(|v| *v = self.gamma[i] * *v + self.beta[i]);
        }
        let cache = ForwardCache {
            input: x.clone(),
            activation: s,
            normalized,
            batch_mean: mean,
            batch_var: var,
            inv_std,
        };
        Ok((out, cache))
    }

    /// Eval-mode forward using running statistics.
    pub fn forward_eval(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let a = self.affine(x);
        if self.layout == BlockLayout::LinearOnly {
            return Ok(a);
        }
        let mut out = a.map(sigmoid);
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let scale = self.gamma[i] / (self.running_var[i] + self.bn_eps).sqrt();
            let shift = self.beta[i] - self.running_mean[i] * scale;
            row.apply(|v| *v = *v * scale + shift);
        }
        Ok(out)
    }

    /// Forward pass; train mode also folds the batch statistics into the
    /// running estimates.
    pub fn forward(&mut self, x: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let (out, cache) = self.forward_train(x)?;
                self.update_running_stats(&cache);
                Ok(out)
            }
        }
    }

    /// Exponential moving average of batch mean and unbiased batch variance.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if self.layout == BlockLayout::LinearOnly {
            return;
        }
        let b = cache.input.ncols() as f64;
        let m = self.bn_momentum;
        let unbiased = &cache.batch_var * (b / (b - 1.0));
        self.running_mean = &self.running_mean * (1.0 - m) + &cache.batch_mean * m;
        self.running_var = &self.running_var * (1.0 - m) + unbiased * m;
    }

    /// Backpropagates `grad_out` (`o x B`) through the block.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> ParamGrads {
        let x = &cache.input;
        let b = x.ncols() as f64;
        let o = self.output_dim();
        let (grad_pre, gamma, beta) = match self.layout {
            BlockLayout::LinearOnly => (grad_out.clone(), DVector::zeros(o), DVector::zeros(o)),
            BlockLayout::LinearSigmoidBatchNorm => {
                let xhat = &cache.normalized;
                let d_gamma = grad_out.component_mul(xhat).column_sum();
                let d_beta = grad_out.column_sum();
                let mut grad_act = DMatrix::zeros(o, x.ncols());
                for i in 0..o {
                    let dxhat = grad_out.row(i) * self.gamma[i];
                    let sum = dxhat.sum();
                    let dot = dxhat.dot(&xhat.row(i));
                    let k = cache.inv_std[i] / b;
                    for c in 0..x.ncols() {
                        grad_act[(i, c)] = k * (b * dxhat[c] - sum - xhat[(i, c)] * dot);
                    }
                }
                let s = &cache.activation;
                let grad_pre = grad_act.zip_map(s, |g, v| g * v * (1.0 - v));
                (grad_pre, d_gamma, d_beta)
            }
        };
        ParamGrads {
            weight: &grad_pre * x.transpose(),
            bias: grad_pre.column_sum(),
            gamma,
            beta,
        }
    }

    /// Plain gradient descent step.
    pub fn apply_sgd(&mut self, grads: &ParamGrads, learning_rate: f64) {
        self.weight -= &grads.weight * learning_rate;
        self.bias -= &grads.bias * learning_rate;
        if self.layout == BlockLayout::LinearSigmoidBatchNorm {
            self.gamma -= &grads.gamma * learning_rate;
            self.beta -= &grads.beta * learning_rate;
        }
    }

    /// Parameters flattened in the order of [`ParamGrads::to_flat`].
    pub fn params_flat(&self) -> Vec<f64> {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .chain(self.gamma.iter())
            .chain(self.beta.iter())
            .copied()
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let w = self.weight.len();
        let o = self.output_dim();
        assert_eq!(flat.len(), w + 3 * o, "parameter vector length");
        self.weight.as_mut_slice().copy_from_slice(&flat[..w]);
        self.bias.as_mut_slice().copy_from_slice(&flat[w..w + o]);
        self.gamma.as_mut_slice().copy_from_slice(&flat[w + o..w + 2 * o]);
        self.beta.as_mut_slice().copy_from_slice(&flat[w + 2 * o..]);
    }

    pub fn check_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
            && self.running_mean.iter().all(|v| v.is_finite())
            && self.running_var.iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}
