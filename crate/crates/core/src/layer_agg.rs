//! Softmax-weighted aggregation of multi-layer feature stacks.
//!
//! A stack is an `L x T x D` tensor (layers, frames, dims). Weights are kept
//! as unconstrained logits and normalized with a softmax, so every
//! aggregate is a convex combination of the layers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::{FeatureTensor, ViewMatrix};
use crate::gcca::{center_rows, solve_matrices};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

impl LayerWeights {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let normalized = softmax(&raw);
        Self { raw, normalized }
    }

    pub fn uniform(layers: usize) -> Self {
        Self::from_raw(vec![0.0; layers])
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn argmax(&self) -> usize {
        self.normalized
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0
    }

    /// Rejects deserialized weights whose two vectors disagree.
    pub fn validate(&self) -> Result<()> {
        if self.raw.is_empty() {
            return Err(Error::InvalidConfig("layer weights are empty".into()));
        }
        if self.raw.len() != self.normalized.len() {
            return Err(Error::InvalidConfig("raw/normalized length mismatch".into()));
        }
        if self.raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite layer logits".into()));
        }
        let expected = softmax(&self.raw);
        if expected.iter().zip(&self.normalized).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::InvalidConfig("normalized weights are not softmax(raw)".into()));
        }
        Ok(())
    }
}

fn stack_dims(stack: &FeatureTensor) -> Result<(usize, usize, usize)> {
    match *stack.shape() {
        [l, t, d] => Ok((l, t, d)),
        ref s => Err(Error::Shape(format!("layer stack must be 3-D, got {s:?}"))),
    }
}

/// `out[t, d] = sum_l w_l * stack[l, t, d]` with softmax-normalized `w`.
pub fn aggregate_layers(stack: &FeatureTensor, weights: &LayerWeights) -> Result<FeatureTensor> {
    let (layers, frames, dims) = stack_dims(stack)?;
    if weights.len() != layers {
        return Err(Error::Shape(format!(
            "{} layer weights for a stack of {layers} layers",
            weights.len()
        )));
    }
    let plane = frames * dims;
    let mut acc = vec![0.0f64; plane];
    for (l, &w) in weights.normalized().iter().enumerate() {
        let layer = &stack.data()[l * plane..(l + 1) * plane];
        for (a, &v) in acc.iter_mut().zip(layer) {
            *a += w * f64::from(v);
        }
    }
    FeatureTensor::new(vec![frames, dims], acc.into_iter().map(|v| v as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerFitConfig {
    /// Canonical dimensions in the correlation objective; clipped to what
    /// the data supports.
    pub rank: usize,
    pub step_size: f64,
    pub steps: usize,
    pub eps: f64,
    pub min_utterances: usize,
}

impl Default for LayerFitConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            step_size: 1e-2,
            steps: 200,
            eps: 1e-8,
            min_utterances: 32,
        }
    }
}

impl LayerFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("layer-fit rank must be >= 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig("layer-fit step size must be > 0".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidConfig("layer-fit eps must be >= 0".into()));
        }
        if self.min_utterances < 2 {
            return Err(Error::InvalidConfig("min_utterances must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    pub weights: LayerWeights,
    /// Objective before each step plus the final value (`steps + 1` entries).
    pub history: Vec<f64>,
}

/// Mean top-`r` canonical correlation between `x` and the target, and its
/// gradient with respect to the centered `x`.
fn correlation_and_grad(x: &DMatrix<f64>, target: &DMatrix<f64>, r: usize, eps: f64) -> Result<(f64, DMatrix<f64>)> {
    let sol = solve_matrices(&[x, target], r, eps)?;
    // for two views the eigenvalues are 1 + rho_k
    let value = sol.eigenvalues.iter().sum::<f64>() / r as f64 - 1.0;
    let (xc, _) = center_rows(x);
    let u = &sol.projections[0];
    // d(sum lambda)/dX = -2 (U U^T X - U G)
    let grad = (u * (u.transpose() * &xc) - u * &sol.g) * (-2.0 / r as f64);
    Ok((value, grad))
}

/// Fits layer logits by gradient ascent on the canonical correlation between
/// the aggregated, time-pooled stacks and `target`.
///
/// `stacks[i]` belongs to `target.utt_ids[i]`.
pub fn fit_layer_weights(stacks: &[FeatureTensor], target: &ViewMatrix, config: &LayerFitConfig) -> Result<LayerFit> {
    config.validate()?;
    let n = target.n_utts();
    if stacks.len() != n {
        return Err(Error::Shape(format!(
            "{} stacks for {n} target utterances",
            stacks.len()
        )));
    }
    if n < config.min_utterances {
        return Err(Error::Invalid(format!(
            "layer fitting needs at least {} utterances, got {n}",
            config.min_utterances
        )));
    }
    let (layers, _, dims) = stack_dims(&stacks[0])?;

    // pooling and aggregation are both linear, so pool each layer once
    let mut pooled: Vec<DMatrix<f64>> = vec![DMatrix::zeros(dims, n); layers];
    for (i, stack) in stacks.iter().enumerate() {
        let (l, t, d) = stack_dims(stack)?;
        if l != layers || d != dims {
            return Err(Error::Shape(format!(
                "stack {i} is {l}x{t}x{d}, expected {layers}xTx{dims}"
            )));
        }
        for (layer, x) in pooled.iter_mut().enumerate() {
            let base = layer * t * d;
            for frame in 0..t {
                let row = &stack.data()[base + frame * d..base + (frame + 1) * d];
                for (k, &v) in row.iter().enumerate() {
                    x[(k, i)] += f64::from(v);
                }
            }
            let inv = 1.0 / t as f64;
            x.column_mut(i).scale_mut(inv);
        }
    }

    let (target_c, _) = center_rows(&target.matrix);
    if target_c.iter().all(|&v| v == 0.0) {
        return Err(Error::Invalid("target view has zero variance".into()));
    }
    let pooled_c: Vec<DMatrix<f64>> = pooled.iter().map(|x| center_rows(x).0).collect();

    let rank = config.rank.min(dims).min(target.dims()).min(n - 1);
    let mut raw = vec![0.0f64; layers];
    let mut history = Vec::with_capacity(config.steps + 1);

    for step in 0..=config.steps {
        let w = softmax(&raw);
        let x = pooled
            .iter()
            .zip(&w)
            .fold(DMatrix::zeros(dims, n), |acc, (xl, &wl)| acc + xl * wl);
        let (value, grad_x) = correlation_and_grad(&x, &target.matrix, rank, config.eps)?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: step,
                detail: "non-finite correlation".into(),
            });
        }
        history.push(value);
        if step == config.steps {
            break;
        }
        let grad_w: Vec<f64> = pooled_c.iter().map(|xl| grad_x.dot(xl)).collect();
        let mean: f64 = w.iter().zip(&grad_w).map(|(a, b)| a * b).sum();
        for ((z, &wl), &gl) in raw.iter_mut().zip(&w).zip(&grad_w) {
            *z += config.step_size * wl * (gl - mean);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: step,
                detail: "non-finite layer logits".into(),
            });
        }
    }

    Ok(LayerFit {
        weights: LayerWeights::from_raw(raw),
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub layer: usize,
    pub label: String,
    pub weight: f64,
    /// 1 for the largest weight.
    pub rank: usize,
    pub is_max: bool,
}

/// One row per layer in layer order, with descending-weight rank and an
/// argmax flag.
pub fn weight_report(weights: &LayerWeights, labels: &[String]) -> Result<Vec<WeightRow>> {
    if labels.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} layers",
            labels.len(),
            weights.len()
        )));
    }
    let w = weights.normalized();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    let mut rank = vec![0; w.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    let top = weights.argmax();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, label)| WeightRow {
            layer: i,
            label: label.clone(),
            weight: w[i],
            rank: rank[i],
            is_max: i == top,
        })
        .collect())
}

pub fn report_csv(rows: &[WeightRow]) -> String {
    let mut out = String::from("layer,label,weight,rank,is_max\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.layer, r.label, r.weight, r.rank, r.is_max
        ));
    }
    out
}
