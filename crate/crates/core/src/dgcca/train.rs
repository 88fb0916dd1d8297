use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::dgcca_loss_and_grad;
use super::network::{BlockLayout, ViewNetwork};
use crate::error::{Error, Result};
use crate::feature_io::DatasetViews;
use crate::gcca::{project, solve_matrices, GccaSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgccaTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rank: usize,
    /// Width `o` shared by every view network.
    pub output_dim: usize,
    pub eps: f64,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Stop when the full-dataset objective improved by less than
    /// `min_delta` over this many epochs; 0 disables early stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub layout: BlockLayout,
}

impl Default for DgccaTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            batch_size: 32,
            epochs: 50,
            rank: 16,
            output_dim: 16,
            eps: 1e-8,
            seed: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            patience: 5,
            min_delta: 1e-6,
            layout: BlockLayout::default(),
        }
    }
}

impl DgccaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.rank == 0 {
            return bad("rank must be >= 1".into());
        }
        if self.rank > self.output_dim || self.rank > self.batch_size - 1 {
            return bad(format!(
                "rank {} must be <= min(batch_size - 1, output_dim) = {}",
                self.rank,
                (self.batch_size - 1).min(self.output_dim)
            ));
        }
        if self.output_dim >= self.batch_size {
            return bad(format!(
                "output_dim {} must be < batch_size {}: wider outputs make every batch covariance singular",
                self.output_dim, self.batch_size
            ));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be >= 0, got {}", self.eps));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("batchnorm momentum must be in [0, 1], got {}", self.bn_momentum));
        }
        if !(self.bn_eps > 0.0) {
            return bad("batchnorm epsilon must be > 0".into());
        }
        Ok(())
    }
}

/// Per-view networks with seeded uniform initialization.
pub fn init_model(view_dims: &[usize], output_dim: usize, rank: usize, seed: u64) -> Result<Vec<ViewNetwork>> {
    if output_dim < rank {
        return Err(Error::InvalidConfig(format!(
            "output dim {output_dim} is smaller than rank {rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(view_dims
        .iter()
        .map(|&d| ViewNetwork::init(d, output_dim, &mut rng))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDgcca {
    pub view_names: Vec<String>,
    pub networks: Vec<ViewNetwork>,
    /// Linear GCCA on the eval-mode outputs of the whole training set.
    pub solution: GccaSolution,
    /// Full-dataset objective before the first epoch.
    pub initial_loss: f64,
    /// Full-dataset objective after each completed epoch.
    pub loss_history: Vec<f64>,
    pub config: DgccaTrainConfig,
}

impl TrainedDgcca {
    pub fn view_index(&self, name: &str) -> Result<usize> {
        self.view_names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::Invalid(format!("model has no view {name}")))
    }

    /// Eval-mode network outputs for every view of `dataset`, matched by name.
    pub fn outputs(&self, dataset: &DatasetViews) -> Result<Vec<DMatrix<f64>>> {
        self.view_names
            .iter()
            .zip(&self.networks)
            .map(|(name, net)| {
                let view = dataset
                    .view(name)
                    .ok_or_else(|| Error::Invalid(format!("dataset lacks view {name}")))?;
                net.forward_eval(&view.matrix)
            })
            .collect()
    }

    /// Canonical projections `U_j^T (f_j(X_j) - mean_j)` for every view.
    pub fn canonical(&self, dataset: &DatasetViews) -> Result<Vec<DMatrix<f64>>> {
        self.outputs(dataset)?
            .iter()
            .enumerate()
            .map(|(j, out)| project(&self.solution, j, out))
            .collect()
    }
}

fn eval_outputs(nets: &[ViewNetwork], dataset: &DatasetViews) -> Result<Vec<DMatrix<f64>>> {
    nets.iter()
        .zip(dataset.views())
        .map(|(n, v)| n.forward_eval(&v.matrix))
        .collect()
}

fn full_solution(nets: &[ViewNetwork], dataset: &DatasetViews, config: &DgccaTrainConfig) -> Result<GccaSolution> {
    let outs = eval_outputs(nets, dataset)?;
    let refs: Vec<&DMatrix<f64>> = outs.iter().collect();
    solve_matrices(&refs, config.rank, config.eps)
}

/// Minibatch SGD on the GCCA objective of the network outputs.
pub fn train(dataset: &DatasetViews, config: &DgccaTrainConfig) -> Result<TrainedDgcca> {
    config.validate()?;
    let n = dataset.n_utts();
    if n < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "{n} utterances is fewer than the batch size {}",
            config.batch_size
        )));
    }
    let dims: Vec<usize> = dataset.views().iter().map(|v| v.dims()).collect();
    let mut nets = init_model(&dims, config.output_dim, config.rank, config.seed)?;
    for net in &mut nets {
        net.layout = config.layout;
        net.bn_momentum = config.bn_momentum;
        net.bn_eps = config.bn_eps;
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let initial_loss = full_solution(&nets, dataset, config)?.objective;
    let mut history: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < config.rank + 1 || batch.len() < 2 {
                continue;
            }
            let mut outputs = Vec::with_capacity(nets.len());
            let mut caches = Vec::with_capacity(nets.len());
            for (net, view) in nets.iter().zip(dataset.views()) {
                let x = view.matrix.select_columns(batch.iter());
                let (out, cache) = net.forward_train(&x)?;
                outputs.push(out);
                caches.push(cache);
            }
            let step = dgcca_loss_and_grad(&outputs, config.rank, config.eps).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            if !step.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite batch loss".into(),
                });
            }
            for ((net, cache), grad) in nets.iter_mut().zip(&caches).zip(&step.grads) {
                let pg = net.backward(cache, grad);
                net.apply_sgd(&pg, config.learning_rate);
                net.update_running_stats(cache);
            }
        }
        if let Some(j) = nets.iter().position(|n| !n.check_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("non-finite parameters in view network {j}"),
            });
        }
        let objective = full_solution(&nets, dataset, config)
            .map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?
            .objective;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite full-dataset objective".into(),
            });
        }
        debug!("epoch {epoch}: objective {objective:.6}");
        history.push(objective);

        let p = config.patience;
        if p > 0 && history.len() > p {
            let split = history.len() - p;
            let before = history[..split].iter().copied().fold(initial_loss, f64::min);
            let recent = history[split..].iter().copied().fold(f64::INFINITY, f64::min);
            if before - recent < config.min_delta {
                debug!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let solution = full_solution(&nets, dataset, config)?;
    Ok(TrainedDgcca {
        view_names: dataset.names(),
        networks: nets,
        solution,
        initial_loss,
        loss_history: history,
        config: config.clone(),
    })
}

/// Per-utterance cross-view scores with a count of degenerate utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub scores: Vec<f64>,
    /// Utterances whose standardized canonical vector had zero norm in
    /// either view; their score is 0.
    pub zero_norm: usize,
}

fn standardize_rows(m: &mut DMatrix<f64>) {
    let n = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            row.apply(|v| *v = (*v - mean) / sd);
        } else {
            row.fill(0.0);
        }
    }
}

/// Cosine similarity, per utterance, between the standardized canonical
/// vectors of two views.
pub fn per_utterance_scores(trained: &TrainedDgcca, dataset: &DatasetViews, pair: (&str, &str)) -> Result<PairScores> {
    let (a, b) = (trained.view_index(pair.0)?, trained.view_index(pair.1)?);
    let canon = trained.canonical(dataset)?;
    Ok(cosine_scores(&canon[a], &canon[b]))
}

/// Column-wise cosine after standardizing each row over all columns.
pub fn cosine_scores(a: &DMatrix<f64>, b: &DMatrix<f64>) -> PairScores {
    let mut a = a.clone();
    let mut b = b.clone();
    standardize_rows(&mut a);
    standardize_rows(&mut b);
    let mut zero_norm = 0;
    let scores = a
        .column_iter()
        .zip(b.column_iter())
        .map(|(x, y)| {
            let (nx, ny) = (x.norm(), y.norm());
            if nx == 0.0 || ny == 0.0 {
                zero_norm += 1;
                0.0
            } else {
                (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    if zero_norm > 0 {
        warn!("{zero_norm} utterances had a zero-norm canonical vector; scored 0");
    }
    PairScores { scores, zero_norm }
}

/// Mean over view pairs and canonical dimensions of the cosine between
/// centered projection rows. 1 means every view lands on the same shared
/// coordinates.
pub fn cross_view_agreement(projected: &[DMatrix<f64>]) -> f64 {
    let centered: Vec<DMatrix<f64>> = projected
        .iter()
        .map(|p| crate::gcca::center_rows(p).0)
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..centered.len() {
        for b in a + 1..centered.len() {
            for k in 0..centered[a].nrows() {
                let (x, y) = (centered[a].row(k), centered[b].row(k));
                let denom = x.norm() * y.norm();
                total += if denom > 0.0 { x.dot(&y) / denom } else { 0.0 };
                count += 1;
            }
        }
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::ViewMatrix;
    use rand::Rng;

    fn dataset(views: Vec<DMatrix<f64>>) -> DatasetViews {
        let n = views[0].ncols();
        let ids: Vec<String> = (0..n).map(|i| format!("u{i:04}")).collect();
        DatasetViews::new(
            views
                .into_iter()
                .enumerate()
                .map(|(j, m)| ViewMatrix::new(format!("v{j}"), m, ids.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn small_config() -> DgccaTrainConfig {
        DgccaTrainConfig {
            rank: 2,
            output_dim: 6,
            batch_size: 16,
            epochs: 5,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        DgccaTrainConfig::default().validate().unwrap();
        let base = DgccaTrainConfig::default();
        for bad in [
            DgccaTrainConfig { learning_rate: 0.0, ..base.clone() },
            DgccaTrainConfig { batch_size: 1, ..base.clone() },
            DgccaTrainConfig { rank: 32, output_dim: 40, batch_size: 32, ..base.clone() },
            DgccaTrainConfig { output_dim: 64, ..base.clone() },
            DgccaTrainConfig { rank: 17, ..base.clone() },
            DgccaTrainConfig { epochs: 0, ..base.clone() },
            DgccaTrainConfig { eps: -1.0, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn init_model_checks() {
        assert!(init_model(&[4], 2, 3, 0).is_err());
        let a = init_model(&[4, 5], 8, 2, 11).unwrap();
        assert_eq!(a, init_model(&[4, 5], 8, 2, 11).unwrap());
        assert_eq!(a[0].weight.shape(), (8, 4));
        assert_eq!(a[1].weight.shape(), (8, 5));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = dataset(vec![random(4, 64, 1), random(3, 64, 2), random(5, 64, 3)]);
        let a = train(&ds, &small_config()).unwrap();
        let b = train(&ds, &small_config()).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.networks, b.networks);
        assert!(a.loss_history.iter().all(|l| l.is_finite()));
        assert!(a.solution.orthonormality_error() < 1e-6);
        let other = train(&ds, &DgccaTrainConfig { seed: 1, ..small_config() }).unwrap();
        assert_ne!(a.loss_history, other.loss_history);
    }

    #[test]
    fn identical_views_descend() {
        let x = random(4, 48, 5);
        let ds = dataset(vec![x.clone(), x]);
        let cfg = DgccaTrainConfig {
            rank: 2,
            output_dim: 4,
            batch_size: 48,
            epochs: 200,
            learning_rate: 1e-3,
            patience: 0,
            ..Default::default()
        };
        let t = train(&ds, &cfg).unwrap();
        assert_eq!(t.loss_history.len(), 200);
        assert!(*t.loss_history.last().unwrap() <= t.initial_loss);
    }

    #[test]
    fn training_requires_enough_utterances() {
        let ds = dataset(vec![random(3, 10, 1), random(3, 10, 2)]);
        assert!(matches!(train(&ds, &small_config()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let ds = dataset(vec![random(3, 32, 1) * 1e3, random(3, 32, 2)]);
        let cfg = DgccaTrainConfig {
            learning_rate: 1e200,
            ..small_config()
        };
        let r = train(&ds, &cfg);
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn identical_networks_and_data_score_one() {
        let x = random(4, 40, 7);
        let ds = dataset(vec![x.clone(), x]);
        let mut t = train(&ds, &small_config()).unwrap();
        t.networks[1] = t.networks[0].clone();
        let outs = t.outputs(&ds).unwrap();
        t.solution = solve_matrices(&[&outs[0], &outs[1]], 2, 1e-8).unwrap();
        let s = per_utterance_scores(&t, &ds, ("v0", "v1")).unwrap();
        assert_eq!(s.scores.len(), 40);
        assert!(s.scores.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(per_utterance_scores(&t, &ds, ("v0", "nope")).is_err());
    }

    #[test]
    fn cosine_score_properties() {
        let a = random(3, 20, 9);
        let s = cosine_scores(&a, &(-&a));
        assert!(s.scores.iter().all(|v| (v + 1.0).abs() < 1e-12));
        let b = random(3, 20, 10);
        let s = cosine_scores(&a, &b);
        assert!(s.scores.iter().all(|v| (-1.0..=1.0).contains(v)));
        // a constant column pair after standardization: zero norm
        let mut c = DMatrix::zeros(2, 3);
        c[(0, 1)] = 1.0;
        c[(1, 1)] = 1.0;
        let s = cosine_scores(&c, &c);
        assert_eq!(s.scores.len(), 3);
        assert_eq!(s.zero_norm, 0);
        let z = DMatrix::from_element(2, 3, 4.0);
        let s = cosine_scores(&z, &c);
        assert_eq!(s.zero_norm, 3);
        assert!(s.scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trained_scores_are_bounded() {
        let ds = dataset(vec![random(4, 64, 1), random(3, 64, 2), random(5, 64, 3)]);
        let t = train(&ds, &small_config()).unwrap();
        let s = per_utterance_scores(&t, &ds, ("v0", "v2")).unwrap();
        assert!(s.scores.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn agreement_ignores_row_offsets() {
        let a = random(3, 50, 11);
        let mut b = a.clone();
        b.row_mut(0).add_scalar_mut(5.0);
        assert!((cross_view_agreement(&[a.clone(), b]) - 1.0).abs() < 1e-12);
        let c = random(3, 50, 12);
        assert!(cross_view_agreement(&[a, c]).abs() < 0.5);
    }
}
