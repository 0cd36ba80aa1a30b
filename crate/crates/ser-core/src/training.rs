//! Training loop: per-batch max-length padding, cross-entropy, Adam with
//! global gradient-norm clipping, and best-dev-UA checkpoint retention.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureCacheEntry;
use crate::eval;
use crate::mat::Matrix;
use crate::model::{self, Batch, Checkpoint, ModelConfig, ModelError, ModelParams};
use crate::tensor::NamedTensorStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot pad an empty batch")]
    EmptyBatch,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("gradient/parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimizer and loop hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clipping threshold; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Per-feature z-scoring from training-split statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 30,
            seed: 0,
            standardize: true,
        }
    }
}

/// Adam moment estimates, one pair of tensors per parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: NamedTensorStore,
    pub v: NamedTensorStore,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.store.zeros_like(),
            v: params.store.zeros_like(),
            t: 0,
        }
    }
}

/// Pads variable-length sequences to the longest one in the batch.
pub fn pad_batch(utterances: &[&Matrix]) -> Result<Batch, TrainError> {
    if utterances.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let dim = utterances[0].cols();
    for u in utterances {
        if u.cols() != dim {
            return Err(TrainError::DimensionMismatch {
                expected: dim,
                got: u.cols(),
            });
        }
    }
    let lengths: Vec<usize> = utterances.iter().map(|u| u.rows()).collect();
    let t_max = *lengths.iter().max().unwrap();
    let mut batch = Batch::zeros(utterances.len(), t_max, dim, lengths);
    for (b, u) in utterances.iter().enumerate() {
        for t in 0..u.rows() {
            batch.frame_mut(b, t).copy_from_slice(u.row(t));
        }
    }
    Ok(batch)
}

/// Mean cross-entropy over the batch via max-shifted log-sum-exp, plus
/// `grad_logits = (softmax - onehot)/B`.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix), TrainError> {
    assert_eq!(logits.rows(), targets.len(), "one target per batch row");
    let classes = logits.cols();
    let b = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for (row, &target) in targets.iter().enumerate() {
        if target >= classes {
            return Err(TrainError::TargetOutOfRange { target, classes });
        }
        let z = logits.row(row);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - z[target];
        let g = grad.row_mut(row);
        for c in 0..classes {
            let softmax = (z[c] - max).exp() / sum_exp;
            g[c] = (softmax - if c == target { 1.0 } else { 0.0 }) / b;
        }
    }
    Ok((loss / b, grad))
}

/// Scales every tensor by `clip/norm` when the global L2 norm across all
/// tensors exceeds the threshold. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut NamedTensorStore, clip_norm: f64) -> f64 {
    assert!(clip_norm > 0.0, "clip threshold must be positive");
    let norm: f64 = grads
        .iter()
        .map(|t| t.data.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for t in grads.iter_mut() {
            for v in &mut t.data {
                *v *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &NamedTensorStore,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    state.t += 1;
    let bc1 = 1.0 - config.beta1.powi(state.t as i32);
    let bc2 = 1.0 - config.beta2.powi(state.t as i32);
    for p in params.store.iter_mut() {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| TrainError::ShapeMismatch(format!("gradient missing tensor {:?}", p.name)))?;
        if g.shape != p.shape {
            return Err(TrainError::ShapeMismatch(format!(
                "gradient for {:?} has shape {:?}, parameter is {:?}",
                p.name, g.shape, p.shape
            )));
        }
        let m = &mut state.m.get_mut(&p.name).unwrap().data;
        let v = &mut state.v.get_mut(&p.name).unwrap().data;
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Per-feature z-scoring fit on the training split only. Dimensions with a
/// near-zero spread keep scale 1 so the transform stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(entries: &[FeatureCacheEntry]) -> Self {
        let dim = entries.first().map_or(0, |e| e.features.cols());
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for e in entries {
            for t in 0..e.features.rows() {
                for (m, v) in mean.iter_mut().zip(e.features.row(t)) {
                    *m += v;
                }
            }
            count += e.features.rows();
        }
        let n = count.max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for e in entries {
            for t in 0..e.features.rows() {
                for (s, (v, m)) in var.iter_mut().zip(e.features.row(t).iter().zip(&mean)) {
                    let d = v - m;
                    *s += d * d;
                }
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn from_checkpoint(mean: &[f64], std: &[f64]) -> Self {
        Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for t in 0..out.rows() {
            for (j, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn unapply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for t in 0..out.rows() {
            for (j, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_wa: f64,
    pub dev_ua: f64,
    pub seconds: f64,
}

/// What `train` hands back: the best-dev-UA checkpoint and the epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_ua: f64,
}

/// Runs the full loop: per epoch a seeded reshuffle, padded batches, forward,
/// cross-entropy, backward, clip, Adam; dev WA/UA after every epoch with the
/// best-dev-UA parameters retained. Deterministic for a given seed.
pub fn train(
    train_set: &[FeatureCacheEntry],
    dev_set: &[FeatureCacheEntry],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    assert!(!train_set.is_empty(), "training set must be non-empty");
    for e in train_set.iter().chain(dev_set) {
        if e.features.cols() != model_config.d_in {
            return Err(TrainError::DimensionMismatch {
                expected: model_config.d_in,
                got: e.features.cols(),
            });
        }
        if e.label_index >= model_config.n_classes {
            return Err(TrainError::TargetOutOfRange {
                target: e.label_index,
                classes: model_config.n_classes,
            });
        }
    }

    let standardizer = if train_config.standardize {
        Some(Standardizer::fit(train_set))
    } else {
        None
    };
    let transform = |entries: &[FeatureCacheEntry]| -> Vec<(Matrix, usize)> {
        entries
            .iter()
            .map(|e| {
                let f = match &standardizer {
                    Some(s) => s.apply(&e.features),
                    None => e.features.clone(),
                };
                (f, e.label_index)
            })
            .collect()
    };
    let train_data = transform(train_set);
    let dev_data = transform(dev_set);

    let mut params = model::init_params(model_config, train_config.seed);
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);

    let mut best_params = params.clone();
    let mut best_dev_ua = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut log = Vec::with_capacity(train_config.max_epochs);

    for epoch in 0..train_config.max_epochs {
        let started = Instant::now();
        // Seeded Fisher-Yates reshuffle of the training order.
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size.max(1)) {
            let mats: Vec<&Matrix> = chunk.iter().map(|&i| &train_data[i].0).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train_data[i].1).collect();
            let batch = pad_batch(&mats)?;
            let (logits, trace) = model::forward(&params, model_config, &batch)?;
            let (loss, grad_logits) = cross_entropy(&logits, &targets)?;
            let mut grads = model::backward(&trace, &params, model_config, &grad_logits)?;
            if train_config.clip_norm.is_finite() {
                clip_global_norm(&mut grads, train_config.clip_norm);
            }
            adam_step(&mut params, &grads, &mut state, train_config)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_data.len() as f64;

        let (dev_wa, dev_ua) = if dev_data.is_empty() {
            (0.0, 0.0)
        } else {
            let predictions = predict_labels(&params, model_config, &dev_data, train_config.batch_size)?;
            let targets: Vec<usize> = dev_data.iter().map(|(_, l)| *l).collect();
            // Labels were range-checked above; predictions are argmax indices.
            let cm = eval::confusion_matrix(&predictions, &targets, model_config.n_classes)
                .expect("dev predictions align with targets");
            let scores = eval::compute_wa_ua(&cm).expect("dev set is non-empty");
            (scores.wa, scores.ua)
        };

        // Without a dev set there is nothing to select on; keep the latest
        // parameters instead of freezing at epoch zero.
        if dev_data.is_empty() || dev_ua > best_dev_ua {
            best_dev_ua = dev_ua;
            best_params = params.clone();
            best_epoch = Some(epoch);
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            dev_wa,
            dev_ua,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {train_loss:.4}, dev wa {dev_wa:.4}, dev ua {dev_ua:.4}"
        );
        on_epoch(&record);
        log.push(record);
    }

    // Zero epochs: hand back the initialized parameters.
    if best_epoch.is_none() {
        best_params = params;
        best_dev_ua = 0.0;
    }

    let checkpoint = Checkpoint {
        config: model_config.clone(),
        params: best_params,
        feature_mean: standardizer.as_ref().map(|s| s.mean.clone()),
        feature_std: standardizer.as_ref().map(|s| s.std.clone()),
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        best_dev_ua: if best_dev_ua.is_finite() { best_dev_ua } else { 0.0 },
    })
}

/// Argmax predictions over already-standardized feature matrices, processed
/// in deterministic batch order. Ties break toward the lower class index.
pub fn predict_labels(
    params: &ModelParams,
    config: &ModelConfig,
    data: &[(Matrix, usize)],
    batch_size: usize,
) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let mats: Vec<&Matrix> = chunk.iter().map(|(m, _)| m).collect();
        let batch = pad_batch(&mats)?;
        let (logits, _) = model::forward(params, config, &batch)?;
        for b in 0..logits.rows() {
            let row = logits.row(b);
            let mut best = 0usize;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}
