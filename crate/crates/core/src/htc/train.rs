use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accumulate_grads, check_targets, forward_repr, HtcError, HtcParams, TreeShape};
use crate::seed;
use crate::taxonomy::DEPTH;

/// Samples per gradient chunk. Chunks are reduced in order, so the result
/// does not depend on how many threads computed them.
const CHUNK: usize = 8;

/// A precomputed representation with its per-layer class targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub h: Vec<f64>,
    pub targets: [usize; DEPTH],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub workers: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-3,
            batch_size: 32,
            patience: 5,
            seed: 0,
            workers: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Leaf-layer accuracy.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: HtcParams,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
}

struct Adam {
    m: HtcParams,
    v: HtcParams,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut HtcParams, grads: &HtcParams, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

fn batch_grads(batch: &[&TrainSample], params: &HtcParams, shape: &TreeShape) -> Result<(f64, HtcParams), HtcError> {
    let partial: Vec<Result<(f64, HtcParams), HtcError>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = HtcParams::zeros(params.d, shape);
            let mut loss = 0.0;
            for s in chunk {
                let out = forward_repr(&s.h, params, shape)?;
                loss += accumulate_grads(&out, &s.targets, params, shape, &mut g);
            }
            Ok((loss, g))
        })
        .collect();
    let mut total = HtcParams::zeros(params.d, shape);
    let mut loss = 0.0;
    for r in partial {
        let (l, g) = r?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    for t in total.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

/// Mean loss and leaf accuracy of `params` on `data`.
pub fn evaluate(data: &[TrainSample], params: &HtcParams, shape: &TreeShape) -> Result<(f64, f64), HtcError> {
    if data.is_empty() {
        return Err(HtcError::EmptyDataset);
    }
    let scored: Vec<Result<(f64, bool), HtcError>> = data
        .par_iter()
        .map(|s| {
            let out = forward_repr(&s.h, params, shape)?;
            Ok((out.loss(&s.targets), out.predicted()[DEPTH - 1] == s.targets[DEPTH - 1]))
        })
        .collect();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for r in scored {
        let (l, ok) = r?;
        loss += l;
        hits += ok as usize;
    }
    let n = data.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Mini-batch Adam with early stopping on validation loss.
///
/// With an empty validation set every epoch runs and the final parameters
/// are returned.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    shape: &TreeShape,
    d: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel, HtcError> {
    if train_set.is_empty() {
        return Err(HtcError::EmptyDataset);
    }
    for s in train_set.iter().chain(val_set) {
        if s.h.len() != d {
            return Err(HtcError::ShapeMismatch(format!("sample has {} values, expected {d}", s.h.len())));
        }
        check_targets(&s.targets, shape)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HtcError::Format(format!("thread pool: {e}")))?;
    pool.install(|| run(train_set, val_set, shape, d, cfg))
}

fn run(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    shape: &TreeShape,
    d: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel, HtcError> {
    let mut params = HtcParams::init(d, shape, cfg.seed);
    let mut adam = Adam {
        m: HtcParams::zeros(d, shape),
        v: HtcParams::zeros(d, shape),
        t: 0,
    };
    let mut best = (f64::INFINITY, 0usize, params.clone());
    if !val_set.is_empty() {
        best.0 = evaluate(val_set, &params, shape)?.0;
    }
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch_size = cfg.batch_size.max(1);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::rng_for(cfg.seed, &format!("epoch-{epoch}")));
        for idx in order.chunks(batch_size) {
            let batch: Vec<&TrainSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (_, grads) = batch_grads(&batch, &params, shape)?;
            adam.step(&mut params, &grads, cfg);
        }
        let (train_loss, train_accuracy) = evaluate(train_set, &params, shape)?;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(val_set, &params, shape)?)
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.map(|v| v.0),
            val_accuracy: val.map(|v| v.1),
        });
        if let Some((vl, _)) = val {
            if vl < best.0 {
                best = (vl, epoch, params.clone());
            } else if epoch - best.1 >= cfg.patience {
                break;
            }
        }
    }

    if val_set.is_empty() {
        let best_epoch = history.len();
        return Ok(TrainedModel {
            params,
            history,
            best_epoch,
        });
    }
    Ok(TrainedModel {
        params: best.2,
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> TreeShape {
        TreeShape::new([1, 3, 3], [vec![vec![0, 1, 2]], vec![vec![0], vec![1], vec![2]]]).unwrap()
    }

    fn toy() -> Vec<TrainSample> {
        (0..30)
            .map(|i| {
                let c = i % 3;
                let mut h = vec![0.05 * (i as f64 / 30.0); 4];
                h[c] += 1.0;
                TrainSample { h, targets: [0, c, c] }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_initial_params() {
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let m = train(&toy(), &[], &shape(), 4, &cfg).unwrap();
        assert_eq!(m.params, HtcParams::init(4, &shape(), 0));
        assert!(m.history.windows(2).all(|w| w[0].train_loss == w[1].train_loss));
    }

    #[test]
    fn separable_toy_converges() {
        let cfg = TrainConfig {
            epochs: 200,
            lr: 1e-2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let m = train(&toy(), &[], &shape(), 4, &cfg).unwrap();
        assert!(m.history.last().unwrap().train_accuracy >= 0.95);
    }

    #[test]
    fn early_stopping_keeps_best() {
        let cfg = TrainConfig {
            epochs: 400,
            lr: 5e-2,
            patience: 2,
            ..TrainConfig::default()
        };
        let data = toy();
        // Validation labels contradict training labels, so validation loss rises.
        let val: Vec<TrainSample> = data
            .iter()
            .map(|s| TrainSample {
                h: s.h.clone(),
                targets: [0, (s.targets[1] + 1) % 3, (s.targets[2] + 1) % 3],
            })
            .collect();
        let m = train(&data, &val, &shape(), 4, &cfg).unwrap();
        assert!(m.history.len() < 400);
        let best_val = m
            .history
            .iter()
            .filter(|h| h.epoch == m.best_epoch)
            .map(|h| h.val_loss.unwrap())
            .next();
        if let Some(b) = best_val {
            assert!(m.history.iter().all(|h| h.val_loss.unwrap() >= b));
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let mk = |workers| TrainConfig {
            epochs: 5,
            batch_size: 16,
            workers,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&toy(), &[], &shape(), 4, &mk(1)).unwrap();
        let b = train(&toy(), &[], &shape(), 4, &mk(4)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_train_set() {
        assert!(matches!(
            train(&[], &[], &shape(), 4, &TrainConfig::default()),
            Err(HtcError::EmptyDataset)
        ));
    }
}
