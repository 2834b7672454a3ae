use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::NetFeatures;
use super::model::{DelayModelWeights, ModelConfig, TrainBatch};
use super::NetSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Target pairs per mini-batch; whole nets are kept together.
    pub batch_pairs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub huber_delta: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_pairs: 256,
            max_epochs: 200,
            patience: 20,
            huber_delta: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: DelayModelWeights,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pairs: usize,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// Error statistics of predictions against labels.
pub fn evaluate(pred: &[f64], truth: &[f64]) -> Metrics {
    assert_eq!(pred.len(), truth.len());
    let n = truth.len();
    if n == 0 {
        return Metrics {
            pairs: 0,
            mae: 0.0,
            rmse: 0.0,
            r2: 0.0,
        };
    }
    let nf = n as f64;
    let mean = truth.iter().sum::<f64>() / nf;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        abs += (p - t).abs();
        sq += (p - t) * (p - t);
        tot += (t - mean) * (t - mean);
    }
    Metrics {
        pairs: n,
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        r2: if tot > 0.0 { 1.0 - sq / tot } else { 0.0 },
    }
}

impl DelayModelWeights {
    /// Clamped predictions and metrics over labelled nets.
    pub fn evaluate(&self, samples: &[NetSample]) -> Metrics {
        let refs: Vec<&NetFeatures> = samples.iter().map(|s| &s.features).collect();
        let (pred, _) = self.predict_batched(&refs, 1024);
        let pred: Vec<f64> = pred.into_iter().flatten().collect();
        let truth: Vec<f64> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        evaluate(&pred, &truth)
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(w: &DelayModelWeights) -> Self {
        let shape: Vec<Vec<f64>> = w.params().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            m: shape.clone(),
            v: shape,
            t: 0,
        }
    }

    fn step(&mut self, w: &mut DelayModelWeights, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (p, tensor) in w.params_mut().into_iter().enumerate() {
            for i in 0..tensor.data.len() {
                let g = grads[p][i];
                let m = &mut self.m[p][i];
                let v = &mut self.v[p][i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                tensor.data[i] -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mini-batch Adam on mean Huber loss. Returns the weights with the lowest
/// validation MAE; stops after `patience` epochs without improvement.
pub fn train_model(
    train: &[NetSample],
    val: &[NetSample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let train_pairs: usize = train.iter().map(NetSample::pairs).sum();
    if train_pairs == 0 || val.iter().map(NetSample::pairs).sum::<usize>() == 0 {
        return Err(Error::Validation(
            "training and validation splits must be non-empty".into(),
        ));
    }
    if !(cfg.huber_delta > 0.0) {
        return Err(Error::Validation("huber delta must be positive".into()));
    }
    if let Some(bad) = train
        .iter()
        .chain(val)
        .find(|s| s.labels.iter().any(|&l| !(l > 0.0 && l.is_finite())))
    {
        return Err(Error::Validation(format!("net `{}` has a non-positive label", bad.key)));
    }

    let mut w = DelayModelWeights::init(model, cfg.seed);
    w.fit_normalization(train.iter().map(|s| &s.features));
    w.out_b.data[0] = train.iter().flat_map(|s| s.labels.iter()).sum::<f64>() / train_pairs as f64;

    let mut adam = Adam::new(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (w.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let mut pairs = 0;
            while end < order.len() && (pairs < cfg.batch_pairs || end == start) {
                pairs += train[order[end]].pairs();
                end += 1;
            }
            let nets: Vec<(&NetFeatures, &[f64])> = order[start..end]
                .iter()
                .map(|&i| (&train[i].features, &train[i].labels[..]))
                .collect();
            start = end;
            let batch = TrainBatch::new(&nets, &w.norm);
            let (loss, grads) = w.loss_and_gradient(&batch, cfg.huber_delta);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "training loss became non-finite in epoch {epoch} (batch {batches})"
                )));
            }
            adam.step(&mut w, &grads, cfg);
            loss_sum += loss;
            batches += 1;
        }
        let val_mae = w.evaluate(val).mae;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_mae,
        };
        log::debug!(
            "epoch {epoch}: train loss {:.6} val MAE {:.6}",
            stats.train_loss,
            val_mae
        );
        history.push(stats);
        if val_mae < best.1 {
            best = (w.clone(), val_mae, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        weights: best.0,
        history,
        best_epoch: best.2,
        best_val_mae: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::features::{NetEnvFeatures, NetGraph, PinRoutingFeatures, VERTEX_DIM};

    fn constant_set(n: usize, c: f64, offset: usize) -> Vec<NetSample> {
        (0..n)
            .map(|i| {
                let i = i + offset;
                let fanout = 1 + i % 4;
                let mut v = [0.0; VERTEX_DIM];
                v[0] = (i % 13) as f64;
                v[2] = 1.0;
                NetSample {
                    key: format!("n{i}"),
                    features: NetFeatures {
                        graph: NetGraph::star(vec![v; fanout + 1]),
                        env: NetEnvFeatures {
                            hpwl: (i % 9) as f64,
                            width: 0.0,
                            length: (i % 9) as f64,
                            fanout: fanout as f64,
                            avg_routing_density: 0.5,
                        },
                        pins: (0..fanout)
                            .map(|k| PinRoutingFeatures {
                                dx: (i % 9) as f64,
                                dy: 0.0,
                                net_index: k as f64,
                                io_crossing: 0.0,
                                dsp_crossing: 0.0,
                                bram_crossing: 0.0,
                                avg_pin_density: 1.0,
                            })
                            .collect(),
                    },
                    labels: vec![c; fanout],
                }
            })
            .collect()
    }

    #[test]
    fn fits_a_constant() {
        let c = 0.4;
        let train = constant_set(300, c, 0);
        let val = constant_set(60, c, 300);
        let cfg = TrainConfig {
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let out = train_model(&train, &val, &ModelConfig::default(), &cfg).unwrap();
        assert!(out.history.len() <= 50);
        assert!(out.weights.evaluate(&val).mae < 0.01 * c, "{:?}", out.history.last());
    }

    #[test]
    fn deterministic_under_seed() {
        let train = constant_set(40, 0.3, 0);
        let val = constant_set(10, 0.3, 40);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let m = ModelConfig {
            hidden: 8,
            reduced: 4,
            residual_dim: 8,
            ..ModelConfig::default()
        };
        let a = train_model(&train, &val, &m, &cfg).unwrap();
        let b = train_model(&train, &val, &m, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        let train = constant_set(5, 0.3, 0);
        assert!(train_model(&train, &[], &ModelConfig::default(), &TrainConfig::default()).is_err());
        let mut bad = constant_set(5, 0.3, 5);
        bad[0].labels[0] = -1.0;
        assert!(train_model(&train, &bad, &ModelConfig::default(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn metrics_of_perfect_fit() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, 1.0));
        let m = evaluate(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert_eq!(m.r2, 0.0);
    }
}
