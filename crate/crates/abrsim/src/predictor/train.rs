//! Training the stall-response network: stratified splitting, balanced
//! undersampling, mini-batch gradient descent, and holdout evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::features::FeatureMatrix;
use crate::predictor::net::{BackwardScratch, ExitNet, ForwardCache, Grads, EXIT_CLASS};
use crate::rng;

/// One labeled example.
#[derive(Debug, Clone)]
pub struct TrainRow {
    pub features: FeatureMatrix,
    pub exit_label: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Undersample the majority class to parity before training.
    pub balanced: bool,
    /// Fraction held out for evaluation (stratified).
    pub holdout_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 1,
            balanced: true,
            holdout_frac: 0.2,
        }
    }
}

/// Binary classification metrics with exit as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: ExitNet,
    pub metrics: EvalMetrics,
    pub final_loss: f64,
    /// Class counts actually trained on (after balancing).
    pub train_exits: usize,
    pub train_continues: usize,
}

/// Train a fresh network on labeled rows; deterministic per seed.
pub fn train(rows: &[TrainRow], cfg: &TrainConfig) -> Result<TrainReport> {
    let exits: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].exit_label).collect();
    let continues: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].exit_label).collect();
    if exits.is_empty() || continues.is_empty() {
        return Err(Error::SingleClass);
    }

    // stratified holdout split
    let mut split_rng = rng::substream(cfg.seed, &[rng::tags::TRAIN, 0]);
    let (train_exit, test_exit) = split_class(&exits, cfg.holdout_frac, &mut split_rng);
    let (train_cont, test_cont) = split_class(&continues, cfg.holdout_frac, &mut split_rng);

    // balanced undersampling of the majority class
    let mut balance_rng = rng::substream(cfg.seed, &[rng::tags::TRAIN, 1]);
    let (mut train_exit, mut train_cont) = (train_exit, train_cont);
    if cfg.balanced {
        let target = train_exit.len().min(train_cont.len());
        undersample(&mut train_exit, target, &mut balance_rng);
        undersample(&mut train_cont, target, &mut balance_rng);
    }
    let mut train_idx: Vec<usize> = train_exit.iter().chain(&train_cont).copied().collect();
    if train_idx.is_empty() {
        return Err(Error::SingleClass);
    }

    let mut net = ExitNet::init(rng::derive_seed(cfg.seed, &[rng::tags::TRAIN, 2]));
    let mut epoch_rng = rng::substream(cfg.seed, &[rng::tags::TRAIN, 3]);
    let mut cache = ForwardCache::new();
    let mut scratch = BackwardScratch::new();
    let mut grads = Grads::zeros_like(&net);
    let mut final_loss = 0.0;

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut epoch_rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size.max(1)) {
            grads.reset();
            for &i in batch {
                let row = &rows[i];
                let probs = net.forward(&row.features, &mut cache);
                epoch_loss += ExitNet::loss(&probs, row.exit_label);
                net.backward(&cache, row.exit_label, &mut grads, &mut scratch);
            }
            net.apply_sgd(&grads, cfg.learning_rate, batch.len());
        }
        final_loss = epoch_loss / train_idx.len() as f64;
        if !final_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }

    let holdout: Vec<&TrainRow> = test_exit
        .iter()
        .chain(&test_cont)
        .map(|&i| &rows[i])
        .collect();
    let metrics = evaluate_rows(&net, holdout.iter().copied());

    Ok(TrainReport {
        net,
        metrics,
        final_loss,
        train_exits: train_exit.len(),
        train_continues: train_cont.len(),
    })
}

/// Holdout metrics with argmax decisions.
pub fn evaluate_rows<'a>(net: &ExitNet, rows: impl Iterator<Item = &'a TrainRow>) -> EvalMetrics {
    let mut cache = ForwardCache::new();
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for row in rows {
        let probs = net.forward(&row.features, &mut cache);
        let predicted_exit = probs[EXIT_CLASS] >= 0.5;
        match (predicted_exit, row.exit_label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let total = tp + fp + tn + fne;
    let accuracy = if total > 0 {
        (tp + tn) as f64 / total as f64
    } else {
        0.0
    };
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fne > 0 {
        tp as f64 / (tp + fne) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalMetrics {
        accuracy,
        precision,
        recall,
        f1,
        positives: tp + fne,
        negatives: fp + tn,
    }
}

fn split_class(
    idx: &[usize],
    holdout_frac: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = idx.to_vec();
    shuffled.shuffle(rng);
    let holdout = ((shuffled.len() as f64 * holdout_frac).round() as usize)
        .min(shuffled.len().saturating_sub(1));
    let test = shuffled.split_off(shuffled.len() - holdout);
    (shuffled, test)
}

fn undersample(idx: &mut Vec<usize>, target: usize, rng: &mut rand_chacha::ChaCha8Rng) {
    if idx.len() > target {
        idx.shuffle(rng);
        idx.truncate(target);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::features::FEATURE_LEN;

    /// Rows where the stall channel alone separates the classes.
    fn separable_rows(n_per_class: usize) -> Vec<TrainRow> {
        let mut rows = Vec::new();
        let mut r = rng::substream(11, &[rng::tags::TRAIN]);
        use rand::Rng;
        for i in 0..2 * n_per_class {
            let exit = i % 2 == 0;
            let mut m = FeatureMatrix::zeros();
            for j in 0..FEATURE_LEN {
                m.0[0][j] = r.gen_range(0.2..0.9);
                m.0[1][j] = r.gen_range(0.2..0.9);
            }
            m.0[2][FEATURE_LEN - 1] = if exit {
                r.gen_range(0.6..1.0)
            } else {
                r.gen_range(0.0..0.2)
            };
            rows.push(TrainRow {
                features: m,
                exit_label: exit,
            });
        }
        rows
    }

    #[test]
    fn learns_a_separable_problem() {
        let rows = separable_rows(60);
        let cfg = TrainConfig {
            epochs: 14,
            ..TrainConfig::default()
        };
        let report = train(&rows, &cfg).unwrap();
        assert!(
            report.metrics.accuracy >= 0.99,
            "accuracy {:?}",
            report.metrics
        );
    }

    #[test]
    fn balancing_equalizes_training_classes() {
        let mut rows = separable_rows(30); // 30 exits, 30 continues
        rows.extend(separable_rows(120).into_iter().filter(|r| !r.exit_label)); // +120 continues
        let report = train(
            &rows,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(report.train_exits, report.train_continues);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows: Vec<TrainRow> = separable_rows(10)
            .into_iter()
            .filter(|r| r.exit_label)
            .collect();
        assert!(matches!(
            train(&rows, &TrainConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let rows = separable_rows(20);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = train(&rows, &cfg).unwrap();
        let b = train(&rows, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        let c = train(
            &rows,
            &TrainConfig {
                seed: 99,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_ne!(a.net, c.net);
    }
}
