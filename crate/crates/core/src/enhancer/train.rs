//! Minibatch SGD with momentum and plateau-halved learning rate.

use super::{
    forward, loss_and_gradients, utterance_stats, AEModel, TrainPair,
};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of utterances held out as the dev split (at least one
    /// utterance is always held out).
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
}

struct PreparedUtterance {
    stacked: Array2<f64>,
    target: Array2<f64>,
}

/// Train a copy of `model` on aligned corrupted/clean pairs. Deterministic
/// in the seed: utterance split, shuffling and parameter updates follow one
/// seeded stream. After training, the de-normalization statistics are
/// re-estimated globally on the dev split's clean spectra.
pub fn train(
    model: &AEModel,
    data: &[TrainPair],
    hyper: &TrainHyper,
) -> Result<(AEModel, TrainHistory)> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for pair in data {
        if pair.clean_raw.dim() != model.config.bins {
            return Err(Error::ShapeMismatch(format!(
                "pair has {} bins, model expects {}",
                pair.clean_raw.dim(),
                model.config.bins
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);

    // utterance-level dev split
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let dev_count = ((hyper.dev_fraction * data.len() as f64).round() as usize)
        .clamp(1, data.len());
    let dev_idx: Vec<usize> = order[..dev_count].to_vec();
    let train_idx: Vec<usize> = if dev_count == data.len() {
        // degenerate corpus: reuse the dev utterances for training
        order.clone()
    } else {
        order[dev_count..].to_vec()
    };

    let prepare = |idx: &[usize]| -> Vec<PreparedUtterance> {
        idx.iter()
            .map(|&i| PreparedUtterance {
                stacked: data[i].stacked_input(model.config.context),
                target: data[i].normalized_target(),
            })
            .collect()
    };
    let train_set = prepare(&train_idx);
    let dev_set = prepare(&dev_idx);

    let mut frame_index: Vec<(usize, usize)> = Vec::new();
    for (u, utt) in train_set.iter().enumerate() {
        for f in 0..utt.stacked.nrows() {
            frame_index.push((u, f));
        }
    }
    if frame_index.is_empty() {
        return Err(Error::InvalidInput("training set has no frames".into()));
    }

    let mut trained = model.clone();
    let mut velocity: Vec<(Array2<f64>, Array1<f64>)> = trained
        .layers
        .iter()
        .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
        .collect();

    let mut lr = hyper.learning_rate;
    let mut history = TrainHistory::default();
    let mut best_dev = f64::INFINITY;
    let input_dim = model.config.input_dim();

    for _epoch in 0..hyper.epochs {
        frame_index.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in frame_index.chunks(hyper.batch_size) {
            let mut x = Array2::zeros((chunk.len(), input_dim));
            let mut y = Array2::zeros((chunk.len(), model.config.bins));
            for (row, &(u, f)) in chunk.iter().enumerate() {
                x.row_mut(row).assign(&train_set[u].stacked.row(f));
                y.row_mut(row).assign(&train_set[u].target.row(f));
            }
            let (loss, grads) = loss_and_gradients(&trained, &x, &y)?;
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
            for ((layer, (vw, vb)), (gw, gb)) in
                trained.layers.iter_mut().zip(&mut velocity).zip(&grads)
            {
                vw.zip_mut_with(gw, |v, g| *v = hyper.momentum * *v - lr * g);
                vb.zip_mut_with(gb, |v, g| *v = hyper.momentum * *v - lr * g);
                layer.weights += &*vw;
                layer.bias += &*vb;
            }
        }
        history.train_loss.push(epoch_loss / seen as f64);

        let dev = evaluate(&trained, &dev_set)?;
        history.dev_loss.push(dev);
        if dev < best_dev * (1.0 - 1e-4) {
            best_dev = dev;
        } else {
            lr *= 0.5;
        }
    }

    // global de-normalization statistics from the dev split's clean spectra
    let dev_clean: Vec<&Array2<f64>> = dev_idx.iter().map(|&i| &data[i].clean_raw.rows).collect();
    let total_rows: usize = dev_clean.iter().map(|m| m.nrows()).sum();
    let mut pooled = Array2::zeros((total_rows, model.config.bins));
    let mut at = 0;
    for m in dev_clean {
        pooled
            .slice_mut(ndarray::s![at..at + m.nrows(), ..])
            .assign(m);
        at += m.nrows();
    }
    let (mean, std) = utterance_stats(&pooled);
    trained.out_mean = mean;
    trained.out_std = std;

    trained.train_meta.seed = hyper.seed;
    trained.train_meta.epochs_run = hyper.epochs as u32;
    trained.train_meta.final_train_loss = history.train_loss.last().copied().unwrap_or(0.0);
    trained.train_meta.final_dev_loss = history.dev_loss.last().copied().unwrap_or(0.0);
    Ok((trained, history))
}

fn evaluate(model: &AEModel, set: &[PreparedUtterance]) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for utt in set {
        let out = forward(model, &utt.stacked)?;
        let diff = &out - &utt.target;
        total += diff.iter().map(|d| d * d).sum::<f64>();
        rows += utt.stacked.nrows();
    }
    Ok(total / (rows * model.config.bins).max(1) as f64)
}

/// Mean squared error between two log-magnitude feature matrices
/// (evaluation helper for enhancement experiments).
pub fn log_spectral_mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a - b;
    diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhancer::{init_model, make_training_pairs, AEConfig};
    use crate::dsp::Waveform;
    use std::f64::consts::PI;

    /// Tilted, amplitude-modulated noise: spectra vary frame to frame, so
    /// per-utterance normalization keeps real structure.
    fn noise_utt(seed: u64, secs: f64) -> Waveform {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = (8000.0 * secs) as usize;
        let tilt = rng.gen_range(0.0..0.9);
        let mut prev = 0.0f64;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                prev = tilt * prev + (1.0 - tilt) * rng.gen_range(-0.5..0.5);
                let t = i as f64 / 8000.0;
                prev * (0.6 + 0.4 * (2.0 * PI * 3.0 * t).sin())
            })
            .collect();
        Waveform::new(samples, 8000).unwrap()
    }

    fn identity_pairs(count: usize, secs: f64, cfg: &AEConfig) -> Vec<TrainPair> {
        (0..count)
            .map(|i| {
                let clean = noise_utt(i as u64, secs);
                make_training_pairs(&clean, &clean, cfg).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = AEConfig::new(1, 129, vec![16]).unwrap();
        let model = init_model(&cfg, 2);
        let data = identity_pairs(3, 1.0, &cfg);
        let hyper = TrainHyper {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainHyper::default()
        };
        let (trained, _) = train(&model, &data, &hyper).unwrap();
        assert_eq!(trained.layers, model.layers);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = AEConfig::new(1, 129, vec![16]).unwrap();
        let model = init_model(&cfg, 2);
        let data = identity_pairs(3, 1.0, &cfg);
        let hyper = TrainHyper {
            epochs: 3,
            seed: 7,
            ..TrainHyper::default()
        };
        let (a, ha) = train(&model, &data, &hyper).unwrap();
        let (b, hb) = train(&model, &data, &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.train_loss, hb.train_loss);
        assert_eq!(ha.dev_loss, hb.dev_loss);
    }

    #[test]
    fn identity_task_converges_quickly() {
        let cfg = AEConfig::new(0, 129, vec![512]).unwrap();
        let model = init_model(&cfg, 4);
        let data = identity_pairs(12, 4.0, &cfg);
        let hyper = TrainHyper {
            learning_rate: 0.1,
            epochs: 5,
            batch_size: 16,
            dev_fraction: 0.2,
            seed: 4,
            ..TrainHyper::default()
        };
        let (_, history) = train(&model, &data, &hyper).unwrap();
        let final_dev = *history.dev_loss.last().unwrap();
        assert!(final_dev < 0.01, "dev loss {final_dev}");
    }

    #[test]
    fn empty_data_rejected() {
        let cfg = AEConfig::new(1, 129, vec![8]).unwrap();
        let model = init_model(&cfg, 1);
        assert!(train(&model, &[], &TrainHyper::default()).is_err());
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let cfg = AEConfig::new(1, 129, vec![8]).unwrap();
        let model = init_model(&cfg, 1);
        let data = identity_pairs(2, 1.0, &cfg);
        let bad_lr = TrainHyper {
            learning_rate: -0.1,
            ..TrainHyper::default()
        };
        assert!(train(&model, &data, &bad_lr).is_err());
        let bad_batch = TrainHyper {
            batch_size: 0,
            ..TrainHyper::default()
        };
        assert!(train(&model, &data, &bad_batch).is_err());
    }
}
