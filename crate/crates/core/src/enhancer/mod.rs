//! Denoising autoencoder over log-magnitude spectra.
//!
//! The network maps a context-stacked window of corrupted log-magnitude
//! frames to the clean central frame. Inputs are mean/variance normalized
//! per utterance with the corrupted utterance's own statistics; training
//! targets are normalized with the clean utterance's statistics, and at
//! inference the prediction is de-normalized with global statistics
//! estimated on the dev split.

mod train;

pub use train::{log_spectral_mse, train, TrainHistory, TrainHyper};

use crate::container::{atomic_write, BinReader, BinWriter, ModelKind};
use crate::dsp::{istft, log_magnitude, stft, FeatureMatrix, StftConfig, Waveform};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct AEConfig {
    /// Context frames on each side of the predicted frame.
    pub context: usize,
    /// Spectrum dimension (fft_size/2 + 1 of the analysis).
    pub bins: usize,
    pub hidden_sizes: Vec<usize>,
}

impl AEConfig {
    pub fn new(context: usize, bins: usize, hidden_sizes: Vec<usize>) -> Result<Self> {
        if hidden_sizes.is_empty() {
            return Err(Error::InvalidInput("hidden_sizes must be non-empty".into()));
        }
        if bins == 0 {
            return Err(Error::InvalidInput("bins must be positive".into()));
        }
        Ok(Self {
            context,
            bins,
            hidden_sizes,
        })
    }

    /// Three 1500-unit tanh layers over +-15 frames of 129-bin spectra.
    pub fn paper_default() -> Self {
        Self {
            context: 15,
            bins: 129,
            hidden_sizes: vec![1500, 1500, 1500],
        }
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.context + 1) * self.bins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// (out x in), row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: u32,
    pub final_train_loss: f64,
    pub final_dev_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AEModel {
    pub config: AEConfig,
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<DenseLayer>,
    /// Global de-normalization statistics, estimated on the dev split.
    pub out_mean: Array1<f64>,
    pub out_std: Array1<f64>,
    pub train_meta: TrainMeta,
}

/// Glorot-uniform weights, zero biases, unit de-normalization statistics.
pub fn init_model(config: &AEConfig, seed: u64) -> AEModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut dims = vec![config.input_dim()];
    dims.extend_from_slice(&config.hidden_sizes);
    dims.push(config.bins);
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DenseLayer {
                weights: Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-bound..=bound)
                }),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    AEModel {
        config: config.clone(),
        layers,
        out_mean: Array1::zeros(config.bins),
        out_std: Array1::ones(config.bins),
        train_meta: TrainMeta {
            seed,
            ..TrainMeta::default()
        },
    }
}

impl AEModel {
    /// Per-layer post-activation values; index 0 is the input batch.
    fn forward_trace(&self, batch: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        if batch.ncols() != self.config.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, model expects {}",
                batch.ncols(),
                self.config.input_dim()
            )));
        }
        let mut acts = vec![batch.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts.last().unwrap().dot(&layer.weights.t());
            z += &layer.bias;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.model_header(ModelKind::Enhancer)?;
            w.u32(self.config.context as u32)?;
            w.u32(self.config.bins as u32)?;
            w.u32(self.config.hidden_sizes.len() as u32)?;
            for &h in &self.config.hidden_sizes {
                w.u32(h as u32)?;
            }
            for layer in &self.layers {
                w.f64_slice(layer.weights.as_slice().unwrap())?;
                w.f64_slice(layer.bias.as_slice().unwrap())?;
            }
            w.f64_slice(self.out_mean.as_slice().unwrap())?;
            w.f64_slice(self.out_std.as_slice().unwrap())?;
            w.u64(self.train_meta.seed)?;
            w.u32(self.train_meta.epochs_run)?;
            w.f64(self.train_meta.final_train_loss)?;
            w.f64(self.train_meta.final_dev_loss)
        })
    }

    pub fn load(path: &Path) -> Result<AEModel> {
        let mut r = BinReader::open(path)?;
        r.expect_model(ModelKind::Enhancer)?;
        let context = r.u32()? as usize;
        let bins = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        let hidden_sizes: Vec<usize> =
            (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let config = AEConfig::new(context, bins, hidden_sizes)?;
        let mut dims = vec![config.input_dim()];
        dims.extend_from_slice(&config.hidden_sizes);
        dims.push(bins);
        let mut layers = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = r.f64_vec(fan_out * fan_in)?;
            let weights = Array2::from_shape_vec((fan_out, fan_in), w)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let bias = Array1::from_vec(r.f64_vec(fan_out)?);
            layers.push(DenseLayer { weights, bias });
        }
        let out_mean = Array1::from_vec(r.f64_vec(bins)?);
        let out_std = Array1::from_vec(r.f64_vec(bins)?);
        if out_std.iter().any(|&s| s <= 0.0) {
            return Err(r.malformed("non-positive de-normalization std"));
        }
        let train_meta = TrainMeta {
            seed: r.u64()?,
            epochs_run: r.u32()?,
            final_train_loss: r.f64()?,
            final_dev_loss: r.f64()?,
        };
        Ok(AEModel {
            config,
            layers,
            out_mean,
            out_std,
            train_meta,
        })
    }
}

/// Tanh hidden layers, linear output, prediction in the normalized target
/// domain.
pub fn forward(model: &AEModel, batch: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(model.forward_trace(batch)?.pop().unwrap())
}

/// MSE in the normalized target domain plus reverse-mode gradients in
/// parameter order (weights, bias per layer).
pub fn loss_and_gradients(
    model: &AEModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Vec<(Array2<f64>, Array1<f64>)>)> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} input rows vs {} target rows",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() != model.config.bins {
        return Err(Error::ShapeMismatch(format!(
            "targets have {} columns, model produces {}",
            targets.ncols(),
            model.config.bins
        )));
    }
    let acts = model.forward_trace(inputs)?;
    let output = acts.last().unwrap();
    let diff = output - targets;
    let denom = (inputs.nrows() * model.config.bins) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / denom;

    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
    let mut delta = diff.mapv(|d| 2.0 * d / denom);
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let prev = &acts[i];
        let grad_w = delta.t().dot(prev);
        let grad_b = delta.sum_axis(Axis(0));
        if i > 0 {
            let back = delta.dot(&layer.weights);
            // derivative of tanh at the stored activation
            delta = back * &acts[i].mapv(|a| 1.0 - a * a);
        }
        grads.push((grad_w, grad_b));
    }
    grads.reverse();
    Ok((loss, grads))
}

/// One aligned corrupted/clean utterance pair.
#[derive(Debug, Clone)]
pub struct TrainPair {
    /// Corrupted log-magnitude rows after per-utterance normalization.
    pub input_norm: FeatureMatrix,
    /// Clean log-magnitude rows, raw.
    pub clean_raw: FeatureMatrix,
    pub clean_mean: Array1<f64>,
    pub clean_std: Array1<f64>,
}

pub type TrainPairSet = Vec<TrainPair>;

/// Per-dimension mean and std over frames; std floored at 1e-8.
pub fn utterance_stats(rows: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = rows.nrows().max(1) as f64;
    let mean = rows.sum_axis(Axis(0)) / n;
    let mut var = Array1::<f64>::zeros(rows.ncols());
    for row in rows.rows() {
        for (c, &v) in row.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let std = var.mapv(|v| (v / n).sqrt().max(1e-8));
    (mean, std)
}

fn normalize_rows(rows: &Array2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let mut out = rows.clone();
    for mut row in out.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[c]) / std[c];
        }
    }
    out
}

/// Stack `context` frames on each side of every row, replicating edge
/// frames past the boundaries.
pub fn stack_context(rows: &Array2<f64>, context: usize) -> Array2<f64> {
    let (t, dim) = (rows.nrows(), rows.ncols());
    let width = (2 * context + 1) * dim;
    let mut out = Array2::zeros((t, width));
    for r in 0..t {
        for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
            let src = (r as isize + offset).clamp(0, t as isize - 1) as usize;
            for c in 0..dim {
                out[(r, slot * dim + c)] = rows[(src, c)];
            }
        }
    }
    out
}

impl TrainPair {
    /// Target rows in the normalized domain the network is trained in.
    pub fn normalized_target(&self) -> Array2<f64> {
        normalize_rows(&self.clean_raw.rows, &self.clean_mean, &self.clean_std)
    }

    /// Network input rows: context-stacked normalized corrupted frames.
    pub fn stacked_input(&self, context: usize) -> Array2<f64> {
        stack_context(&self.input_norm.rows, context)
    }
}

/// Analyze an aligned corrupted/clean pair into one training entry.
pub fn make_training_pairs(noisy: &Waveform, clean: &Waveform, cfg: &AEConfig) -> Result<TrainPair> {
    if noisy.len() != clean.len() {
        return Err(Error::ShapeMismatch(format!(
            "corrupted ({}) and clean ({}) lengths differ",
            noisy.len(),
            clean.len()
        )));
    }
    let stft_cfg = StftConfig::default_8k();
    if cfg.bins != stft_cfg.bins() {
        return Err(Error::InvalidInput(format!(
            "config expects {} bins but the analysis yields {}",
            cfg.bins,
            stft_cfg.bins()
        )));
    }
    let noisy_logmag = log_magnitude(&stft(noisy, &stft_cfg)?);
    let clean_logmag = log_magnitude(&stft(clean, &stft_cfg)?);
    let (noisy_mean, noisy_std) = utterance_stats(&noisy_logmag.rows);
    let (clean_mean, clean_std) = utterance_stats(&clean_logmag.rows);
    let input_norm = FeatureMatrix {
        rows: normalize_rows(&noisy_logmag.rows, &noisy_mean, &noisy_std),
        frame_shift_ms: noisy_logmag.frame_shift_ms,
        descriptor: noisy_logmag.descriptor.clone(),
    };
    Ok(TrainPair {
        input_norm,
        clean_raw: clean_logmag,
        clean_mean,
        clean_std,
    })
}

/// Enhance a waveform: predict clean log-magnitudes, de-normalize with the
/// model's global statistics, reuse the noisy phase, and resynthesize. The
/// output has exactly the input's length.
pub fn enhance_utterance(model: &AEModel, w: &Waveform) -> Result<Waveform> {
    let stft_cfg = StftConfig::default_8k();
    if model.config.bins != stft_cfg.bins() {
        return Err(Error::InvalidInput(format!(
            "model expects {} bins but the analysis yields {}",
            model.config.bins,
            stft_cfg.bins()
        )));
    }
    let mut spec = stft(w, &stft_cfg)?;
    let logmag = log_magnitude(&spec);
    let (mean, std) = utterance_stats(&logmag.rows);
    let normalized = normalize_rows(&logmag.rows, &mean, &std);
    let stacked = stack_context(&normalized, model.config.context);

    let frames = stacked.nrows();
    let mut predicted = Array2::zeros((frames, model.config.bins));
    const CHUNK: usize = 512;
    let mut start = 0;
    while start < frames {
        let end = (start + CHUNK).min(frames);
        let block = stacked.slice(ndarray::s![start..end, ..]).to_owned();
        let out = forward(model, &block)?;
        predicted.slice_mut(ndarray::s![start..end, ..]).assign(&out);
        start = end;
    }

    for t in 0..frames {
        for b in 0..model.config.bins {
            let logmag_hat = predicted[(t, b)] * model.out_std[b] + model.out_mean[b];
            let mag = (logmag_hat.exp() - 1e-10).max(0.0);
            let phase = spec.frames[(t, b)].arg();
            spec.frames[(t, b)] = Complex64::from_polar(mag, phase);
        }
    }
    let recon = istft(&spec)?;
    let mut samples = recon.samples;
    samples.resize(w.len(), 0.0);
    Waveform::new(samples, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_config() -> AEConfig {
        AEConfig::new(1, 129, vec![8]).unwrap()
    }

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (secs * 8000.0) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 8000.0).sin())
                .collect(),
            8000,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let cfg = small_config();
        let a = init_model(&cfg, 5);
        let b = init_model(&cfg, 5);
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        let c = init_model(&cfg, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let cfg = AEConfig::new(2, 129, vec![20, 10]).unwrap();
        let m = init_model(&cfg, 9);
        let mut dims = vec![cfg.input_dim()];
        dims.extend_from_slice(&cfg.hidden_sizes);
        dims.push(cfg.bins);
        for (layer, pair) in m.layers.iter().zip(dims.windows(2)) {
            let bound = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn forward_zero_model_and_bias() {
        let cfg = small_config();
        let mut m = init_model(&cfg, 1);
        for layer in &mut m.layers {
            layer.weights.fill(0.0);
        }
        let batch = Array2::from_elem((3, cfg.input_dim()), 0.7);
        let out = forward(&m, &batch).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        m.layers.last_mut().unwrap().bias.fill(-2.5);
        let out = forward(&m, &batch).unwrap();
        assert!(out.iter().all(|&v| v == -2.5));
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 1-d chain: x -> tanh(w1 x + b1) -> w2 h + b2
        let cfg = AEConfig::new(0, 1, vec![1]).unwrap();
        let mut m = init_model(&cfg, 0);
        m.layers[0].weights[(0, 0)] = 0.5;
        m.layers[0].bias[0] = -0.25;
        m.layers[1].weights[(0, 0)] = 2.0;
        m.layers[1].bias[0] = 0.125;
        let x = 0.8f64;
        let expected = 2.0 * (0.5 * x - 0.25).tanh() + 0.125;
        let out = forward(&m, &Array2::from_elem((1, 1), x)).unwrap();
        assert!((out[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_when_outputs_equal_targets() {
        let cfg = small_config();
        let mut m = init_model(&cfg, 1);
        for layer in &mut m.layers {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        let inputs = Array2::zeros((4, cfg.input_dim()));
        let targets = Array2::zeros((4, cfg.bins));
        let (loss, grads) = loss_and_gradients(&m, &inputs, &targets).unwrap();
        assert_eq!(loss, 0.0);
        for (gw, gb) in grads {
            assert!(gw.iter().all(|&v| v == 0.0));
            assert!(gb.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn loss_of_zero_model_is_target_mean_square() {
        let cfg = small_config();
        let mut m = init_model(&cfg, 1);
        for layer in &mut m.layers {
            layer.weights.fill(0.0);
            layer.bias.fill(0.0);
        }
        let inputs = Array2::zeros((2, cfg.input_dim()));
        let mut targets = Array2::zeros((2, cfg.bins));
        targets[(0, 0)] = 3.0;
        targets[(1, 1)] = -1.0;
        let expected = (9.0 + 1.0) / (2.0 * cfg.bins as f64);
        let (loss, _) = loss_and_gradients(&m, &inputs, &targets).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = AEConfig::new(1, 3, vec![5, 4]).unwrap();
        let mut m = init_model(&cfg, 12);
        // make the stats non-trivial so the loss surface is generic
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let inputs = Array2::from_shape_fn((6, cfg.input_dim()), |_| rng.gen_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((6, cfg.bins), |_| rng.gen_range(-1.0..1.0));
        let (_, grads) = loss_and_gradients(&m, &inputs, &targets).unwrap();

        let step = 1e-5;
        for li in 0..m.layers.len() {
            for widx in 0..m.layers[li].weights.len() {
                let orig = m.layers[li].weights.as_slice().unwrap()[widx];
                m.layers[li].weights.as_slice_mut().unwrap()[widx] = orig + step;
                let up = loss_and_gradients(&m, &inputs, &targets).unwrap().0;
                m.layers[li].weights.as_slice_mut().unwrap()[widx] = orig - step;
                let down = loss_and_gradients(&m, &inputs, &targets).unwrap().0;
                m.layers[li].weights.as_slice_mut().unwrap()[widx] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grads[li].0.as_slice().unwrap()[widx];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((numeric - analytic) / denom).abs() < 1e-4,
                    "layer {li} weight {widx}: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn training_pair_shapes_and_normalization() {
        let noisy = tone(600.0, 1.0, 0.4);
        let clean = tone(600.0, 1.0, 0.4);
        let cfg = AEConfig::paper_default();
        let pair = make_training_pairs(&noisy, &clean, &cfg).unwrap();
        assert_eq!(pair.stacked_input(cfg.context).ncols(), 31 * 129);
        assert_eq!(pair.stacked_input(cfg.context).ncols(), 3999);
        // identical clean/noisy: normalized input equals normalized target
        let target = pair.normalized_target();
        for (a, b) in pair.input_norm.rows.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stacking_replicates_edges() {
        let rows = ndarray::array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]];
        let stacked = stack_context(&rows, 2);
        // first row: offsets -2,-1 clamp to frame 0
        assert_eq!(
            stacked.row(0).to_vec(),
            vec![1.0, 10.0, 1.0, 10.0, 1.0, 10.0, 2.0, 20.0, 3.0, 30.0]
        );
        // last row: offsets +1,+2 clamp to frame 2
        assert_eq!(
            stacked.row(2).to_vec(),
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 3.0, 30.0, 3.0, 30.0]
        );
    }

    #[test]
    fn length_mismatch_rejected() {
        let noisy = tone(600.0, 1.0, 0.4);
        let clean = tone(600.0, 0.9, 0.4);
        assert!(make_training_pairs(&noisy, &clean, &AEConfig::paper_default()).is_err());
    }

    #[test]
    fn enhance_preserves_length_and_is_deterministic() {
        let cfg = small_config();
        let m = init_model(&cfg, 3);
        let w = tone(500.0, 1.03, 0.4);
        let a = enhance_utterance(&m, &w).unwrap();
        let b = enhance_utterance(&m, &w).unwrap();
        assert_eq!(a.samples.len(), w.samples.len());
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn identity_magnitude_map_preserves_phase() {
        // run the enhancement arithmetic with predictions equal to the true
        // normalized magnitudes; resynthesis must match istft of the
        // original spectrogram
        let w = tone(625.0, 1.0, 0.4);
        let stft_cfg = StftConfig::default_8k();
        let spec = stft(&w, &stft_cfg).unwrap();
        let logmag = log_magnitude(&spec);
        let (mean, std) = utterance_stats(&logmag.rows);
        let mut spec2 = spec.clone();
        for t in 0..spec2.num_frames() {
            for b in 0..spec2.bins() {
                let norm = (logmag.rows[(t, b)] - mean[b]) / std[b];
                let mag = ((norm * std[b] + mean[b]).exp() - 1e-10).max(0.0);
                spec2.frames[(t, b)] = Complex64::from_polar(mag, spec.frames[(t, b)].arg());
            }
        }
        let direct = istft(&spec).unwrap();
        let via_mag = istft(&spec2).unwrap();
        for (a, b) in direct.samples.iter().zip(&via_mag.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn model_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.svkm");
        let cfg = AEConfig::new(2, 129, vec![7, 5]).unwrap();
        let mut m = init_model(&cfg, 41);
        m.out_mean.fill(-3.25);
        m.out_std.fill(1.5);
        m.train_meta.epochs_run = 3;
        m.save(&path).unwrap();
        let loaded = AEModel::load(&path).unwrap();
        assert_eq!(loaded, m);
        let batch = Array2::from_elem((2, cfg.input_dim()), 0.3);
        assert_eq!(
            forward(&m, &batch).unwrap(),
            forward(&loaded, &batch).unwrap()
        );
    }
}
