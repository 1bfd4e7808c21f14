//! TDNN x-vector network: five time-delay layers, mean+std statistics
//! pooling, two segment layers, and a softmax speaker classifier. The
//! embedding is the first segment layer's pre-activation.

use crate::container::{atomic_write, BinReader, BinWriter, ModelKind};
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

const POOL_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (out x in)
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot(fan_out: usize, fan_in: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weights: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..=bound)),
            bias: Array1::zeros(fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdnnLayer {
    /// Temporal offsets gathered from the previous layer, e.g. [-2, 0, 2].
    pub offsets: Vec<i64>,
    pub dense: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XVectorConfig {
    pub input_dim: usize,
    pub frame_offsets: Vec<Vec<i64>>,
    pub frame_sizes: Vec<usize>,
    pub segment_sizes: Vec<usize>,
    pub num_speakers: usize,
}

impl XVectorConfig {
    fn standard_offsets() -> Vec<Vec<i64>> {
        vec![
            vec![-2, -1, 0, 1, 2],
            vec![-2, 0, 2],
            vec![-3, 0, 3],
            vec![0],
            vec![0],
        ]
    }

    /// Published sizes: 512/512/512/512/1500 frame layers, 512/512 segment.
    pub fn paper(input_dim: usize, num_speakers: usize) -> Self {
        Self {
            input_dim,
            frame_offsets: Self::standard_offsets(),
            frame_sizes: vec![512, 512, 512, 512, 1500],
            segment_sizes: vec![512, 512],
            num_speakers,
        }
    }

    /// Desk-scale sizes with the same topology.
    pub fn desk(input_dim: usize, num_speakers: usize) -> Self {
        Self {
            input_dim,
            frame_offsets: Self::standard_offsets(),
            frame_sizes: vec![64, 64, 64, 64, 128],
            segment_sizes: vec![64, 64],
            num_speakers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_offsets.len() != self.frame_sizes.len() || self.frame_offsets.is_empty() {
            return Err(Error::InvalidInput(
                "frame offsets and sizes must be non-empty and aligned".into(),
            ));
        }
        if self.frame_offsets.iter().any(|o| o.is_empty()) {
            return Err(Error::InvalidInput("a layer has no offsets".into()));
        }
        if self.segment_sizes.is_empty() {
            return Err(Error::InvalidInput("need at least one segment layer".into()));
        }
        if self.input_dim == 0 || self.num_speakers == 0 {
            return Err(Error::InvalidInput(
                "input dim and speaker count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Smallest frame count covering the stacked temporal contexts.
    pub fn min_frames(&self) -> usize {
        let span: i64 = self
            .frame_offsets
            .iter()
            .map(|offsets| offsets.iter().map(|o| o.abs()).max().unwrap_or(0))
            .sum();
        (1 + 2 * span) as usize
    }

    pub fn embedding_dim(&self) -> usize {
        self.segment_sizes[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XVectorModel {
    pub config: XVectorConfig,
    pub frame_layers: Vec<TdnnLayer>,
    pub segment_layers: Vec<Dense>,
    pub output: Dense,
}

impl XVectorModel {
    pub fn init(config: XVectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut frame_layers = Vec::new();
        let mut prev = config.input_dim;
        for (offsets, &size) in config.frame_offsets.iter().zip(&config.frame_sizes) {
            frame_layers.push(TdnnLayer {
                offsets: offsets.clone(),
                dense: Dense::glorot(size, prev * offsets.len(), &mut rng),
            });
            prev = size;
        }
        let pooled = 2 * prev;
        let mut segment_layers = Vec::new();
        let mut seg_prev = pooled;
        for &size in &config.segment_sizes {
            segment_layers.push(Dense::glorot(size, seg_prev, &mut rng));
            seg_prev = size;
        }
        let output = Dense::glorot(config.num_speakers, seg_prev, &mut rng);
        Ok(Self {
            config,
            frame_layers,
            segment_layers,
            output,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.model_header(ModelKind::XVector)?;
            w.u32(self.config.input_dim as u32)?;
            w.u32(self.config.num_speakers as u32)?;
            w.u32(self.frame_layers.len() as u32)?;
            for (layer, &size) in self.frame_layers.iter().zip(&self.config.frame_sizes) {
                w.u32(size as u32)?;
                w.u32(layer.offsets.len() as u32)?;
                for &o in &layer.offsets {
                    w.u64(o as u64)?;
                }
            }
            w.u32(self.segment_layers.len() as u32)?;
            for &size in &self.config.segment_sizes {
                w.u32(size as u32)?;
            }
            for layer in &self.frame_layers {
                w.f64_slice(layer.dense.weights.as_slice().unwrap())?;
                w.f64_slice(layer.dense.bias.as_slice().unwrap())?;
            }
            for layer in &self.segment_layers {
                w.f64_slice(layer.weights.as_slice().unwrap())?;
                w.f64_slice(layer.bias.as_slice().unwrap())?;
            }
            w.f64_slice(self.output.weights.as_slice().unwrap())?;
            w.f64_slice(self.output.bias.as_slice().unwrap())
        })
    }

    pub fn load(path: &Path) -> Result<XVectorModel> {
        let mut r = BinReader::open(path)?;
        r.expect_model(ModelKind::XVector)?;
        let input_dim = r.u32()? as usize;
        let num_speakers = r.u32()? as usize;
        let n_frame = r.u32()? as usize;
        let mut frame_sizes = Vec::new();
        let mut frame_offsets = Vec::new();
        for _ in 0..n_frame {
            frame_sizes.push(r.u32()? as usize);
            let n_off = r.u32()? as usize;
            frame_offsets.push(
                (0..n_off)
                    .map(|_| r.u64().map(|v| v as i64))
                    .collect::<Result<Vec<i64>>>()?,
            );
        }
        let n_segment = r.u32()? as usize;
        let segment_sizes: Vec<usize> = (0..n_segment)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<_>>()?;
        let config = XVectorConfig {
            input_dim,
            frame_offsets,
            frame_sizes,
            segment_sizes,
            num_speakers,
        };
        config.validate()?;

        let mut read_dense = |r: &mut BinReader<_>, out: usize, inp: usize| -> Result<Dense> {
            let w = Array2::from_shape_vec((out, inp), r.f64_vec(out * inp)?)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let b = Array1::from_vec(r.f64_vec(out)?);
            Ok(Dense {
                weights: w,
                bias: b,
            })
        };
        let mut frame_layers = Vec::new();
        let mut prev = config.input_dim;
        for (offsets, &size) in config.frame_offsets.iter().zip(&config.frame_sizes) {
            frame_layers.push(TdnnLayer {
                offsets: offsets.clone(),
                dense: read_dense(&mut r, size, prev * offsets.len())?,
            });
            prev = size;
        }
        let mut segment_layers = Vec::new();
        let mut seg_prev = 2 * prev;
        for &size in &config.segment_sizes {
            segment_layers.push(read_dense(&mut r, size, seg_prev)?);
            seg_prev = size;
        }
        let output = read_dense(&mut r, config.num_speakers, seg_prev)?;
        Ok(XVectorModel {
            config,
            frame_layers,
            segment_layers,
            output,
        })
    }
}

/// Per-dimension mean and epsilon-floored standard deviation over frames.
pub fn pooling_stats(h: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let t = h.nrows() as f64;
    let mean = h.sum_axis(Axis(0)) / t;
    let mut var = Array1::<f64>::zeros(h.ncols());
    for row in h.rows() {
        for (c, &v) in row.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let std = var.mapv(|v| (v / t + POOL_EPS).sqrt());
    (mean, std)
}

/// Gather context frames (edge-replicated) into TDNN layer input rows.
fn gather(prev: &Array2<f64>, offsets: &[i64]) -> Array2<f64> {
    let (t, dim) = (prev.nrows(), prev.ncols());
    let mut out = Array2::zeros((t, dim * offsets.len()));
    for row in 0..t {
        for (slot, &o) in offsets.iter().enumerate() {
            let src = (row as i64 + o).clamp(0, t as i64 - 1) as usize;
            for c in 0..dim {
                out[(row, slot * dim + c)] = prev[(src, c)];
            }
        }
    }
    out
}

struct ForwardTrace {
    /// Post-ReLU frame activations per layer; index 0 is the input.
    frame_acts: Vec<Array2<f64>>,
    /// Gathered inputs fed to each TDNN layer.
    gathered: Vec<Array2<f64>>,
    mean: Array1<f64>,
    std: Array1<f64>,
    pooled: Array1<f64>,
    /// Segment pre-activations (z) per segment layer.
    segment_pre: Vec<Array1<f64>>,
    /// Segment post-ReLU activations.
    segment_acts: Vec<Array1<f64>>,
    log_probs: Array1<f64>,
}

fn forward_trace(model: &XVectorModel, features: &Array2<f64>) -> Result<ForwardTrace> {
    if features.ncols() != model.config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have dim {}, model expects {}",
            features.ncols(),
            model.config.input_dim
        )));
    }
    if features.nrows() < model.config.min_frames() {
        return Err(Error::InvalidInput(format!(
            "need at least {} frames for the temporal context, got {}",
            model.config.min_frames(),
            features.nrows()
        )));
    }
    let mut frame_acts = vec![features.clone()];
    let mut gathered = Vec::new();
    for layer in &model.frame_layers {
        let g = gather(frame_acts.last().unwrap(), &layer.offsets);
        let mut z = g.dot(&layer.dense.weights.t());
        z += &layer.dense.bias;
        z.mapv_inplace(|v| v.max(0.0));
        gathered.push(g);
        frame_acts.push(z);
    }
    let (mean, std) = pooling_stats(frame_acts.last().unwrap());
    let mut pooled = Array1::zeros(mean.len() + std.len());
    pooled.slice_mut(ndarray::s![..mean.len()]).assign(&mean);
    pooled.slice_mut(ndarray::s![mean.len()..]).assign(&std);

    let mut segment_pre = Vec::new();
    let mut segment_acts = Vec::new();
    let mut cur = pooled.clone();
    for layer in &model.segment_layers {
        let z = layer.weights.dot(&cur) + &layer.bias;
        let a = z.mapv(|v| v.max(0.0));
        segment_pre.push(z);
        segment_acts.push(a.clone());
        cur = a;
    }
    let logits = model.output.weights.dot(&cur) + &model.output.bias;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let log_probs = logits.mapv(|l| l - lse);

    Ok(ForwardTrace {
        frame_acts,
        gathered,
        mean,
        std,
        pooled,
        segment_pre,
        segment_acts,
        log_probs,
    })
}

/// Embedding (first segment layer pre-activation) and class log
/// probabilities for one utterance.
pub fn xvector_forward(model: &XVectorModel, f: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = forward_trace(model, &f.rows)?;
    Ok((
        trace.segment_pre[0].to_vec(),
        trace.log_probs.to_vec(),
    ))
}

#[derive(Debug, Clone)]
pub struct XVectorGrads {
    pub frame: Vec<(Array2<f64>, Array1<f64>)>,
    pub segment: Vec<(Array2<f64>, Array1<f64>)>,
    pub output: (Array2<f64>, Array1<f64>),
}

impl XVectorGrads {
    fn zeros(model: &XVectorModel) -> Self {
        let zero = |d: &Dense| (Array2::zeros(d.weights.dim()), Array1::zeros(d.bias.len()));
        XVectorGrads {
            frame: model.frame_layers.iter().map(|l| zero(&l.dense)).collect(),
            segment: model.segment_layers.iter().map(zero).collect(),
            output: zero(&model.output),
        }
    }
}

/// Mean multi-class cross entropy over a batch of (chunk, label) pairs and
/// its reverse-mode gradients, including through the mean/std pooling.
pub fn xvector_loss_and_gradients(
    model: &XVectorModel,
    batch: &[(Array2<f64>, usize)],
) -> Result<(f64, XVectorGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for (_, label) in batch {
        if *label >= model.config.num_speakers {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {} speakers",
                model.config.num_speakers
            )));
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = XVectorGrads::zeros(model);
    let mut loss = 0.0;

    for (chunk, label) in batch {
        let trace = forward_trace(model, chunk)?;
        loss -= trace.log_probs[*label] * scale;

        // output layer
        let mut d_logits = trace.log_probs.mapv(f64::exp);
        d_logits[*label] -= 1.0;
        d_logits *= scale;
        let last_act = trace.segment_acts.last().unwrap();
        grads.output.0 += &outer(&d_logits, last_act);
        grads.output.1 += &d_logits;
        let mut d_act = model.output.weights.t().dot(&d_logits);

        // segment layers, last to first
        for (i, layer) in model.segment_layers.iter().enumerate().rev() {
            let d_z = &d_act * &trace.segment_pre[i].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
            let input = if i == 0 {
                &trace.pooled
            } else {
                &trace.segment_acts[i - 1]
            };
            grads.segment[i].0 += &outer(&d_z, input);
            grads.segment[i].1 += &d_z;
            d_act = layer.weights.t().dot(&d_z);
        }

        // pooling: d_act covers [d_mean | d_std]
        let top = trace.frame_acts.last().unwrap();
        let t = top.nrows() as f64;
        let f_dim = top.ncols();
        let mut d_frames = Array2::zeros(top.dim());
        for j in 0..f_dim {
            let d_mean = d_act[j];
            let d_std = d_act[f_dim + j];
            for row in 0..top.nrows() {
                let centered = top[(row, j)] - trace.mean[j];
                d_frames[(row, j)] =
                    d_mean / t + d_std * centered / (t * trace.std[j]);
            }
        }

        // TDNN layers, last to first
        let mut d_h = d_frames;
        for (i, layer) in model.frame_layers.iter().enumerate().rev() {
            // ReLU mask: frame_acts[i+1] holds the post-activation values
            let d_z = &d_h * &trace.frame_acts[i + 1].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
            grads.frame[i].0 += &d_z.t().dot(&trace.gathered[i]);
            grads.frame[i].1 += &d_z.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let d_g = d_z.dot(&layer.dense.weights);
            let prev = &trace.frame_acts[i];
            let mut d_prev = Array2::zeros(prev.dim());
            let dim = prev.ncols();
            for row in 0..prev.nrows() {
                for (slot, &o) in layer.offsets.iter().enumerate() {
                    let src = (row as i64 + o).clamp(0, prev.nrows() as i64 - 1) as usize;
                    for c in 0..dim {
                        d_prev[(src, c)] += d_g[(row, slot * dim + c)];
                    }
                }
            }
            d_h = d_prev;
        }
    }
    Ok((loss, grads))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[(i, j)] = ai * bj;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct XVecTrainHyper {
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Utterances shorter than this many frames are excluded from chunk
    /// sampling.
    pub min_utt_frames: usize,
}

impl Default for XVecTrainHyper {
    fn default() -> Self {
        Self {
            chunk_min: 200,
            chunk_max: 400,
            batch_size: 16,
            epochs: 20,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            min_utt_frames: 500,
        }
    }
}

/// Seeded chunk-sampling SGD with momentum; returns the trained model and
/// the per-epoch mean cross entropy.
pub fn train_xvector(
    model: &XVectorModel,
    data: &[(usize, FeatureMatrix)],
    hyper: &XVecTrainHyper,
) -> Result<(XVectorModel, Vec<f64>)> {
    if hyper.chunk_min == 0 || hyper.chunk_min > hyper.chunk_max {
        return Err(Error::InvalidInput("bad chunk length range".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    let usable: Vec<&(usize, FeatureMatrix)> = data
        .iter()
        .filter(|(_, f)| f.num_frames() >= hyper.min_utt_frames.max(model.config.min_frames()))
        .collect();
    let mut speaker_utts = std::collections::BTreeMap::<usize, usize>::new();
    for (label, _) in &usable {
        *speaker_utts.entry(*label).or_insert(0) += 1;
    }
    if speaker_utts.len() < 3 || speaker_utts.values().any(|&c| c < 2) {
        return Err(Error::InvalidInput(format!(
            "degenerate speaker set: {} speakers with at least 2 usable utterances required",
            3
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed);
    let mut trained = model.clone();
    let mut velocity = XVectorGrads::zeros(model);
    let steps_per_epoch = (usable.len() / hyper.batch_size).max(1);

    let mut history = Vec::with_capacity(hyper.epochs);
    for _epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..steps_per_epoch {
            let want = rng.gen_range(hyper.chunk_min..=hyper.chunk_max);
            let mut batch = Vec::with_capacity(hyper.batch_size);
            for _ in 0..hyper.batch_size {
                let (label, feats) = usable[rng.gen_range(0..usable.len())];
                let len = want.min(feats.num_frames());
                let start = rng.gen_range(0..=feats.num_frames() - len);
                let chunk = feats.rows.slice(ndarray::s![start..start + len, ..]).to_owned();
                batch.push((chunk, *label));
            }
            let (loss, grads) = xvector_loss_and_gradients(&trained, &batch)?;
            epoch_loss += loss;

            let update = |p: &mut Dense, v: &mut (Array2<f64>, Array1<f64>), g: &(Array2<f64>, Array1<f64>)| {
                v.0.zip_mut_with(&g.0, |v, g| *v = hyper.momentum * *v - hyper.learning_rate * g);
                v.1.zip_mut_with(&g.1, |v, g| *v = hyper.momentum * *v - hyper.learning_rate * g);
                p.weights += &v.0;
                p.bias += &v.1;
            };
            for ((layer, v), g) in trained
                .frame_layers
                .iter_mut()
                .zip(&mut velocity.frame)
                .zip(&grads.frame)
            {
                update(&mut layer.dense, v, g);
            }
            for ((layer, v), g) in trained
                .segment_layers
                .iter_mut()
                .zip(&mut velocity.segment)
                .zip(&grads.segment)
            {
                update(layer, v, g);
            }
            update(&mut trained.output, &mut velocity.output, &grads.output);
        }
        history.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((trained, history))
}

/// Fraction of utterances whose argmax class matches the label.
pub fn classification_accuracy(model: &XVectorModel, data: &[(usize, FeatureMatrix)]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (label, feats) in data {
        if feats.num_frames() < model.config.min_frames() {
            continue;
        }
        let (_, log_probs) = xvector_forward(model, feats)?;
        let argmax = log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        correct += usize::from (argmax == *label);
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidInput("no scorable utterances".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(num_speakers: usize) -> XVectorConfig {
        XVectorConfig {
            input_dim: 4,
            frame_offsets: vec![vec![-1, 0, 1], vec![0]],
            frame_sizes: vec![6, 8],
            segment_sizes: vec![5, 4],
            num_speakers,
        }
    }

    fn features(rows: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(rows, 10.0, "test").unwrap()
    }

    #[test]
    fn constant_input_pools_epsilon_std() {
        let h = Array2::from_elem((20, 3), 4.2);
        let (mean, std) = pooling_stats(&h);
        for j in 0..3 {
            assert!((mean[j] - 4.2).abs() < 1e-12);
            assert!((std[j] - POOL_EPS.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_invariant_under_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let h = Array2::from_shape_fn((30, 4), |_| rng.gen_range(-1.0f64..1.0));
        let (mean_a, std_a) = pooling_stats(&h);
        let mut perm: Vec<usize> = (0..30).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = Array2::zeros(h.dim());
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.row_mut(dst).assign(&h.row(src));
        }
        let (mean_b, std_b) = pooling_stats(&shuffled);
        for j in 0..4 {
            assert!((mean_a[j] - mean_b[j]).abs() < 1e-12);
            assert!((std_a[j] - std_b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn context_free_model_ignores_frame_order() {
        let config = XVectorConfig {
            input_dim: 3,
            frame_offsets: vec![vec![0], vec![0]],
            frame_sizes: vec![5, 6],
            segment_sizes: vec![4, 4],
            num_speakers: 3,
        };
        let model = XVectorModel::init(config, 7).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let rows = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-1.0f64..1.0));
        let (emb_a, _) = xvector_forward(&model, &features(rows.clone())).unwrap();
        let mut rev = Array2::zeros(rows.dim());
        for r in 0..12 {
            rev.row_mut(r).assign(&rows.row(11 - r));
        }
        let (emb_b, _) = xvector_forward(&model, &features(rev)).unwrap();
        for (a, b) in emb_a.iter().zip(&emb_b) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn paper_config_embedding_dim() {
        let config = XVectorConfig::paper(23, 42);
        assert_eq!(config.embedding_dim(), 512);
        assert_eq!(config.min_frames(), 15);
        // pooled vector is mean+std of the 1500-unit layer
        let model = XVectorModel::init(config, 0).unwrap();
        assert_eq!(model.segment_layers[0].weights.ncols(), 3000);
        assert_eq!(model.segment_layers[0].weights.nrows(), 512);
    }

    #[test]
    fn too_few_frames_rejected() {
        let model = XVectorModel::init(tiny_config(3), 1).unwrap();
        // span is 1+2*(1+0)=3 frames; 2 frames must fail
        let rows = Array2::zeros((2, 4));
        assert!(xvector_forward(&model, &features(rows)).is_err());
    }

    #[test]
    fn uniform_output_loss_is_log_num_speakers() {
        let mut model = XVectorModel::init(tiny_config(7), 3).unwrap();
        for layer in &mut model.frame_layers {
            layer.dense.weights.fill(0.0);
        }
        for layer in &mut model.segment_layers {
            layer.weights.fill(0.0);
        }
        model.output.weights.fill(0.0);
        let rows = Array2::from_elem((10, 4), 0.5);
        let batch = vec![(rows, 2usize)];
        let (loss, _) = xvector_loss_and_gradients(&model, &batch).unwrap();
        assert!((loss - (7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_is_non_negative() {
        let model = XVectorModel::init(tiny_config(4), 9).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..5 {
            let rows = Array2::from_shape_fn((9, 4), |_| rng.gen_range(-1.0f64..1.0));
            let batch = vec![(rows, rng.gen_range(0..4))];
            let (loss, _) = xvector_loss_and_gradients(&model, &batch).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let model = XVectorModel::init(tiny_config(3), 1).unwrap();
        let rows = Array2::zeros((8, 4));
        assert!(xvector_loss_and_gradients(&model, &[(rows, 3usize)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = XVectorModel::init(tiny_config(3), 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let batch: Vec<(Array2<f64>, usize)> = (0..3)
            .map(|i| {
                (
                    Array2::from_shape_fn((7 + i, 4), |_| rng.gen_range(-1.0f64..1.0)),
                    i % 3,
                )
            })
            .collect();
        let (_, grads) = xvector_loss_and_gradients(&model, &batch).unwrap();

        let step = 1e-5;
        let check = |analytic: f64, numeric: f64, what: &str| {
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(
                ((numeric - analytic) / denom).abs() < 1e-3,
                "{what}: numeric {numeric} vs analytic {analytic}"
            );
        };
        // spot check a handful of weights from every parameter group
        let mut m = model.clone();
        for li in 0..m.frame_layers.len() {
            for widx in [0usize, 3, 7] {
                let orig = m.frame_layers[li].dense.weights.as_slice().unwrap()[widx];
                m.frame_layers[li].dense.weights.as_slice_mut().unwrap()[widx] = orig + step;
                let up = xvector_loss_and_gradients(&m, &batch).unwrap().0;
                m.frame_layers[li].dense.weights.as_slice_mut().unwrap()[widx] = orig - step;
                let down = xvector_loss_and_gradients(&m, &batch).unwrap().0;
                m.frame_layers[li].dense.weights.as_slice_mut().unwrap()[widx] = orig;
                check(
                    grads.frame[li].0.as_slice().unwrap()[widx],
                    (up - down) / (2.0 * step),
                    &format!("frame layer {li} weight {widx}"),
                );
            }
        }
        for si in 0..m.segment_layers.len() {
            for widx in [0usize, 5] {
                let orig = m.segment_layers[si].weights.as_slice().unwrap()[widx];
                m.segment_layers[si].weights.as_slice_mut().unwrap()[widx] = orig + step;
                let up = xvector_loss_and_gradients(&m, &batch).unwrap().0;
                m.segment_layers[si].weights.as_slice_mut().unwrap()[widx] = orig - step;
                let down = xvector_loss_and_gradients(&m, &batch).unwrap().0;
                m.segment_layers[si].weights.as_slice_mut().unwrap()[widx] = orig;
                check(
                    grads.segment[si].0.as_slice().unwrap()[widx],
                    (up - down) / (2.0 * step),
                    &format!("segment layer {si} weight {widx}"),
                );
            }
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xvec.svkm");
        let model = XVectorModel::init(tiny_config(5), 11).unwrap();
        model.save(&path).unwrap();
        assert_eq!(XVectorModel::load(&path).unwrap(), model);
    }

    #[test]
    fn short_utterances_excluded_from_training() {
        let model = XVectorModel::init(tiny_config(3), 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        // all utterances below the 500-frame bar: training must refuse
        let data: Vec<(usize, FeatureMatrix)> = (0..9)
            .map(|i| {
                let rows = Array2::from_shape_fn((100, 4), |_| rng.gen_range(-1.0f64..1.0));
                (i % 3, features(rows))
            })
            .collect();
        assert!(train_xvector(&model, &data, &XVecTrainHyper::default()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let model = XVectorModel::init(tiny_config(3), 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let data: Vec<(usize, FeatureMatrix)> = (0..6)
            .map(|i| {
                let base = (i % 3) as f64;
                let rows =
                    Array2::from_shape_fn((60, 4), |_| base + rng.gen_range(-0.5f64..0.5));
                (i % 3, features(rows))
            })
            .collect();
        let hyper = XVecTrainHyper {
            chunk_min: 20,
            chunk_max: 40,
            batch_size: 4,
            epochs: 3,
            min_utt_frames: 50,
            seed: 3,
            ..XVecTrainHyper::default()
        };
        let (a, ha) = train_xvector(&model, &data, &hyper).unwrap();
        let (b, hb) = train_xvector(&model, &data, &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }
}
