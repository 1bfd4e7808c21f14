//! Diagonal-covariance GMM universal background model: seeded k-means++
//! initialization, EM, and Baum-Welch sufficient statistics.

use crate::container::{atomic_write, BinReader, BinWriter, ModelKind};
use crate::dsp::{FeatureMatrix, FrameMask};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

const LOG_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmUbm {
    /// K mixture weights, positive, summing to one.
    pub weights: Vec<f64>,
    /// K x D component means.
    pub means: Array2<f64>,
    /// K x D diagonal covariances.
    pub variances: Array2<f64>,
}

impl GmmUbm {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// log w_k - 0.5 * sum_d ln(2 pi v_kd), one entry per component.
    fn log_consts(&self) -> Vec<f64> {
        (0..self.num_components())
            .map(|k| {
                let logdet: f64 = self.variances.row(k).iter().map(|&v| v.ln()).sum();
                self.weights[k].ln() - 0.5 * (self.dim() as f64 * LOG_2PI + logdet)
            })
            .collect()
    }

    /// Per-component log joint densities log(w_k N(x; m_k, v_k)).
    fn log_joint(&self, x: &[f64], log_consts: &[f64], out: &mut [f64]) {
        for k in 0..self.num_components() {
            let mut quad = 0.0;
            let mean = self.means.row(k);
            let var = self.variances.row(k);
            for d in 0..self.dim() {
                let diff = x[d] - mean[d];
                quad += diff * diff / var[d];
            }
            out[k] = log_consts[k] - 0.5 * quad;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.model_header(ModelKind::Ubm)?;
            write_ubm(&mut w, self)
        })
    }

    pub fn load(path: &Path) -> Result<GmmUbm> {
        let mut r = BinReader::open(path)?;
        r.expect_model(ModelKind::Ubm)?;
        read_ubm(&mut r)
    }
}

pub(crate) fn write_ubm<W: std::io::Write>(
    w: &mut BinWriter<'_, W>,
    ubm: &GmmUbm,
) -> Result<()> {
    w.u32(ubm.num_components() as u32)?;
    w.u32(ubm.dim() as u32)?;
    w.f64_slice(&ubm.weights)?;
    w.f64_slice(ubm.means.as_slice().unwrap())?;
    w.f64_slice(ubm.variances.as_slice().unwrap())
}

pub(crate) fn read_ubm<R: std::io::Read>(r: &mut BinReader<R>) -> Result<GmmUbm> {
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let weights = r.f64_vec(k)?;
    let means = Array2::from_shape_vec((k, d), r.f64_vec(k * d)?)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let variances = Array2::from_shape_vec((k, d), r.f64_vec(k * d)?)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(GmmUbm {
        weights,
        means,
        variances,
    })
}

fn pool_frames(features: &[FeatureMatrix]) -> Result<Array2<f64>> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no feature matrices given".into()));
    }
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::ShapeMismatch(
            "feature matrices have mixed dimensions".into(),
        ));
    }
    let total: usize = features.iter().map(|f| f.num_frames()).sum();
    let mut pooled = Array2::zeros((total, dim));
    let mut at = 0;
    for f in features {
        pooled
            .slice_mut(ndarray::s![at..at + f.num_frames(), ..])
            .assign(&f.rows);
        at += f.num_frames();
    }
    Ok(pooled)
}

/// Seeded k-means++ centers over the pooled frames.
fn kmeans_pp_init(frames: &Array2<f64>, k: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let n = frames.nrows();
    let mut centers = Array2::zeros((k, frames.ncols()));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&frames.row(first));
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(&frames.row(i), &centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut pick = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if pick < d {
                    chosen = i;
                    break;
                }
                pick -= d;
            }
            chosen
        };
        centers.row_mut(c).assign(&frames.row(idx));
        for i in 0..n {
            let d = squared_distance(&frames.row(i), &centers.row(c));
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    centers
}

fn squared_distance(a: &ndarray::ArrayView1<f64>, b: &ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// EM training of a diagonal GMM. Variances are floored at 0.01 times the
/// global per-dimension variance each M-step; the returned history holds
/// the total data log-likelihood at the start of each iteration.
pub fn train_ubm(
    features: &[FeatureMatrix],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(GmmUbm, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidInput("need at least one component".into()));
    }
    let frames = pool_frames(features)?;
    let (n, d) = (frames.nrows(), frames.ncols());
    if n < 10 * k {
        return Err(Error::InvalidInput(format!(
            "need at least {} frames to train {k} components, got {n}",
            10 * k
        )));
    }
    let global_mean = frames.mean_axis(Axis(0)).unwrap();
    let mut global_var = Array1::<f64>::zeros(d);
    for row in frames.rows() {
        for (c, &v) in row.iter().enumerate() {
            let diff = v - global_mean[c];
            global_var[c] += diff * diff;
        }
    }
    global_var /= n as f64;
    let floor = global_var.mapv(|v| (0.01 * v).max(1e-12));

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut ubm = GmmUbm {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp_init(&frames, k, &mut rng),
        variances: Array2::from_shape_fn((k, d), |(_, c)| global_var[c].max(floor[c])),
    };

    let mut history = Vec::with_capacity(iters);
    let mut log_joint = vec![0.0f64; k];
    for _iter in 0..iters {
        let log_consts = ubm.log_consts();
        let mut total_ll = 0.0;
        let mut acc_n = vec![0.0f64; k];
        let mut acc_x = Array2::<f64>::zeros((k, d));
        let mut acc_x2 = Array2::<f64>::zeros((k, d));
        for row in frames.rows() {
            let x = row.as_slice().unwrap();
            ubm.log_joint(x, &log_consts, &mut log_joint);
            let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = log_joint.iter().map(|&l| (l - max).exp()).sum();
            total_ll += max + norm.ln();
            for k_i in 0..k {
                let resp = (log_joint[k_i] - max).exp() / norm;
                acc_n[k_i] += resp;
                for c in 0..d {
                    acc_x[(k_i, c)] += resp * x[c];
                    acc_x2[(k_i, c)] += resp * x[c] * x[c];
                }
            }
        }
        history.push(total_ll);

        for k_i in 0..k {
            let nk = acc_n[k_i];
            if nk < 1e-8 {
                // starved component: keep its parameters, shrink its weight
                ubm.weights[k_i] = 1e-8;
                continue;
            }
            ubm.weights[k_i] = nk / n as f64;
            for c in 0..d {
                let mean = acc_x[(k_i, c)] / nk;
                ubm.means[(k_i, c)] = mean;
                let var = acc_x2[(k_i, c)] / nk - mean * mean;
                ubm.variances[(k_i, c)] = var.max(floor[c]);
            }
        }
        let wsum: f64 = ubm.weights.iter().sum();
        ubm.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    Ok((ubm, history))
}

/// Zero and first order Baum-Welch statistics. `f` holds raw first-order
/// sums; centering by the UBM means happens where the statistics are
/// consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub n: Vec<f64>,
    pub f: Array2<f64>,
}

impl SuffStats {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; k],
            f: Array2::zeros((k, d)),
        }
    }

    pub fn total_occupancy(&self) -> f64 {
        self.n.iter().sum()
    }

    /// First-order sums centered by the UBM means: f_k - n_k m_k.
    pub fn centered_f(&self, ubm: &GmmUbm) -> Array2<f64> {
        let mut out = self.f.clone();
        for k in 0..self.n.len() {
            for d in 0..self.f.ncols() {
                out[(k, d)] -= self.n[k] * ubm.means[(k, d)];
            }
        }
        out
    }
}

/// Accumulate statistics over the voice-active frames only.
pub fn accumulate_stats(ubm: &GmmUbm, f: &FeatureMatrix, mask: &FrameMask) -> Result<SuffStats> {
    if f.dim() != ubm.dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dim {}, UBM expects {}",
            f.dim(),
            ubm.dim()
        )));
    }
    if mask.len() != f.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} frames, features have {}",
            mask.len(),
            f.num_frames()
        )));
    }
    let k = ubm.num_components();
    let log_consts = ubm.log_consts();
    let mut stats = SuffStats::zeros(k, ubm.dim());
    let mut log_joint = vec![0.0f64; k];
    for (t, row) in f.rows.rows().into_iter().enumerate() {
        if !mask.active[t] {
            continue;
        }
        let x = row.as_slice().unwrap();
        ubm.log_joint(x, &log_consts, &mut log_joint);
        let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_joint.iter().map(|&l| (l - max).exp()).sum();
        for k_i in 0..k {
            let resp = (log_joint[k_i] - max).exp() / norm;
            stats.n[k_i] += resp;
            for c in 0..ubm.dim() {
                stats.f[(k_i, c)] += resp * x[c];
            }
        }
    }
    Ok(stats)
}
