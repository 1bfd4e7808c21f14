//! Total-variability subspace training and i-vector extraction.
//!
//! The posterior of the utterance factor has precision
//! `L_u = I + sum_k n_uk T_k' S_k^-1 T_k` and mean `L_u^-1 T' S^-1 f~_u`,
//! where `f~` are the UBM-mean-centered first-order statistics and `S` the
//! UBM diagonal covariances.

use super::ubm::{read_ubm, write_ubm, GmmUbm, SuffStats};
use crate::container::{atomic_write, BinReader, BinWriter, ModelKind};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct IVectorExtractor {
    /// (K*D) x R total-variability matrix, component-major row blocks.
    pub t_matrix: Array2<f64>,
    pub ubm: GmmUbm,
    pub r: usize,
}

impl IVectorExtractor {
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.model_header(ModelKind::IVector)?;
            w.u32(self.r as u32)?;
            write_ubm(&mut w, &self.ubm)?;
            w.f64_slice(self.t_matrix.as_slice().unwrap())
        })
    }

    pub fn load(path: &Path) -> Result<IVectorExtractor> {
        let mut r = BinReader::open(path)?;
        r.expect_model(ModelKind::IVector)?;
        let rank = r.u32()? as usize;
        let ubm = read_ubm(&mut r)?;
        let kd = ubm.num_components() * ubm.dim();
        let t = r.f64_vec(kd * rank)?;
        let t_matrix = Array2::from_shape_vec((kd, rank), t)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(IVectorExtractor {
            t_matrix,
            ubm,
            r: rank,
        })
    }
}

/// Gram matrices `T_k' S_k^-1 T_k` for every component, recomputed whenever
/// `T` changes.
fn component_grams(t: &Array2<f64>, ubm: &GmmUbm) -> Vec<DMatrix<f64>> {
    let (k, d, r) = (ubm.num_components(), ubm.dim(), t.ncols());
    (0..k)
        .map(|k_i| {
            let mut gram = DMatrix::zeros(r, r);
            for d_i in 0..d {
                let row = k_i * d + d_i;
                let inv_var = 1.0 / ubm.variances[(k_i, d_i)];
                for a in 0..r {
                    let ta = t[(row, a)] * inv_var;
                    for b in a..r {
                        gram[(a, b)] += ta * t[(row, b)];
                    }
                }
            }
            // mirror the upper triangle
            for a in 0..r {
                for b in 0..a {
                    gram[(a, b)] = gram[(b, a)];
                }
            }
            gram
        })
        .collect()
}

struct Posterior {
    mean: DVector<f64>,
    /// L_u^-1
    covariance: DMatrix<f64>,
    /// -0.5 logdet L_u + 0.5 b' L_u^-1 b: the utterance's marginal
    /// log-likelihood up to a T-independent constant.
    log_evidence: f64,
}

fn posterior(
    t: &Array2<f64>,
    ubm: &GmmUbm,
    grams: &[DMatrix<f64>],
    stats: &SuffStats,
) -> Result<Posterior> {
    let r = t.ncols();
    let (k, d) = (ubm.num_components(), ubm.dim());
    let mut precision = DMatrix::identity(r, r);
    for k_i in 0..k {
        let nk = stats.n[k_i];
        if nk != 0.0 {
            precision += &grams[k_i] * nk;
        }
    }
    let mut b = DVector::zeros(r);
    for k_i in 0..k {
        for d_i in 0..d {
            let centered = stats.f[(k_i, d_i)] - stats.n[k_i] * ubm.means[(k_i, d_i)];
            if centered == 0.0 {
                continue;
            }
            let scaled = centered / ubm.variances[(k_i, d_i)];
            let row = k_i * d + d_i;
            for a in 0..r {
                b[a] += scaled * t[(row, a)];
            }
        }
    }
    let chol = Cholesky::new(precision.clone())
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&b);
    let covariance = chol.inverse();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_evidence = -0.5 * logdet + 0.5 * b.dot(&mean);
    Ok(Posterior {
        mean,
        covariance,
        log_evidence,
    })
}

/// EM training of the total-variability matrix. Returns the extractor and
/// the per-iteration auxiliary objective (marginal log-likelihood up to a
/// constant), which is non-decreasing.
pub fn train_tv(
    stats: &[SuffStats],
    ubm: &GmmUbm,
    r: usize,
    iters: usize,
    seed: u64,
) -> Result<(IVectorExtractor, Vec<f64>)> {
    let (k, d) = (ubm.num_components(), ubm.dim());
    let kd = k * d;
    if r == 0 || r > kd {
        return Err(Error::InvalidInput(format!(
            "i-vector dim must lie in 1..={kd}, got {r}"
        )));
    }
    if stats.len() < r {
        return Err(Error::InvalidInput(format!(
            "need at least {r} utterances to train a rank-{r} subspace, got {}",
            stats.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut t = Array2::from_shape_fn((kd, r), |_| rng.gen_range(-0.1..0.1));

    let mut history = Vec::with_capacity(iters);
    for _iter in 0..iters {
        let grams = component_grams(&t, ubm);
        let mut aux = 0.0;
        // per-component accumulators: A_k = sum_u n_uk E[ww'], C_k = sum_u f~_uk E[w]'
        let mut acc_a: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(r, r)).collect();
        let mut acc_c: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(d, r)).collect();
        for utt in stats {
            let post = posterior(&t, ubm, &grams, utt)?;
            aux += post.log_evidence;
            let second_moment = &post.covariance + &post.mean * post.mean.transpose();
            for k_i in 0..k {
                let nk = utt.n[k_i];
                if nk != 0.0 {
                    acc_a[k_i] += &second_moment * nk;
                }
                for d_i in 0..d {
                    let centered = utt.f[(k_i, d_i)] - nk * ubm.means[(k_i, d_i)];
                    if centered != 0.0 {
                        for a in 0..r {
                            acc_c[k_i][(d_i, a)] += centered * post.mean[a];
                        }
                    }
                }
            }
        }
        history.push(aux);

        // row-block solve: T_k = C_k A_k^-1, ridged
        for k_i in 0..k {
            let mut a = acc_a[k_i].clone();
            for i in 0..r {
                a[(i, i)] += 1e-8;
            }
            let chol = Cholesky::new(a).ok_or_else(|| {
                Error::Numeric(format!("singular accumulator for component {k_i}"))
            })?;
            // solve A X = C' so that T_k = X'
            let solved = chol.solve(&acc_c[k_i].transpose());
            for d_i in 0..d {
                for a_i in 0..r {
                    t[(k_i * d + d_i, a_i)] = solved[(a_i, d_i)];
                }
            }
        }
    }
    Ok((
        IVectorExtractor {
            t_matrix: t,
            ubm: ubm.clone(),
            r,
        },
        history,
    ))
}

/// Posterior-mean i-vector of one utterance.
pub fn extract_ivector(ext: &IVectorExtractor, stats: &SuffStats) -> Result<Vec<f64>> {
    Ok(extract_ivectors(ext, std::slice::from_ref(stats))?.pop().unwrap())
}

/// Batch extraction; the per-component Gram matrices are computed once.
pub fn extract_ivectors(ext: &IVectorExtractor, stats: &[SuffStats]) -> Result<Vec<Vec<f64>>> {
    for s in stats {
        if s.n.len() != ext.ubm.num_components() || s.f.ncols() != ext.ubm.dim() {
            return Err(Error::ShapeMismatch(format!(
                "statistics of shape {}x{} do not match the {}x{} UBM",
                s.n.len(),
                s.f.ncols(),
                ext.ubm.num_components(),
                ext.ubm.dim()
            )));
        }
    }
    let grams = component_grams(&ext.t_matrix, &ext.ubm);
    stats
        .iter()
        .map(|s| {
            posterior(&ext.t_matrix, &ext.ubm, &grams, s)
                .map(|p| p.mean.iter().cloned().collect())
        })
        .collect()
}
