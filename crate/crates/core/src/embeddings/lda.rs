//! Linear discriminant analysis with global-mean centering and length
//! normalization.

use crate::container::{atomic_write, BinReader, BinWriter, ModelKind};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaProjection {
    /// (in_dim x out_dim), columns are discriminant directions.
    pub matrix: Array2<f64>,
    pub global_mean: Array1<f64>,
}

impl LdaProjection {
    pub fn in_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.model_header(ModelKind::Lda)?;
            w.u32(self.in_dim() as u32)?;
            w.u32(self.out_dim() as u32)?;
            w.f64_slice(self.matrix.as_slice().unwrap())?;
            w.f64_slice(self.global_mean.as_slice().unwrap())
        })
    }

    pub fn load(path: &Path) -> Result<LdaProjection> {
        let mut r = BinReader::open(path)?;
        r.expect_model(ModelKind::Lda)?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let matrix = Array2::from_shape_vec((in_dim, out_dim), r.f64_vec(in_dim * out_dim)?)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let global_mean = Array1::from_vec(r.f64_vec(in_dim)?);
        Ok(LdaProjection {
            matrix,
            global_mean,
        })
    }
}

/// Generalized eigenvectors of the between/within scatter pencil, top
/// `out_dim` by eigenvalue. The within-class scatter is ridged by
/// 1e-8 * trace / dim.
pub fn train_lda(
    vectors: &Array2<f64>,
    labels: &[usize],
    out_dim: usize,
) -> Result<LdaProjection> {
    let (n, dim) = (vectors.nrows(), vectors.ncols());
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} vectors but {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("no training vectors".into()));
    }
    let num_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let populated = counts.iter().filter(|&&c| c > 0).count();
    if populated < 2 {
        return Err(Error::InvalidInput("need at least two speakers".into()));
    }
    if out_dim == 0 || out_dim > dim || out_dim > populated - 1 {
        return Err(Error::InvalidInput(format!(
            "out_dim {out_dim} exceeds min(dim {dim}, classes-1 {})",
            populated - 1
        )));
    }

    let mut global_mean = Array1::<f64>::zeros(dim);
    for row in vectors.rows() {
        global_mean += &row;
    }
    global_mean /= n as f64;

    let mut class_means = Array2::<f64>::zeros((num_classes, dim));
    for (row, &l) in vectors.rows().into_iter().zip(labels) {
        for c in 0..dim {
            class_means[(l, c)] += row[c];
        }
    }
    for (k, &count) in counts.iter().enumerate() {
        if count > 0 {
            for c in 0..dim {
                class_means[(k, c)] /= count as f64;
            }
        }
    }

    let mut within = DMatrix::<f64>::zeros(dim, dim);
    for (row, &l) in vectors.rows().into_iter().zip(labels) {
        for a in 0..dim {
            let da = row[a] - class_means[(l, a)];
            for b in 0..dim {
                within[(a, b)] += da * (row[b] - class_means[(l, b)]);
            }
        }
    }
    within /= n as f64;
    let ridge = 1e-8 * within.trace() / dim as f64;
    for i in 0..dim {
        within[(i, i)] += ridge.max(1e-12);
    }

    let mut between = DMatrix::<f64>::zeros(dim, dim);
    for (k, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        for a in 0..dim {
            let da = class_means[(k, a)] - global_mean[a];
            for b in 0..dim {
                between[(a, b)] += count as f64 * da * (class_means[(k, b)] - global_mean[b]);
            }
        }
    }
    between /= n as f64;

    // reduce S_b v = lambda S_w v to a symmetric problem via S_w = L L'
    let chol = Cholesky::new(within)
        .ok_or_else(|| Error::Numeric("within-class scatter is not positive definite".into()))?;
    let l = chol.l();
    let a = l.solve_lower_triangular(&between).ok_or_else(|| {
        Error::Numeric("triangular solve failed on the within-class factor".into())
    })?;
    let m = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    // symmetrize against roundoff before the eigendecomposition
    let m = (&m + &m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let lt = l.transpose();
    let mut matrix = Array2::<f64>::zeros((dim, out_dim));
    for (col, &idx) in order.iter().take(out_dim).enumerate() {
        let u = eig.eigenvectors.column(idx).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        // fix the sign so results are reproducible across runs
        let lead = v
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for row in 0..dim {
            matrix[(row, col)] = sign * v[row];
        }
    }
    Ok(LdaProjection {
        matrix,
        global_mean,
    })
}

/// Center, project and length-normalize one embedding.
pub fn project_and_norm(p: &LdaProjection, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != p.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "vector has dim {}, projection expects {}",
            v.len(),
            p.in_dim()
        )));
    }
    let centered = Array1::from_iter(v.iter().zip(&p.global_mean).map(|(x, m)| x - m));
    let projected = p.matrix.t().dot(&centered);
    let norm = projected.dot(&projected).sqrt();
    if norm < 1e-12 {
        return Err(Error::Numeric(
            "projected embedding has zero norm".into(),
        ));
    }
    Ok(projected.iter().map(|x| x / norm).collect())
}
