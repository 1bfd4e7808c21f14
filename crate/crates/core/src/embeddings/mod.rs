//! Utterance embedding front ends: GMM-UBM sufficient statistics with
//! total-variability i-vectors, LDA plus length normalization, and a TDNN
//! x-vector network with statistics pooling.

mod ivector;
mod lda;
mod ubm;
mod xvector;

pub use ivector::{extract_ivector, extract_ivectors, train_tv, IVectorExtractor};
pub use lda::{project_and_norm, train_lda, LdaProjection};
pub use ubm::{accumulate_stats, train_ubm, GmmUbm, SuffStats};
pub use xvector::{
    classification_accuracy, train_xvector, xvector_forward, xvector_loss_and_gradients,
    Dense, TdnnLayer, XVecTrainHyper, XVectorConfig, XVectorGrads, XVectorModel,
};

use crate::container::{atomic_write, BinReader, BinWriter, EMBEDDING_MAGIC};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Utterance embeddings keyed by id, stored as 32-bit floats on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingArchive {
    order: Vec<String>,
    vectors: BTreeMap<String, Vec<f32>>,
    dim: usize,
}

impl EmbeddingArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, utt_id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let utt_id = utt_id.into();
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding for {utt_id:?} has dim {}, archive holds {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vectors.insert(utt_id.clone(), vector).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate embedding id {utt_id:?}"
            )));
        }
        self.order.push(utt_id);
        Ok(())
    }

    pub fn get(&self, utt_id: &str) -> Result<&[f32]> {
        self.vectors
            .get(utt_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingId(format!("embedding {utt_id:?}")))
    }

    pub fn get_f64(&self, utt_id: &str) -> Result<Vec<f64>> {
        Ok(self.get(utt_id)?.iter().map(|&v| v as f64).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.bytes(EMBEDDING_MAGIC)?;
            w.u32(self.order.len() as u32)?;
            w.u32(self.dim as u32)?;
            for id in &self.order {
                w.string(id)?;
                w.f32_slice(&self.vectors[id])?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        let mut magic = [0u8; 5];
        for b in magic.iter_mut() {
            *b = r.u8()?;
        }
        if &magic != EMBEDDING_MAGIC {
            return Err(r.malformed("bad magic, not an embedding archive"));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut archive = EmbeddingArchive::new();
        for _ in 0..count {
            let id = r.string()?;
            let vec = r.f32_vec(dim)?;
            archive.insert(id, vec)?;
        }
        Ok(archive)
    }
}
