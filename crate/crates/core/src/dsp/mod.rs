//! Audio I/O and signal/feature primitives.

mod filters;
mod mfcc;
mod stft;
mod vad;
mod wav;

pub use filters::{a_weight, fir_convolve, telephone_filter};
pub use mfcc::{append_deltas, mfcc, stmvn, MfccVariant};
pub use stft::{istft, log_magnitude, stft, ComplexSpectrogram, StftConfig, WindowShape};
pub use vad::{energy_vad, vad_frame_count};
pub use wav::{read_wav, write_wav};

use crate::container::{atomic_write, BinReader, BinWriter, FEATURE_MAGIC};
use crate::error::{Error, Result};
use ndarray::Array2;
use std::path::Path;

/// Analysis window used by the feature and VAD front end (25 ms / 10 ms).
pub const FRAME_WINDOW_MS: f64 = 25.0;
pub const FRAME_SHIFT_MS: f64 = 10.0;

/// Mono audio in the range [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform is empty".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::InvalidInput("waveform has non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean per-sample energy.
    pub fn mean_energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Per-frame feature rows (frames x dim).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f64>,
    pub frame_shift_ms: f64,
    pub descriptor: String,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>, frame_shift_ms: f64, descriptor: impl Into<String>) -> Result<Self> {
        if !rows.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "feature matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            rows,
            frame_shift_ms,
            descriptor: descriptor.into(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Keep only the rows flagged active in `mask`.
    pub fn select_active(&self, mask: &FrameMask) -> Result<FeatureMatrix> {
        if mask.len() != self.num_frames() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} frames, features have {}",
                mask.len(),
                self.num_frames()
            )));
        }
        let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask.active[i]).collect();
        let mut out = Array2::zeros((idx.len(), self.dim()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.rows.row(i));
        }
        Ok(FeatureMatrix {
            rows: out,
            frame_shift_ms: self.frame_shift_ms,
            descriptor: self.descriptor.clone(),
        })
    }

    /// Feature cache file: `SVKF1`, u32 num_frames, u32 dim, u32 reserved,
    /// then row-major f32 data.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| {
            let mut w = BinWriter::new(w, path);
            w.bytes(FEATURE_MAGIC)?;
            w.u32(self.num_frames() as u32)?;
            w.u32(self.dim() as u32)?;
            w.u32(0)?;
            for row in self.rows.rows() {
                for &v in row {
                    w.f32(v as f32)?;
                }
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<FeatureMatrix> {
        let mut r = BinReader::open(path)?;
        let mut magic = [0u8; 5];
        for b in magic.iter_mut() {
            *b = r.u8()?;
        }
        if &magic != FEATURE_MAGIC {
            return Err(r.malformed("bad magic, not a feature file"));
        }
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let _reserved = r.u32()?;
        let data = r.f32_vec(frames * dim)?;
        let rows = Array2::from_shape_vec((frames, dim), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        FeatureMatrix::new(rows, FRAME_SHIFT_MS, "cached")
    }
}

/// Boolean speech/non-speech flags, one per analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMask {
    pub active: Vec<bool>,
    pub frame_shift_ms: f64,
}

impl FrameMask {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Expand frame flags into a per-sample mask covering every sample that
    /// lies inside at least one active analysis window.
    pub fn sample_mask(&self, sample_rate: u32, num_samples: usize) -> Vec<bool> {
        let win = (FRAME_WINDOW_MS / 1000.0 * sample_rate as f64).round() as usize;
        let hop = (self.frame_shift_ms / 1000.0 * sample_rate as f64).round() as usize;
        let mut mask = vec![false; num_samples];
        for (t, &active) in self.active.iter().enumerate() {
            if !active {
                continue;
            }
            let start = t * hop;
            let end = (start + win).min(num_samples);
            for m in &mut mask[start.min(num_samples)..end] {
                *m = true;
            }
        }
        mask
    }
}

/// Number of 25 ms / 10 ms analysis frames that fit into `num_samples`.
pub fn frame_count(num_samples: usize, sample_rate: u32) -> usize {
    let win = (FRAME_WINDOW_MS / 1000.0 * sample_rate as f64).round() as usize;
    let hop = (FRAME_SHIFT_MS / 1000.0 * sample_rate as f64).round() as usize;
    if num_samples < win {
        0
    } else {
        (num_samples - win) / hop + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn waveform_invariants() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![0.5, -0.5], 8000).is_ok());
    }

    #[test]
    fn feature_matrix_rejects_nan() {
        let rows = array![[0.0, f64::INFINITY]];
        assert!(FeatureMatrix::new(rows, 10.0, "x").is_err());
    }

    #[test]
    fn feature_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.svkf");
        let rows = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let f = FeatureMatrix::new(rows, 10.0, "mfcc20").unwrap();
        f.save(&path).unwrap();
        let g = FeatureMatrix::load(&path).unwrap();
        assert_eq!(g.num_frames(), 2);
        assert_eq!(g.dim(), 3);
        // f32 storage keeps these small integers exact
        assert_eq!(g.rows, f.rows);
    }

    #[test]
    fn frame_count_matches_spec_arithmetic() {
        // 1 s at 8 kHz -> floor((8000-200)/80)+1 = 98 frames
        assert_eq!(frame_count(8000, 8000), 98);
        assert_eq!(frame_count(199, 8000), 0);
        assert_eq!(frame_count(200, 8000), 1);
    }

    #[test]
    fn sample_mask_covers_active_windows() {
        let mask = FrameMask {
            active: vec![true, false],
            frame_shift_ms: 10.0,
        };
        let m = mask.sample_mask(8000, 280);
        assert!(m[..200].iter().all(|&x| x));
        assert!(m[200..].iter().all(|&x| !x));
    }
}
