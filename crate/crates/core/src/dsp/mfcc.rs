//! MFCC extraction, delta features and short-time mean/variance
//! normalization.

use super::stft::{stft, StftConfig};
use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use ndarray::Array2;
use std::f64::consts::PI;

/// The two cepstral front ends differ in filterbank size, bandwidth and
/// coefficient count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfccVariant {
    /// 24 mel filters over 120-3800 Hz, c0 plus 19 coefficients.
    IVector,
    /// 23 mel filters over 20-3700 Hz, 23 coefficients.
    XVector,
}

impl MfccVariant {
    fn num_filters(self) -> usize {
        match self {
            MfccVariant::IVector => 24,
            MfccVariant::XVector => 23,
        }
    }

    fn band(self) -> (f64, f64) {
        match self {
            MfccVariant::IVector => (120.0, 3800.0),
            MfccVariant::XVector => (20.0, 3700.0),
        }
    }

    pub fn num_coefficients(self) -> usize {
        match self {
            MfccVariant::IVector => 20,
            MfccVariant::XVector => 23,
        }
    }

    fn descriptor(self) -> &'static str {
        match self {
            MfccVariant::IVector => "mfcc20",
            MfccVariant::XVector => "mfcc23",
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters evaluated at FFT bin centers, shape (filters x bins).
fn mel_filterbank(num_filters: usize, low_hz: f64, high_hz: f64, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let low = hz_to_mel(low_hz);
    let high = hz_to_mel(high_hz);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(low + (high - low) * i as f64 / (num_filters + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((num_filters, bins));
    for m in 0..num_filters {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[(m, b)] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II basis, shape (coeffs x filters).
fn dct_basis(num_coeffs: usize, num_filters: usize) -> Array2<f64> {
    let mut basis = Array2::zeros((num_coeffs, num_filters));
    let norm0 = (1.0 / num_filters as f64).sqrt();
    let norm = (2.0 / num_filters as f64).sqrt();
    for k in 0..num_coeffs {
        for m in 0..num_filters {
            let angle = PI * k as f64 * (2 * m + 1) as f64 / (2 * num_filters) as f64;
            basis[(k, m)] = if k == 0 { norm0 } else { norm } * angle.cos();
        }
    }
    basis
}

/// Cepstral features on 25 ms Hamming / 10 ms frames at 8 kHz.
pub fn mfcc(w: &Waveform, variant: MfccVariant) -> Result<FeatureMatrix> {
    if w.sample_rate != 8000 {
        return Err(Error::UnsupportedFormat(format!(
            "mfcc requires 8000 Hz audio, got {} Hz",
            w.sample_rate
        )));
    }
    let cfg = StftConfig::default_8k();
    let spec = stft(w, &cfg)?;
    let (low, high) = variant.band();
    let fb = mel_filterbank(variant.num_filters(), low, high, cfg.fft_size, w.sample_rate);
    let dct = dct_basis(variant.num_coefficients(), variant.num_filters());

    let power = spec.frames.mapv(|c| c.norm_sqr());
    // (frames x bins) * (bins x filters)
    let energies = power.dot(&fb.t());
    let logs = energies.mapv(|e| e.max(1e-10).ln());
    let rows = logs.dot(&dct.t());
    FeatureMatrix::new(rows, 10.0, variant.descriptor())
}

/// Regression deltas over a five-frame window with edge replication,
/// followed by double deltas of the deltas; output is [x | d | dd].
pub fn append_deltas(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = f.num_frames();
    if t < 5 {
        return Err(Error::InvalidInput(format!(
            "delta computation needs at least 5 frames, got {t}"
        )));
    }
    let d = regression_deltas(&f.rows);
    let dd = regression_deltas(&d);
    let dim = f.dim();
    let mut out = Array2::zeros((t, dim * 3));
    for r in 0..t {
        for c in 0..dim {
            out[(r, c)] = f.rows[(r, c)];
            out[(r, dim + c)] = d[(r, c)];
            out[(r, 2 * dim + c)] = dd[(r, c)];
        }
    }
    FeatureMatrix::new(out, f.frame_shift_ms, format!("{}+deltas", f.descriptor))
}

fn regression_deltas(x: &Array2<f64>) -> Array2<f64> {
    let (t, dim) = (x.nrows(), x.ncols());
    let mut out = Array2::zeros((t, dim));
    let denom = 2.0 * (1.0 + 4.0); // 2 * sum k^2, k in {1,2}
    let clamp = |i: isize| -> usize { i.clamp(0, t as isize - 1) as usize };
    for r in 0..t {
        for c in 0..dim {
            let mut acc = 0.0;
            for k in 1..=2isize {
                let fwd = x[(clamp(r as isize + k), c)];
                let bwd = x[(clamp(r as isize - k), c)];
                acc += k as f64 * (fwd - bwd);
            }
            out[(r, c)] = acc / denom;
        }
    }
    out
}

/// Sliding-window mean/variance normalization. The window is centered on
/// each frame, truncated at the edges, and the standard deviation is
/// floored at 1e-8.
pub fn stmvn(f: &FeatureMatrix, window_s: f64) -> Result<FeatureMatrix> {
    if window_s <= 0.0 {
        return Err(Error::InvalidInput("stmvn window must be positive".into()));
    }
    let t = f.num_frames();
    let dim = f.dim();
    let half = (window_s * 1000.0 / f.frame_shift_ms / 2.0).round() as usize;

    // prefix sums per dimension
    let mut sum = Array2::<f64>::zeros((t + 1, dim));
    let mut sumsq = Array2::<f64>::zeros((t + 1, dim));
    for r in 0..t {
        for c in 0..dim {
            let v = f.rows[(r, c)];
            sum[(r + 1, c)] = sum[(r, c)] + v;
            sumsq[(r + 1, c)] = sumsq[(r, c)] + v * v;
        }
    }

    let mut out = Array2::zeros((t, dim));
    for r in 0..t {
        let lo = r.saturating_sub(half);
        let hi = (r + half + 1).min(t);
        let n = (hi - lo) as f64;
        for c in 0..dim {
            let s = sum[(hi, c)] - sum[(lo, c)];
            let ss = sumsq[(hi, c)] - sumsq[(lo, c)];
            let mean = s / n;
            let var = (ss / n - mean * mean).max(0.0);
            let std = var.sqrt().max(1e-8);
            out[(r, c)] = (f.rows[(r, c)] - mean) / std;
        }
    }
    FeatureMatrix::new(out, f.frame_shift_ms, f.descriptor.clone())
}
