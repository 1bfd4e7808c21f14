//! Short-time Fourier analysis and weighted overlap-add resynthesis.

use super::{FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowShape {
    Hamming,
    Hann,
}

impl WindowShape {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len - 1).max(1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowShape::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowShape::Hann => 0.5 - 0.5 * phase.cos(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window_shape: WindowShape,
}

impl StftConfig {
    pub fn new(
        window_length: usize,
        hop: usize,
        fft_size: usize,
        window_shape: WindowShape,
    ) -> Result<Self> {
        if hop == 0 || hop > window_length || window_length > fft_size {
            return Err(Error::InvalidInput(format!(
                "need 0 < hop <= window_length <= fft_size, got {hop}/{window_length}/{fft_size}"
            )));
        }
        if !fft_size.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "fft_size must be a power of two, got {fft_size}"
            )));
        }
        Ok(Self {
            window_length,
            hop,
            fft_size,
            window_shape,
        })
    }

    /// 25 ms Hamming window, 10 ms hop, 256-point transform at 8 kHz.
    pub fn default_8k() -> Self {
        Self {
            window_length: 200,
            hop: 80,
            fft_size: 256,
            window_shape: WindowShape::Hamming,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        if num_samples < self.window_length {
            0
        } else {
            (num_samples - self.window_length) / self.hop + 1
        }
    }
}

/// One-sided complex spectra, shape (num_frames x fft_size/2+1).
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frame, window, zero-pad and transform. Frame t covers samples
/// [t*hop, t*hop + window_length).
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let n = w.samples.len();
    if n < cfg.window_length {
        return Err(Error::InvalidInput(format!(
            "signal of {n} samples is shorter than one {}-sample window",
            cfg.window_length
        )));
    }
    let num_frames = cfg.num_frames(n);
    let window = cfg.window_shape.coefficients(cfg.window_length);
    let bins = cfg.bins();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];

    let mut frames = Array2::zeros((num_frames, bins));
    for t in 0..num_frames {
        let start = t * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < cfg.window_length {
                Complex64::new(w.samples[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for b in 0..bins {
            frames[(t, b)] = buf[b];
        }
    }
    Ok(ComplexSpectrogram {
        frames,
        config: *cfg,
        sample_rate: w.sample_rate,
    })
}

/// Weighted overlap-add resynthesis. The synthesis window equals the
/// analysis window; the sum of squared windows is floored at 1e-8 before
/// division. Output length is (num_frames-1)*hop + window_length.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = &s.config;
    if s.bins() != cfg.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, config implies {}",
            s.bins(),
            cfg.bins()
        )));
    }
    if s.num_frames() == 0 {
        return Err(Error::InvalidInput("spectrogram has no frames".into()));
    }
    let window = cfg.window_shape.coefficients(cfg.window_length);
    let out_len = (s.num_frames() - 1) * cfg.hop + cfg.window_length;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];

    let mut acc = vec![0.0f64; out_len];
    let mut wsum = vec![0.0f64; out_len];
    let scale = 1.0 / cfg.fft_size as f64;
    for t in 0..s.num_frames() {
        // rebuild the full spectrum from the one-sided half (real signal)
        for b in 0..s.bins() {
            buf[b] = s.frames[(t, b)];
        }
        for b in s.bins()..cfg.fft_size {
            buf[b] = s.frames[(t, cfg.fft_size - b)].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..cfg.window_length {
            acc[start + i] += buf[i].re * scale * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    for (a, ws) in acc.iter_mut().zip(&wsum) {
        *a /= ws.max(1e-8);
    }
    Waveform::new(acc, s.sample_rate)
}

/// Natural log of the magnitude spectrum with a 1e-10 floor offset.
pub fn log_magnitude(s: &ComplexSpectrogram) -> FeatureMatrix {
    let rows = s.frames.mapv(|c| (c.norm() + 1e-10).ln());
    let shift_ms = s.config.hop as f64 * 1000.0 / s.sample_rate as f64;
    FeatureMatrix {
        rows,
        frame_shift_ms: shift_ms,
        descriptor: format!("logmag{}", s.bins()),
    }
}

/// Reconstruction SNR in dB of `recon` against `reference` over a sample
/// range (test helper shared with the acceptance suite).
pub fn reconstruction_snr_db(reference: &[f64], recon: &[f64], range: std::ops::Range<usize>) -> f64 {
    let mut sig = 0.0;
    let mut err = 0.0;
    for i in range {
        sig += reference[i] * reference[i];
        let d = reference[i] - recon[i];
        err += d * d;
    }
    10.0 * (sig / err.max(1e-300)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 8000).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(200, 0, 256, WindowShape::Hamming).is_err());
        assert!(StftConfig::new(200, 240, 256, WindowShape::Hamming).is_err());
        assert!(StftConfig::new(300, 80, 256, WindowShape::Hamming).is_err());
        assert!(StftConfig::new(200, 80, 250, WindowShape::Hamming).is_err());
        assert!(StftConfig::new(200, 80, 256, WindowShape::Hamming).is_ok());
    }

    #[test]
    fn zero_signal_zero_magnitudes() {
        let cfg = StftConfig::default_8k();
        let s = stft(&wave(vec![0.0; 1000]), &cfg).unwrap();
        assert!(s.frames.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_centered_tone_peaks_at_bin_10() {
        // 312.5 Hz = 10 * 8000 / 256
        let cfg = StftConfig::default_8k();
        let samples: Vec<f64> = (0..8000)
            .map(|n| (2.0 * PI * 312.5 * n as f64 / 8000.0).sin())
            .collect();
        let s = stft(&wave(samples), &cfg).unwrap();
        for t in 0..s.num_frames() {
            let argmax = (0..s.bins())
                .max_by(|&a, &b| {
                    s.frames[(t, a)]
                        .norm()
                        .partial_cmp(&s.frames[(t, b)].norm())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(argmax, 10, "frame {t}");
        }
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default_8k();
        assert_eq!(cfg.num_frames(8000), 98);
        let s = stft(&wave(vec![0.1; 8000]), &cfg).unwrap();
        assert_eq!(s.num_frames(), 98);
        assert_eq!(s.bins(), 129);
    }

    #[test]
    fn too_short_signal_errors() {
        let cfg = StftConfig::default_8k();
        assert!(stft(&wave(vec![0.0; 199]), &cfg).is_err());
    }

    #[test]
    fn roundtrip_snr_above_60db() {
        let cfg = StftConfig::default_8k();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let w = wave(samples);
        let s = stft(&w, &cfg).unwrap();
        let r = istft(&s).unwrap();
        let snr = reconstruction_snr_db(&w.samples, &r.samples, 0..r.samples.len());
        assert!(snr >= 60.0, "snr={snr}");
    }

    #[test]
    fn single_frame_reconstruction() {
        let cfg = StftConfig::default_8k();
        let samples: Vec<f64> = (0..200).map(|n| (n as f64 / 200.0) - 0.5).collect();
        let w = wave(samples.clone());
        let s = stft(&w, &cfg).unwrap();
        assert_eq!(s.num_frames(), 1);
        let r = istft(&s).unwrap();
        assert_eq!(r.samples.len(), 200);
        for (a, b) in samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn istft_zero_is_zero() {
        let cfg = StftConfig::default_8k();
        let s = stft(&wave(vec![0.0; 400]), &cfg).unwrap();
        let r = istft(&s).unwrap();
        assert!(r.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn istft_shape_mismatch_errors() {
        let cfg = StftConfig::default_8k();
        let mut s = stft(&wave(vec![0.1; 400]), &cfg).unwrap();
        s.frames = Array2::zeros((2, 64));
        assert!(istft(&s).is_err());
    }

    #[test]
    fn log_magnitude_values() {
        let cfg = StftConfig::default_8k();
        let s = stft(&wave(vec![0.0; 400]), &cfg).unwrap();
        let f = log_magnitude(&s);
        assert_eq!(f.dim(), 129);
        assert_eq!(f.descriptor, "logmag129");
        let expected = (1e-10f64).ln();
        assert!(f.rows.iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn log_magnitude_of_unit_bin() {
        let cfg = StftConfig::default_8k();
        let mut s = stft(&wave(vec![0.0; 400]), &cfg).unwrap();
        s.frames[(0, 3)] = Complex64::new(1.0, 0.0);
        let f = log_magnitude(&s);
        assert!(f.rows[(0, 3)].abs() < 1e-9);
    }
}
