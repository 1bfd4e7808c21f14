//! FIR convolution, A-weighting and the telephone-band filter.

use super::Waveform;
use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

const A_WEIGHT_TAPS: usize = 513;
const TELEPHONE_TAPS: usize = 127;

/// Full linear convolution truncated to the input length. If the result
/// peaks above 1 it is rescaled to the input's peak.
pub fn fir_convolve(w: &Waveform, h: &[f64]) -> Result<Waveform> {
    if h.is_empty() {
        return Err(Error::InvalidInput("impulse response is empty".into()));
    }
    let full = convolve_full(&w.samples, h);
    let mut out: Vec<f64> = full[..w.samples.len()].to_vec();
    rescale_on_overflow(&mut out, w.peak());
    Waveform::new(out, w.sample_rate)
}

fn rescale_on_overflow(out: &mut [f64], input_peak: f64) {
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        let gain = input_peak / peak;
        for s in out.iter_mut() {
            *s *= gain;
        }
    }
}

/// Full-length linear convolution; direct for small products, FFT otherwise.
pub fn convolve_full(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    if x.len().saturating_mul(h.len()) <= 1 << 18 {
        let mut out = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                out[i + j] += xi * hj;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut b: Vec<Complex64> = h
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    ifft.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Analytic A-weighting magnitude response, unity at 1 kHz.
pub fn a_weight_response(f: f64) -> f64 {
    fn raw(f: f64) -> f64 {
        let f2 = f * f;
        let n = 12194.0f64 * 12194.0 * f2 * f2;
        let d = (f2 + 20.6 * 20.6)
            * ((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)).sqrt()
            * (f2 + 12194.0 * 12194.0);
        n / d
    }
    raw(f) / raw(1000.0)
}

/// Linear-phase A-weighting FIR designed by frequency sampling.
fn a_weight_taps(sample_rate: u32) -> Vec<f64> {
    let n = A_WEIGHT_TAPS;
    let delay = (n - 1) / 2;
    let fs = sample_rate as f64;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        let f = k as f64 * fs / n as f64;
        let mag = a_weight_response(f);
        let phase = -2.0 * PI * k as f64 * delay as f64 / n as f64;
        spectrum[k] = Complex64::from_polar(mag, phase);
        if k > 0 && k < n - k {
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

/// Apply the A-weighting filter with group-delay compensation; output
/// length equals input length.
pub fn a_weight(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != 8000 && w.sample_rate != 16000 {
        return Err(Error::UnsupportedFormat(format!(
            "a-weighting supports 8 or 16 kHz, got {} Hz",
            w.sample_rate
        )));
    }
    let taps = a_weight_taps(w.sample_rate);
    let delay = (A_WEIGHT_TAPS - 1) / 2;
    let full = convolve_full(&w.samples, &taps);
    let out: Vec<f64> = (0..w.samples.len()).map(|i| full[i + delay]).collect();
    Waveform::new(out, w.sample_rate)
}

/// 127-tap Hamming-windowed bandpass over the 300-3400 Hz telephone band.
fn telephone_taps() -> Vec<f64> {
    let n = TELEPHONE_TAPS;
    let mid = (n - 1) as f64 / 2.0;
    let w_lo = 2.0 * PI * 300.0 / 8000.0;
    let w_hi = 2.0 * PI * 3400.0 / 8000.0;
    (0..n)
        .map(|i| {
            let m = i as f64 - mid;
            let ideal = if m == 0.0 {
                (w_hi - w_lo) / PI
            } else {
                ((w_hi * m).sin() - (w_lo * m).sin()) / (PI * m)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            ideal * window
        })
        .collect()
}

/// Telephone-channel surrogate: bandpass the signal to 300-3400 Hz.
pub fn telephone_filter(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != 8000 {
        return Err(Error::UnsupportedFormat(format!(
            "telephone filter requires 8 kHz audio, got {} Hz",
            w.sample_rate
        )));
    }
    fir_convolve(w, &telephone_taps())
}
