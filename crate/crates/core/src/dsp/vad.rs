//! Energy-based voice activity detection.

use super::{frame_count, FrameMask, Waveform, FRAME_SHIFT_MS, FRAME_WINDOW_MS};
use crate::error::{Error, Result};

/// A frame is active when its log energy is within 30 dB of the loudest
/// frame; the raw decision is smoothed by a five-frame majority vote.
/// Signals whose loudest frame is below 1e-12 mean energy are treated as
/// silent.
pub fn energy_vad(w: &Waveform) -> Result<FrameMask> {
    let frames = vad_frame_count(w)?;
    let win = (FRAME_WINDOW_MS / 1000.0 * w.sample_rate as f64).round() as usize;
    let hop = (FRAME_SHIFT_MS / 1000.0 * w.sample_rate as f64).round() as usize;

    let energies: Vec<f64> = (0..frames)
        .map(|t| {
            let start = t * hop;
            w.samples[start..start + win]
                .iter()
                .map(|s| s * s)
                .sum::<f64>()
                / win as f64
        })
        .collect();
    let max_energy = energies.iter().fold(0.0f64, |m, &e| m.max(e));

    let raw: Vec<bool> = if max_energy < 1e-12 {
        vec![false; frames]
    } else {
        let threshold_db = 10.0 * max_energy.log10() - 30.0;
        energies
            .iter()
            .map(|&e| 10.0 * e.max(1e-300).log10() >= threshold_db)
            .collect()
    };

    // five-frame majority vote with edge replication
    let active: Vec<bool> = (0..frames)
        .map(|t| {
            let votes: usize = (-2i64..=2)
                .map(|d| {
                    let idx = (t as i64 + d).clamp(0, frames as i64 - 1) as usize;
                    raw[idx] as usize
                })
                .sum();
            votes >= 3
        })
        .collect();

    Ok(FrameMask {
        active,
        frame_shift_ms: FRAME_SHIFT_MS,
    })
}

/// Number of VAD frames for a waveform; errors when the signal is shorter
/// than one analysis window.
pub fn vad_frame_count(w: &Waveform) -> Result<usize> {
    let frames = frame_count(w.samples.len(), w.sample_rate);
    if frames == 0 {
        return Err(Error::InvalidInput(format!(
            "signal of {} samples is shorter than one 25 ms frame",
            w.samples.len()
        )));
    }
    Ok(frames)
}
