//! Seeded synthetic corpora: pulse-train speakers shaped by per-speaker
//! resonant filters, plus noise and room-impulse-response banks. These
//! stand in for licensed speech/noise/RIR corpora at desk scale; everything
//! is bit-reproducible from the seed.

use super::manifest::{Condition, CorpusManifest, ManifestEntry};
use super::{BankSplit, NoiseBank, RoomModel, RoomSet};
use crate::dsp::{write_wav, Waveform};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::path::{Path, PathBuf};

const SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy)]
pub struct SynthCorpusParams {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl SynthCorpusParams {
    pub fn new(num_speakers: usize, utts_per_speaker: usize, seed: u64) -> Self {
        Self {
            num_speakers,
            utts_per_speaker,
            seed,
            min_duration_s: 3.0,
            max_duration_s: 8.0,
        }
    }
}

fn randn(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Two-pole resonator, applied in place.
fn resonate(samples: &mut [f64], center_hz: f64, bandwidth_hz: f64) {
    let r = (-std::f64::consts::PI * bandwidth_hz / SAMPLE_RATE as f64).exp();
    let cos_w = (2.0 * std::f64::consts::PI * center_hz / SAMPLE_RATE as f64).cos();
    let (a1, a2) = (2.0 * r * cos_w, -r * r);
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    for s in samples.iter_mut() {
        let y = gain * *s + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *s = y;
    }
}

fn peak_normalize(samples: &mut [f64], target: f64) {
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let g = target / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

struct SpeakerVoice {
    pitch_hz: f64,
    formants: [(f64, f64); 3],
}

impl SpeakerVoice {
    fn draw(rng: &mut ChaCha20Rng) -> Self {
        let pitch_hz = rng.gen_range(85.0..230.0);
        let mut freqs = [
            rng.gen_range(300.0..3200.0),
            rng.gen_range(300.0..3200.0),
            rng.gen_range(300.0..3200.0),
        ];
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let formants = [
            (freqs[0], rng.gen_range(80.0..200.0)),
            (freqs[1], rng.gen_range(100.0..250.0)),
            (freqs[2], rng.gen_range(120.0..300.0)),
        ];
        Self { pitch_hz, formants }
    }

    /// Voiced bursts separated by silent pauses, excited by a jittered
    /// pulse train and shaped by the speaker's resonators.
    fn utterance(&self, duration_s: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
        let n = (duration_s * SAMPLE_RATE as f64) as usize;
        let mut excitation = vec![0.0f64; n];
        let drift = rng.gen_range(-0.04..0.04);
        let mut pos = 0usize;
        loop {
            let voiced = (rng.gen_range(0.4..1.2) * SAMPLE_RATE as f64) as usize;
            let pause = (rng.gen_range(0.08..0.35) * SAMPLE_RATE as f64) as usize;
            let end = (pos + voiced).min(n);
            let mut t = pos as f64;
            while (t as usize) < end {
                let idx = t as usize;
                excitation[idx] = 1.0;
                let f0 = self.pitch_hz * (1.0 + drift) * (1.0 + 0.01 * randn(rng));
                t += SAMPLE_RATE as f64 / f0.max(40.0);
            }
            for s in &mut excitation[pos..end] {
                *s += 0.02 * randn(rng);
            }
            pos = end + pause;
            if pos >= n {
                break;
            }
        }
        for (freq, bw) in self.formants {
            resonate(&mut excitation, freq, bw);
        }
        // syllabic amplitude movement
        let rate = rng.gen_range(2.0..4.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, s) in excitation.iter_mut().enumerate() {
            let t = i as f64 / SAMPLE_RATE as f64;
            *s *= 0.7 + 0.3 * (std::f64::consts::TAU * rate * t + phase).sin();
        }
        peak_normalize(&mut excitation, 0.35);
        excitation
    }
}

/// Generate a corpus of synthetic speakers under `out_dir` (audio in
/// `wav/`, manifest in `manifest.tsv`). Deterministic in the seed.
pub fn synth_corpus(
    out_dir: &Path,
    num_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
) -> Result<CorpusManifest> {
    synth_corpus_with(out_dir, &SynthCorpusParams::new(num_speakers, utts_per_speaker, seed))
}

pub fn synth_corpus_with(out_dir: &Path, params: &SynthCorpusParams) -> Result<CorpusManifest> {
    if params.num_speakers == 0 || params.utts_per_speaker == 0 {
        return Err(Error::InvalidInput(
            "speaker and utterance counts must be positive".into(),
        ));
    }
    if !(params.min_duration_s > 0.0 && params.min_duration_s <= params.max_duration_s) {
        return Err(Error::InvalidInput("bad duration range".into()));
    }
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let mut entries = Vec::new();
    for s in 0..params.num_speakers {
        let voice = SpeakerVoice::draw(&mut rng);
        let speaker_id = format!("spk{s:03}");
        for u in 0..params.utts_per_speaker {
            let duration = rng.gen_range(params.min_duration_s..=params.max_duration_s);
            let samples = voice.utterance(duration, &mut rng);
            let utt_id = format!("{speaker_id}-utt{u:03}");
            let rel = PathBuf::from("wav").join(format!("{utt_id}.wav"));
            write_wav(
                &Waveform::new(samples, SAMPLE_RATE)?,
                &out_dir.join(&rel),
            )?;
            entries.push(ManifestEntry {
                utt_id,
                path: rel,
                speaker_id: speaker_id.clone(),
                condition: Condition::Clean,
                spec: None,
            });
        }
    }
    let manifest = CorpusManifest::new(entries)?;
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

fn stationary_noise(rng: &mut ChaCha20Rng) -> Vec<f64> {
    let n = (rng.gen_range(4.0..8.0) * SAMPLE_RATE as f64) as usize;
    let tilt = rng.gen_range(0.0..0.95);
    let hum_amp = if rng.gen_bool(0.4) { rng.gen_range(0.05..0.2) } else { 0.0 };
    let hum_hz = if rng.gen_bool(0.5) { 50.0 } else { 100.0 };
    let mut out = vec![0.0f64; n];
    let mut prev = 0.0f64;
    for (i, slot) in out.iter_mut().enumerate() {
        prev = tilt * prev + (1.0 - tilt) * randn(rng);
        let t = i as f64 / SAMPLE_RATE as f64;
        *slot = prev + hum_amp * (std::f64::consts::TAU * hum_hz * t).sin();
    }
    peak_normalize(&mut out, 0.3);
    out
}

fn music_noise(rng: &mut ChaCha20Rng) -> Vec<f64> {
    let n = (rng.gen_range(4.0..8.0) * SAMPLE_RATE as f64) as usize;
    let roots: Vec<f64> = (0..4).map(|_| rng.gen_range(110.0..440.0)).collect();
    let change_every = (rng.gen_range(0.5..1.0) * SAMPLE_RATE as f64) as usize;
    let mut out = vec![0.0f64; n];
    let mut root = roots[0];
    for (i, slot) in out.iter_mut().enumerate() {
        if i % change_every == 0 {
            root = roots[(i / change_every) % roots.len()];
        }
        let t = i as f64 / SAMPLE_RATE as f64;
        let mut v = 0.0;
        for k in 1..=4 {
            v += (std::f64::consts::TAU * root * k as f64 * t).sin() / k as f64;
        }
        *slot = v;
    }
    peak_normalize(&mut out, 0.3);
    out
}

fn babble_noise(rng: &mut ChaCha20Rng) -> Vec<f64> {
    let n = (rng.gen_range(4.0..8.0) * SAMPLE_RATE as f64) as usize;
    let mut out = vec![0.0f64; n];
    for _ in 0..6 {
        let voice = SpeakerVoice::draw(rng);
        let stream = voice.utterance(n as f64 / SAMPLE_RATE as f64, rng);
        for (o, s) in out.iter_mut().zip(&stream) {
            *o += s;
        }
    }
    peak_normalize(&mut out, 0.3);
    out
}

/// Generate a noise bank under `out_dir` with a `noises.tsv` listing.
/// Roughly a fifth of each kind is tagged `dev`, the rest `train`.
pub fn synth_noise_bank(
    out_dir: &Path,
    stationary: usize,
    music: usize,
    babble: usize,
    seed: u64,
) -> Result<NoiseBank> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bank = NoiseBank::new();
    let mut listing = String::new();

    let mut emit = |id: String, samples: Vec<f64>, split: BankSplit| -> Result<()> {
        let filename = format!("{id}.wav");
        let w = Waveform::new(samples, SAMPLE_RATE)?;
        write_wav(&w, &out_dir.join(&filename))?;
        listing.push_str(&format!("{id}\t{filename}\t{}\n", split.as_str()));
        // reread so the in-memory bank matches what later loads will see
        bank.insert(id, crate::dsp::read_wav(&out_dir.join(&filename))?, split);
        Ok(())
    };

    let split_for = |i: usize, total: usize| {
        if total >= 2 && i >= total - total / 5 - usize::from(total >= 5) {
            BankSplit::Dev
        } else {
            BankSplit::Train
        }
    };
    for i in 0..stationary {
        emit(format!("noise{i:03}"), stationary_noise(&mut rng), split_for(i, stationary))?;
    }
    for i in 0..music {
        emit(format!("music{i:03}"), music_noise(&mut rng), split_for(i, music))?;
    }
    for i in 0..babble {
        emit(format!("babble{i:03}"), babble_noise(&mut rng), split_for(i, babble))?;
    }

    crate::container::atomic_write(&out_dir.join("noises.tsv"), |w| {
        use std::io::Write;
        w.write_all(listing.as_bytes())
            .map_err(|e| Error::io(out_dir.join("noises.tsv"), e))
    })?;
    Ok(bank)
}

fn synth_rir(rng: &mut ChaCha20Rng) -> Vec<f64> {
    let rt60 = rng.gen_range(0.15..0.6);
    let n = ((1.2 * rt60 * SAMPLE_RATE as f64) as usize).max(256);
    let tau = rt60 * SAMPLE_RATE as f64 / 1000f64.ln();
    let tail_level = rng.gen_range(0.25..0.6);
    let mut h = vec![0.0f64; n];
    h[0] = 1.0;
    for _ in 0..rng.gen_range(3..=6) {
        let delay = rng.gen_range(40..400.min(n - 1));
        h[delay] += rng.gen_range(0.2..0.6) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    for (i, slot) in h.iter_mut().enumerate().skip(160) {
        *slot += tail_level * (-(i as f64) / tau).exp() * randn(rng);
    }
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let g = 1.0 / energy.sqrt();
    h.iter_mut().for_each(|v| *v *= g);
    h
}

/// Generate a room set under `out_dir` with a `rooms.tsv` listing; each
/// room gets `rirs_per_room` impulse responses (at least two).
pub fn synth_room_set(
    out_dir: &Path,
    num_rooms: usize,
    rirs_per_room: usize,
    seed: u64,
) -> Result<RoomSet> {
    if rirs_per_room < 2 {
        return Err(Error::InvalidInput(
            "each room needs at least two impulse responses".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut set = RoomSet::new();
    let mut listing = String::new();
    for r in 0..num_rooms {
        let room_id = format!("room{r:02}");
        let split = if num_rooms >= 2 && r >= num_rooms - num_rooms / 5 - usize::from(num_rooms >= 5)
        {
            BankSplit::Dev
        } else {
            BankSplit::Train
        };
        let mut rirs = Vec::new();
        for k in 0..rirs_per_room {
            let h = synth_rir(&mut rng);
            let filename = format!("{room_id}_rir{k}.wav");
            write_wav(&Waveform::new(h, SAMPLE_RATE)?, &out_dir.join(&filename))?;
            listing.push_str(&format!("{room_id}\t{filename}\t{}\n", split.as_str()));
            rirs.push(crate::dsp::read_wav(&out_dir.join(&filename))?.samples);
        }
        set.insert(RoomModel::new(room_id, rirs, SAMPLE_RATE)?, split);
    }
    crate::container::atomic_write(&out_dir.join("rooms.tsv"), |w| {
        use std::io::Write;
        w.write_all(listing.as_bytes())
            .map_err(|e| Error::io(out_dir.join("rooms.tsv"), e))
    })?;
    Ok(set)
}
