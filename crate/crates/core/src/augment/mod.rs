//! Controlled corruption of speech: reverberation with room impulse
//! responses, additive noise at a calibrated A-weighted SNR, and an
//! optional telephone-channel step.
//!
//! Speech and noise are reverberated with *different* impulse responses of
//! the same room, energies are measured after A-weighting and restricted to
//! the voice-active sample ranges of the dry speech, and the unweighted
//! signals are summed. A-weighting only ever affects the energy
//! measurement.

mod manifest;
mod synth;

pub use manifest::{
    build_multicondition_manifest, build_plda_regime_manifest, build_replica_manifest,
    materialize_manifest, relative_path, AugmentResources, Condition, ConditionMix,
    CorpusManifest, ManifestEntry, PldaRegime, ReplicaKind,
};
pub use synth::{synth_corpus, synth_noise_bank, synth_room_set, SynthCorpusParams};

use crate::dsp::{a_weight, energy_vad, fir_convolve, telephone_filter, FrameMask, Waveform};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

pub const SNR_CAP_DB: f64 = 100.0;

/// A set of impulse responses recorded in one room. At least two are
/// required so that speech and noise can take different source positions.
#[derive(Debug, Clone)]
pub struct RoomModel {
    pub room_id: String,
    pub rirs: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl RoomModel {
    pub fn new(room_id: impl Into<String>, rirs: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if rirs.len() < 2 {
            return Err(Error::InvalidInput(
                "a room needs at least two impulse responses".into(),
            ));
        }
        if rirs.iter().any(|h| h.is_empty()) {
            return Err(Error::InvalidInput("empty impulse response".into()));
        }
        Ok(Self {
            room_id: room_id.into(),
            rirs,
            sample_rate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankSplit {
    Train,
    Dev,
}

impl BankSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            BankSplit::Train => "train",
            BankSplit::Dev => "dev",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(BankSplit::Train),
            "dev" => Ok(BankSplit::Dev),
            other => Err(Error::InvalidInput(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Noise recordings keyed by id, each tagged train or dev.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    noises: BTreeMap<String, (Waveform, BankSplit)>,
}

impl NoiseBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, w: Waveform, split: BankSplit) {
        self.noises.insert(id.into(), (w, split));
    }

    pub fn get(&self, id: &str) -> Result<&Waveform> {
        self.noises
            .get(id)
            .map(|(w, _)| w)
            .ok_or_else(|| Error::MissingId(format!("noise {id:?}")))
    }

    pub fn ids(&self, split: Option<BankSplit>) -> Vec<String> {
        self.noises
            .iter()
            .filter(|(_, (_, s))| split.map_or(true, |want| *s == want))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.noises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noises.is_empty()
    }

    /// Load from a directory containing `noises.tsv` (id, filename, split).
    pub fn load(dir: &Path) -> Result<Self> {
        let listing = dir.join("noises.tsv");
        let text =
            std::fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
        let mut bank = NoiseBank::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::malformed(
                    &listing,
                    format!("line {}: expected 3 tab-separated fields", lineno + 1),
                ));
            }
            let w = crate::dsp::read_wav(&dir.join(parts[1]))?;
            bank.insert(parts[0], w, BankSplit::parse(parts[2])?);
        }
        Ok(bank)
    }
}

/// Rooms keyed by id.
#[derive(Debug, Clone, Default)]
pub struct RoomSet {
    rooms: BTreeMap<String, (RoomModel, BankSplit)>,
}

impl RoomSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, room: RoomModel, split: BankSplit) {
        self.rooms.insert(room.room_id.clone(), (room, split));
    }

    pub fn get(&self, id: &str) -> Result<&RoomModel> {
        self.rooms
            .get(id)
            .map(|(r, _)| r)
            .ok_or_else(|| Error::MissingId(format!("room {id:?}")))
    }

    pub fn ids(&self, split: Option<BankSplit>) -> Vec<String> {
        self.rooms
            .iter()
            .filter(|(_, (_, s))| split.map_or(true, |want| *s == want))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn rir_count(&self, id: &str) -> Result<usize> {
        Ok(self.get(id)?.rirs.len())
    }

    pub fn len(&self) -> usize {
        self.rooms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rooms.is_empty()
    }

    /// Load from a directory containing `rooms.tsv` (room_id, filename,
    /// split); RIR indices follow listing order within each room.
    pub fn load(dir: &Path) -> Result<Self> {
        let listing = dir.join("rooms.tsv");
        let text =
            std::fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
        let mut order: Vec<String> = Vec::new();
        let mut rirs: BTreeMap<String, (Vec<Vec<f64>>, BankSplit, u32)> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::malformed(
                    &listing,
                    format!("line {}: expected 3 tab-separated fields", lineno + 1),
                ));
            }
            let w = crate::dsp::read_wav(&dir.join(parts[1]))?;
            let split = BankSplit::parse(parts[2])?;
            let slot = rirs.entry(parts[0].to_string()).or_insert_with(|| {
                order.push(parts[0].to_string());
                (Vec::new(), split, w.sample_rate)
            });
            slot.0.push(w.samples);
        }
        let mut set = RoomSet::new();
        for id in order {
            let (h, split, rate) = rirs.remove(&id).unwrap();
            set.insert(RoomModel::new(id, h, rate)?, split);
        }
        Ok(set)
    }
}

/// A reproducible description of one corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub snr_db: Option<f64>,
    pub noise_id: Option<String>,
    pub room_id: Option<String>,
    pub rir_index_speech: Option<usize>,
    pub rir_index_noise: Option<usize>,
    pub apply_telephone: bool,
    pub seed: u64,
}

impl AugmentSpec {
    /// The identity corruption: no noise, no room, no telephone step.
    pub fn identity(seed: u64) -> Self {
        Self {
            snr_db: None,
            noise_id: None,
            room_id: None,
            rir_index_speech: None,
            rir_index_noise: None,
            apply_telephone: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_id.is_some() && self.snr_db.is_none() {
            return Err(Error::InvalidInput(
                "augment spec sets a noise but no SNR".into(),
            ));
        }
        if self.room_id.is_some() {
            match (self.rir_index_speech, self.rir_index_noise) {
                (Some(a), Some(b)) if a != b => {}
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(
                        "speech and noise must use distinct RIRs of the room".into(),
                    ))
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "augment spec sets a room but not both RIR indices".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Parse the manifest field form, e.g.
    /// `snr=5;noise=n01;room=r02;rir=0,1;tel=0;seed=42`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = AugmentSpec::identity(0);
        let mut saw_seed = false;
        for field in text.split(';') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("bad spec field {field:?}")))?;
            match key {
                "snr" => {
                    spec.snr_db = Some(value.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad snr value {value:?}"))
                    })?)
                }
                "noise" => spec.noise_id = Some(value.to_string()),
                "room" => spec.room_id = Some(value.to_string()),
                "rir" => {
                    let (a, b) = value.split_once(',').ok_or_else(|| {
                        Error::InvalidInput(format!("bad rir pair {value:?}"))
                    })?;
                    spec.rir_index_speech = Some(a.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad rir index {a:?}"))
                    })?);
                    spec.rir_index_noise = Some(b.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad rir index {b:?}"))
                    })?);
                }
                "tel" => spec.apply_telephone = value == "1",
                "seed" => {
                    spec.seed = value.parse().map_err(|_| {
                        Error::InvalidInput(format!("bad seed value {value:?}"))
                    })?;
                    saw_seed = true;
                }
                other => {
                    return Err(Error::InvalidInput(format!("unknown spec field {other:?}")))
                }
            }
        }
        if !saw_seed {
            return Err(Error::InvalidInput("augment spec is missing a seed".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for AugmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut fields: Vec<String> = Vec::new();
        if let Some(snr) = self.snr_db {
            fields.push(format!("snr={snr}"));
        }
        if let Some(noise) = &self.noise_id {
            fields.push(format!("noise={noise}"));
        }
        if let Some(room) = &self.room_id {
            fields.push(format!("room={room}"));
        }
        if let (Some(a), Some(b)) = (self.rir_index_speech, self.rir_index_noise) {
            fields.push(format!("rir={a},{b}"));
        }
        fields.push(format!("tel={}", self.apply_telephone as u8));
        fields.push(format!("seed={}", self.seed));
        write!(f, "{}", fields.join(";"))
    }
}

fn masked_mean_energy(samples: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, &m) in samples.iter().zip(mask) {
        if m {
            sum += s * s;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Gain to apply to `noise` so that the A-weighted mean energies over the
/// voice-active sample ranges of `speech` realize `snr_db`. The SNR is
/// capped at 100 dB.
pub fn snr_gain(speech: &Waveform, noise: &Waveform, mask: &FrameMask, snr_db: f64) -> Result<f64> {
    if noise.sample_rate != speech.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rate mismatch: speech {} Hz vs noise {} Hz",
            speech.sample_rate, noise.sample_rate
        )));
    }
    if noise.len() < speech.len() {
        return Err(Error::InvalidInput(format!(
            "noise ({} samples) is shorter than speech ({}); tile it first",
            noise.len(),
            speech.len()
        )));
    }
    let sample_mask = mask.sample_mask(speech.sample_rate, speech.len());
    if !sample_mask.iter().any(|&m| m) {
        return Err(Error::InvalidInput("VAD mask has no active frames".into()));
    }
    let speech_w = a_weight(speech)?;
    let noise_head = Waveform::new(noise.samples[..speech.len()].to_vec(), noise.sample_rate)?;
    let noise_w = a_weight(&noise_head)?;

    let e_speech = masked_mean_energy(&speech_w.samples, &sample_mask);
    let e_noise = masked_mean_energy(&noise_w.samples, &sample_mask);
    if e_noise <= 0.0 {
        return Err(Error::InvalidInput(
            "noise has zero energy over the active ranges".into(),
        ));
    }
    let snr = snr_db.min(SNR_CAP_DB);
    Ok((e_speech / (e_noise * 10f64.powf(snr / 10.0))).sqrt())
}

/// Sum speech and gain-scaled noise; the whole mix is rescaled to peak 1 if
/// it clips. Returns the mix together with the two summands after any
/// rescaling, so the realized SNR can be re-measured exactly.
pub fn mix_at_snr_parts(
    speech: &Waveform,
    noise: &Waveform,
    mask: &FrameMask,
    snr_db: f64,
) -> Result<(Waveform, Waveform, Waveform)> {
    let gain = snr_gain(speech, noise, mask, snr_db)?;
    let mut mix: Vec<f64> = speech
        .samples
        .iter()
        .zip(&noise.samples)
        .map(|(s, n)| s + gain * n)
        .collect();
    let peak = mix.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    for s in mix.iter_mut() {
        *s *= scale;
    }
    let speech_part: Vec<f64> = speech.samples.iter().map(|s| s * scale).collect();
    let noise_part: Vec<f64> = noise.samples[..speech.len()]
        .iter()
        .map(|n| n * gain * scale)
        .collect();
    Ok((
        Waveform::new(mix, speech.sample_rate)?,
        Waveform::new(speech_part, speech.sample_rate)?,
        Waveform::new(noise_part, speech.sample_rate)?,
    ))
}

pub fn mix_at_snr(
    speech: &Waveform,
    noise: &Waveform,
    mask: &FrameMask,
    snr_db: f64,
) -> Result<Waveform> {
    Ok(mix_at_snr_parts(speech, noise, mask, snr_db)?.0)
}

/// Extend `noise` to at least `target_len` samples by circular tiling from
/// a seeded random offset. Noise already long enough is passed through.
pub fn tile_noise(noise: &Waveform, target_len: usize, rng: &mut ChaCha20Rng) -> Waveform {
    if noise.len() >= target_len {
        return noise.clone();
    }
    let offset = rng.gen_range(0..noise.len());
    let samples: Vec<f64> = (0..target_len)
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    Waveform {
        samples,
        sample_rate: noise.sample_rate,
    }
}

/// The corrupted signal plus the aligned summands of the pre-telephone mix.
#[derive(Debug, Clone)]
pub struct AugmentedUtterance {
    pub output: Waveform,
    /// Reverberated speech after any peak rescaling; equals the output for
    /// noise-free specs (before the telephone step).
    pub speech_part: Waveform,
    /// Gain-scaled reverberated noise after any peak rescaling; `None` for
    /// noise-free specs.
    pub noise_part: Option<Waveform>,
    /// VAD mask computed on the dry input speech.
    pub mask: FrameMask,
}

/// Run the corruption pipeline: reverberate speech and noise with distinct
/// RIRs of one room, calibrate the noise gain against the dry-speech VAD
/// mask, sum, and optionally pass through the telephone filter. Fields left
/// unset skip the corresponding stage.
pub fn augment_utterance(
    speech: &Waveform,
    spec: &AugmentSpec,
    noises: &NoiseBank,
    rooms: &RoomSet,
) -> Result<Waveform> {
    Ok(augment_utterance_parts(speech, spec, noises, rooms)?.output)
}

/// [`augment_utterance`] variant that also returns the mix components.
pub fn augment_utterance_parts(
    speech: &Waveform,
    spec: &AugmentSpec,
    noises: &NoiseBank,
    rooms: &RoomSet,
) -> Result<AugmentedUtterance> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let room = match &spec.room_id {
        Some(id) => Some(rooms.get(id)?),
        None => None,
    };
    if let Some(room) = room {
        let count = room.rirs.len();
        for idx in [spec.rir_index_speech.unwrap(), spec.rir_index_noise.unwrap()] {
            if idx >= count {
                return Err(Error::MissingId(format!(
                    "room {:?} has {count} RIRs, index {idx} requested",
                    room.room_id
                )));
            }
        }
    }

    let speech_rev = match room {
        Some(room) => fir_convolve(speech, &room.rirs[spec.rir_index_speech.unwrap()])?,
        None => speech.clone(),
    };
    let mask = energy_vad(speech)?;

    let (mut out, speech_part, noise_part) = match (&spec.noise_id, spec.snr_db) {
        (Some(noise_id), Some(snr_db)) => {
            let noise = assemble_noise(noise_id, speech.len(), noises, &mut rng)?;
            let noise_rev = match room {
                Some(room) => fir_convolve(&noise, &room.rirs[spec.rir_index_noise.unwrap()])?,
                None => noise,
            };
            let (mix, s_part, n_part) = mix_at_snr_parts(&speech_rev, &noise_rev, &mask, snr_db)?;
            (mix.clone(), s_part, Some(n_part))
        }
        _ => (speech_rev.clone(), speech_rev, None),
    };

    if spec.apply_telephone {
        out = telephone_filter(&out)?;
    }
    Ok(AugmentedUtterance {
        output: out,
        speech_part,
        noise_part,
        mask,
    })
}

/// Resolve a possibly composite noise id (`a+b+c` sums the referenced
/// noises, used for babble replicas), tiling each to the speech length.
fn assemble_noise(
    noise_id: &str,
    target_len: usize,
    noises: &NoiseBank,
    rng: &mut ChaCha20Rng,
) -> Result<Waveform> {
    let parts: Vec<&str> = noise_id.split('+').collect();
    let mut acc: Option<Vec<f64>> = None;
    let mut rate = 0;
    for part in &parts {
        let noise = noises.get(part)?;
        let tiled = tile_noise(noise, target_len, rng);
        rate = tiled.sample_rate;
        match &mut acc {
            None => acc = Some(tiled.samples),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&tiled.samples) {
                    *a += b;
                }
            }
        }
    }
    Waveform::new(acc.unwrap(), rate)
}

/// Measure the realized A-weighted SNR of a decomposed mix over the active
/// ranges of `mask` (the re-measurement oracle used in tests and in the
/// acceptance suite).
pub fn measure_snr_db(
    speech_part: &Waveform,
    noise_part: &Waveform,
    mask: &FrameMask,
) -> Result<f64> {
    let sample_mask = mask.sample_mask(speech_part.sample_rate, speech_part.len());
    if !sample_mask.iter().any(|&m| m) {
        return Err(Error::InvalidInput("VAD mask has no active frames".into()));
    }
    let s = a_weight(speech_part)?;
    let n = a_weight(noise_part)?;
    let e_s = masked_mean_energy(&s.samples, &sample_mask);
    let e_n = masked_mean_energy(&n.samples, &sample_mask);
    if e_n <= 0.0 || e_s <= 0.0 {
        return Err(Error::Numeric("zero energy in SNR measurement".into()));
    }
    Ok(10.0 * (e_s / e_n).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (secs * 8000.0) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 8000.0).sin())
                .collect(),
            8000,
        )
        .unwrap()
    }

    fn white(secs: f64, amp: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = (secs * 8000.0) as usize;
        Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect(), 8000).unwrap()
    }

    fn bank_with(noise: &Waveform) -> NoiseBank {
        let mut bank = NoiseBank::new();
        bank.insert("n0", noise.clone(), BankSplit::Train);
        bank
    }

    #[test]
    fn spec_string_roundtrip() {
        let spec = AugmentSpec {
            snr_db: Some(7.5),
            noise_id: Some("n01".into()),
            room_id: Some("r02".into()),
            rir_index_speech: Some(0),
            rir_index_noise: Some(1),
            apply_telephone: true,
            seed: 99,
        };
        let text = spec.to_string();
        assert_eq!(text, "snr=7.5;noise=n01;room=r02;rir=0,1;tel=1;seed=99");
        assert_eq!(AugmentSpec::parse(&text).unwrap(), spec);
    }

    #[test]
    fn spec_invariants_enforced() {
        let mut spec = AugmentSpec::identity(1);
        spec.noise_id = Some("n0".into());
        assert!(spec.validate().is_err()); // noise without snr
        spec.snr_db = Some(10.0);
        assert!(spec.validate().is_ok());
        spec.room_id = Some("r0".into());
        assert!(spec.validate().is_err()); // room without rirs
        spec.rir_index_speech = Some(1);
        spec.rir_index_noise = Some(1);
        assert!(spec.validate().is_err()); // equal rirs
        spec.rir_index_noise = Some(0);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn equal_energy_zero_snr_gain_is_one() {
        let speech = tone(1000.0, 1.0, 0.5);
        // identical signal as noise: equal A-weighted energy by construction
        let mask = energy_vad(&speech).unwrap();
        let g = snr_gain(&speech, &speech, &mask, 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-9, "g={g}");
    }

    #[test]
    fn worked_gain_example() {
        // E_s = 4 * E_n at 10 dB -> g = sqrt(0.4); build signals with the
        // required A-weighted energy ratio by scaling the same tone.
        let speech = tone(1000.0, 1.0, 0.8);
        let noise = tone(1000.0, 1.0, 0.4);
        let mask = energy_vad(&speech).unwrap();
        let g = snr_gain(&speech, &noise, &mask, 10.0).unwrap();
        assert!((g - 0.4f64.sqrt()).abs() < 1e-6, "g={g}");
        // re-measure: the realized SNR of the scaled mix is 10.00 dB
        let (_, s, n) = mix_at_snr_parts(&speech, &noise, &mask, 10.0).unwrap();
        let measured = measure_snr_db(&s, &n, &mask).unwrap();
        assert!((measured - 10.0).abs() < 0.01, "measured={measured}");
    }

    #[test]
    fn snr_cap_limits_gain() {
        let speech = tone(1000.0, 1.0, 0.5);
        let noise = tone(1000.0, 1.0, 0.5);
        let mask = energy_vad(&speech).unwrap();
        let g = snr_gain(&speech, &noise, &mask, f64::INFINITY).unwrap();
        assert!(g <= 1e-5 * 1.0 + 1e-12, "g={g}");
        let mix = mix_at_snr(&speech, &noise, &mask, f64::INFINITY).unwrap();
        for (a, b) in mix.samples.iter().zip(&speech.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_energy_noise_rejected() {
        let speech = tone(1000.0, 1.0, 0.5);
        let noise = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let mask = energy_vad(&speech).unwrap();
        assert!(snr_gain(&speech, &noise, &mask, 10.0).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let speech = tone(1000.0, 1.0, 0.5);
        let mask = FrameMask {
            active: vec![false; 98],
            frame_shift_ms: 10.0,
        };
        assert!(snr_gain(&speech, &speech, &mask, 10.0).is_err());
    }

    #[test]
    fn mix_energy_additivity_on_independent_noise() {
        // independent white signals: E[mix] ~= E_s + g^2 E_n on active frames
        let speech = white(2.0, 0.5, 1);
        let noise = white(2.0, 0.5, 2);
        let mask = energy_vad(&speech).unwrap();
        let sample_mask = mask.sample_mask(8000, speech.len());
        let (mix, s_part, n_part) = mix_at_snr_parts(&speech, &noise, &mask, 5.0).unwrap();
        let e_mix = masked_mean_energy(&mix.samples, &sample_mask);
        let e_s = masked_mean_energy(&s_part.samples, &sample_mask);
        let e_n = masked_mean_energy(&n_part.samples, &sample_mask);
        let rel = (e_mix - (e_s + e_n)).abs() / (e_s + e_n);
        assert!(rel < 0.02, "rel={rel}");
    }

    #[test]
    fn remeasured_snr_hits_target_over_random_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for case in 0..20 {
            let speech = white(1.0, 0.4, 100 + case);
            let noise = white(1.3, 0.3, 200 + case);
            let target = rng.gen_range(-5.0..20.0);
            let mask = energy_vad(&speech).unwrap();
            let (_, s, n) = mix_at_snr_parts(&speech, &noise, &mask, target).unwrap();
            let measured = measure_snr_db(&s, &n, &mask).unwrap();
            assert!(
                (measured - target).abs() <= 0.1,
                "case {case}: target {target} measured {measured}"
            );
        }
    }

    #[test]
    fn identity_spec_is_identity() {
        let speech = tone(500.0, 1.0, 0.5);
        let out = augment_utterance(
            &speech,
            &AugmentSpec::identity(3),
            &NoiseBank::new(),
            &RoomSet::new(),
        )
        .unwrap();
        assert_eq!(out.samples, speech.samples);
    }

    #[test]
    fn unit_impulse_room_is_identity() {
        let speech = tone(500.0, 1.0, 0.5);
        let room = RoomModel::new("r0", vec![vec![1.0], vec![1.0]], 8000).unwrap();
        let mut rooms = RoomSet::new();
        rooms.insert(room, BankSplit::Train);
        let spec = AugmentSpec {
            room_id: Some("r0".into()),
            rir_index_speech: Some(0),
            rir_index_noise: Some(1),
            ..AugmentSpec::identity(3)
        };
        let out = augment_utterance(&speech, &spec, &NoiseBank::new(), &rooms).unwrap();
        assert_eq!(out.samples, speech.samples);
    }

    #[test]
    fn full_pipeline_hits_target_snr() {
        let speech = white(1.5, 0.4, 5);
        let noise = white(0.7, 0.3, 6); // shorter: exercises tiling
        let mut rooms = RoomSet::new();
        let mut rir_a = vec![0.0; 400];
        rir_a[0] = 1.0;
        rir_a[120] = 0.4;
        let mut rir_b = vec![0.0; 300];
        rir_b[0] = 0.9;
        rir_b[60] = -0.3;
        rooms.insert(RoomModel::new("r0", vec![rir_a, rir_b], 8000).unwrap(), BankSplit::Train);
        let spec = AugmentSpec {
            snr_db: Some(15.0),
            noise_id: Some("n0".into()),
            room_id: Some("r0".into()),
            rir_index_speech: Some(0),
            rir_index_noise: Some(1),
            apply_telephone: false,
            seed: 11,
        };
        let parts =
            augment_utterance_parts(&speech, &spec, &bank_with(&noise), &rooms).unwrap();
        let measured =
            measure_snr_db(&parts.speech_part, parts.noise_part.as_ref().unwrap(), &parts.mask)
                .unwrap();
        assert!((measured - 15.0).abs() <= 0.1, "measured={measured}");
    }

    #[test]
    fn noise_only_matches_direct_mix() {
        let speech = white(1.0, 0.4, 8);
        let noise = white(1.2, 0.3, 9);
        let spec = AugmentSpec {
            snr_db: Some(8.0),
            noise_id: Some("n0".into()),
            ..AugmentSpec::identity(4)
        };
        let out =
            augment_utterance(&speech, &spec, &bank_with(&noise), &RoomSet::new()).unwrap();
        let mask = energy_vad(&speech).unwrap();
        let direct = mix_at_snr(&speech, &noise, &mask, 8.0).unwrap();
        assert_eq!(out.samples, direct.samples);
    }

    #[test]
    fn dangling_ids_rejected() {
        let speech = tone(500.0, 1.0, 0.5);
        let spec = AugmentSpec {
            snr_db: Some(5.0),
            noise_id: Some("missing".into()),
            ..AugmentSpec::identity(1)
        };
        match augment_utterance(&speech, &spec, &NoiseBank::new(), &RoomSet::new()) {
            Err(Error::MissingId(_)) => {}
            other => panic!("expected missing id, got {other:?}"),
        }
    }

    #[test]
    fn composite_noise_id_sums_parts() {
        let speech = white(1.0, 0.4, 12);
        let mut bank = NoiseBank::new();
        bank.insert("a", white(1.0, 0.2, 13), BankSplit::Train);
        bank.insert("b", white(1.0, 0.2, 14), BankSplit::Train);
        let spec = AugmentSpec {
            snr_db: Some(10.0),
            noise_id: Some("a+b".into()),
            ..AugmentSpec::identity(5)
        };
        let parts =
            augment_utterance_parts(&speech, &spec, &bank, &RoomSet::new()).unwrap();
        let measured =
            measure_snr_db(&parts.speech_part, parts.noise_part.as_ref().unwrap(), &parts.mask)
                .unwrap();
        assert!((measured - 10.0).abs() <= 0.1);
    }

    #[test]
    fn augment_is_deterministic() {
        let speech = white(1.0, 0.4, 20);
        let noise = white(0.5, 0.3, 21);
        let spec = AugmentSpec {
            snr_db: Some(6.0),
            noise_id: Some("n0".into()),
            ..AugmentSpec::identity(33)
        };
        let bank = bank_with(&noise);
        let a = augment_utterance(&speech, &spec, &bank, &RoomSet::new()).unwrap();
        let b = augment_utterance(&speech, &spec, &bank, &RoomSet::new()).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
