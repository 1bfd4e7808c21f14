//! Corpus manifests and the builders that compose multi-condition and
//! replica-based training sets.

use super::{augment_utterance, AugmentSpec, BankSplit, NoiseBank, RoomSet};
use crate::dsp::{read_wav, write_wav};
use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Clean,
    Noise,
    Reverb,
    NoiseReverb,
    Music,
    Babble,
}

impl Condition {
    pub fn tag(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Noise => "noise",
            Condition::Reverb => "reverb",
            Condition::NoiseReverb => "noise+reverb",
            Condition::Music => "music",
            Condition::Babble => "babble",
        }
    }

    fn short(self) -> &'static str {
        match self {
            Condition::Clean => "c",
            Condition::Noise => "n",
            Condition::Reverb => "rr",
            Condition::NoiseReverb => "nrr",
            Condition::Music => "mus",
            Condition::Babble => "bab",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Condition::Clean),
            "noise" => Ok(Condition::Noise),
            "reverb" => Ok(Condition::Reverb),
            "noise+reverb" => Ok(Condition::NoiseReverb),
            "music" => Ok(Condition::Music),
            "babble" => Ok(Condition::Babble),
            other => Err(Error::InvalidInput(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: PathBuf,
    pub speaker_id: String,
    pub condition: Condition,
    pub spec: Option<AugmentSpec>,
}

/// An ordered list of utterances with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate utterance id {:?}",
                    e.utt_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utt_id == utt_id)
    }

    /// Sorted unique speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.speaker_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Write tab-separated lines sorted by utterance id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sorted: Vec<&ManifestEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        let mut text = String::new();
        for e in sorted {
            text.push_str(&e.utt_id);
            text.push('\t');
            text.push_str(&e.path.display().to_string());
            text.push('\t');
            text.push_str(&e.speaker_id);
            text.push('\t');
            text.push_str(e.condition.tag());
            if let Some(spec) = &e.spec {
                text.push('\t');
                text.push_str(&spec.to_string());
            }
            text.push('\n');
        }
        crate::container::atomic_write(path, |w| {
            use std::io::Write;
            w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 && parts.len() != 5 {
                return Err(Error::malformed(
                    path,
                    format!("line {}: expected 4 or 5 tab-separated fields", lineno + 1),
                ));
            }
            entries.push(ManifestEntry {
                utt_id: parts[0].to_string(),
                path: PathBuf::from(parts[1]),
                speaker_id: parts[2].to_string(),
                condition: Condition::parse(parts[3])?,
                spec: if parts.len() == 5 {
                    Some(AugmentSpec::parse(parts[4])?)
                } else {
                    None
                },
            });
        }
        CorpusManifest::new(entries)
    }
}

/// Noise and room identifiers available to the manifest builders, grouped
/// by the role the ids play in the replica recipe. Ids prefixed `music` or
/// `babble` land in the corresponding pools; everything else is stationary.
#[derive(Debug, Clone, Default)]
pub struct AugmentResources {
    pub stationary: Vec<String>,
    pub music: Vec<String>,
    pub babble: Vec<String>,
    /// (room_id, number of RIRs)
    pub rooms: Vec<(String, usize)>,
}

impl AugmentResources {
    pub fn from_banks(noises: &NoiseBank, rooms: &RoomSet, split: Option<BankSplit>) -> Self {
        let mut out = AugmentResources::default();
        for id in noises.ids(split) {
            if id.starts_with("music") {
                out.music.push(id);
            } else if id.starts_with("babble") {
                out.babble.push(id);
            } else {
                out.stationary.push(id);
            }
        }
        for id in rooms.ids(split) {
            let count = rooms.rir_count(&id).unwrap_or(0);
            out.rooms.push((id, count));
        }
        out
    }

    fn pool(&self, condition: Condition) -> &[String] {
        let preferred: &[String] = match condition {
            Condition::Music => &self.music,
            Condition::Babble => &self.babble,
            _ => &self.stationary,
        };
        if preferred.is_empty() {
            &self.stationary
        } else {
            preferred
        }
    }
}

/// A distribution over corruption conditions plus the SNR range used for
/// additive conditions.
#[derive(Debug, Clone)]
pub struct ConditionMix {
    pub weights: Vec<(Condition, f64)>,
    pub snr_range_db: (f64, f64),
}

impl ConditionMix {
    pub fn noise_only(snr_range_db: (f64, f64)) -> Self {
        Self {
            weights: vec![(Condition::Noise, 1.0)],
            snr_range_db,
        }
    }

    pub fn reverb_only() -> Self {
        Self {
            weights: vec![(Condition::Reverb, 1.0)],
            snr_range_db: (0.0, 20.0),
        }
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> Result<Condition> {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        if total <= 0.0 || self.weights.is_empty() {
            return Err(Error::InvalidInput("condition mix has no weight".into()));
        }
        let mut pick = rng.gen_range(0.0..total);
        for (cond, w) in &self.weights {
            if pick < *w {
                return Ok(*cond);
            }
            pick -= w;
        }
        Ok(self.weights.last().unwrap().0)
    }
}

fn draw_room(resources: &AugmentResources, rng: &mut ChaCha20Rng) -> Result<(String, usize, usize)> {
    if resources.rooms.is_empty() {
        return Err(Error::InvalidInput(
            "reverberant condition requested but no rooms available".into(),
        ));
    }
    let (room, count) = &resources.rooms[rng.gen_range(0..resources.rooms.len())];
    let a = rng.gen_range(0..*count);
    let mut b = rng.gen_range(0..*count - 1);
    if b >= a {
        b += 1;
    }
    Ok((room.clone(), a, b))
}

fn draw_noise_id(
    condition: Condition,
    resources: &AugmentResources,
    rng: &mut ChaCha20Rng,
) -> Result<String> {
    let pool = resources.pool(condition);
    if pool.is_empty() {
        return Err(Error::InvalidInput(
            "additive condition requested but no noises available".into(),
        ));
    }
    if condition == Condition::Babble {
        // 3-7 overlapping noises, joined into a composite id
        let count = rng.gen_range(3..=7usize);
        let ids: Vec<String> = (0..count)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        Ok(ids.join("+"))
    } else {
        Ok(pool[rng.gen_range(0..pool.len())].clone())
    }
}

fn draw_spec(
    condition: Condition,
    snr_range_db: (f64, f64),
    resources: &AugmentResources,
    rng: &mut ChaCha20Rng,
) -> Result<AugmentSpec> {
    let mut spec = AugmentSpec::identity(rng.gen());
    match condition {
        Condition::Clean => {}
        Condition::Reverb => {
            let (room, a, b) = draw_room(resources, rng)?;
            spec.room_id = Some(room);
            spec.rir_index_speech = Some(a);
            spec.rir_index_noise = Some(b);
        }
        Condition::Noise | Condition::Music | Condition::Babble => {
            spec.noise_id = Some(draw_noise_id(condition, resources, rng)?);
            spec.snr_db = Some(round_db(rng.gen_range(snr_range_db.0..=snr_range_db.1)));
        }
        Condition::NoiseReverb => {
            let (room, a, b) = draw_room(resources, rng)?;
            spec.room_id = Some(room);
            spec.rir_index_speech = Some(a);
            spec.rir_index_noise = Some(b);
            spec.noise_id = Some(draw_noise_id(Condition::Noise, resources, rng)?);
            spec.snr_db = Some(round_db(rng.gen_range(snr_range_db.0..=snr_range_db.1)));
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Keep the manifest spec strings short and exactly re-parsable.
fn round_db(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// All clean entries plus `floor(fraction * N)` corrupted copies of clean
/// entries sampled without replacement. Clean entries are never removed or
/// mutated; the result is deterministic in the seed.
pub fn build_multicondition_manifest(
    clean: &CorpusManifest,
    fraction: f64,
    mix: &ConditionMix,
    resources: &AugmentResources,
    seed: u64,
) -> Result<CorpusManifest> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n_add = (fraction * clean.len() as f64).floor() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..clean.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(n_add).collect();
    chosen.sort_unstable();

    let mut entries = clean.entries.clone();
    for (ordinal, idx) in chosen.into_iter().enumerate() {
        let source = &clean.entries[idx];
        let condition = mix.draw(&mut rng)?;
        let spec = draw_spec(condition, mix.snr_range_db, resources, &mut rng)?;
        entries.push(ManifestEntry {
            utt_id: format!("{}_{}{}", source.utt_id, condition.short(), ordinal),
            path: source.path.clone(),
            speaker_id: source.speaker_id.clone(),
            condition,
            spec: Some(spec),
        });
    }
    CorpusManifest::new(entries)
}

/// The four PLDA training regimes are realized purely as manifest variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PldaRegime {
    Clean,
    Noise,
    Reverb,
    ReverbNoise,
}

impl PldaRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            PldaRegime::Clean => "clean",
            PldaRegime::Noise => "N",
            PldaRegime::Reverb => "RR",
            PldaRegime::ReverbNoise => "RR+N",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(PldaRegime::Clean),
            "N" => Ok(PldaRegime::Noise),
            "RR" => Ok(PldaRegime::Reverb),
            "RR+N" => Ok(PldaRegime::ReverbNoise),
            other => Err(Error::Config(format!("unknown PLDA regime {other:?}"))),
        }
    }
}

/// Compose the PLDA training manifest for a regime: `N` and `RR` add one
/// corrupted portion, `RR+N` adds both portions (equal sizes, like-for-like
/// with the single-condition sets).
pub fn build_plda_regime_manifest(
    clean: &CorpusManifest,
    regime: PldaRegime,
    fraction: f64,
    snr_range_db: (f64, f64),
    resources: &AugmentResources,
    seed: u64,
) -> Result<CorpusManifest> {
    match regime {
        PldaRegime::Clean => Ok(clean.clone()),
        PldaRegime::Noise => build_multicondition_manifest(
            clean,
            fraction,
            &ConditionMix::noise_only(snr_range_db),
            resources,
            seed,
        ),
        PldaRegime::Reverb => build_multicondition_manifest(
            clean,
            fraction,
            &ConditionMix::reverb_only(),
            resources,
            seed,
        ),
        PldaRegime::ReverbNoise => {
            let noisy = build_multicondition_manifest(
                clean,
                fraction,
                &ConditionMix::noise_only(snr_range_db),
                resources,
                seed,
            )?;
            let reverbed = build_multicondition_manifest(
                clean,
                fraction,
                &ConditionMix::reverb_only(),
                resources,
                seed.wrapping_add(1),
            )?;
            let mut entries = noisy.entries;
            entries.extend(reverbed.entries.into_iter().skip(clean.len()));
            CorpusManifest::new(entries)
        }
    }
}

/// One replica flavor of the embedding-training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaKind {
    Reverb,
    /// Foreground noise at 0-15 dB.
    ForegroundNoise,
    /// Background music at 5-15 dB.
    BackgroundMusic,
    /// 3-7 overlapping babble noises at 13-20 dB.
    Babble,
    /// Stationary noise at 0-20 dB.
    StationaryNoise,
}

impl ReplicaKind {
    pub fn standard_recipe() -> Vec<ReplicaKind> {
        vec![
            ReplicaKind::Reverb,
            ReplicaKind::ForegroundNoise,
            ReplicaKind::BackgroundMusic,
            ReplicaKind::Babble,
            ReplicaKind::StationaryNoise,
        ]
    }

    fn condition(self) -> Condition {
        match self {
            ReplicaKind::Reverb => Condition::Reverb,
            ReplicaKind::ForegroundNoise | ReplicaKind::StationaryNoise => Condition::Noise,
            ReplicaKind::BackgroundMusic => Condition::Music,
            ReplicaKind::Babble => Condition::Babble,
        }
    }

    fn snr_range_db(self) -> (f64, f64) {
        match self {
            ReplicaKind::Reverb => (0.0, 0.0),
            ReplicaKind::ForegroundNoise => (0.0, 15.0),
            ReplicaKind::BackgroundMusic => (5.0, 15.0),
            ReplicaKind::Babble => (13.0, 20.0),
            ReplicaKind::StationaryNoise => (0.0, 20.0),
        }
    }

    fn short(self) -> &'static str {
        match self {
            ReplicaKind::Reverb => "rr",
            ReplicaKind::ForegroundNoise => "fg",
            ReplicaKind::BackgroundMusic => "mus",
            ReplicaKind::Babble => "bab",
            ReplicaKind::StationaryNoise => "st",
        }
    }
}

/// One replica per recipe kind per utterance, a seeded subset of size
/// `min(cap, total)`, pooled with the clean entries. Utterances shorter
/// than 500 frames are dropped, then speakers with fewer than 6 surviving
/// utterances are dropped entirely. `frame_counts` maps clean utterance ids
/// to their analysis frame counts (corruption is length-preserving).
pub fn build_replica_manifest(
    clean: &CorpusManifest,
    recipe: &[ReplicaKind],
    cap: usize,
    resources: &AugmentResources,
    frame_counts: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<CorpusManifest> {
    const MIN_FRAMES: usize = 500;
    const MIN_UTTS_PER_SPEAKER: usize = 6;
    if recipe.is_empty() {
        return Err(Error::InvalidInput("replica recipe is empty".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // replicas carry their source's frame count
    let mut replicas: Vec<(ManifestEntry, usize)> = Vec::new();
    for source in &clean.entries {
        let frames = *frame_counts.get(&source.utt_id).ok_or_else(|| {
            Error::MissingId(format!("frame count for {:?}", source.utt_id))
        })?;
        for kind in recipe {
            let spec = draw_spec(kind.condition(), kind.snr_range_db(), resources, &mut rng)?;
            replicas.push((
                ManifestEntry {
                    utt_id: format!("{}_{}", source.utt_id, kind.short()),
                    path: source.path.clone(),
                    speaker_id: source.speaker_id.clone(),
                    condition: kind.condition(),
                    spec: Some(spec),
                },
                frames,
            ));
        }
    }

    let keep = cap.min(replicas.len());
    let mut order: Vec<usize> = (0..replicas.len()).collect();
    order.shuffle(&mut rng);
    let mut selected: Vec<usize> = order.into_iter().take(keep).collect();
    selected.sort_unstable();

    let mut pooled: Vec<(ManifestEntry, usize)> = clean
        .entries
        .iter()
        .map(|e| {
            let frames = *frame_counts.get(&e.utt_id).unwrap();
            (e.clone(), frames)
        })
        .collect();
    for idx in selected {
        pooled.push(replicas[idx].clone());
    }

    pooled.retain(|(_, frames)| *frames >= MIN_FRAMES);
    let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
    for (e, _) in &pooled {
        *per_speaker.entry(e.speaker_id.as_str()).or_insert(0) += 1;
    }
    let keep_speakers: BTreeSet<String> = per_speaker
        .into_iter()
        .filter(|(_, n)| *n >= MIN_UTTS_PER_SPEAKER)
        .map(|(s, _)| s.to_string())
        .collect();

    CorpusManifest::new(
        pooled
            .into_iter()
            .filter(|(e, _)| keep_speakers.contains(&e.speaker_id))
            .map(|(e, _)| e)
            .collect(),
    )
}

/// Compute a relative path from `from_dir` to `to_file` without touching
/// the filesystem beyond absolutization.
pub fn relative_path(from_dir: &Path, to_file: &Path) -> Result<PathBuf> {
    let from = std::path::absolute(from_dir).map_err(|e| Error::io(from_dir, e))?;
    let to = std::path::absolute(to_file).map_err(|e| Error::io(to_file, e))?;
    let from_parts: Vec<Component> = from.components().collect();
    let to_parts: Vec<Component> = to.components().collect();
    let common = from_parts
        .iter()
        .zip(&to_parts)
        .take_while(|(a, b)| a == b)
        .count();
    let mut out = PathBuf::new();
    for _ in common..from_parts.len() {
        out.push("..");
    }
    for part in &to_parts[common..] {
        out.push(part);
    }
    Ok(out)
}

/// Render every entry carrying an augment spec into a WAV under
/// `out_dir/wav/` and rewrite paths so the returned manifest is valid
/// relative to `out_dir`. Entries are rendered in parallel but collected in
/// order, so the result is independent of the worker count.
pub fn materialize_manifest(
    manifest: &CorpusManifest,
    base_dir: &Path,
    out_dir: &Path,
    noises: &NoiseBank,
    rooms: &RoomSet,
) -> Result<CorpusManifest> {
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let entries: Vec<ManifestEntry> = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<ManifestEntry> {
            let source = base_dir.join(&entry.path);
            match &entry.spec {
                Some(spec) => {
                    let speech = read_wav(&source)?;
                    let corrupted = augment_utterance(&speech, spec, noises, rooms)?;
                    let rel = PathBuf::from("wav").join(format!("{}.wav", entry.utt_id));
                    write_wav(&corrupted, &out_dir.join(&rel))?;
                    Ok(ManifestEntry {
                        path: rel,
                        ..entry.clone()
                    })
                }
                None => Ok(ManifestEntry {
                    path: relative_path(out_dir, &source)?,
                    ..entry.clone()
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let out = CorpusManifest::new(entries)?;
    out.save(&out_dir.join("manifest.tsv"))?;
    Ok(out)
}
