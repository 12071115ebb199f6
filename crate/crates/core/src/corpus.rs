//! Speaker datasets on disk, synthetic voices, and concatenated conversations.
//!
//! A dataset root holds `manifest.tsv` with one `speaker_id<TAB>relative_path<TAB>category`
//! line per utterance and one folder of WAV files per speaker. Category is
//! `train` for speaker-specific text and `shared` for text common to all speakers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{load_wav, normalize_peak, write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::vad::{detect_voiced, remove_unvoiced, VadConfig};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    /// Text unique to the speaker; used for training and conversations.
    Train,
    /// Text shared by every speaker; used for testing.
    Shared,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Train => "train",
            Category::Shared => "shared",
        })
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Category> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Category::Train),
            "shared" => Ok(Category::Shared),
            other => Err(Error::MissingManifest(format!("unknown category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub path: PathBuf,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Speaker {
    pub fn files(&self, category: Category) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.category == category)
    }
}

/// Speakers in lexicographic order with their utterance files.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerDataset {
    pub root: PathBuf,
    pub speakers: Vec<Speaker>,
}

impl SpeakerDataset {
    pub fn speaker(&self, id: &str) -> Option<&Speaker> {
        self.speakers.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.speakers.iter().map(|s| s.id.clone()).collect()
    }

    /// Keeps only the named speakers, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<SpeakerDataset> {
        let speakers = ids
            .iter()
            .map(|id| {
                self.speaker(id)
                    .cloned()
                    .ok_or_else(|| Error::MissingManifest(format!("speaker {id} not in dataset")))
            })
            .collect::<Result<_>>()?;
        Ok(SpeakerDataset {
            root: self.root.clone(),
            speakers,
        })
    }

    /// Writes `manifest.tsv` under `root` with paths relative to it.
    pub fn write_manifest(&self) -> Result<()> {
        let mut text = String::new();
        for s in &self.speakers {
            for u in &s.utterances {
                let rel = u.path.strip_prefix(&self.root).unwrap_or(&u.path);
                text.push_str(&format!("{}\t{}\t{}\n", s.id, rel.display(), u.category));
            }
        }
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Reads and validates a dataset root.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<SpeakerDataset> {
    let root = root.as_ref().to_path_buf();
    let manifest = root.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| Error::MissingManifest(format!("{}: {e}", manifest.display())))?;
    let mut by_speaker: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MissingManifest(format!(
                "{}:{}: expected 3 tab-separated fields",
                manifest.display(),
                n + 1
            )));
        }
        let path = root.join(fields[1]);
        if !path.is_file() {
            return Err(Error::MissingManifest(format!(
                "{}:{}: listed file {} does not exist",
                manifest.display(),
                n + 1,
                path.display()
            )));
        }
        by_speaker.entry(fields[0].to_string()).or_default().push(Utterance {
            path,
            category: fields[2].parse()?,
        });
    }
    // speaker folders present on disk but holding no audio
    if let Ok(entries) = std::fs::read_dir(&root) {
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let has_wav = std::fs::read_dir(&dir)
                .map(|it| it.filter_map(|e| e.ok()).any(|e| is_wav(&e.path())))
                .unwrap_or(false);
            if !has_wav {
                let id = dir.file_name().unwrap().to_string_lossy().into_owned();
                return Err(Error::EmptySpeaker(id));
            }
        }
    }
    let mut speakers = Vec::with_capacity(by_speaker.len());
    for (id, mut utterances) in by_speaker {
        if !utterances.iter().any(|u| u.category == Category::Train) {
            return Err(Error::EmptySpeaker(id));
        }
        utterances.sort_by(|a, b| a.path.cmp(&b.path));
        speakers.push(Speaker { id, utterances });
    }
    if speakers.is_empty() {
        return Err(Error::MissingManifest(format!(
            "{} lists no utterances",
            manifest.display()
        )));
    }
    Ok(SpeakerDataset { root, speakers })
}

/// Builds a dataset view over a TIMIT-style tree (`.../<speaker>/<SA|SI|SX>*.wav`).
///
/// SX and SI sentences become `train`, SA sentences `shared`. Only speakers whose
/// folder name starts with `M` are kept when `male_only` is set. Audio must already
/// be RIFF/WAVE; NIST SPHERE headers are not decoded.
pub fn import_timit(root: impl AsRef<Path>, male_only: bool) -> Result<SpeakerDataset> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        if let Ok(entries) = std::fs::read_dir(dir) {
            for e in entries.filter_map(|e| e.ok()) {
                let p = e.path();
                if p.is_dir() {
                    walk(&p, out);
                } else if is_wav(&p) {
                    out.push(p);
                }
            }
        }
    }
    let root = root.as_ref().to_path_buf();
    let mut files = Vec::new();
    walk(&root, &mut files);
    let mut by_speaker: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    for path in files {
        let Some(spk) = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
        else {
            continue;
        };
        if male_only && !spk.starts_with(['M', 'm']) {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().to_ascii_uppercase();
        let category = if stem.starts_with("SA") {
            Category::Shared
        } else if stem.starts_with("SI") || stem.starts_with("SX") {
            Category::Train
        } else {
            continue;
        };
        by_speaker.entry(spk).or_default().push(Utterance { path, category });
    }
    let speakers: Vec<Speaker> = by_speaker
        .into_iter()
        .filter(|(_, u)| u.iter().any(|u| u.category == Category::Train))
        .map(|(id, mut utterances)| {
            utterances.sort_by(|a, b| a.path.cmp(&b.path));
            Speaker { id, utterances }
        })
        .collect();
    if speakers.is_empty() {
        return Err(Error::MissingManifest(format!(
            "no TIMIT-style speakers found under {}",
            root.display()
        )));
    }
    Ok(SpeakerDataset { root, speakers })
}

/// Equal-length speaker blocks joined end to end.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub audio: AudioClip,
    /// Block boundaries in seconds: `T, 2T, ..., (n-1)T`.
    pub change_points: Vec<f64>,
    pub speaker_order: Vec<String>,
    /// Seconds of speech per speaker.
    pub block_s: f64,
}

impl Conversation {
    /// Writes the change points, one per line, in seconds.
    pub fn write_changes(&self, path: impl AsRef<Path>) -> Result<()> {
        write_change_points(path, &self.change_points)
    }
}

pub fn write_change_points(path: impl AsRef<Path>, points: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let text: String = points.iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_change_points(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: not a number: {line:?}", n + 1)))?;
        if out.last().is_some_and(|&prev| v <= prev) {
            return Err(Error::format(
                path,
                format!("line {}: change points must ascend", n + 1),
            ));
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConversationOptions {
    pub vad: VadConfig,
    pub sample_rate: u32,
    /// Shortest acceptable per-speaker block.
    pub min_block_s: f64,
    /// When set, the block length is rounded down to a multiple of this many seconds.
    pub block_quantum_s: Option<f64>,
}

impl Default for ConversationOptions {
    fn default() -> Self {
        ConversationOptions {
            vad: VadConfig::default(),
            sample_rate: 16000,
            min_block_s: 1.0,
            block_quantum_s: None,
        }
    }
}

/// Peak-normalized, voiced-only audio of one utterance file.
pub fn voiced_speech(path: &Path, vad: &VadConfig, sample_rate: u32) -> Result<AudioClip> {
    let clip = load_wav(path)?;
    clip.expect_rate(sample_rate)?;
    let clip = normalize_peak(&clip);
    let mask = detect_voiced(&clip, vad)?;
    remove_unvoiced(&clip, &mask)
}

/// Truncates every block to the shortest one and joins them in order.
pub fn assemble_conversation(
    blocks: Vec<(String, AudioClip)>,
    min_block_s: f64,
    block_quantum_s: Option<f64>,
) -> Result<Conversation> {
    let rate = blocks
        .first()
        .map(|b| b.1.sample_rate)
        .ok_or_else(|| Error::InvalidConfig("conversation needs at least one speaker".into()))?;
    for (_, clip) in &blocks {
        clip.expect_rate(rate)?;
    }
    let (short_id, short_len) = blocks
        .iter()
        .map(|(id, c)| (id.clone(), c.len()))
        .min_by_key(|(_, len)| *len)
        .unwrap();
    let mut block_s = short_len as f64 / rate as f64;
    if let Some(q) = block_quantum_s.filter(|q| *q > 0.0) {
        block_s = (block_s / q + 1e-9).floor() * q;
    }
    if block_s < min_block_s {
        return Err(Error::SpeakerTooShort {
            speaker: short_id,
            seconds: short_len as f64 / rate as f64,
            needed: min_block_s.max(block_quantum_s.unwrap_or(0.0)),
        });
    }
    let block_len = (block_s * rate as f64).round() as usize;
    let mut samples = Vec::with_capacity(block_len * blocks.len());
    let mut order = Vec::with_capacity(blocks.len());
    for (id, clip) in blocks {
        samples.extend_from_slice(&clip.samples[..block_len]);
        order.push(id);
    }
    let change_points = (1..order.len()).map(|i| i as f64 * block_s).collect();
    Ok(Conversation {
        audio: AudioClip::new(samples, rate),
        change_points,
        speaker_order: order,
        block_s,
    })
}

/// Concatenates each speaker's voiced `train` speech, truncated to the shortest
/// speaker's total, in the given speaker order.
///
/// `seed` shuffles the utterance order within each speaker.
pub fn build_conversation(
    ds: &SpeakerDataset,
    speakers: &[String],
    seed: u64,
    opts: &ConversationOptions,
) -> Result<Conversation> {
    let blocks = speakers
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let spk = ds
                .speaker(id)
                .ok_or_else(|| Error::MissingManifest(format!("speaker {id} not in dataset")))?;
            let mut files: Vec<&Utterance> = spk.files(Category::Train).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            files.shuffle(&mut rng);
            let mut samples = Vec::new();
            for u in files {
                let voiced = voiced_speech(&u.path, &opts.vad, opts.sample_rate).map_err(|e| with_file(e, &u.path))?;
                samples.extend(voiced.samples);
            }
            Ok((id.clone(), AudioClip::new(samples, opts.sample_rate)))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_conversation(blocks, opts.min_block_s, opts.block_quantum_s)
}

/// Attaches a file name to errors that do not already carry one.
pub fn with_file(err: Error, path: &Path) -> Error {
    match err {
        e @ (Error::Io { .. } | Error::Format { .. }) => e,
        other => Error::format(path, other.to_string()),
    }
}

/// Boundary labels for `n_boundaries` boundaries: boundary `t` (between
/// intervals `t-1` and `t`) is positive when a change point lies in interval `t`.
pub fn boundary_truth(change_points: &[f64], interval_s: f64, n_boundaries: usize) -> Vec<bool> {
    let mut truth = vec![false; n_boundaries];
    for &c in change_points {
        let t = (c / interval_s + 1e-9).floor() as usize;
        if t >= 1 && t <= n_boundaries {
            truth[t - 1] = true;
        }
    }
    truth
}

/// Boundary labels over all complete intervals of the conversation.
pub fn truth_labels(conv: &Conversation, interval_s: f64) -> Vec<bool> {
    let n = (conv.audio.duration_s() / interval_s + 1e-9).floor() as usize;
    boundary_truth(&conv.change_points, interval_s, n.saturating_sub(1))
}

const F0_LOW: f64 = 80.0;
const F0_HIGH: f64 = 250.0;
const F0_SPACING: f64 = 5.0;

/// Number of distinct fundamental-frequency slots available to synthetic speakers.
pub fn f0_slots() -> usize {
    ((F0_HIGH - F0_LOW) / F0_SPACING).floor() as usize + 1
}

/// Reference vowel targets (F1, F2, F3) in Hz before speaker scaling.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

/// Fixed source-filter parameters of one synthetic voice.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub f0: f64,
    /// Formant triples of the speaker's vowels.
    pub vowels: Vec<[f64; 3]>,
    pub bandwidths: [f64; 3],
    /// Glottal lowpass pole; larger means a darker voice.
    pub tilt: f64,
    /// Aspiration noise relative to the pulse source.
    pub breathiness: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utt_seconds: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Speaker IDs are `<prefix><index:03>`.
    pub id_prefix: String,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_speakers: 20,
            utts_per_speaker: 6,
            utt_seconds: 4.0,
            seed: 1,
            sample_rate: 16000,
            id_prefix: "spk".into(),
        }
    }
}

const NEUTRAL: [f64; 3] = [500.0, 1500.0, 2500.0];
const VOWEL_CONTRAST: f64 = 0.1;
const TRACT_SPREAD: f64 = 0.2;
const FORMANT_SPREAD: f64 = 0.3;
const VOWEL_JITTER: f64 = 0.05;

/// Draws `n` voices with distinct F0 slots.
///
/// Vowels are pulled toward a neutral vowel so that speaker identity, not vowel
/// identity, dominates the spectrum. Each voice then scales them by a tract
/// length factor and by one factor per formant, plus a small per-vowel jitter.
pub fn draw_voices(n: usize, seed: u64) -> Result<Vec<Voice>> {
    let slots = f0_slots();
    if n > slots {
        return Err(Error::TooManySpeakers {
            requested: n,
            available: slots,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f0s: Vec<usize> = (0..slots).collect();
    f0s.shuffle(&mut rng);
    Ok(f0s[..n]
        .iter()
        .map(|&slot| {
            let tract = rng.random_range(1.0 - TRACT_SPREAD..1.0 + TRACT_SPREAD);
            let scale: Vec<f64> = (0..3)
                .map(|_| rng.random_range(1.0 - FORMANT_SPREAD..1.0 + FORMANT_SPREAD))
                .collect();
            let vowels = VOWELS
                .iter()
                .map(|v| {
                    let mut f = [0.0; 3];
                    for (k, (out, base)) in f.iter_mut().zip(v).enumerate() {
                        let base = NEUTRAL[k] + VOWEL_CONTRAST * (base - NEUTRAL[k]);
                        let jitter = rng.random_range(1.0 - VOWEL_JITTER..1.0 + VOWEL_JITTER);
                        *out = base * tract * scale[k] * jitter;
                    }
                    f
                })
                .collect();
            Voice {
                f0: F0_LOW + F0_SPACING * slot as f64,
                vowels,
                bandwidths: [
                    rng.random_range(50.0..90.0),
                    rng.random_range(70.0..130.0),
                    rng.random_range(110.0..190.0),
                ],
                tilt: rng.random_range(0.85..0.97),
                breathiness: rng.random_range(0.02..0.12),
            }
        })
        .collect())
}

/// Two-pole resonator `y = a x + b y[-1] + c y[-2]` with unit DC gain.
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Resonator {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    /// Retunes the filter, keeping its state.
    fn tune(&mut self, freq: f64, bw: f64, rate: f64) {
        let t = 1.0 / rate;
        self.c = -(-2.0 * PI * bw * t).exp();
        self.b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn utterance_rng(seed: u64, speaker: usize, utt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((speaker as u64) << 32) | utt as u64 | (1 << 63));
    rng
}

struct Syllable {
    start: usize,
    end: usize,
    vowel: usize,
    /// Target RMS relative to the loudest possible syllable.
    level: f64,
}

/// Renders one utterance: voiced syllables separated by silence.
///
/// Each syllable is scaled to its own RMS level so vowel choice does not swing
/// loudness by orders of magnitude.
pub fn synthesize_utterance(voice: &Voice, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> AudioClip {
    let fs = rate as f64;
    let n = (seconds * fs).round() as usize;
    let f0 = voice.f0 * (1.0 + rng.random_range(-0.02..0.02));
    let jitter: Vec<f64> = (0..3).map(|_| 1.0 + rng.random_range(-0.03..0.03)).collect();

    // vowels come in shuffled rounds so every utterance covers the whole vowel space
    let mut round: Vec<usize> = Vec::new();
    let mut syllables = Vec::new();
    let mut pos = (rng.random_range(0.10..0.25) * fs) as usize;
    // words of one to three syllables, separated by pauses long enough to register as silence
    'words: while pos < n {
        let n_syl = rng.random_range(1..=3);
        for k in 0..n_syl {
            if pos >= n {
                break 'words;
            }
            let len = (rng.random_range(0.12..0.30) * fs) as usize;
            let end = (pos + len).min(n);
            if round.is_empty() {
                round = (0..voice.vowels.len()).collect();
                round.shuffle(rng);
            }
            syllables.push(Syllable {
                start: pos,
                end,
                vowel: round.pop().unwrap(),
                level: rng.random_range(0.6..1.0),
            });
            let gap = if k + 1 < n_syl {
                rng.random_range(0.0..0.03)
            } else if rng.random::<f64>() < 0.2 {
                rng.random_range(0.4..0.7)
            } else {
                rng.random_range(0.15..0.4)
            };
            pos = end + (gap * fs) as usize;
        }
    }

    let ramp = 0.02 * fs;
    let mut resonators: Vec<Resonator> = (0..3).map(|_| Resonator::new()).collect();
    let tune = |res: &mut [Resonator], vowel: usize| {
        for (k, r) in res.iter_mut().enumerate() {
            r.tune(voice.vowels[vowel][k] * jitter[k], voice.bandwidths[k], fs);
        }
    };
    tune(&mut resonators, syllables.first().map_or(0, |s| s.vowel));
    let mut next = 0;
    let mut phase = 0.0;
    let mut glottal = 0.0;
    let mut prev_out = 0.0;
    let drift_rate = rng.random_range(0.5..1.5);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        while next < syllables.len() && syllables[next].end <= i {
            next += 1;
        }
        let mut gain = 0.0;
        if let Some(s) = syllables.get(next) {
            if i == s.start {
                tune(&mut resonators, s.vowel);
            }
            if i >= s.start {
                let edge = (i - s.start).min(s.end - 1 - i) as f64;
                gain = if edge < ramp {
                    0.5 - 0.5 * (PI * edge / ramp).cos()
                } else {
                    1.0
                };
            }
        }
        let t = i as f64 / fs;
        // slow intonation of +-3 % around the utterance F0
        let inst_f0 = f0 * (1.0 + 0.03 * (2.0 * PI * drift_rate * t).sin());
        phase += inst_f0 / fs;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        glottal = voice.tilt * glottal + pulse;
        let noise = rng.random::<f64>() - 0.5;
        let mut y = gain * (glottal + voice.breathiness * noise);
        for r in &mut resonators {
            y = r.step(y);
        }
        // lip radiation
        out.push(y - prev_out);
        prev_out = y;
    }
    for (i, syl) in syllables.iter().enumerate() {
        let rms = (out[syl.start..syl.end].iter().map(|v| v * v).sum::<f64>() / (syl.end - syl.start) as f64).sqrt();
        if rms > 0.0 {
            // the resonator ring-down up to the next syllable belongs to this one
            let stop = syllables.get(i + 1).map_or(n, |next| next.start);
            out[syl.start..stop].iter_mut().for_each(|v| *v *= syl.level / rms);
            // then true silence until the next syllable
            let quiet = (syl.end + (0.04 * fs) as usize).min(stop);
            out[quiet..stop].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let peak = out.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|s| *s *= 0.8 / peak);
    }
    AudioClip::new(out, rate)
}

/// Writes a synthetic corpus under `root` and returns its dataset view.
///
/// The last utterance of each speaker is tagged `shared` (when a speaker has at
/// least two); the rest are `train`. Output is byte-identical for a fixed seed.
pub fn synth_speaker_corpus(root: impl AsRef<Path>, opts: &SynthOptions) -> Result<SpeakerDataset> {
    if opts.n_speakers < 2 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs at least 2 speakers".into(),
        ));
    }
    if opts.utts_per_speaker == 0 || !(opts.utt_seconds > 0.0) {
        return Err(Error::InvalidConfig(
            "need at least one utterance of positive length".into(),
        ));
    }
    let voices = draw_voices(opts.n_speakers, opts.seed)?;
    let root = root.as_ref().to_path_buf();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let jobs: Vec<(usize, usize)> = (0..opts.n_speakers)
        .flat_map(|s| (0..opts.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let ids: Vec<String> = (0..opts.n_speakers)
        .map(|s| format!("{}{s:03}", opts.id_prefix))
        .collect();
    for id in &ids {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let written: Vec<(usize, Utterance)> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let mut rng = utterance_rng(opts.seed, s, u);
            let clip = synthesize_utterance(&voices[s], opts.utt_seconds, opts.sample_rate, &mut rng);
            let category = if opts.utts_per_speaker >= 2 && u + 1 == opts.utts_per_speaker {
                Category::Shared
            } else {
                Category::Train
            };
            let path = root.join(&ids[s]).join(format!("u{u:02}.wav"));
            write_wav(&path, &clip)?;
            Ok((s, Utterance { path, category }))
        })
        .collect::<Result<_>>()?;
    let mut speakers: Vec<Speaker> = ids
        .iter()
        .map(|id| Speaker {
            id: id.clone(),
            utterances: Vec::new(),
        })
        .collect();
    for (s, utt) in written {
        speakers[s].utterances.push(utt);
    }
    let ds = SpeakerDataset { root, speakers };
    ds.write_manifest()?;
    Ok(ds)
}
