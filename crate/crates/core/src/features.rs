//! MFCC extraction, deltas, mean/variance normalization and frame stacking.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{ms_to_samples, AudioClip};
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;
const STD_FLOOR: f64 = 1e-8;
const FEATURE_MAGIC: u64 = u64::from_le_bytes(*b"SCDFEAT1");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    /// Cepstral coefficients kept, C0 included.
    pub n_ceps: usize,
    /// FFT length; the next power of two at or above the window when unset.
    pub fft_size: Option<usize>,
    pub delta_halfwidth: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16000,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 23,
            n_ceps: 13,
            fft_size: None,
            delta_halfwidth: 2,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ceps * 3 != 39 {
            return Err(Error::InvalidConfig(format!(
                "n_ceps must be 13 (39-dim features), got {}",
                self.n_ceps
            )));
        }
        if !(self.hop_ms > 0.0 && self.win_ms > self.hop_ms) {
            return Err(Error::InvalidConfig("mfcc needs win_ms > hop_ms > 0".into()));
        }
        if self.n_mels < self.n_ceps {
            return Err(Error::InvalidConfig("n_mels must be >= n_ceps".into()));
        }
        if self.delta_halfwidth == 0 {
            return Err(Error::InvalidConfig("delta_halfwidth must be >= 1".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be > 0".into()));
        }
        if let Some(n) = self.fft_size {
            if n < self.win_samples() {
                return Err(Error::InvalidConfig("fft_size shorter than window".into()));
            }
        }
        Ok(())
    }

    pub fn win_samples(&self) -> usize {
        ms_to_samples(self.win_ms, self.sample_rate)
    }

    pub fn hop_samples(&self) -> usize {
        ms_to_samples(self.hop_ms, self.sample_rate)
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size.unwrap_or_else(|| self.win_samples().next_power_of_two())
    }
}

/// Frame stacking parameters (in MFCC frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcatConfig {
    pub win_frames: usize,
    pub hop_frames: usize,
}

impl Default for ConcatConfig {
    fn default() -> Self {
        ConcatConfig {
            win_frames: 10,
            hop_frames: 3,
        }
    }
}

/// Identifies the feature pipeline a model was trained under.
pub fn feature_fingerprint(mfcc: &MfccConfig, concat: &ConcatConfig) -> String {
    let canonical = format!(
        "mfcc:sr={};win={};hop={};mels={};ceps={};fft={};delta={};log_floor={:e};dct=ortho;c0=1|concat:win={};hop={}",
        mfcc.sample_rate,
        mfcc.win_ms,
        mfcc.hop_ms,
        mfcc.n_mels,
        mfcc.n_ceps,
        mfcc.fft_len(),
        mfcc.delta_halfwidth,
        LOG_FLOOR,
        concat.win_frames,
        concat.hop_frames
    );
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Time-ordered feature frames, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    /// Seconds between consecutive frame starts.
    pub hop_s: f64,
    /// Seconds of audio covered by one frame.
    pub win_s: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, hop_s: f64, win_s: f64) -> Self {
        FeatureSequence { frames, hop_s, win_s }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.frames.row(i)
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }

    /// Stacks sequences with matching dim and timing into one.
    pub fn concat(parts: &[&FeatureSequence]) -> Result<FeatureSequence> {
        let first = parts.first().ok_or(Error::TooFewFrames { len: 0, needed: 1 })?;
        let views: Vec<_> = parts
            .iter()
            .map(|p| {
                if p.dim() != first.dim() {
                    Err(Error::DimensionMismatch {
                        expected: first.dim(),
                        found: p.dim(),
                    })
                } else {
                    Ok(p.frames.view())
                }
            })
            .collect::<Result<_>>()?;
        let frames = ndarray::concatenate(Axis(0), &views).expect("dims checked");
        Ok(FeatureSequence::new(frames, first.hop_s, first.win_s))
    }

    /// Writes the little-endian binary dump: magic, dim, count, hop_s, win_s, then row-major f64.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&FEATURE_MAGIC.to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.hop_s.to_le_bytes())?;
        w.write_all(&self.win_s.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.frames.len() * 8);
        for v in self.frames.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureSequence> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<FeatureSequence, String> {
        let word = |i: usize| -> std::result::Result<[u8; 8], String> {
            bytes
                .get(i * 8..i * 8 + 8)
                .map(|b| b.try_into().unwrap())
                .ok_or_else(|| "truncated header".to_string())
        };
        if u64::from_le_bytes(word(0)?) != FEATURE_MAGIC {
            return Err("bad magic".into());
        }
        let dim = u64::from_le_bytes(word(1)?) as usize;
        let count = u64::from_le_bytes(word(2)?) as usize;
        let hop_s = f64::from_le_bytes(word(3)?);
        let win_s = f64::from_le_bytes(word(4)?);
        let body = &bytes[40..];
        let expected = dim
            .checked_mul(count)
            .and_then(|n| n.checked_mul(8))
            .ok_or("size overflow")?;
        if body.len() != expected {
            return Err(format!("expected {expected} data bytes, found {}", body.len()));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frames = Array2::from_shape_vec((count, dim), data).map_err(|e| e.to_string())?;
        Ok(FeatureSequence::new(frames, hop_s, win_s))
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
fn mel_filterbank(n_mels: usize, fft_len: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = fft_len / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_len as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
    }
    bank
}

/// Orthonormal DCT-II rows `0..n_out` for inputs of length `n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()
    })
}

/// Precomputed window, filterbank, DCT and FFT plan for one [`MfccConfig`].
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    dct: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_samples();
        let window = (0..win)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
            .collect();
        let fft_len = cfg.fft_len();
        Ok(MfccExtractor {
            cfg: cfg.clone(),
            window,
            filterbank: mel_filterbank(cfg.n_mels, fft_len, cfg.sample_rate),
            dct: dct_matrix(cfg.n_ceps, cfg.n_mels),
            fft: FftPlanner::new().plan_fft_forward(fft_len),
        })
    }

    /// Static cepstra, one 13-dim row per 10 ms hop.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        clip.expect_rate(self.cfg.sample_rate)?;
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        let n_frames = crate::audio::frame_count(clip.len(), win, hop).ok_or(Error::ClipTooShort {
            len: clip.len(),
            needed: win,
        })?;
        let fft_len = self.cfg.fft_len();
        let n_bins = fft_len / 2 + 1;
        let mut buf = vec![Complex::default(); fft_len];
        let mut mags = ndarray::Array1::zeros(n_bins);
        let mut out = Array2::zeros((n_frames, self.cfg.n_ceps));
        for t in 0..n_frames {
            let frame = &clip.samples[t * hop..t * hop + win];
            buf.iter_mut().for_each(|c| *c = Complex::default());
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                b.re = s * w;
            }
            self.fft.process(&mut buf);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            let log_mel = self.filterbank.dot(&mags).mapv(|e: f64| e.max(LOG_FLOOR).ln());
            out.row_mut(t).assign(&self.dct.dot(&log_mel));
        }
        let hop_s = hop as f64 / self.cfg.sample_rate as f64;
        let win_s = win as f64 / self.cfg.sample_rate as f64;
        Ok(FeatureSequence::new(out, hop_s, win_s))
    }
}

/// Static MFCCs (13-dim) of a clip.
pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureSequence> {
    MfccExtractor::new(cfg)?.extract(clip)
}

fn regression_delta(x: &Array2<f64>, halfwidth: usize) -> Array2<f64> {
    let n = x.nrows() as isize;
    let denom = 2.0 * (1..=halfwidth).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |i: isize| i.clamp(0, n - 1) as usize;
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..n {
        let mut row = out.row_mut(t as usize);
        for k in 1..=halfwidth as isize {
            let ahead = x.row(clamp(t + k));
            let behind = x.row(clamp(t - k));
            row.scaled_add(k as f64, &(&ahead - &behind));
        }
        row /= denom;
    }
    out
}

/// Appends regression deltas and double deltas: `[static | delta | delta-delta]`.
pub fn add_deltas(seq: &FeatureSequence, halfwidth: usize) -> Result<FeatureSequence> {
    let needed = 2 * halfwidth + 1;
    if seq.len() < needed {
        return Err(Error::TooFewFrames { len: seq.len(), needed });
    }
    let delta = regression_delta(&seq.frames, halfwidth);
    let delta2 = regression_delta(&delta, halfwidth);
    let frames =
        ndarray::concatenate(Axis(1), &[seq.frames.view(), delta.view(), delta2.view()]).expect("equal row counts");
    Ok(FeatureSequence::new(frames, seq.hop_s, seq.win_s))
}

/// Per-dimension mean and standard deviation over all frames.
pub fn moments(frames: &Array2<f64>) -> (ndarray::Array1<f64>, ndarray::Array1<f64>) {
    let mean = frames.mean_axis(Axis(0)).expect("non-empty");
    let std = frames.var_axis(Axis(0), 0.0).mapv(|v| v.sqrt().max(STD_FLOOR));
    (mean, std)
}

/// Zero-mean, unit-variance normalization of every dimension.
pub fn cmvn(seq: &FeatureSequence) -> Result<FeatureSequence> {
    if seq.len() < 2 {
        return Err(Error::TooFewFrames {
            len: seq.len(),
            needed: 2,
        });
    }
    let (mean, std) = moments(&seq.frames);
    let frames = (&seq.frames - &mean) / &std;
    Ok(FeatureSequence::new(frames, seq.hop_s, seq.win_s))
}

/// Stacks `win` consecutive frames every `hop` frames into one long frame.
pub fn concat_frames(seq: &FeatureSequence, cfg: &ConcatConfig) -> Result<FeatureSequence> {
    let (win, hop) = (cfg.win_frames, cfg.hop_frames);
    if win == 0 || hop == 0 {
        return Err(Error::InvalidConfig("concat win/hop must be >= 1".into()));
    }
    let count = crate::audio::frame_count(seq.len(), win, hop).ok_or(Error::TooFewFrames {
        len: seq.len(),
        needed: win,
    })?;
    let dim = seq.dim();
    let mut out = Array2::zeros((count, dim * win));
    for i in 0..count {
        let block = seq.frames.slice(s![i * hop..i * hop + win, ..]);
        let mut row = out.row_mut(i);
        for (j, frame) in block.outer_iter().enumerate() {
            row.slice_mut(s![j * dim..(j + 1) * dim]).assign(&frame);
        }
    }
    Ok(FeatureSequence::new(
        out,
        seq.hop_s * hop as f64,
        seq.hop_s * win as f64,
    ))
}
