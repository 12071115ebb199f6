//! Audio ingestion: WAV decoding, peak normalization and framing.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Set when the clip carries no signal (all zeros or empty).
    pub silent: bool,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        let silent = samples.iter().all(|&s| s == 0.0);
        AudioClip {
            samples,
            sample_rate,
            silent,
        }
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

    /// Rejects clips recorded at a different rate. Resampling is not supported.
    pub fn expect_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRateMismatch {
                expected: rate,
                found: self.sample_rate,
            });
        }
        Ok(())
    }

    /// Number of samples in a window of `ms` milliseconds, rounded down.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate)
    }
}

pub(crate) fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    // the small epsilon keeps e.g. 25 ms at 16 kHz from landing on 399.999..
    (ms * sample_rate as f64 / 1000.0 + 1e-9).floor() as usize
}

/// Format tag of the first `fmt ` chunk, if the RIFF structure gets that far.
fn format_tag(bytes: &[u8]) -> Option<u16> {
    if bytes.get(0..4)? != b"RIFF" || bytes.get(8..12)? != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        if id == b"fmt " {
            return Some(u16::from_le_bytes(bytes.get(pos + 8..pos + 10)?.try_into().ok()?));
        }
        pos = pos.checked_add(8 + size + (size & 1))?;
    }
    None
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::CorruptHeader(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: compressed or unknown encoding", path.display()))
        }
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            Error::UnsupportedFormat(format!("{}: unsupported sample format", path.display()))
        }
        hound::Error::UnfinishedSample => Error::CorruptHeader(format!("{}: truncated sample data", path.display())),
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float) as a mono clip.
///
/// Multi-channel audio is averaged to mono. Integer samples are divided by
/// `2^(bits-1)`, so int16 maps onto `[-1, 1)`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Some(tag) = format_tag(&bytes) {
        // 1 = PCM, 3 = IEEE float, 0xFFFE = extensible (sub-format checked by the decoder)
        if !matches!(tag, 1 | 3 | 0xFFFE) {
            return Err(Error::UnsupportedFormat(format!(
                "{}: WAVE format tag {tag:#06x}",
                path.display()
            )));
        }
    }
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::CorruptHeader(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedFormat(format!(
                    "{}: {}-bit float",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::UnsupportedFormat(format!("{}: {bits}-bit PCM", path.display())));
            }
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
    };
    let channels = spec.channels as usize;
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a clip as 16-bit mono PCM. Samples are clamped to the int16 range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer.write_sample(to_i16(s)).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

pub(crate) fn to_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Scales the clip so that its largest absolute sample is exactly 1.
///
/// All-zero input comes back unchanged with `silent` set.
pub fn normalize_peak(clip: &AudioClip) -> AudioClip {
    let peak = clip.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: clip.sample_rate,
            silent: true,
        };
    }
    let samples = clip
        .samples
        .iter()
        .map(|&s| {
            // dividing (rather than multiplying by 1/peak) puts the peak at exactly 1
            s / peak
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        silent: false,
    }
}

/// Overlapping fixed-length windows over a clip.
#[derive(Debug, Clone)]
pub struct FrameGrid {
    pub frames: Vec<Vec<f64>>,
    pub win_ms: f64,
    pub hop_ms: f64,
    /// Samples per frame.
    pub win: usize,
    /// Samples between frame starts.
    pub hop: usize,
}

impl FrameGrid {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_start(&self, i: usize) -> usize {
        i * self.hop
    }
}

/// Number of full windows that fit, or `None` when not even one does.
pub fn frame_count(len: usize, win: usize, hop: usize) -> Option<usize> {
    if win == 0 || hop == 0 || len < win {
        None
    } else {
        Some((len - win) / hop + 1)
    }
}

/// Cuts the clip into windows of `win_ms` every `hop_ms`, dropping the trailing partial window.
pub fn frame_signal(clip: &AudioClip, win_ms: f64, hop_ms: f64) -> Result<FrameGrid> {
    if !(hop_ms > 0.0 && win_ms >= hop_ms) {
        return Err(Error::InvalidConfig(format!(
            "need win_ms >= hop_ms > 0, got win {win_ms} hop {hop_ms}"
        )));
    }
    let win = clip.ms_to_samples(win_ms);
    let hop = clip.ms_to_samples(hop_ms);
    if hop == 0 {
        return Err(Error::InvalidConfig(format!(
            "hop of {hop_ms} ms is shorter than one sample"
        )));
    }
    let n = frame_count(clip.len(), win, hop).ok_or(Error::ClipTooShort {
        len: clip.len(),
        needed: win,
    })?;
    let frames = (0..n).map(|i| clip.samples[i * hop..i * hop + win].to_vec()).collect();
    Ok(FrameGrid {
        frames,
        win_ms,
        hop_ms,
        win,
        hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw_wav(path: &Path, channels: u16, rate: u32, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_mono_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw_wav(&p, 1, 16000, &vec![100; 16000]);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 16000);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn stereo_antiphase_averages_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let data: Vec<i16> = (0..200).flat_map(|i| [i * 7, -(i * 7)]).collect();
        write_raw_wav(&p, 2, 16000, &data);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.len(), 200);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        assert!(clip.silent);
    }

    #[test]
    fn int16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        write_raw_wav(&p, 1, 16000, &[16384, -32768]);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0]);
    }

    #[test]
    fn other_pcm_widths() {
        let dir = tempfile::tempdir().unwrap();
        for (bits, fmt, raw, expect) in [
            (8u16, hound::SampleFormat::Int, 64i32, 0.5),
            (24, hound::SampleFormat::Int, 1 << 22, 0.5),
        ] {
            let p = dir.path().join(format!("w{bits}.wav"));
            let spec = hound::WavSpec {
                channels: 1,
                sample_rate: 8000,
                bits_per_sample: bits,
                sample_format: fmt,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            if bits == 8 {
                w.write_sample(raw as i8).unwrap();
            } else {
                w.write_sample(raw).unwrap();
            }
            w.finalize().unwrap();
            let clip = load_wav(&p).unwrap();
            assert_eq!(clip.samples, vec![expect], "{bits}-bit");
        }
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(-0.25f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, vec![-0.25]);
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFX\0\0\0\0WAVEjunk").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::CorruptHeader(_))));

        // fmt chunk with format tag 2 (MS ADPCM)
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&256u16.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        let p = dir.path().join("adpcm.wav");
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedFormat(_))));

        let p = dir.path().join("empty.wav");
        write_raw_wav(&p, 1, 16000, &[]);
        assert!(matches!(load_wav(&p), Err(Error::EmptyAudio)));
    }

    #[test]
    fn peak_normalization_examples() {
        let c = normalize_peak(&AudioClip::new(vec![0.2, -0.4], 16000));
        assert_eq!(c.samples, vec![0.5, -1.0]);
        let c = normalize_peak(&AudioClip::new(vec![1.0, -1.0], 16000));
        assert_eq!(c.samples, vec![1.0, -1.0]);
        let c = normalize_peak(&AudioClip::new(vec![0.0; 3], 16000));
        assert_eq!(c.samples, vec![0.0; 3]);
        assert!(c.silent);
    }

    #[test]
    fn framing_counts() {
        let clip = AudioClip::new(vec![0.1; 16000], 16000);
        let g = frame_signal(&clip, 50.0, 25.0).unwrap();
        assert_eq!((g.win, g.hop, g.len()), (800, 400, 39));
        let clip = AudioClip::new(vec![0.1; 800], 16000);
        assert_eq!(frame_signal(&clip, 50.0, 25.0).unwrap().len(), 1);
        let clip = AudioClip::new(vec![0.1; 799], 16000);
        assert!(matches!(
            frame_signal(&clip, 50.0, 25.0),
            Err(Error::ClipTooShort { len: 799, needed: 800 })
        ));
    }

    #[test]
    fn wrong_rate_rejected() {
        let clip = AudioClip::new(vec![0.0; 10], 8000);
        assert!(matches!(
            clip.expect_rate(16000),
            Err(Error::SampleRateMismatch {
                expected: 16000,
                found: 8000
            })
        ));
    }
}
