//! Energy / spectral-centroid voice activity detection.
//!
//! A frame is voiced only when both its median-smoothed short-term energy and
//! its median-smoothed spectral centroid exceed thresholds read off the
//! histograms of those two quantities over the whole clip.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{frame_signal, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    /// Median filter length (odd, >= 3).
    pub smooth_order: usize,
    pub smooth_passes: usize,
    pub hist_bins: usize,
    /// Weight of the lower histogram mode in the threshold.
    pub local_max_weight: f64,
    /// Multiplies both thresholds; values above 1 make the detector stricter.
    pub strictness_scale: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            win_ms: 50.0,
            hop_ms: 25.0,
            smooth_order: 5,
            smooth_passes: 2,
            hist_bins: 40,
            local_max_weight: 5.0,
            strictness_scale: 1.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_order < 3 || self.smooth_order.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "vad smooth_order must be odd and >= 3, got {}",
                self.smooth_order
            )));
        }
        if self.hist_bins < 10 {
            return Err(Error::InvalidConfig(format!(
                "vad hist_bins must be >= 10, got {}",
                self.hist_bins
            )));
        }
        if !(self.local_max_weight > 0.0) {
            return Err(Error::InvalidConfig("vad local_max_weight must be > 0".into()));
        }
        if !(self.strictness_scale >= 1.0) {
            return Err(Error::InvalidConfig("vad strictness_scale must be >= 1".into()));
        }
        if !(self.hop_ms > 0.0 && self.win_ms >= self.hop_ms) {
            return Err(Error::InvalidConfig("vad needs win_ms >= hop_ms > 0".into()));
        }
        Ok(())
    }
}

/// Per-frame voicing decision together with the evidence behind it.
#[derive(Debug, Clone)]
pub struct VadMask {
    pub voiced: Vec<bool>,
    pub energies: Vec<f64>,
    pub centroids: Vec<f64>,
    pub smoothed_energies: Vec<f64>,
    pub smoothed_centroids: Vec<f64>,
    /// `(T_E, T_C)`.
    pub thresholds: (f64, f64),
    /// Frame length and hop in samples.
    pub win: usize,
    pub hop: usize,
}

impl VadMask {
    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Debug dump: one `0`/`1` per line.
    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.voiced.len() * 2);
        for &v in &self.voiced {
            out.push(if v { '1' } else { '0' });
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Mean squared amplitude of the frame.
pub fn short_term_energy(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64
}

/// Magnitude-weighted mean bin index over bins `1..=K` of a one-sided spectrum.
///
/// `magnitudes[0]` is the DC bin and is ignored. Returns 0 for an all-zero spectrum.
pub fn centroid_of_spectrum(magnitudes: &[f64]) -> f64 {
    let (num, den) = magnitudes
        .iter()
        .enumerate()
        .skip(1)
        .fold((0.0, 0.0), |(n, d), (k, &s)| (n + k as f64 * s, d + s));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reusable FFT plan for computing spectral centroids of fixed-length frames.
pub struct CentroidAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    buf: Vec<Complex<f64>>,
    mags: Vec<f64>,
}

impl CentroidAnalyzer {
    pub fn new(frame_len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        CentroidAnalyzer {
            fft,
            len: frame_len,
            buf: vec![Complex::default(); frame_len],
            mags: vec![0.0; frame_len / 2 + 1],
        }
    }

    pub fn centroid(&mut self, frame: &[f64]) -> f64 {
        assert_eq!(frame.len(), self.len, "frame length differs from plan");
        for (b, &s) in self.buf.iter_mut().zip(frame) {
            *b = Complex::new(s, 0.0);
        }
        self.fft.process(&mut self.buf);
        for (m, c) in self.mags.iter_mut().zip(&self.buf) {
            *m = c.norm();
        }
        centroid_of_spectrum(&self.mags)
    }
}

/// Spectral centroid in bin units, `C = sum k S(k) / sum S(k)` with `S` the magnitude spectrum.
pub fn spectral_centroid(frame: &[f64]) -> f64 {
    CentroidAnalyzer::new(frame.len()).centroid(frame)
}

fn median_pass(seq: &[f64], order: usize) -> Vec<f64> {
    let half = order / 2;
    let n = seq.len();
    let mut window = vec![0.0; order];
    (0..n)
        .map(|i| {
            for (j, w) in window.iter_mut().enumerate() {
                let idx = (i + j).saturating_sub(half).min(n - 1);
                *w = seq[idx];
            }
            window.sort_by(|a, b| a.total_cmp(b));
            window[half]
        })
        .collect()
}

/// Running median of odd length `order`, edges padded by replication, applied `passes` times.
pub fn median_smooth(seq: &[f64], order: usize, passes: usize) -> Vec<f64> {
    assert!(order >= 3 && order % 2 == 1, "median order must be odd and >= 3");
    if seq.is_empty() {
        return Vec::new();
    }
    let mut cur = seq.to_vec();
    for _ in 0..passes {
        cur = median_pass(&cur, order);
    }
    cur
}

/// `(W * lower + upper) / (W + 1)` for two histogram mode positions.
pub fn weighted_mode_threshold(m1: f64, m2: f64, weight: f64) -> f64 {
    let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
    (weight * lo + hi) / (weight + 1.0)
}

/// Local maxima of a histogram as `(position, count)`; plateaus count once at their center.
fn histogram_peaks(counts: &[f64], centers: &[f64]) -> Vec<(f64, f64)> {
    let mut runs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.2 == c => r.1 = i,
            _ => runs.push((i, i, c)),
        }
    }
    let mut peaks = Vec::new();
    for (r, &(start, end, c)) in runs.iter().enumerate() {
        let left = if r > 0 { runs[r - 1].2 } else { f64::NEG_INFINITY };
        let right = runs.get(r + 1).map_or(f64::NEG_INFINITY, |x| x.2);
        if c > 0.0 && c > left && c > right {
            peaks.push(((centers[start] + centers[end]) / 2.0, c));
        }
    }
    peaks
}

/// Threshold from the two dominant modes of the value histogram.
///
/// Bin counts are median-smoothed (order 3, one pass) before peak picking. With
/// fewer than two peaks the mean of the values is used. A histogram with no
/// spread (all values equal up to rounding) puts the threshold just below that
/// value, so a constant non-zero feature counts as above threshold and an
/// all-zero one does not.
pub fn histogram_threshold(values: &[f64], cfg: &VadConfig) -> Result<f64> {
    if values.len() < 10 {
        return Err(Error::TooFewValues {
            len: values.len(),
            needed: 10,
        });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = cfg.strictness_scale;
    if max - min <= 1e-9 * max.abs().max(min.abs()) {
        return Ok((min - 1e-9 * min.abs()) * scale);
    }
    let bins = cfg.hist_bins;
    let width = (max - min) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let b = (((v - min) / width) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let counts = median_smooth(&counts, 3, 1);
    let centers: Vec<f64> = (0..bins).map(|i| min + width * (i as f64 + 0.5)).collect();
    let mut peaks = histogram_peaks(&counts, &centers);
    let base = if peaks.len() < 2 {
        values.iter().sum::<f64>() / values.len() as f64
    } else {
        // largest counts first; equal counts keep the lower position
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
        weighted_mode_threshold(peaks[0].0, peaks[1].0, cfg.local_max_weight)
    };
    Ok(base * scale)
}

/// Computes the voicing mask of a clip.
pub fn detect_voiced(clip: &AudioClip, cfg: &VadConfig) -> Result<VadMask> {
    cfg.validate()?;
    let grid = frame_signal(clip, cfg.win_ms, cfg.hop_ms)?;
    if grid.len() < 10 {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            needed: grid.win + 9 * grid.hop,
        });
    }
    let energies: Vec<f64> = grid.frames.iter().map(|f| short_term_energy(f)).collect();
    let mut analyzer = CentroidAnalyzer::new(grid.win);
    let centroids: Vec<f64> = grid.frames.iter().map(|f| analyzer.centroid(f)).collect();
    let smoothed_energies = median_smooth(&energies, cfg.smooth_order, cfg.smooth_passes);
    let smoothed_centroids = median_smooth(&centroids, cfg.smooth_order, cfg.smooth_passes);
    let t_e = histogram_threshold(&smoothed_energies, cfg)?;
    let t_c = histogram_threshold(&smoothed_centroids, cfg)?;
    let voiced = smoothed_energies
        .iter()
        .zip(&smoothed_centroids)
        .map(|(&e, &c)| e > t_e && c > t_c)
        .collect();
    Ok(VadMask {
        voiced,
        energies,
        centroids,
        smoothed_energies,
        smoothed_centroids,
        thresholds: (t_e, t_c),
        win: grid.win,
        hop: grid.hop,
    })
}

/// Keeps the hop-sized slice `[i*hop, (i+1)*hop)` of every voiced frame `i`.
///
/// Output length is exactly `hop * voiced_count`.
pub fn remove_unvoiced(clip: &AudioClip, mask: &VadMask) -> Result<AudioClip> {
    let frames = crate::audio::frame_count(clip.len(), mask.win, mask.hop).unwrap_or(0);
    if frames != mask.voiced.len() {
        return Err(Error::MaskMismatch {
            mask: mask.voiced.len(),
            frames,
        });
    }
    let mut out = Vec::with_capacity(mask.voiced_count() * mask.hop);
    for (i, _) in mask.voiced.iter().enumerate().filter(|(_, &v)| v) {
        out.extend_from_slice(&clip.samples[i * mask.hop..(i + 1) * mask.hop]);
    }
    let mut kept = AudioClip::new(out, clip.sample_rate);
    kept.silent |= kept.is_empty();
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;

    fn tone(freq: f64, secs: f64, rate: u32, amp: f64) -> Vec<f64> {
        let n = (secs * rate as f64) as usize;
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(short_term_energy(&[1.0; 4]), 1.0);
        assert_eq!(short_term_energy(&[0.0; 3]), 0.0);
        assert_eq!(short_term_energy(&[3.0, 0.0, 0.0, 0.0]), 2.25);
    }

    #[test]
    fn centroid_examples() {
        // flat spectrum over K = 8 bins, DC ignored
        let flat = [5.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        assert!((centroid_of_spectrum(&flat) - 4.5).abs() < 1e-12);
        let mut single = [0.0; 9];
        single[6] = 3.0;
        assert_eq!(centroid_of_spectrum(&single), 6.0);
        assert_eq!(spectral_centroid(&[0.0; 64]), 0.0);
    }

    #[test]
    fn centroid_of_bin_aligned_cosine() {
        let n = 800;
        let k0 = 15.0;
        let frame: Vec<f64> = (0..n).map(|i| (2.0 * PI * k0 * i as f64 / n as f64).cos()).collect();
        assert!((spectral_centroid(&frame) - k0).abs() < 1e-9);
        // a unit impulse has a flat magnitude spectrum over bins 1..=400
        let mut imp = vec![0.0; n];
        imp[0] = 1.0;
        assert!((spectral_centroid(&imp) - 200.5).abs() < 1e-9);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_smooth(&[1.0, 9.0, 1.0], 3, 1), vec![1.0, 1.0, 1.0]);
        assert_eq!(median_smooth(&[4.0; 6], 5, 3), vec![4.0; 6]);
        let plateau = [0.0, 0.0, 5.0, 5.0, 5.0, 0.0, 0.0];
        assert_eq!(median_smooth(&plateau, 3, 1), plateau.to_vec());
    }

    #[test]
    fn threshold_formula() {
        assert_eq!(weighted_mode_threshold(0.0, 6.0, 5.0), 1.0);
        assert_eq!(weighted_mode_threshold(10.0, 2.0, 1.0), 6.0);
    }

    fn bimodal_fixture() -> Vec<f64> {
        // 12 bins of width 1 over [-0.5, 11.5] so bin centers are 0..=11
        let mut v = vec![-0.5, 11.5];
        v.extend(std::iter::repeat_n(0.0, 50));
        v.extend(std::iter::repeat_n(1.0, 20));
        v.extend(std::iter::repeat_n(5.0, 20));
        v.extend(std::iter::repeat_n(6.0, 50));
        v.extend(std::iter::repeat_n(7.0, 20));
        v
    }

    #[test]
    fn histogram_bimodal() {
        let cfg = VadConfig {
            hist_bins: 12,
            ..VadConfig::default()
        };
        let t = histogram_threshold(&bimodal_fixture(), &cfg).unwrap();
        assert!((t - 1.0).abs() < 1e-12, "{t}");
        let cfg = VadConfig {
            hist_bins: 12,
            local_max_weight: 1.0,
            ..VadConfig::default()
        };
        let t = histogram_threshold(&bimodal_fixture(), &cfg).unwrap();
        assert!((t - 3.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn histogram_unimodal_uses_mean() {
        // triangular bump: counts rise then fall, one peak
        let mut v = Vec::new();
        for (i, reps) in [1, 3, 6, 10, 14, 10, 6, 3, 1, 1].iter().enumerate() {
            v.extend(std::iter::repeat_n(i as f64, *reps));
        }
        let cfg = VadConfig {
            hist_bins: 10,
            ..VadConfig::default()
        };
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(histogram_threshold(&v, &cfg).unwrap(), mean);
        assert!(matches!(
            histogram_threshold(&v[..9], &cfg),
            Err(Error::TooFewValues { len: 9, .. })
        ));
    }

    #[test]
    fn silence_then_tone() {
        let rate = 16000;
        let mut s = vec![0.0; rate as usize];
        s.extend(tone(300.0, 1.0, rate, 1.0));
        let clip = AudioClip::new(s, rate);
        let mask = detect_voiced(&clip, &VadConfig::default()).unwrap();
        let mut voiced_second_half = 0;
        for (i, &v) in mask.voiced.iter().enumerate() {
            if v {
                assert!(i * mask.hop + mask.win > rate as usize, "frame {i} voiced in silence");
                voiced_second_half += 1;
            }
        }
        assert!(voiced_second_half >= 35, "{voiced_second_half}");
    }

    #[test]
    fn all_silence_is_unvoiced() {
        let clip = AudioClip::new(vec![0.0; 32000], 16000);
        let mask = detect_voiced(&clip, &VadConfig::default()).unwrap();
        assert_eq!(mask.voiced_count(), 0);
    }

    #[test]
    fn steady_tone_is_mostly_voiced() {
        let clip = AudioClip::new(tone(300.0, 2.0, 16000, 0.8), 16000);
        let mask = detect_voiced(&clip, &VadConfig::default()).unwrap();
        assert!(mask.voiced_count() * 2 >= mask.voiced.len());
        let clip = AudioClip::new(tone(437.0, 2.0, 16000, 0.8), 16000);
        let mask = detect_voiced(&clip, &VadConfig::default()).unwrap();
        assert!(mask.voiced_count() * 2 >= mask.voiced.len());
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::new(vec![0.1; 3000], 16000);
        assert!(matches!(
            detect_voiced(&clip, &VadConfig::default()),
            Err(Error::ClipTooShort { .. })
        ));
    }

    fn fake_mask(voiced: Vec<bool>, win: usize, hop: usize) -> VadMask {
        let n = voiced.len();
        VadMask {
            voiced,
            energies: vec![0.0; n],
            centroids: vec![0.0; n],
            smoothed_energies: vec![0.0; n],
            smoothed_centroids: vec![0.0; n],
            thresholds: (0.0, 0.0),
            win,
            hop,
        }
    }

    #[test]
    fn removal_counts() {
        // 8 frames of win 800 / hop 400 need 800 + 7*400 = 3600 samples
        let clip = AudioClip::new((0..3700).map(|i| i as f64).collect(), 16000);
        let alt = fake_mask((0..8).map(|i| i % 2 == 0).collect(), 800, 400);
        let out = remove_unvoiced(&clip, &alt).unwrap();
        assert_eq!(out.len(), 1600);
        assert_eq!(out.samples[400], 800.0);

        let all = fake_mask(vec![true; 8], 800, 400);
        assert_eq!(remove_unvoiced(&clip, &all).unwrap().len(), 3200);
        let none = remove_unvoiced(&clip, &fake_mask(vec![false; 8], 800, 400)).unwrap();
        assert!(none.is_empty() && none.silent);

        let wrong = fake_mask(vec![true; 7], 800, 400);
        assert!(matches!(
            remove_unvoiced(&clip, &wrong),
            Err(Error::MaskMismatch { mask: 7, frames: 8 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stricter_never_adds_voiced_frames(
            seed in 0u64..1000,
            scale in 1.0f64..3.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..16000)
                .map(|i| {
                    let gate = if (i / 2000) % 2 == 0 { 1.0 } else { 0.05 };
                    gate * (rng.random::<f64>() - 0.5)
                })
                .collect();
            let clip = AudioClip::new(samples, 16000);
            let loose = detect_voiced(&clip, &VadConfig::default()).unwrap();
            let strict = detect_voiced(
                &clip,
                &VadConfig { strictness_scale: scale, ..VadConfig::default() },
            ).unwrap();
            for (l, s) in loose.voiced.iter().zip(&strict.voiced) {
                prop_assert!(!s || *l);
            }
            for (&e, &c) in loose.energies.iter().zip(&loose.centroids) {
                prop_assert!(e >= 0.0);
                prop_assert!((0.0..=400.0).contains(&c));
            }
            let kept = remove_unvoiced(&clip, &strict).unwrap();
            prop_assert_eq!(kept.len(), strict.voiced_count() * strict.hop);
        }
    }
}
