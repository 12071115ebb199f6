//! Speaker change detection on interval means of log-likelihood vectors.
//!
//! The likelihood sequence is cut into adjacent, non-overlapping intervals. The
//! p-norm distance between the mean vectors of neighbouring intervals is the
//! detection statistic for the boundary between them; a boundary is flagged
//! when that statistic exceeds a threshold taken from the Bayes decision
//! boundary of two Gaussians fitted to labeled calibration statistics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::classifier::LikelihoodSequence;
use crate::error::{Error, Result};

/// Lower bound on fitted standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Order of the p-norm distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Norm {
    P(f64),
    Inf,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Norm> {
        let s = s.trim();
        if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "max") {
            return Ok(Norm::Inf);
        }
        let bad = || Error::InvalidConfig(format!("invalid norm order {s:?}"));
        let p = match s.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n.trim().parse().map_err(|_| bad())?;
                let d: f64 = d.trim().parse().map_err(|_| bad())?;
                n / d
            }
            None => s.parse().map_err(|_| bad())?,
        };
        if !(p > 0.0) || !p.is_finite() {
            return Err(bad());
        }
        Ok(Norm::P(p))
    }
}

impl TryFrom<String> for Norm {
    type Error = Error;

    fn try_from(s: String) -> Result<Norm> {
        s.parse()
    }
}

impl From<Norm> for String {
    fn from(n: Norm) -> String {
        n.to_string()
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Inf => write!(f, "inf"),
            Norm::P(p) if *p < 1.0 && (1.0 / p).fract() == 0.0 => write!(f, "1/{}", 1.0 / p),
            Norm::P(p) => write!(f, "{p}"),
        }
    }
}

/// Which statistic is thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Distance between adjacent interval means.
    Distance,
    /// `(d_t - d_{t-1}) + (d_t - d_{t+1})`; needs one extra interval of lookahead.
    SecondDifference,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Distance => "distance",
            Metric::SecondDifference => "second_difference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScdConfig {
    pub interval_s: f64,
    pub p: Norm,
    pub use_second_difference: bool,
    /// Boundaries of slack when matching flags to true changes (0 = exact).
    pub tolerance: usize,
}

impl Default for ScdConfig {
    fn default() -> Self {
        ScdConfig {
            interval_s: 1.0,
            p: Norm::P(2.0),
            use_second_difference: false,
            tolerance: 0,
        }
    }
}

impl ScdConfig {
    pub fn metric(&self) -> Metric {
        if self.use_second_difference {
            Metric::SecondDifference
        } else {
            Metric::Distance
        }
    }
}

/// Per-interval mean log-likelihood vectors.
#[derive(Debug, Clone)]
pub struct IntervalSeries {
    /// One row per interval.
    pub means: Array2<f64>,
    pub frames_per_interval: Vec<usize>,
    pub interval_starts: Vec<f64>,
    pub interval_s: f64,
}

impl IntervalSeries {
    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.nrows() == 0
    }

    /// Start time of each boundary `t = 1..len`, between intervals `t-1` and `t`.
    pub fn boundary_times(&self) -> Vec<f64> {
        self.interval_starts.iter().skip(1).copied().collect()
    }
}

/// Averages frames into consecutive intervals of `interval_s` by frame start time.
///
/// A trailing interval not fully covered by the sequence is dropped.
pub fn interval_means(seq: &LikelihoodSequence, cfg: &ScdConfig) -> Result<IntervalSeries> {
    let len_s = cfg.interval_s;
    if !(len_s > 0.0) {
        return Err(Error::InvalidConfig("interval_s must be > 0".into()));
    }
    if len_s + 1e-9 < seq.win_s {
        return Err(Error::InvalidConfig(format!(
            "interval {len_s} s is shorter than one frame ({} s)",
            seq.win_s
        )));
    }
    if seq.is_empty() {
        return Err(Error::TooShortForIntervals { intervals: 0 });
    }
    let span = (seq.len() - 1) as f64 * seq.hop_s + seq.win_s;
    let n = (span / len_s + 1e-9).floor() as usize;
    if n < 2 {
        return Err(Error::TooShortForIntervals { intervals: n });
    }
    let k = seq.dim();
    let mut sums = Array2::zeros((n, k));
    let mut counts = vec![0usize; n];
    for (i, row) in seq.rows.outer_iter().enumerate() {
        let t = (i as f64 * seq.hop_s / len_s + 1e-9).floor() as usize;
        if t >= n {
            break;
        }
        let mut acc = sums.row_mut(t);
        acc += &row;
        counts[t] += 1;
    }
    for (t, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyInterval(t));
        }
        let mut r = sums.row_mut(t);
        r /= c as f64;
    }
    Ok(IntervalSeries {
        means: sums,
        frames_per_interval: counts,
        interval_starts: (0..n).map(|t| t as f64 * len_s).collect(),
        interval_s: len_s,
    })
}

/// `(sum_k |a_k - b_k|^p)^(1/p)`, or the largest absolute difference for `p = inf`.
pub fn pnorm_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, p: Norm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let diffs = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs());
    Ok(match p {
        Norm::Inf => diffs.fold(0.0, f64::max),
        Norm::P(1.0) => diffs.sum(),
        Norm::P(2.0) => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::P(p) => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
    })
}

/// `(cur - prev) + (cur - next)`.
pub fn second_difference(prev: f64, cur: f64, next: f64) -> f64 {
    (cur - prev) + (cur - next)
}

/// Distance across every boundary of the series.
pub fn boundary_distances(series: &IntervalSeries, p: Norm) -> Result<Vec<f64>> {
    (1..series.len())
        .map(|t| pnorm_distance(series.means.row(t), series.means.row(t - 1), p))
        .collect()
}

/// Second difference of a distance series; a missing neighbour at either end
/// is replaced by the value itself.
pub fn second_differences(distances: &[f64]) -> Vec<f64> {
    let n = distances.len();
    (0..n)
        .map(|b| {
            let cur = distances[b];
            let prev = if b > 0 { distances[b - 1] } else { cur };
            let next = if b + 1 < n { distances[b + 1] } else { cur };
            second_difference(prev, cur, next)
        })
        .collect()
}

/// Statistic per boundary for the configured metric, with the raw distances.
pub fn boundary_statistics(series: &IntervalSeries, cfg: &ScdConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = boundary_distances(series, cfg.p)?;
    let stat = match cfg.metric() {
        Metric::Distance => d.clone(),
        Metric::SecondDifference => second_differences(&d),
    };
    Ok((d, stat))
}

/// Two class-conditional Gaussians with priors (negative = same speaker).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu_neg: f64,
    pub sigma_neg: f64,
    pub prior_neg: f64,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub prior_pos: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Sample mean, unbiased standard deviation and frequency of each class.
pub fn fit_gaussians(samples: &[f64], labels: &[bool]) -> Result<GaussianPair> {
    if samples.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: labels.len(),
        });
    }
    let pos: Vec<f64> = samples
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = samples
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if neg.len() < 2 {
        return Err(Error::ClassEmpty("negative"));
    }
    if pos.len() < 2 {
        return Err(Error::ClassEmpty("positive"));
    }
    let (mu_neg, sigma_neg) = mean_std(&neg);
    let (mu_pos, sigma_pos) = mean_std(&pos);
    let total = samples.len() as f64;
    Ok(GaussianPair {
        mu_neg,
        sigma_neg,
        prior_neg: neg.len() as f64 / total,
        mu_pos,
        sigma_pos,
        prior_pos: pos.len() as f64 / total,
    })
}

/// Decision threshold and whether it came from the midpoint fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesThreshold {
    pub x: f64,
    pub degenerate: bool,
}

/// Point where the prior-weighted class densities are equal.
///
/// With equal deviations the boundary is the unique root of a linear equation.
/// Otherwise the quadratic root lying between the two means is used; when
/// neither root does, the real root nearest the means is taken and, failing
/// any real root, the midpoint. Those fallbacks (and means in the wrong order)
/// set `degenerate`.
pub fn bayes_threshold(g: &GaussianPair) -> BayesThreshold {
    let mid = 0.5 * (g.mu_neg + g.mu_pos);
    if !(g.mu_neg < g.mu_pos) {
        return BayesThreshold {
            x: mid,
            degenerate: true,
        };
    }
    let (vn, vp) = (g.sigma_neg * g.sigma_neg, g.sigma_pos * g.sigma_pos);
    // log(prior_n N_n(x)) - log(prior_p N_p(x)) = a x^2 + b x + c
    let a = -0.5 / vn + 0.5 / vp;
    let b = g.mu_neg / vn - g.mu_pos / vp;
    let c = -0.5 * g.mu_neg * g.mu_neg / vn + 0.5 * g.mu_pos * g.mu_pos / vp + (g.prior_neg / g.sigma_neg).ln()
        - (g.prior_pos / g.sigma_pos).ln();
    if a.abs() <= 1e-12 * (0.5 / vn + 0.5 / vp) {
        // equal spreads: midpoint shifted toward the rarer class
        let v = 0.5 * (vn + vp);
        let shift = v * (g.prior_neg / g.prior_pos).ln() / (g.mu_pos - g.mu_neg);
        return BayesThreshold {
            x: mid + shift,
            degenerate: false,
        };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return BayesThreshold {
            x: mid,
            degenerate: true,
        };
    }
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let roots = [q / a, c / q];
    let inside: Vec<f64> = roots
        .iter()
        .copied()
        .filter(|r| r.is_finite() && *r > g.mu_neg && *r < g.mu_pos)
        .collect();
    if let Some(&x) = inside
        .iter()
        .min_by(|x, y| (*x - mid).abs().total_cmp(&(*y - mid).abs()))
    {
        return BayesThreshold { x, degenerate: false };
    }
    let gap = |r: f64| (g.mu_neg - r).max(r - g.mu_pos).max(0.0);
    match roots
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .min_by(|x, y| gap(*x).total_cmp(&gap(*y)))
    {
        Some(x) => BayesThreshold { x, degenerate: true },
        None => BayesThreshold {
            x: mid,
            degenerate: true,
        },
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Confusion counts and derived rates over boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
    pub pe: f64,
    pub f1: f64,
    pub fnr: f64,
    pub fpr: f64,
}

impl Metrics {
    /// Rates from (possibly fractional) confusion counts.
    pub fn from_counts(tp: f64, fp: f64, tn: f64, fn_: f64) -> Metrics {
        let p = tp + fn_;
        let n = tn + fp;
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let f1 = if tp + fp + fn_ == 0.0 {
            1.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            pe: ratio(fn_ + fp, p + n),
            f1,
            fnr: ratio(fn_, p),
            fpr: ratio(fp, n),
        }
    }

    pub fn positives(&self) -> f64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> f64 {
        self.tn + self.fp
    }
}

/// Flags and statistics for every boundary of a series.
#[derive(Debug, Clone)]
pub struct Detection {
    pub metric: Metric,
    pub threshold: f64,
    pub boundary_times: Vec<f64>,
    /// Raw adjacent-interval distances.
    pub distances: Vec<f64>,
    /// Thresholded statistic (equal to `distances` for [`Metric::Distance`]).
    pub statistics: Vec<f64>,
    pub flags: Vec<bool>,
}

/// Detection output together with its score against ground truth.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub detection: Detection,
    pub truth: Vec<bool>,
    pub metrics: Metrics,
}

/// Flags every boundary whose statistic exceeds `threshold`.
pub fn detect(series: &IntervalSeries, cfg: &ScdConfig, threshold: f64) -> Result<Detection> {
    if series.len() < 2 {
        return Err(Error::TooShortForIntervals {
            intervals: series.len(),
        });
    }
    let (distances, statistics) = boundary_statistics(series, cfg)?;
    let flags = statistics.iter().map(|&s| s > threshold).collect();
    Ok(Detection {
        metric: cfg.metric(),
        threshold,
        boundary_times: series.boundary_times(),
        distances,
        statistics,
        flags,
    })
}

/// Confusion counts from boundary-wise comparison of flags with truth.
pub fn score(flags: &[bool], truth: &[bool]) -> Result<Metrics> {
    score_with_tolerance(flags, truth, 0)
}

/// Like [`score`], but a flag up to `tolerance` boundaries away from an unmatched
/// true change counts as detecting it. Each flag matches at most one change.
pub fn score_with_tolerance(flags: &[bool], truth: &[bool], tolerance: usize) -> Result<Metrics> {
    if flags.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: flags.len(),
            right: truth.len(),
        });
    }
    let n = flags.len();
    let mut used = vec![false; n];
    let mut tp = 0usize;
    // exact hits first so tolerance never steals an aligned flag
    for i in 0..n {
        if truth[i] && flags[i] {
            used[i] = true;
            tp += 1;
        }
    }
    let mut missed = 0usize;
    for i in (0..n).filter(|&i| truth[i] && !flags[i]) {
        let lo = i.saturating_sub(tolerance);
        let hi = (i + tolerance).min(n - 1);
        let candidate = (lo..=hi)
            .filter(|&j| flags[j] && !used[j] && !truth[j])
            .min_by_key(|&j| j.abs_diff(i));
        match candidate {
            Some(j) => {
                used[j] = true;
                tp += 1;
            }
            None => missed += 1,
        }
    }
    let fp = flags.iter().zip(&used).filter(|(&f, &u)| f && !u).count();
    let positives = truth.iter().filter(|&&t| t).count();
    let tn = n - positives - fp;
    Ok(Metrics::from_counts(tp as f64, fp as f64, tn as f64, missed as f64))
}

/// Expected rates when both classes follow the fitted Gaussians exactly.
pub fn theoretical_score(g: &GaussianPair, threshold: f64) -> Metrics {
    let fnr = normal_cdf((threshold - g.mu_pos) / g.sigma_pos);
    let fpr = 1.0 - normal_cdf((threshold - g.mu_neg) / g.sigma_neg);
    let tp = g.prior_pos * (1.0 - fnr);
    let fn_ = g.prior_pos * fnr;
    let fp = g.prior_neg * fpr;
    let tn = g.prior_neg * (1.0 - fpr);
    Metrics::from_counts(tp, fp, tn, fn_)
}

/// Calibrated threshold, written as a small `key = value` text file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub metric: Metric,
    pub threshold: f64,
    pub interval_s: f64,
    pub p: Norm,
    pub degenerate: bool,
    pub gaussians: GaussianPair,
}

impl ThresholdFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).expect("threshold serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ThresholdFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Fits the class Gaussians to calibration statistics and derives the threshold.
pub fn calibrate(statistics: &[f64], truth: &[bool]) -> Result<(GaussianPair, BayesThreshold)> {
    let g = fit_gaussians(statistics, truth)?;
    Ok((g, bayes_threshold(&g)))
}
