use std::collections::BTreeMap;

use ndarray::Axis;
use serde::Serialize;

use super::{argmax, transform, Model};
use crate::error::Result;
use crate::features::FeatureSequence;

/// Seconds of audio covered by `n` stacked frames: `(n - 1) * hop + win`.
pub fn frames_to_duration_with(n: f64, hop_s: f64, win_s: f64) -> f64 {
    (n - 1.0) * hop_s + win_s
}

/// Duration of `n` super-frames with a 30 ms hop and 100 ms window.
pub fn frames_to_duration(n: f64) -> f64 {
    frames_to_duration_with(n, 0.03, 0.1)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileResult {
    pub speaker: String,
    pub frames: usize,
    pub correct_frames: usize,
    pub file_correct: bool,
    /// Shortest prefix after which every longer prefix is classified correctly.
    pub frames_needed: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    pub files: Vec<FileResult>,
    pub frame_accuracy: f64,
    pub file_accuracy: f64,
    pub min_frames: Option<usize>,
    pub mean_frames: Option<f64>,
    pub max_frames: Option<usize>,
    pub hop_s: f64,
    pub win_s: f64,
}

impl AccuracyReport {
    pub fn duration_of(&self, n: f64) -> f64 {
        frames_to_duration_with(n, self.hop_s, self.win_s)
    }

    /// One table row: frame %, file %, then min/mean/max frames with durations in parentheses.
    pub fn table_row(&self, name: &str) -> String {
        let cell = |n: Option<f64>, decimals: usize| match n {
            Some(v) => format!("{v:.decimals$} ({:.2})", self.duration_of(v)),
            None => "-".to_string(),
        };
        format!(
            "{name:<8} {:>7.2} {:>7.2} {:>12} {:>14} {:>12}",
            100.0 * self.frame_accuracy,
            100.0 * self.file_accuracy,
            cell(self.min_frames.map(|v| v as f64), 0),
            cell(self.mean_frames, 2),
            cell(self.max_frames.map(|v| v as f64), 0),
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<8} {:>7} {:>7} {:>12} {:>14} {:>12}",
            "dataset", "frame%", "file%", "min", "mean", "max"
        )
    }
}

/// Frame-level, file-level and prefix-length statistics over labeled files.
///
/// Speakers missing from the model's label list are skipped with a warning.
pub fn evaluate(model: &Model, dataset: &BTreeMap<String, Vec<FeatureSequence>>) -> Result<AccuracyReport> {
    let mut files = Vec::new();
    let (mut hop_s, mut win_s) = (0.03, 0.1);
    for (speaker, seqs) in dataset {
        let Some(truth) = model.speaker_labels.iter().position(|l| l == speaker) else {
            log::warn!("speaker {speaker} is unknown to the model; skipped");
            continue;
        };
        for seq in seqs {
            if seq.is_empty() {
                continue;
            }
            hop_s = seq.hop_s;
            win_s = seq.win_s;
            let ll = transform(model, seq)?.rows;
            let correct_frames = ll.outer_iter().filter(|row| argmax(row.view()) == truth).count();
            // running sums give the prediction for every prefix length
            let mut sums = ndarray::Array1::zeros(ll.ncols());
            let mut prefix_ok = Vec::with_capacity(ll.nrows());
            for row in ll.axis_iter(Axis(0)) {
                sums += &row;
                prefix_ok.push(argmax(sums.view()) == truth);
            }
            let file_correct = *prefix_ok.last().unwrap();
            let frames_needed = file_correct.then(|| {
                let trailing = prefix_ok.iter().rev().take_while(|&&ok| ok).count();
                prefix_ok.len() - trailing + 1
            });
            files.push(FileResult {
                speaker: speaker.clone(),
                frames: ll.nrows(),
                correct_frames,
                file_correct,
                frames_needed,
            });
        }
    }
    let total_frames: usize = files.iter().map(|f| f.frames).sum();
    let correct_frames: usize = files.iter().map(|f| f.correct_frames).sum();
    let needed: Vec<usize> = files.iter().filter_map(|f| f.frames_needed).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(AccuracyReport {
        frame_accuracy: ratio(correct_frames, total_frames),
        file_accuracy: ratio(files.iter().filter(|f| f.file_correct).count(), files.len()),
        min_frames: needed.iter().copied().min(),
        mean_frames: (!needed.is_empty()).then(|| needed.iter().sum::<usize>() as f64 / needed.len() as f64),
        max_frames: needed.iter().copied().max(),
        files,
        hop_s,
        win_s,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;
    use crate::classifier::NetworkShape;

    #[test]
    fn durations_match_reported_table() {
        for (n, want) in [
            (1.0, "0.10"),
            (2.0, "0.13"),
            (5.0, "0.22"),
            (6.0, "0.25"),
            (30.0, "0.97"),
        ] {
            assert_eq!(format!("{:.2}", frames_to_duration(n)), want);
        }
        assert!((frames_to_duration(30.0) - 0.97).abs() < 1e-12);
    }

    /// Identity-like model: 3 inputs, output k driven by input k.
    fn oracle_model() -> Model {
        let mut m = Model::zeros(NetworkShape::new(vec![3, 3]).unwrap());
        for k in 0..3 {
            m.weights[0][[k, 0]] = -10.0;
            m.weights[0][[k, k + 1]] = 20.0;
        }
        m.speaker_labels = vec!["a".into(), "b".into(), "c".into()];
        m
    }

    fn one_hot_file(k: usize, n: usize) -> FeatureSequence {
        let mut x = Array2::zeros((n, 3));
        x.column_mut(k).fill(1.0);
        FeatureSequence::new(x, 0.03, 0.1)
    }

    #[test]
    fn perfect_model_needs_one_frame() {
        let mut ds = BTreeMap::new();
        for (k, s) in ["a", "b", "c"].iter().enumerate() {
            ds.insert(s.to_string(), vec![one_hot_file(k, 4), one_hot_file(k, 2)]);
        }
        let r = evaluate(&oracle_model(), &ds).unwrap();
        assert_eq!(r.frame_accuracy, 1.0);
        assert_eq!(r.file_accuracy, 1.0);
        assert_eq!((r.min_frames, r.max_frames), (Some(1), Some(1)));
    }

    #[test]
    fn uniform_model_always_picks_first_speaker() {
        let mut m = Model::zeros(NetworkShape::new(vec![3, 3]).unwrap());
        m.speaker_labels = vec!["a".into(), "b".into(), "c".into()];
        let mut ds = BTreeMap::new();
        ds.insert("a".to_string(), vec![one_hot_file(0, 3)]);
        ds.insert("b".to_string(), vec![one_hot_file(1, 3)]);
        ds.insert("c".to_string(), vec![one_hot_file(2, 3), one_hot_file(2, 3)]);
        let r = evaluate(&m, &ds).unwrap();
        assert_eq!(r.file_accuracy, 0.25);
    }

    #[test]
    fn late_settling_prefix() {
        // frames: wrong (strongly c), then b twice; prefix sums settle on b at length 3
        let mut x = Array2::zeros((4, 3));
        x[[0, 2]] = 1.0;
        x[[1, 1]] = 1.0;
        x[[2, 1]] = 1.0;
        x[[3, 1]] = 1.0;
        let mut ds = BTreeMap::new();
        ds.insert("b".to_string(), vec![FeatureSequence::new(x, 0.03, 0.1)]);
        let r = evaluate(&oracle_model(), &ds).unwrap();
        assert_eq!(r.files[0].correct_frames, 3);
        // after frame 2 sums tie between b and c at equal magnitude; tie goes to b (lower index)
        assert_eq!(r.files[0].frames_needed, Some(2));
    }
}
