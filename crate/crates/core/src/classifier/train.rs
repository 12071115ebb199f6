use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{cg, cost_and_gradient, init_weights_in, one_hot, predict_batch, Model, NetworkShape};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Regularization strength per stage; strictly descending and ending at 0.
    pub lambda_schedule: Vec<f64>,
    pub cg_iters_per_stage: usize,
    /// Minimum holdout frame-accuracy gain (as a fraction) that counts as progress.
    pub stop_delta: f64,
    /// Consecutive stages without progress before stopping.
    pub stop_patience: usize,
    pub init_range: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_schedule: vec![3.0, 1.0, 0.3, 0.1, 0.0],
            cg_iters_per_stage: 200,
            stop_delta: 0.001,
            stop_patience: 2,
            init_range: 0.1,
            rng_seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sched = &self.lambda_schedule;
        if sched.is_empty() || *sched.last().unwrap() != 0.0 {
            return Err(Error::InvalidConfig("lambda schedule must end at 0".into()));
        }
        if sched.windows(2).any(|w| !(w[0] > w[1])) || sched.iter().any(|&l| l < 0.0) {
            return Err(Error::InvalidConfig(
                "lambda schedule must be non-negative and strictly descending".into(),
            ));
        }
        if !(self.init_range > 0.0) {
            return Err(Error::InvalidConfig("init_range must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub lambda: f64,
    /// Regularized cost at the end of the stage.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub initial_holdout_accuracy: Option<f64>,
    pub stages: Vec<StageReport>,
    pub stopped_early: bool,
    pub train_frames: usize,
}

impl TrainReport {
    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

fn stack(data: &BTreeMap<String, FeatureSequence>, index: &BTreeMap<&str, usize>) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut views = Vec::with_capacity(data.len());
    let mut labels = Vec::new();
    for (spk, seq) in data {
        let k = *index
            .get(spk.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("holdout speaker {spk} not in training set")))?;
        views.push(seq.frames.view());
        labels.extend(std::iter::repeat_n(k, seq.len()));
    }
    let x = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::InvalidConfig(format!("inconsistent feature dims: {e}")))?;
    Ok((x, labels))
}

fn frame_accuracy(model: &Model, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let h = predict_batch(model, x.view())?;
    let correct = h
        .outer_iter()
        .zip(labels)
        .filter(|(row, &k)| super::argmax(row.view()) == k)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Full-batch training through the lambda schedule with holdout-based early stopping.
///
/// Speakers are indexed in the map's (lexicographic) order. After each stage the
/// frame accuracy on `holdout` is measured; training stops once it has improved
/// by less than `stop_delta` for `stop_patience` consecutive stages. An empty
/// holdout runs every stage.
pub fn train(
    features_by_speaker: &BTreeMap<String, FeatureSequence>,
    cfg: &TrainConfig,
    shape: &NetworkShape,
    holdout: &BTreeMap<String, FeatureSequence>,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    for (spk, seq) in features_by_speaker {
        if seq.is_empty() {
            return Err(Error::EmptySpeaker(spk.clone()));
        }
        if seq.dim() != shape.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.input_dim(),
                found: seq.dim(),
            });
        }
    }
    if features_by_speaker.len() != shape.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.output_dim(),
            found: features_by_speaker.len(),
        });
    }
    let index: BTreeMap<&str, usize> = features_by_speaker
        .keys()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let (x, labels) = stack(features_by_speaker, &index)?;
    let y = one_hot(&labels, shape.output_dim());
    let holdout_set = if holdout.values().any(|s| !s.is_empty()) {
        Some(stack(holdout, &index)?)
    } else {
        None
    };

    let mut model = init_weights_in(shape, cfg.rng_seed, cfg.init_range);
    model.speaker_labels = features_by_speaker.keys().cloned().collect();

    let accuracy = |m: &Model| -> Result<Option<f64>> {
        holdout_set
            .as_ref()
            .map(|(hx, hl)| frame_accuracy(m, hx, hl))
            .transpose()
    };
    let initial = accuracy(&model)?;
    let mut prev = initial;
    let mut stale = 0;
    let mut stages = Vec::new();
    let mut stopped_early = false;

    for (stage, &lambda) in cfg.lambda_schedule.iter().enumerate() {
        let mut scratch = model.clone();
        let result = cg::minimize(&model.flat_params(), cfg.cg_iters_per_stage, |params| {
            scratch.set_flat_params(params);
            match cost_and_gradient(&scratch, x.view(), y.view(), lambda) {
                Ok((j, grads)) => (j, grads.iter().flat_map(|g| g.iter().copied()).collect()),
                Err(_) => (f64::NAN, vec![0.0; params.len()]),
            }
        });
        let j = result.final_value();
        if !j.is_finite() {
            return Err(Error::DivergedCost { stage });
        }
        model.set_flat_params(&result.x);
        if !model.is_finite() {
            return Err(Error::DivergedCost { stage });
        }
        let acc = accuracy(&model)?;
        log::info!(
            "stage {stage}: lambda {lambda} cost {j:.6} after {} iterations, holdout accuracy {:?}",
            result.iterations,
            acc
        );
        stages.push(StageReport {
            lambda,
            cost: j,
            iterations: result.iterations,
            evaluations: result.evaluations,
            holdout_accuracy: acc,
        });
        if let (Some(a), Some(p)) = (acc, prev) {
            if a - p < cfg.stop_delta {
                stale += 1;
            } else {
                stale = 0;
            }
            if stale >= cfg.stop_patience && stage + 1 < cfg.lambda_schedule.len() {
                stopped_early = true;
                break;
            }
        }
        prev = acc;
    }

    Ok((
        model,
        TrainReport {
            initial_holdout_accuracy: initial,
            stages,
            stopped_early,
            train_frames: labels.len(),
        },
    ))
}
