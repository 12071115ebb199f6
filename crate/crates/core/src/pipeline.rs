//! Glue from audio files to network inputs and likelihood sequences.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use rayon::prelude::*;

use crate::audio::{load_wav, normalize_peak, AudioClip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{train, transform, LikelihoodSequence, Model, TrainReport};
use crate::config::PipelineConfig;
use crate::corpus::{
    boundary_truth, build_conversation, with_file, Category, Conversation, ConversationOptions, SpeakerDataset,
};
use crate::error::{Error, Result};
use crate::features::{
    add_deltas, cmvn, concat_frames, moments, ConcatConfig, FeatureSequence, MfccConfig, MfccExtractor,
};
use crate::scd::{boundary_statistics, calibrate, interval_means, BayesThreshold, GaussianPair, ScdConfig};
use crate::vad::{detect_voiced, remove_unvoiced, VadConfig, VadMask};

/// Preprocessing and feature extraction under one configuration.
pub struct FeaturePipeline {
    pub vad: VadConfig,
    pub mfcc: MfccConfig,
    pub concat: ConcatConfig,
    extractor: MfccExtractor,
}

/// Voiced speech of one file and the mask that produced it.
pub struct Preprocessed {
    pub speech: AudioClip,
    pub mask: VadMask,
}

impl FeaturePipeline {
    pub fn new(vad: &VadConfig, mfcc: &MfccConfig, concat: &ConcatConfig) -> Result<Self> {
        vad.validate()?;
        Ok(FeaturePipeline {
            vad: vad.clone(),
            mfcc: mfcc.clone(),
            concat: concat.clone(),
            extractor: MfccExtractor::new(mfcc)?,
        })
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        FeaturePipeline::new(&cfg.vad, &cfg.mfcc, &cfg.concat)
    }

    pub fn fingerprint(&self) -> String {
        crate::features::feature_fingerprint(&self.mfcc, &self.concat)
    }

    /// Peak normalization, then removal of unvoiced frames.
    pub fn preprocess(&self, clip: &AudioClip) -> Result<Preprocessed> {
        clip.expect_rate(self.mfcc.sample_rate)?;
        let clip = normalize_peak(clip);
        let mask = detect_voiced(&clip, &self.vad)?;
        let speech = remove_unvoiced(&clip, &mask)?;
        Ok(Preprocessed { speech, mask })
    }

    /// 39-dim static + delta + double-delta features, not yet normalized.
    pub fn dynamic_features(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        let stat = self.extractor.extract(clip)?;
        add_deltas(&stat, self.mfcc.delta_halfwidth)
    }

    /// Loads a file, removes silence and returns its 39-dim features.
    pub fn file_dynamic_features(&self, path: &Path) -> Result<FeatureSequence> {
        let run = || {
            let clip = load_wav(path)?;
            let pre = self.preprocess(&clip)?;
            self.dynamic_features(&pre.speech)
        };
        run().map_err(|e| with_file(e, path))
    }

    /// Normalizes a whole file by its own statistics and stacks it into super-frames.
    pub fn file_features(&self, path: &Path) -> Result<FeatureSequence> {
        let seq = self.file_dynamic_features(path)?;
        concat_frames(&cmvn(&seq).map_err(|e| with_file(e, path))?, &self.concat).map_err(|e| with_file(e, path))
    }

    /// Normalizes all of a speaker's files with the speaker's pooled statistics,
    /// then stacks each file separately so no super-frame straddles two files.
    pub fn speaker_features(&self, paths: &[PathBuf]) -> Result<Vec<FeatureSequence>> {
        let parts: Vec<FeatureSequence> = paths
            .par_iter()
            .map(|p| self.file_dynamic_features(p))
            .collect::<Result<_>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.frames.view()).collect();
        let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if pooled.nrows() < 2 {
            return Err(Error::TooFewFrames {
                len: pooled.nrows(),
                needed: 2,
            });
        }
        let (mean, std) = moments(&pooled);
        parts
            .iter()
            .zip(paths)
            .map(|(p, path)| {
                let normalized = FeatureSequence::new((&p.frames - &mean) / &std, p.hop_s, p.win_s);
                concat_frames(&normalized, &self.concat).map_err(|e| with_file(e, path))
            })
            .collect()
    }

    /// Features of an already-voiced conversation, normalized over the whole recording.
    pub fn conversation_features(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        clip.expect_rate(self.mfcc.sample_rate)?;
        concat_frames(&cmvn(&self.dynamic_features(clip)?)?, &self.concat)
    }
}

/// Per-speaker training inputs with a held-out tail for early stopping.
pub struct TrainingSet {
    pub train: BTreeMap<String, FeatureSequence>,
    pub holdout: BTreeMap<String, FeatureSequence>,
}

/// Stacks every speaker's `train` files and splits off the last `holdout_fraction`
/// of each speaker's super-frames.
pub fn training_set(pipe: &FeaturePipeline, ds: &SpeakerDataset, holdout_fraction: f64) -> Result<TrainingSet> {
    let mut parts = BTreeMap::new();
    for spk in &ds.speakers {
        let paths: Vec<PathBuf> = spk.files(Category::Train).map(|u| u.path.clone()).collect();
        if paths.is_empty() {
            return Err(Error::EmptySpeaker(spk.id.clone()));
        }
        parts.insert(spk.id.clone(), pipe.speaker_features(&paths)?);
    }
    split_holdout(&parts, holdout_fraction)
}

/// Joins each speaker's per-file super-frames and holds out the tail fraction.
pub fn split_holdout(parts: &BTreeMap<String, Vec<FeatureSequence>>, holdout_fraction: f64) -> Result<TrainingSet> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidConfig("holdout fraction must be in [0, 1)".into()));
    }
    let mut train = BTreeMap::new();
    let mut holdout = BTreeMap::new();
    for (id, files) in parts {
        if files.is_empty() {
            return Err(Error::EmptySpeaker(id.clone()));
        }
        let all = FeatureSequence::concat(&files.iter().collect::<Vec<_>>())?;
        let n_hold = (all.len() as f64 * holdout_fraction).floor() as usize;
        let cut = all.len() - n_hold;
        train.insert(
            id.clone(),
            FeatureSequence::new(all.frames.slice(s![..cut, ..]).to_owned(), all.hop_s, all.win_s),
        );
        if n_hold > 0 {
            holdout.insert(
                id.clone(),
                FeatureSequence::new(all.frames.slice(s![cut.., ..]).to_owned(), all.hop_s, all.win_s),
            );
        }
    }
    Ok(TrainingSet { train, holdout })
}

/// Per-file features of every speaker's files in `category`, for evaluation.
pub fn test_set(
    pipe: &FeaturePipeline,
    ds: &SpeakerDataset,
    category: Category,
) -> Result<BTreeMap<String, Vec<FeatureSequence>>> {
    let mut out = BTreeMap::new();
    for spk in &ds.speakers {
        let paths: Vec<&Path> = spk.files(category).map(|u| u.path.as_path()).collect();
        let feats = paths
            .par_iter()
            .map(|p| pipe.file_features(p))
            .collect::<Result<Vec<_>>>()?;
        if !feats.is_empty() {
            out.insert(spk.id.clone(), feats);
        }
    }
    Ok(out)
}

/// Refuses to apply a model to features built under a different configuration.
pub fn check_fingerprint(model: &Model, pipe: &FeaturePipeline) -> Result<()> {
    let features = pipe.fingerprint();
    if model.feature_fingerprint != features {
        return Err(Error::FingerprintMismatch {
            model: model.feature_fingerprint.clone(),
            features,
        });
    }
    Ok(())
}

/// Log-likelihood sequence of a voiced conversation under a trained model.
pub fn conversation_likelihoods(model: &Model, pipe: &FeaturePipeline, clip: &AudioClip) -> Result<LikelihoodSequence> {
    check_fingerprint(model, pipe)?;
    transform(model, &pipe.conversation_features(clip)?)
}

/// Share of each speaker's training super-frames held out for early stopping.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Trains a classifier on the `train` files of every speaker in `ds`.
pub fn train_model(pipe: &FeaturePipeline, cfg: &PipelineConfig, ds: &SpeakerDataset) -> Result<(Model, TrainReport)> {
    train_on_set(pipe, cfg, &training_set(pipe, ds, HOLDOUT_FRACTION)?)
}

/// Trains on prepared features and stamps the model with the pipeline fingerprint.
pub fn train_on_set(pipe: &FeaturePipeline, cfg: &PipelineConfig, set: &TrainingSet) -> Result<(Model, TrainReport)> {
    let shape = cfg.network_shape(set.train.len())?;
    let (mut model, report) = train(&set.train, &cfg.train, &shape, &set.holdout)?;
    model.feature_fingerprint = pipe.fingerprint();
    Ok((model, report))
}

/// Conversation assembly settings of a configuration.
pub fn conversation_options(cfg: &PipelineConfig) -> ConversationOptions {
    ConversationOptions {
        vad: cfg.vad.clone(),
        sample_rate: cfg.audio.sample_rate,
        min_block_s: cfg.conversation.min_block_s,
        block_quantum_s: Some(cfg.conversation.block_quantum_s).filter(|q| *q > 0.0),
    }
}

/// `count` conversations over all speakers of `ds`. Conversation `k` uses seed
/// `seed + k` both for the speaker order and for the utterance order.
pub fn shuffled_conversations(
    ds: &SpeakerDataset,
    count: usize,
    seed: u64,
    opts: &ConversationOptions,
) -> Result<Vec<Conversation>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut ids = ds.ids();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(k)));
            build_conversation(ds, &ids, seed.wrapping_add(k), opts)
        })
        .collect()
}

/// Boundary statistics of a likelihood sequence paired with their truth labels.
pub fn boundary_samples(
    ll: &LikelihoodSequence,
    change_points: &[f64],
    scd: &ScdConfig,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let series = interval_means(ll, scd)?;
    let (_, stat) = boundary_statistics(&series, scd)?;
    let truth = boundary_truth(change_points, scd.interval_s, stat.len());
    Ok((stat, truth))
}

/// Pools boundary samples from several conversations and fits the threshold.
pub fn calibrate_on(
    scored: &[(LikelihoodSequence, Vec<f64>)],
    scd: &ScdConfig,
) -> Result<(GaussianPair, BayesThreshold)> {
    let mut stats = Vec::new();
    let mut truth = Vec::new();
    for (ll, changes) in scored {
        let (s, t) = boundary_samples(ll, changes, scd)?;
        stats.extend(s);
        truth.extend(t);
    }
    calibrate(&stats, &truth)
}
