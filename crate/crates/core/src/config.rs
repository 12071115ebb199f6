//! Whole-pipeline configuration, stored as sectioned TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{NetworkShape, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{feature_fingerprint, ConcatConfig, MfccConfig};
use crate::scd::ScdConfig;
use crate::vad::VadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig { sample_rate: 16000 }
    }
}

/// Hidden layer widths; input and output sizes follow from the features and speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden: vec![200] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversationConfig {
    pub min_block_s: f64,
    /// Round each speaker block down to a multiple of this (0 disables).
    pub block_quantum_s: f64,
    /// Interval lengths reported by `score` and `report`.
    pub report_intervals_s: Vec<f64>,
}

impl Default for ConversationConfig {
    fn default() -> Self {
        ConversationConfig {
            min_block_s: 1.0,
            block_quantum_s: 2.0,
            report_intervals_s: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub threshold: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub audio: AudioConfig,
    pub vad: VadConfig,
    pub mfcc: MfccConfig,
    pub concat: ConcatConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub scd: ScdConfig,
    pub conversation: ConversationConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Dimension of one stacked input frame.
    pub fn input_dim(&self) -> usize {
        3 * self.mfcc.n_ceps * self.concat.win_frames
    }

    pub fn network_shape(&self, n_speakers: usize) -> Result<NetworkShape> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.network.hidden);
        sizes.push(n_speakers);
        let shape = NetworkShape::new(sizes)?;
        self.check_shape(&shape, n_speakers)?;
        Ok(shape)
    }

    /// Cross-field checks between the network and the feature pipeline.
    pub fn check_shape(&self, shape: &NetworkShape, n_speakers: usize) -> Result<()> {
        if shape.input_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: shape.input_dim(),
            });
        }
        if shape.output_dim() != n_speakers {
            return Err(Error::DimensionMismatch {
                expected: n_speakers,
                found: shape.output_dim(),
            });
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        feature_fingerprint(&self.mfcc, &self.concat)
    }

    pub fn validate(&self) -> Result<()> {
        self.vad.validate()?;
        self.mfcc.validate()?;
        self.train.validate()?;
        if self.mfcc.sample_rate != self.audio.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "mfcc.sample_rate {} differs from audio.sample_rate {}",
                self.mfcc.sample_rate, self.audio.sample_rate
            )));
        }
        if self.concat.win_frames == 0 || self.concat.hop_frames == 0 {
            return Err(Error::InvalidConfig(
                "concat win_frames and hop_frames must be >= 1".into(),
            ));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must have at least one node".into()));
        }
        if !(self.scd.interval_s > 0.0) {
            return Err(Error::InvalidConfig("scd.interval_s must be > 0".into()));
        }
        if self.conversation.report_intervals_s.iter().any(|&i| !(i > 0.0)) {
            return Err(Error::InvalidConfig("report intervals must be > 0".into()));
        }
        if !(self.conversation.block_quantum_s >= 0.0) {
            return Err(Error::InvalidConfig("block_quantum_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(PipelineConfig::from_toml(&back.to_toml()).unwrap(), back);
    }

    #[test]
    fn non_default_round_trips() {
        let text = r#"
[network]
hidden = [50, 20]

[train]
lambda_schedule = [1.0, 0.0]
cg_iters_per_stage = 7

[scd]
interval_s = 0.5
p = "inf"
use_second_difference = true

[paths]
model = "m.bin"
"#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.network.hidden, vec![50, 20]);
        assert_eq!(cfg.scd.p, crate::scd::Norm::Inf);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn cross_field_checks() {
        let cfg = PipelineConfig::default();
        let shape = cfg.network_shape(20).unwrap();
        assert_eq!(shape.0, vec![390, 200, 20]);
        let wrong = NetworkShape::new(vec![100, 5, 20]).unwrap();
        assert!(cfg.check_shape(&wrong, 20).is_err());
        assert!(cfg.check_shape(&shape, 21).is_err());

        let mut bad = PipelineConfig::default();
        bad.mfcc.sample_rate = 8000;
        assert!(bad.validate().is_err());
        assert!(PipelineConfig::from_toml("[vad]\nbogus = 1\n").is_err());
    }
}
