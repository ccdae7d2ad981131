use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::denoiser::{TrainConfig, UNetConfig};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::narrate::{EndpointConfig, GenerationParams};
use crate::schedule::ScheduleConfig;

/// Everything a run depends on. Every key is optional; see `docs/config.md`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub corpus: CorpusConfig,
    pub schedule: ScheduleConfig,
    pub model: UNetConfig,
    pub train: TrainSection,
    pub scheme: SchemeSection,
    pub eval: EvalSection,
    pub narration: NarrationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    /// Training videos come from `corpus.count`.
    pub test_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: 0,
            test_count: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub k_latent: usize,
    pub k_obs: usize,
    /// Drives example, layout, step and noise draws.
    pub seed: u64,
    /// Parameter initialisation; ignored when warm starting.
    pub init_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            k_latent: t.k_latent,
            k_obs: t.k_obs,
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            k_latent: self.k_latent,
            k_obs: self.k_obs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceChoice {
    GrayMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    /// Length of the observed prefix.
    pub observed: usize,
    pub stride: usize,
    pub group_size: usize,
    pub max_cond: usize,
    pub distance: DistanceChoice,
    /// Thumbnail side for the gray-mse distance.
    pub distance_size: usize,
    pub seed: u64,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            observed: 10,
            stride: 10,
            group_size: 10,
            max_cond: 10,
            distance: DistanceChoice::GrayMse,
            distance_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorChoice {
    SeededProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipPolicy {
    /// Score only frames after the observed prefix.
    Generated,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub extractor: ExtractorChoice,
    pub extractor_seed: u64,
    pub feature_dim: usize,
    pub clip: ClipPolicy,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            extractor: ExtractorChoice::SeededProjection,
            extractor_seed: 0,
            feature_dim: 64,
            clip: ClipPolicy::Generated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarrationSection {
    pub context_examples: usize,
    pub context_seed: u64,
    pub frame_budget: usize,
    pub generation: GenerationParams,
    pub endpoint: EndpointConfig,
}

impl Default for NarrationSection {
    fn default() -> Self {
        Self {
            context_examples: 2,
            context_seed: 0,
            frame_budget: crate::narrate::DEFAULT_FRAME_BUDGET,
            generation: GenerationParams::default(),
            endpoint: EndpointConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults, or the file when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash of the fully resolved configuration.
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serialises")
                .as_bytes(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.schedule.build()?;
        self.model.validate()?;
        let m = &self.model;
        let c = &self.corpus;
        if (m.height, m.width, m.channels) != (c.height, c.width, c.channels) {
            return Err(Error::Config(format!(
                "model frames {}x{}x{} differ from corpus frames {}x{}x{}",
                m.height, m.width, m.channels, c.height, c.width, c.channels
            )));
        }
        if c.frames > m.max_frames {
            return Err(Error::Config(format!(
                "videos of {} frames exceed model.max_frames = {}",
                c.frames, m.max_frames
            )));
        }
        let t = &self.train;
        if t.k_latent == 0 || t.k_latent > m.k_latent || t.k_obs > m.k_obs {
            return Err(Error::Config(format!(
                "train k_latent {} / k_obs {} must fit model slots {} / {}",
                t.k_latent, t.k_obs, m.k_latent, m.k_obs
            )));
        }
        if t.k_latent + t.k_obs > c.frames {
            return Err(Error::Config(
                "train k_latent + k_obs exceeds video length".into(),
            ));
        }
        if !(t.learning_rate >= 0.0) {
            return Err(Error::Config(
                "train learning_rate must be non-negative".into(),
            ));
        }
        let s = &self.scheme;
        if s.stride == 0 || s.group_size == 0 || s.max_cond == 0 || s.distance_size == 0 {
            return Err(Error::Config("scheme sizes must be at least 1".into()));
        }
        if s.observed == 0 || s.observed > c.frames {
            return Err(Error::Config(format!(
                "scheme observed prefix {} must lie in 1..={}",
                s.observed, c.frames
            )));
        }
        if s.stride > m.k_latent || s.group_size > m.k_latent || s.max_cond > m.k_obs {
            return Err(Error::Config(format!(
                "scheme stride {} / group_size {} / max_cond {} must fit model slots {} / {}",
                s.stride, s.group_size, s.max_cond, m.k_latent, m.k_obs
            )));
        }
        if self.eval.feature_dim == 0 {
            return Err(Error::Config("eval feature_dim must be at least 1".into()));
        }
        if self.narration.frame_budget == 0 {
            return Err(Error::Config(
                "narration frame_budget must be at least 1".into(),
            ));
        }
        if self.data.test_count == 0 {
            return Err(Error::Config("data test_count must be at least 1".into()));
        }
        Ok(())
    }
}
