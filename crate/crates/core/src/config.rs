//! Declarative run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::FeaturizerConfig;
use crate::trainer::{ModuleId, TrainConfig};
use crate::voting::{OptimizeConfig, DEFAULT_EPISODES_PER_UPDATE, DEFAULT_RL_STEPS};

pub const DEFAULT_SEEDS: [u64; 3] = [13, 42, 87];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSONL dataset.
    pub dataset: Option<PathBuf>,
    /// Name used in reports; defaults to the dataset file stem.
    pub dataset_name: Option<String>,
    /// Precomputed RVHE embeddings aligned with the dataset. When absent the
    /// built-in featurizer is used.
    pub embeddings: Option<PathBuf>,
    /// RVHE embeddings aligned with the augmented dataset (originals then
    /// tagged copies); required with `embeddings` when M1 is trained.
    pub augmented_embeddings: Option<PathBuf>,
    pub featurizer: FeaturizerConfig,
    /// Gazetteer TSV; the built-in lexicon when absent.
    pub gazetteer: Option<PathBuf>,
    pub train: TrainConfig,
    pub modules: Vec<ModuleId>,
    pub rl_steps: usize,
    pub episodes_per_update: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// Also produce the ablation table.
    pub ablate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            dataset_name: None,
            embeddings: None,
            augmented_embeddings: None,
            featurizer: FeaturizerConfig::default(),
            gazetteer: None,
            train: TrainConfig::default(),
            modules: ModuleId::VOTERS.to_vec(),
            rl_steps: DEFAULT_RL_STEPS,
            episodes_per_update: DEFAULT_EPISODES_PER_UPDATE,
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: None,
            ablate: false,
        }
    }
}

fn require_file(path: &Path, what: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} file not found")),
        ))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes") + "\n"
    }

    pub fn needs_augmentation(&self) -> bool {
        self.modules.iter().any(|m| m.mechanisms().augment) || self.ablate
    }

    /// Checks values without touching the filesystem.
    pub fn validate_values(&self) -> Result<()> {
        self.train.validate()?;
        self.featurizer.validate()?;
        if self.modules.is_empty() {
            return Err(Error::InvalidConfig("modules must not be empty".into()));
        }
        if self.modules.contains(&ModuleId::Combined) {
            return Err(Error::InvalidConfig("modules must be drawn from M0, M1, M2, M3".into()));
        }
        let mut sorted = self.modules.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.modules.len() {
            return Err(Error::InvalidConfig("modules must not repeat".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.episodes_per_update == 0 {
            return Err(Error::InvalidConfig("episodes_per_update must be at least 1".into()));
        }
        if self.augmented_embeddings.is_some() && self.embeddings.is_none() {
            return Err(Error::InvalidConfig(
                "augmented_embeddings requires embeddings".into(),
            ));
        }
        Ok(())
    }

    /// Full validation: values plus existence of every input path.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        let dataset = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("dataset path is required".into()))?;
        require_file(dataset, "dataset")?;
        if self.output_dir.is_none() {
            return Err(Error::InvalidConfig("output_dir is required".into()));
        }
        if let Some(p) = &self.embeddings {
            require_file(p, "embeddings")?;
            if self.needs_augmentation() {
                let aug = self.augmented_embeddings.as_deref().ok_or_else(|| {
                    Error::InvalidConfig(
                        "augmented_embeddings is required when embeddings are imported and M1 is trained".into(),
                    )
                })?;
                require_file(aug, "augmented embeddings")?;
            }
        }
        if let Some(p) = &self.gazetteer {
            require_file(p, "gazetteer")?;
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("output_dir is required".into()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train }
    }

    pub fn optimize_config(&self, seed: u64) -> OptimizeConfig {
        OptimizeConfig {
            steps: self.rl_steps,
            episodes_per_update: self.episodes_per_update,
            seed,
            ..OptimizeConfig::default()
        }
    }
}
