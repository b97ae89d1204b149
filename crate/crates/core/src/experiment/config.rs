use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BaseCorpusSpec, CipherSpec, GroupFractions};
use crate::error::{Error, Result};
use crate::eval::Tokenizer;
use crate::model::{DecodeOptions, ModelConfig};
use crate::subword::VocabPolicy;
use crate::trainer::{AdamConfig, LrSchedule, SelectionStrategy, TrainConfig};

/// One experiment: data, vocabulary, sampling, model, training and
/// evaluation settings. Every random choice draws from a seed listed in
/// `[seeds]` or in the corpus specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Seeds,
    pub corpus: CorpusConfig,
    pub vocab: VocabPolicy,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Dev/test row selection.
    pub split: u64,
    /// Training sentence selection per cipher.
    pub sample: u64,
    pub vocab: u64,
    /// Example stream.
    pub sampling: u64,
    pub init: u64,
    /// Dropout.
    pub train: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directions {
    /// Every language into the hub.
    ToHub,
    /// The hub into every language.
    FromHub,
    Both,
}

impl Directions {
    pub fn keeps(self, source: &str, target: &str, hub: &str) -> bool {
        match self {
            Directions::ToHub => target == hub,
            Directions::FromHub => source == hub,
            Directions::Both => true,
        }
    }
}

/// Either a synthetic cipher corpus (`base`, `cipher`, `sizes`) or a
/// manifest of files on disk with multi-way `dev` and `test` sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default)]
    pub base: Option<BaseCorpusSpec>,
    #[serde(default, rename = "cipher")]
    pub ciphers: Vec<CipherSpec>,
    /// Training sentences per cipher language.
    #[serde(default)]
    pub sizes: BTreeMap<String, usize>,
    #[serde(default)]
    pub dev_sentences: usize,
    #[serde(default)]
    pub test_sentences: usize,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_directions")]
    pub directions: Directions,
    #[serde(default)]
    pub groups: GroupFractions,
}

fn default_directions() -> Directions {
    Directions::Both
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(default)]
    pub label_smoothing: f64,
    #[serde(default = "default_true")]
    pub shared_embeddings: bool,
    #[serde(default)]
    pub transparent_attention: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize, num_tags: usize) -> ModelConfig {
        ModelConfig {
            label_smoothing: self.label_smoothing,
            shared_embeddings: self.shared_embeddings,
            transparent_attention: self.transparent_attention,
            ..ModelConfig::new(
                vocab_size,
                num_tags,
                self.d_model,
                self.ff_dim,
                self.heads,
                (self.encoder_layers, self.decoder_layers),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub base_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub token_budget: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub checkpoint_every: usize,
    #[serde(default = "default_selection")]
    pub selection: SelectionStrategy,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Dev rows per training direction scored at each checkpoint; 0 skips.
    #[serde(default)]
    pub dev_sentences: usize,
}

fn default_clip() -> f64 {
    1.0
}

fn default_dropout() -> f64 {
    0.1
}

fn default_selection() -> SelectionStrategy {
    SelectionStrategy::Final
}

impl TrainSection {
    pub fn to_config(&self, seed: u64, checkpoint_dir: Option<PathBuf>) -> Result<TrainConfig> {
        let config = TrainConfig {
            schedule: LrSchedule::new(self.base_rate, self.warmup_steps)?,
            total_steps: self.total_steps,
            token_budget: self.token_budget,
            clip_norm: self.clip_norm,
            dropout: self.dropout,
            seed,
            checkpoint_every: self.checkpoint_every,
            adam: self.adam,
            checkpoint_dir,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Test directions; empty means every training direction.
    #[serde(default)]
    pub directions: Vec<String>,
    /// Directions without training data, decoded directly and via the hub.
    #[serde(default)]
    pub zero_shot: Vec<String>,
    /// Training directions that also get a bilingual baseline model.
    #[serde(default)]
    pub baselines: Vec<String>,
    /// Vocabulary size for baseline models; defaults to the shared size.
    #[serde(default)]
    pub baseline_vocab_size: Option<usize>,
    #[serde(default)]
    pub tokenizer: Tokenizer,
    #[serde(default)]
    pub decode: DecodeOptions,
}

/// Sequence-length analysis over a grid of vocabulary sizes and
/// vocabulary temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub vocab_sizes: Vec<usize>,
    pub vocab_temperatures: Vec<f64>,
    /// Test rows segmented per language.
    pub sample_sentences: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative corpus paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut config.corpus.manifest,
            &mut config.corpus.dev,
            &mut config.corpus.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        match (&c.base, &c.manifest) {
            (Some(_), None) => {
                if c.sizes.is_empty() {
                    return Err(Error::InvalidConfig("synthetic corpus needs [corpus.sizes]".into()));
                }
                if let Some(id) = c.sizes.keys().find(|id| !c.ciphers.iter().any(|s| &s.id == *id)) {
                    return Err(Error::InvalidConfig(format!("size given for undeclared cipher {id}")));
                }
                if c.test_sentences == 0 {
                    return Err(Error::InvalidConfig("test_sentences must be positive".into()));
                }
            }
            (None, Some(_)) => {
                if c.test.is_none() {
                    return Err(Error::InvalidConfig(
                        "a manifest corpus needs a multi-way test file".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "corpus needs exactly one of `base` (synthetic) or `manifest`".into(),
                ))
            }
        }
        if self.vocab.seed != 0 && self.vocab.seed != self.seeds.vocab {
            return Err(Error::InvalidConfig("set the vocabulary seed in [seeds]".into()));
        }
        self.vocab.validate()?;
        if !(self.sampling.temperature > 0.0) || !self.sampling.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sampling temperature must be positive, got {}",
                self.sampling.temperature
            )));
        }
        if self.model.is_some() != self.train.is_some() {
            return Err(Error::InvalidConfig(
                "[model] and [train] must be given together".into(),
            ));
        }
        if let Some(t) = &self.train {
            t.to_config(self.seeds.train, None)?;
        }
        if self.model.is_none() && self.analysis.is_none() {
            return Err(Error::InvalidConfig(
                "nothing to run: give [model]/[train] or [analysis]".into(),
            ));
        }
        Ok(())
    }

    pub fn vocab_policy(&self) -> VocabPolicy {
        VocabPolicy {
            seed: self.seeds.vocab,
            ..self.vocab.clone()
        }
    }
}
