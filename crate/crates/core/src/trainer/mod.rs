//! Training loop, checkpoints and checkpoint selection.

mod optim;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Pair};
use crate::sampler::{Batch, EncodedExample};

pub use optim::{clip_global_norm, global_norm, lr_at, Adam, AdamConfig, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub total_steps: usize,
    /// Source plus target tokens per batch.
    pub token_budget: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Also write each checkpoint here when set.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

fn default_clip() -> f64 {
    1.0
}

fn default_dropout() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.checkpoint_every == 0 || self.total_steps < self.checkpoint_every {
            return Err(Error::InvalidConfig(format!(
                "need 0 < checkpoint_every ({}) <= total_steps ({})",
                self.checkpoint_every, self.total_steps
            )));
        }
        if !(self.clip_norm > 0.0) || self.token_budget == 0 {
            return Err(Error::InvalidConfig(
                "clip_norm and token_budget must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Dev-set measurements taken when a checkpoint is saved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub loss: Option<f64>,
    pub bleu: BTreeMap<String, f64>,
}

impl DevMetrics {
    pub fn mean_bleu(&self) -> Option<f64> {
        (!self.bleu.is_empty()).then(|| self.bleu.values().sum::<f64>() / self.bleu.len() as f64)
    }

    /// Higher is better: mean BLEU when available, else negated loss.
    pub fn score(&self) -> f64 {
        self.mean_bleu().or(self.loss.map(|l| -l)).unwrap_or(f64::NEG_INFINITY)
    }
}

pub trait DevEvaluator {
    fn evaluate(&mut self, model: &Model<f32>) -> Result<DevMetrics>;
}

/// Mean per-token dev loss over fixed encoded pairs.
pub struct DevLoss {
    pub pairs: Vec<Pair>,
    pub chunk: usize,
}

impl DevEvaluator for DevLoss {
    fn evaluate(&mut self, model: &Model<f32>) -> Result<DevMetrics> {
        let mut stats = crate::model::LossStats::default();
        for chunk in self.pairs.chunks(self.chunk.max(1)) {
            stats.merge(model.loss(chunk)?);
        }
        Ok(DevMetrics {
            loss: Some(stats.mean_nll()),
            bleu: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub params: Arc<Vec<f32>>,
    pub dev: DevMetrics,
}

impl Checkpoint {
    /// FNV-1a over the parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter() {
            for b in p.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn model(&self, template: &Model<f32>) -> Result<Model<f32>> {
        Model::from_params(template.config().clone(), self.params.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    BestDev,
    Final,
}

/// Best-dev picks the highest dev score (later step on ties); final picks
/// the last checkpoint.
pub fn select_checkpoint(series: &[Checkpoint], strategy: SelectionStrategy) -> Result<&Checkpoint> {
    let last = series.last().ok_or(Error::NoCheckpoints)?;
    Ok(match strategy {
        SelectionStrategy::Final => last,
        SelectionStrategy::BestDev => {
            series.iter().fold(
                &series[0],
                |best, c| if c.dev.score() >= best.dev.score() { c } else { best },
            )
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub nll: f64,
    pub tokens: usize,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub batch_fingerprint: u64,
    pub composition: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<DevMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub losses: Vec<f64>,
}

fn fingerprint(pairs: &[Pair]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (s, t) in pairs {
        for &x in s.iter().chain([&u32::MAX]).chain(t).chain([&u32::MAX]) {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// Runs `config.total_steps` optimizer steps over `batches`. Each step is
/// forward, loss, backward, global-norm clipping and an Adam update at
/// `lr_at(step)`. Every `checkpoint_every` steps (and at the end) the
/// parameters are snapshotted with dev metrics. `on_step` sees every step.
pub fn train<I>(
    model: &mut Model<f32>,
    batches: I,
    config: &TrainConfig,
    mut dev: Option<&mut dyn DevEvaluator>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome>
where
    I: IntoIterator<Item = Result<Batch<EncodedExample>>>,
{
    config.validate()?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    model.set_dropout(config.dropout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(model.num_params(), config.adam);
    let mut grad = vec![0.0f32; model.num_params()];
    let mut batches = batches.into_iter();
    let mut outcome = TrainOutcome {
        checkpoints: Vec::new(),
        losses: Vec::with_capacity(config.total_steps),
    };
    for step in 1..=config.total_steps {
        let batch = batches
            .next()
            .ok_or_else(|| Error::InsufficientData(format!("batch stream ended before step {step}")))??;
        let pairs: Vec<Pair> = batch
            .examples
            .iter()
            .map(|e| (e.source.clone(), e.target.clone()))
            .collect();
        let fp = fingerprint(&pairs);
        grad.fill(0.0);
        let stats = model.loss_and_grad(&pairs, Some(&mut rng), &mut grad)?;
        let loss = stats.mean_loss();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, fingerprint: fp });
        }
        let grad_norm = clip_global_norm(&mut grad, config.clip_norm);
        let lr = lr_at(&config.schedule, step)?;
        opt.update(model.params_mut(), &grad, lr);
        outcome.losses.push(loss);

        let mut metrics = StepMetrics {
            step,
            lr,
            loss,
            nll: stats.mean_nll(),
            tokens: batch.token_count,
            grad_norm,
            clipped_norm: global_norm(&grad),
            batch_fingerprint: fp,
            composition: batch.composition,
            dev: None,
        };
        if step % config.checkpoint_every == 0 || step == config.total_steps {
            let dev_metrics = match dev.as_deref_mut() {
                Some(d) => d.evaluate(model)?,
                None => DevMetrics::default(),
            };
            if let Some(dir) = &config.checkpoint_dir {
                model.save(&dir.join(format!("step-{step:08}.ckpt")), step)?;
            }
            outcome.checkpoints.push(Checkpoint {
                step,
                params: Arc::new(model.params().to_vec()),
                dev: dev_metrics.clone(),
            });
            metrics.dev = Some(dev_metrics);
        }
        on_step(&metrics);
    }
    Ok(outcome)
}
