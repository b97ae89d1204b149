//! Config-driven end-to-end runs: build or load corpora, learn a shared
//! vocabulary, train, evaluate and write a JSON report.
//!
//! Reports contain no timestamps or paths and use ordered maps throughout,
//! so re-running a config yields byte-identical JSON.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    compute_stats, generate_base_corpus, generate_synthetic, load_manifest, split_multiway, CipherSet, DatasetStats,
    LanguagePair, LanguageRegistry, ManifestEntry, MultiwaySet, PairCorpus, RegistryManifest, SplitRole, HUB_LANGUAGE,
};
use crate::error::{Error, Result};
use crate::eval::{
    bleu_values, evaluate_model, group_report, zero_shot_eval, EvalReport, ModelTranslator, ZeroShotReport,
};
use crate::model::{Model, ModelConfig, Pair};
use crate::sampler::{
    compute_probabilities, make_batches, EncodedCorpus, EncodedExample, EncodedStream, SamplingPolicy,
};
use crate::subword::{
    learn_from_sides, learn_vocabulary, length_stats, monolingual_sides, LengthReport, Segmenter, Vocabulary,
};
use crate::trainer::{select_checkpoint, train, DevLoss, StepMetrics};

pub use config::{
    AnalysisConfig, CorpusConfig, Directions, EvalConfig, ExperimentConfig, ModelSection, SamplingConfig, Seeds,
    TrainSection,
};

/// Training corpora plus aligned dev and test sets.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub registry: LanguageRegistry,
    pub corpora: Vec<PairCorpus>,
    pub dev: Option<MultiwaySet>,
    pub test: MultiwaySet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSummary {
    pub size: usize,
    pub fingerprint: u64,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub num_params: usize,
    pub model: ModelConfig,
    pub steps: usize,
    pub selected_step: usize,
    /// Mean training loss over consecutive windows of `checkpoint_every` steps.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub dev_loss: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub vocab_size: usize,
    pub temperature: f64,
    pub overall_mean: f64,
    pub lengths: LengthReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub bleu: f64,
    pub multilingual: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub corpus: DatasetStats,
    pub sampling: SamplingPolicy,
    pub vocab: VocabSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    /// Test reports keyed by `to-<hub>`, `from-<hub>` and `other`, with
    /// resource groups formed within each side.
    pub evaluation: BTreeMap<String, EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_shot: Option<ZeroShotReport>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub baselines: BTreeMap<String, BaselineScore>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lengths: Vec<LengthRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Test BLEU of one direction, whichever side holds it.
    pub fn bleu(&self, pair_id: &str) -> Option<f64> {
        self.evaluation.values().find_map(|r| r.scores.get(pair_id).copied())
    }

    pub fn side(&self, name: &str) -> Option<&EvalReport> {
        self.evaluation.get(name)
    }
}

fn side_of(pair: &LanguagePair) -> String {
    if pair.target() == HUB_LANGUAGE {
        format!("to-{HUB_LANGUAGE}")
    } else if pair.source() == HUB_LANGUAGE {
        format!("from-{HUB_LANGUAGE}")
    } else {
        "other".to_string()
    }
}

/// Builds (synthetic) or loads (manifest) the corpora a config describes,
/// keeping only the configured directions.
pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    let c = &config.corpus;
    let mut registry = LanguageRegistry::builtin();
    let (corpora, dev, test) = if let Some(base_spec) = &c.base {
        let ciphers = CipherSet::build(&c.ciphers)?;
        for id in ciphers.ids() {
            if !registry.contains(id) {
                registry.register_synthetic(id)?;
            }
        }
        let base = generate_base_corpus(base_spec)?;
        let split = split_multiway(&base, &ciphers, c.dev_sentences, c.test_sentences, config.seeds.split)?;
        let corpora = generate_synthetic(&split.training_pool, &ciphers, &c.sizes, config.seeds.sample)?;
        (corpora, Some(split.dev), split.test)
    } else {
        let manifest = c.manifest.as_deref().expect("validated");
        let corpora = load_manifest(manifest, &mut registry)?;
        let dev = c
            .dev
            .as_deref()
            .map(|p| MultiwaySet::read_tsv(SplitRole::Dev, p))
            .transpose()?;
        let test = MultiwaySet::read_tsv(SplitRole::Test, c.test.as_deref().expect("validated"))?;
        (corpora, dev, test)
    };
    let corpora: Vec<PairCorpus> = corpora
        .into_iter()
        .filter(|p| c.directions.keeps(p.pair.source(), p.pair.target(), HUB_LANGUAGE))
        .collect();
    if corpora.is_empty() {
        return Err(Error::InsufficientData(
            "no training corpora in the configured directions".into(),
        ));
    }
    Ok(ExperimentData {
        registry,
        corpora,
        dev,
        test,
    })
}

fn encode_rows(seg: &mut Segmenter<'_>, set: &MultiwaySet, pair: &LanguagePair, rows: usize) -> Result<Vec<Pair>> {
    let tag = seg
        .vocab()
        .tag_id(pair.target())
        .ok_or_else(|| Error::UnknownLanguage(pair.target().to_string()))?;
    let src = set.column(pair.source())?;
    let tgt = set.column(pair.target())?;
    Ok(src
        .iter()
        .zip(tgt)
        .take(rows)
        .map(|(s, t)| {
            let mut ids = vec![tag];
            ids.extend(seg.segment(s));
            (ids, seg.segment(t))
        })
        .collect())
}

struct Trained {
    model: Model<f32>,
    summary: TrainingSummary,
}

fn train_model(
    config: &ExperimentConfig,
    corpora: &[PairCorpus],
    dev: Option<&MultiwaySet>,
    vocab: &Vocabulary,
    policy: &SamplingPolicy,
    out_dir: Option<&Path>,
) -> Result<Trained> {
    let (Some(ms), Some(ts)) = (&config.model, &config.train) else {
        return Err(Error::InvalidConfig("training needs [model] and [train]".into()));
    };
    let mut seg = Segmenter::new(vocab);
    let encoded = corpora
        .iter()
        .map(|c| EncodedCorpus::encode(c, &mut seg))
        .collect::<Result<Vec<_>>>()?;
    let mut dev_eval = match dev {
        Some(set) if ts.dev_sentences > 0 => {
            let mut pairs = Vec::new();
            for c in corpora {
                pairs.extend(encode_rows(&mut seg, set, &c.pair, ts.dev_sentences)?);
            }
            Some(DevLoss { pairs, chunk: 64 })
        }
        _ => None,
    };
    let model_config = ms.to_config(vocab.len(), vocab.tag_count());
    let mut model = Model::<f32>::new(model_config.clone(), config.seeds.init)?;
    let train_config = ts.to_config(config.seeds.train, None)?;
    let stream = EncodedStream::new(&encoded, policy, config.seeds.sampling)?;
    let batches = make_batches(stream, ts.token_budget, EncodedExample::token_count);

    let mut log = match out_dir {
        Some(dir) => {
            let path = dir.join("metrics.jsonl");
            Some((
                BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?),
                path,
            ))
        }
        None => None,
    };
    let mut log_err = None;
    let every = ts.checkpoint_every;
    let outcome = train(
        &mut model,
        batches,
        &train_config,
        dev_eval.as_mut().map(|d| d as &mut dyn crate::trainer::DevEvaluator),
        |m: &StepMetrics| {
            if m.step.is_multiple_of(every) {
                info!("{} step {} loss {:.4} lr {:.6}", config.name, m.step, m.loss, m.lr);
            }
            if let (Some((w, path)), None) = (log.as_mut(), log_err.as_ref()) {
                let line = serde_json::to_string(m).map_err(Error::from);
                let res = line.and_then(|l| writeln!(w, "{l}").map_err(|e| Error::io(path.as_path(), e)));
                log_err = res.err();
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let chosen = select_checkpoint(&outcome.checkpoints, ts.selection)?;
    let model = chosen.model(&model)?;
    let summary = TrainingSummary {
        num_params: model.num_params(),
        model: model_config,
        steps: outcome.losses.len(),
        selected_step: chosen.step,
        loss_curve: outcome
            .losses
            .chunks(every)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect(),
        final_loss: *outcome.losses.last().unwrap_or(&f64::NAN),
        dev_loss: outcome
            .checkpoints
            .iter()
            .filter_map(|c| c.dev.loss.map(|l| (c.step, l)))
            .collect(),
    };
    if let Some(dir) = out_dir {
        model.save(&dir.join("model.ckpt"), chosen.step)?;
    }
    Ok(Trained { model, summary })
}

fn parse_pairs(ids: &[String], registry: &LanguageRegistry) -> Result<Vec<LanguagePair>> {
    ids.iter().map(|id| LanguagePair::parse(id, registry)).collect()
}

/// Test BLEU per side, with resource groups formed from the training sizes
/// of that side. Directions without training data fall under `other` with
/// size 0.
fn side_reports(
    scores: &BTreeMap<String, f64>,
    directions: &[LanguagePair],
    stats: &DatasetStats,
    config: &ExperimentConfig,
) -> Result<BTreeMap<String, EvalReport>> {
    let mut sides: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for p in directions {
        let id = p.id();
        let size = stats.sizes.get(&id).copied().unwrap_or(0);
        sides.entry(side_of(p)).or_default().insert(id, size);
    }
    sides
        .into_iter()
        .map(|(side, sizes)| {
            let side_stats = DatasetStats::from_sizes(sizes, config.corpus.groups)?;
            Ok((side, group_report(scores, &side_stats, None)?))
        })
        .collect()
}

/// Runs every stage the config asks for. With `out_dir`, writes
/// `report.json`, `metrics.jsonl`, `vocab.tsv`, `model.ckpt` and one CSV
/// per evaluation side there.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let data = prepare_data(config)?;
    let stats = compute_stats(&data.corpora, config.corpus.groups)?;
    let sampling = compute_probabilities(
        stats.sizes.iter().map(|(k, v)| (k.as_str(), *v)),
        config.sampling.temperature,
    )?;
    let policy = config.vocab_policy();
    info!("{}: learning a {}-piece vocabulary", config.name, policy.vocab_size);
    let vocab = learn_vocabulary(&data.corpora, &policy)?;
    if let Some(dir) = out_dir {
        vocab.save(&dir.join("vocab.tsv"))?;
    }

    let lengths = match &config.analysis {
        Some(a) => length_grid(config, a, &data)?,
        None => Vec::new(),
    };

    let mut report = ExperimentReport {
        name: config.name.clone(),
        corpus: stats.clone(),
        sampling: sampling.clone(),
        vocab: VocabSummary {
            size: vocab.len(),
            fingerprint: vocab.fingerprint(),
            tags: vocab.tag_codes(),
        },
        training: None,
        evaluation: BTreeMap::new(),
        zero_shot: None,
        baselines: BTreeMap::new(),
        lengths,
    };

    if config.model.is_some() {
        let trained = train_model(config, &data.corpora, data.dev.as_ref(), &vocab, &sampling, out_dir)?;
        let trained_ids: BTreeSet<String> = stats.sizes.keys().cloned().collect();
        let directions = if config.eval.directions.is_empty() {
            data.corpora.iter().map(|c| c.pair.clone()).collect()
        } else {
            parse_pairs(&config.eval.directions, &data.registry)?
        };
        let mut translator = ModelTranslator::new(&trained.model, &vocab, config.eval.decode);
        info!("{}: evaluating {} directions", config.name, directions.len());
        let scores = bleu_values(&evaluate_model(
            &mut translator,
            &data.test,
            &directions,
            config.eval.tokenizer,
        )?);
        report.evaluation = side_reports(&scores, &directions, &stats, config)?;
        if !config.eval.zero_shot.is_empty() {
            let pairs = parse_pairs(&config.eval.zero_shot, &data.registry)?;
            report.zero_shot = Some(zero_shot_eval(
                &mut translator,
                &pairs,
                trained_ids.iter().map(String::as_str),
                &data.test,
                config.eval.tokenizer,
            )?);
        }
        for id in &config.eval.baselines {
            let multilingual = *scores
                .get(id)
                .ok_or_else(|| Error::MissingPair(format!("{id} (baseline direction is not evaluated)")))?;
            let bleu = bilingual_baseline(config, &data, id)?;
            report.baselines.insert(
                id.clone(),
                BaselineScore {
                    bleu,
                    multilingual,
                    delta: multilingual - bleu,
                },
            );
        }
        report.training = Some(trained.summary);
        if let Some(dir) = out_dir {
            for (side, r) in &report.evaluation {
                let path = dir.join(format!("test-{side}.csv"));
                std::fs::write(&path, r.to_csv()).map_err(|e| Error::io(&path, e))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        let path = dir.join("report.json");
        std::fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Learns the vocabulary and trains, writing `vocab.tsv`, `metrics.jsonl`
/// and `model.ckpt` to `out_dir`; no evaluation.
pub fn train_from_config(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainingSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = prepare_data(config)?;
    let stats = compute_stats(&data.corpora, config.corpus.groups)?;
    let sampling = compute_probabilities(
        stats.sizes.iter().map(|(k, v)| (k.as_str(), *v)),
        config.sampling.temperature,
    )?;
    let vocab = learn_vocabulary(&data.corpora, &config.vocab_policy())?;
    vocab.save(&out_dir.join("vocab.tsv"))?;
    let trained = train_model(
        config,
        &data.corpora,
        data.dev.as_ref(),
        &vocab,
        &sampling,
        Some(out_dir),
    )?;
    Ok(trained.summary)
}

/// Writes training corpora as `train/<pair>.tsv` with a `manifest.toml`
/// listing them, plus `dev.tsv` and `test.tsv` multi-way sets. Returns the
/// manifest path.
pub fn write_data(data: &ExperimentData, dir: &Path) -> Result<std::path::PathBuf> {
    let train_dir = dir.join("train");
    std::fs::create_dir_all(&train_dir).map_err(|e| Error::io(&train_dir, e))?;
    let builtin = LanguageRegistry::builtin();
    let mut manifest = RegistryManifest::default();
    let mut synthetic = BTreeSet::new();
    for c in &data.corpora {
        let id = c.pair.id();
        let mut text = String::new();
        for (s, t) in c.examples() {
            text.push_str(s);
            text.push('\t');
            text.push_str(t);
            text.push('\n');
        }
        let path = train_dir.join(format!("{id}.tsv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for code in [c.pair.source(), c.pair.target()] {
            if !builtin.contains(code) {
                synthetic.insert(code.to_string());
            }
        }
        manifest.pairs.push(ManifestEntry {
            id: id.clone(),
            source: None,
            target: None,
            tsv: Some(std::path::PathBuf::from(format!("train/{id}.tsv"))),
            declared_size: Some(c.size()),
        });
    }
    manifest.synthetic = synthetic.into_iter().collect();
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest.to_toml()?).map_err(|e| Error::io(&path, e))?;
    for (name, set) in [("dev.tsv", data.dev.as_ref()), ("test.tsv", Some(&data.test))] {
        if let Some(set) = set {
            let p = dir.join(name);
            std::fs::write(&p, set.to_tsv()?).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(path)
}

/// Trains a model on one direction alone, with its own vocabulary, and
/// returns its test BLEU.
fn bilingual_baseline(config: &ExperimentConfig, data: &ExperimentData, pair_id: &str) -> Result<f64> {
    let corpus = data
        .corpora
        .iter()
        .find(|c| c.pair.id() == pair_id)
        .ok_or_else(|| Error::MissingPair(format!("{pair_id} (no training data for a baseline)")))?;
    let corpora = std::slice::from_ref(corpus);
    let mut policy = config.vocab_policy();
    if let Some(size) = config.eval.baseline_vocab_size {
        policy.vocab_size = size;
    }
    info!("{}: bilingual baseline {pair_id}", config.name);
    let vocab = learn_vocabulary(corpora, &policy)?;
    let sampling = compute_probabilities([(pair_id, corpus.size() as u64)], 1.0)?;
    let trained = train_model(config, corpora, data.dev.as_ref(), &vocab, &sampling, None)?;
    let mut translator = ModelTranslator::new(&trained.model, &vocab, config.eval.decode);
    let scores = evaluate_model(
        &mut translator,
        &data.test,
        std::slice::from_ref(&corpus.pair),
        config.eval.tokenizer,
    )?;
    Ok(scores[pair_id].value)
}

/// Mean segmented test-sentence length per language for every vocabulary
/// size and vocabulary temperature in the grid.
fn length_grid(config: &ExperimentConfig, analysis: &AnalysisConfig, data: &ExperimentData) -> Result<Vec<LengthRow>> {
    let sides = monolingual_sides(&data.corpora);
    let measured: BTreeMap<String, Vec<String>> = sides
        .keys()
        .map(|lang| Ok((lang.clone(), data.test.column(lang)?.to_vec())))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &temperature in &analysis.vocab_temperatures {
        for &vocab_size in &analysis.vocab_sizes {
            let policy = crate::subword::VocabPolicy {
                vocab_size,
                temperature,
                ..config.vocab_policy()
            };
            info!(
                "{}: length analysis at size {vocab_size}, T_V {temperature}",
                config.name
            );
            let vocab = learn_from_sides(&sides, &policy)?;
            let lengths = length_stats(&vocab, &measured, analysis.sample_sentences, config.seeds.sample)?;
            rows.push(LengthRow {
                vocab_size,
                temperature,
                overall_mean: lengths.overall_mean(),
                lengths,
            });
        }
    }
    Ok(rows)
}
