use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;

use polymt::corpus::{
    compute_stats, load_manifest, DatasetStats, GroupFractions, LanguagePair, LanguageRegistry, MultiwaySet,
    PairCorpus, RegistryManifest, SplitRole,
};
use polymt::eval::{bleu_values, evaluate_model, group_report, zero_shot_eval, EvalReport, ModelTranslator, Tokenizer};
use polymt::experiment::{prepare_data, run_experiment, train_from_config, write_data, ExperimentConfig};
use polymt::model::{DecodeOptions, Model};
use polymt::sampler::{compute_probabilities, PairSampler};
use polymt::subword::{learn_vocabulary, length_stats, monolingual_sides, Vocabulary};
use polymt::{Error, Result};

/// Default parent directory for run outputs when `--out-dir` is not given.
const OUT_DIR_ENV: &str = "POLYMT_OUT_DIR";

#[derive(Parser)]
#[command(name = "polymt", version, about = "Multilingual NMT experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate cipher-language corpora and multi-way dev/test sets from a config.
    SynthCorpus {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Learn a shared subword vocabulary.
    BuildVocab {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Vocabulary sampling temperature.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        char_coverage: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output vocabulary file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean tokens per sentence for each language under a vocabulary.
    AnalyzeLengths {
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1000)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-pair sampling probabilities at a temperature, optionally checked by drawing.
    SampleStats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        temperature: f64,
        /// Number of examples to draw for empirical frequencies.
        #[arg(long, default_value_t = 0)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn the vocabulary and train a model from a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Test BLEU of a checkpoint per direction, with group means.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Multi-way test set (TSV with a header row of language codes).
        #[arg(long)]
        testset: PathBuf,
        /// Comma-separated directions, e.g. `xa-en,en-xa`.
        #[arg(long, value_delimiter = ',', required = true)]
        directions: Vec<String>,
        /// Training manifest supplying corpus sizes for resource groups.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Report or JSON map of baseline BLEU per direction.
        #[arg(long)]
        baseline_report: Option<PathBuf>,
        /// Training manifest the zero-shot directions are checked against.
        #[arg(long, requires = "zero_shot")]
        zero_shot_manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', requires = "zero_shot_manifest")]
        zero_shot: Vec<String>,
        #[arg(long, value_enum, default_value = "international")]
        tokenizer: TokenizerArg,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run corpus synthesis, vocabulary, training and evaluation from one config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Parent directory for the run-stamped output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// Experiment config whose corpus section provides the data.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registry manifest listing corpora on disk.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TokenizerArg {
    International,
    #[value(name = "13a")]
    Standard13a,
    Whitespace,
}

impl From<TokenizerArg> for Tokenizer {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::International => Tokenizer::International,
            TokenizerArg::Standard13a => Tokenizer::Standard13a,
            TokenizerArg::Whitespace => Tokenizer::Whitespace,
        }
    }
}

impl OutArgs {
    /// `<out-dir or $POLYMT_OUT_DIR or runs>/<name>-<unix seconds>[-n]`.
    fn run_dir(&self, name: &str) -> Result<PathBuf> {
        let parent = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut dir = parent.join(format!("{name}-{stamp}"));
        let mut n = 1;
        while dir.exists() {
            dir = parent.join(format!("{name}-{stamp}-{n}"));
            n += 1;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

struct Loaded {
    corpora: Vec<PairCorpus>,
    config: Option<ExperimentConfig>,
}

impl DataArgs {
    fn load(&self) -> Result<Loaded> {
        if let Some(path) = &self.config {
            let config = ExperimentConfig::load(path)?;
            let data = prepare_data(&config)?;
            Ok(Loaded {
                corpora: data.corpora,
                config: Some(config),
            })
        } else {
            let mut registry = LanguageRegistry::builtin();
            let path = self.manifest.as_ref().expect("clap enforces one source");
            let corpora = load_manifest(path, &mut registry)?;
            Ok(Loaded { corpora, config: None })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = out.run_dir(&config.name)?;
            let data = prepare_data(&config)?;
            let manifest = write_data(&data, &dir)?;
            println!("{}", manifest.display());
        }
        Command::BuildVocab {
            data,
            vocab_size,
            temperature,
            char_coverage,
            seed,
            out,
        } => {
            let loaded = data.load()?;
            let mut policy = loaded
                .config
                .as_ref()
                .map(ExperimentConfig::vocab_policy)
                .unwrap_or_default();
            if let Some(v) = vocab_size {
                policy.vocab_size = v;
            }
            if let Some(t) = temperature {
                policy.temperature = t;
            }
            if let Some(c) = char_coverage {
                policy.char_coverage = c;
            }
            if let Some(s) = seed {
                policy.seed = s;
            }
            let vocab = learn_vocabulary(&loaded.corpora, &policy)?;
            vocab.save(&out)?;
            info!("wrote {} pieces to {}", vocab.len(), out.display());
        }
        Command::AnalyzeLengths {
            vocab,
            data,
            sample,
            seed,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let loaded = data.load()?;
            let report = length_stats(&vocab, &monolingual_sides(&loaded.corpora), sample, seed)?;
            print!("{}", json(&report)?);
        }
        Command::SampleStats {
            data,
            temperature,
            draws,
            seed,
        } => {
            let loaded = data.load()?;
            let fractions = loaded.config.as_ref().map(|c| c.corpus.groups).unwrap_or_default();
            let stats = compute_stats(&loaded.corpora, fractions)?;
            let policy = compute_probabilities(stats.sizes.iter().map(|(k, v)| (k.as_str(), *v)), temperature)?;
            let mut out = serde_json::json!({
                "temperature": temperature,
                "sizes": stats.sizes,
                "groups": stats.groups,
                "probabilities": policy.probabilities,
            });
            if draws > 0 {
                let ids: Vec<&String> = stats.sizes.keys().collect();
                let sizes: Vec<usize> = ids.iter().map(|id| stats.sizes[*id] as usize).collect();
                let probs: Vec<f64> = ids.iter().map(|id| policy.probabilities[*id]).collect();
                let mut sampler = PairSampler::new(&sizes, &probs, seed)?;
                let mut counts = vec![0usize; ids.len()];
                for _ in 0..draws {
                    counts[sampler.next_index().0] += 1;
                }
                let empirical: BTreeMap<&String, f64> = ids
                    .iter()
                    .zip(&counts)
                    .map(|(id, &c)| (*id, c as f64 / draws as f64))
                    .collect();
                let l1: f64 = ids
                    .iter()
                    .zip(&counts)
                    .map(|(id, &c)| (c as f64 / draws as f64 - policy.probabilities[*id]).abs())
                    .sum();
                out["empirical"] = serde_json::json!(empirical);
                out["l1_distance"] = serde_json::json!(l1);
            }
            print!("{}", json(&out)?);
        }
        Command::Train { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = out.run_dir(&config.name)?;
            let summary = train_from_config(&config, &dir)?;
            write_file(&dir.join("training.json"), &json(&summary)?)?;
            println!("{}", dir.display());
        }
        Command::Evaluate {
            checkpoint,
            vocab,
            testset,
            directions,
            manifest,
            baseline_report,
            zero_shot_manifest,
            zero_shot,
            tokenizer,
            beam,
            out,
        } => {
            let (model, step) = Model::<f32>::load(&checkpoint)?;
            let vocab = Vocabulary::load(&vocab)?;
            let test = MultiwaySet::read_tsv(SplitRole::Test, &testset)?;
            let mut registry = LanguageRegistry::builtin();
            for code in test.languages() {
                if !registry.contains(code) {
                    registry.register_synthetic(code)?;
                }
            }
            let directions = directions
                .iter()
                .map(|d| LanguagePair::parse(d, &registry))
                .collect::<Result<Vec<_>>>()?;
            let sizes: BTreeMap<String, u64> = match &manifest {
                Some(path) => {
                    let corpora = load_manifest(path, &mut registry)?;
                    corpora.iter().map(|c| (c.pair.id(), c.size() as u64)).collect()
                }
                None => BTreeMap::new(),
            };
            let stats = DatasetStats::from_sizes(
                directions
                    .iter()
                    .map(|d| (d.id(), sizes.get(&d.id()).copied().unwrap_or(0))),
                GroupFractions::default(),
            )?;
            let baseline = baseline_report.as_deref().map(read_baseline).transpose()?;
            let mut translator = ModelTranslator::new(&model, &vocab, DecodeOptions::beam(beam));
            let scores = bleu_values(&evaluate_model(&mut translator, &test, &directions, tokenizer.into())?);
            let report = group_report(&scores, &stats, baseline.as_ref())?;
            let dir = out.run_dir(&format!("eval-{}", file_stem(&checkpoint)))?;
            write_file(&dir.join("report.json"), &json(&report)?)?;
            write_file(&dir.join("report.csv"), &report.to_csv())?;
            if let Some(path) = zero_shot_manifest {
                let trained = RegistryManifest::read(&path)?;
                let pairs = zero_shot
                    .iter()
                    .map(|d| LanguagePair::parse(d, &registry))
                    .collect::<Result<Vec<_>>>()?;
                let zs = zero_shot_eval(&mut translator, &pairs, trained.pair_ids(), &test, tokenizer.into())?;
                write_file(&dir.join("zero_shot.json"), &json(&zs)?)?;
            }
            info!("evaluated checkpoint at step {step}");
            println!("{}", dir.display());
        }
        Command::Experiment { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = out.run_dir(&config.name)?;
            run_experiment(&config, Some(&dir))?;
            println!("{}", dir.join("report.json").display());
        }
    }
    Ok(())
}

/// Accepts an evaluation report (its `scores`) or a bare pair-to-BLEU map.
fn read_baseline(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        return Ok(report.scores);
    }
    Ok(serde_json::from_str(&text)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
