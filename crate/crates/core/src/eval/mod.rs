//! BLEU scoring, per-direction evaluation on multi-way sets, resource-group
//! reports and zero-shot evaluation.

mod bleu;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetStats, LanguagePair, MultiwaySet, ResourceGroup, HUB_LANGUAGE};
use crate::error::{Error, Result};
use crate::model::{DecodeOptions, Model};
use crate::subword::{Segmenter, Vocabulary};

pub use bleu::{corpus_bleu, BleuScore, Tokenizer, MAX_ORDER};

/// Anything that turns source sentences into target-language text.
pub trait Translator {
    fn translate(&mut self, sources: &[String], source_lang: &str, target_lang: &str) -> Result<Vec<String>>;
}

/// Decodes with a trained model: tag, segment, decode, detokenize.
pub struct ModelTranslator<'a> {
    model: &'a Model<f32>,
    segmenter: Segmenter<'a>,
    options: DecodeOptions,
    batch_size: usize,
}

impl<'a> ModelTranslator<'a> {
    pub fn new(model: &'a Model<f32>, vocab: &'a Vocabulary, options: DecodeOptions) -> Self {
        Self {
            model,
            segmenter: Segmenter::new(vocab),
            options,
            batch_size: 64,
        }
    }
}

impl Translator for ModelTranslator<'_> {
    fn translate(&mut self, sources: &[String], _source_lang: &str, target_lang: &str) -> Result<Vec<String>> {
        let vocab = self.segmenter.vocab();
        let tag = vocab
            .tag_id(target_lang)
            .ok_or_else(|| Error::UnknownLanguage(format!("{target_lang} (no tag in vocabulary)")))?;
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(self.batch_size) {
            let ids: Vec<Vec<u32>> = chunk
                .iter()
                .map(|s| {
                    let mut v = vec![tag];
                    v.extend(self.segmenter.segment(s));
                    v
                })
                .collect();
            for hyp in self.model.translate(&ids, &self.options)? {
                out.push(vocab.detokenize(&hyp)?);
            }
        }
        Ok(out)
    }
}

/// Test-set BLEU for each direction. Every direction's languages must be
/// columns of `testset`.
pub fn evaluate_model(
    translator: &mut dyn Translator,
    testset: &MultiwaySet,
    directions: &[LanguagePair],
    tokenizer: Tokenizer,
) -> Result<BTreeMap<String, BleuScore>> {
    let mut scores = BTreeMap::new();
    for pair in directions {
        let sources = testset.column(pair.source())?;
        let references = testset.column(pair.target())?;
        let hyps = translator.translate(sources, pair.source(), pair.target())?;
        scores.insert(pair.id(), corpus_bleu(&hyps, references, tokenizer)?);
    }
    Ok(scores)
}

pub fn bleu_values(scores: &BTreeMap<String, BleuScore>) -> BTreeMap<String, f64> {
    scores.iter().map(|(k, v)| (k.clone(), v.value)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: BTreeMap<String, f64>,
    /// Arithmetic means over non-empty groups, keyed by group name.
    pub group_means: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_group_means: Option<BTreeMap<String, f64>>,
    /// Pair ids by descending corpus size.
    pub order: Vec<String>,
    pub sizes: BTreeMap<String, u64>,
    pub groups: BTreeMap<String, String>,
}

fn group_means(values: &BTreeMap<String, f64>, stats: &DatasetStats) -> BTreeMap<String, f64> {
    ResourceGroup::ALL
        .into_iter()
        .filter_map(|g| {
            let members = stats.groups.members(g);
            (!members.is_empty()).then(|| {
                let sum: f64 = members.iter().map(|p| values[p]).sum();
                (g.name().to_string(), sum / members.len() as f64)
            })
        })
        .collect()
}

/// Group means of `scores` (and of `score - baseline` when a baseline is
/// given). Scores must cover every pair in `stats`.
pub fn group_report(
    scores: &BTreeMap<String, f64>,
    stats: &DatasetStats,
    baseline: Option<&BTreeMap<String, f64>>,
) -> Result<EvalReport> {
    let mut covered = BTreeMap::new();
    for id in stats.sizes.keys() {
        let s = scores.get(id).ok_or_else(|| Error::MissingPair(id.clone()))?;
        covered.insert(id.clone(), *s);
    }
    let (baseline, deltas, delta_group_means) = match baseline {
        Some(b) => {
            let mut base = BTreeMap::new();
            let mut deltas = BTreeMap::new();
            for (id, s) in &covered {
                let v = b
                    .get(id)
                    .ok_or_else(|| Error::MissingPair(format!("{id} (baseline)")))?;
                base.insert(id.clone(), *v);
                deltas.insert(id.clone(), s - v);
            }
            let dg = group_means(&deltas, stats);
            (Some(base), Some(deltas), Some(dg))
        }
        None => (None, None, None),
    };
    Ok(EvalReport {
        group_means: group_means(&covered, stats),
        scores: covered,
        baseline,
        deltas,
        delta_group_means,
        order: stats.ordered_pairs(),
        sizes: stats.sizes.clone(),
        groups: stats
            .sizes
            .keys()
            .filter_map(|id| stats.group_of(id).map(|g| (id.clone(), g.name().to_string())))
            .collect(),
    })
}

impl EvalReport {
    /// One row per pair in descending-size order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,size,group,bleu,baseline,delta\n");
        for id in &self.order {
            let base = self.baseline.as_ref().and_then(|b| b.get(id));
            let delta = self.deltas.as_ref().and_then(|d| d.get(id));
            let fmt = |v: Option<&f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{id},{},{},{:.4},{},{}",
                self.sizes[id],
                self.groups.get(id).map(String::as_str).unwrap_or(""),
                self.scores[id],
                fmt(base),
                fmt(delta)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub direct: BTreeMap<String, f64>,
    /// Two-step decoding through the pivot language.
    pub pivot: BTreeMap<String, f64>,
    pub pivot_language: String,
}

/// Direct and pivoted BLEU for pairs without training data. A pair listed
/// in `trained_pairs` is rejected.
pub fn zero_shot_eval<'p>(
    translator: &mut dyn Translator,
    pairs: &[LanguagePair],
    trained_pairs: impl IntoIterator<Item = &'p str>,
    testset: &MultiwaySet,
    tokenizer: Tokenizer,
) -> Result<ZeroShotReport> {
    let trained: BTreeSet<&str> = trained_pairs.into_iter().collect();
    if let Some(p) = pairs.iter().find(|p| trained.contains(p.id().as_str())) {
        return Err(Error::NotZeroShot(p.id()));
    }
    let mut direct = BTreeMap::new();
    let mut pivot = BTreeMap::new();
    for pair in pairs {
        let sources = testset.column(pair.source())?;
        let references = testset.column(pair.target())?;
        let hyps = translator.translate(sources, pair.source(), pair.target())?;
        direct.insert(pair.id(), corpus_bleu(&hyps, references, tokenizer)?.value);
        let mid = translator.translate(sources, pair.source(), HUB_LANGUAGE)?;
        let hyps = translator.translate(&mid, HUB_LANGUAGE, pair.target())?;
        pivot.insert(pair.id(), corpus_bleu(&hyps, references, tokenizer)?.value);
    }
    Ok(ZeroShotReport {
        direct,
        pivot,
        pivot_language: HUB_LANGUAGE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GroupFractions, SplitRole};

    struct Oracle<'a>(&'a MultiwaySet);

    impl Translator for Oracle<'_> {
        fn translate(&mut self, sources: &[String], source_lang: &str, target_lang: &str) -> Result<Vec<String>> {
            let src = self.0.column(source_lang)?;
            let tgt = self.0.column(target_lang)?;
            Ok(sources
                .iter()
                .map(|s| {
                    let i = src.iter().position(|x| x == s).expect("known sentence");
                    tgt[i].clone()
                })
                .collect())
        }
    }

    struct Silent;

    impl Translator for Silent {
        fn translate(&mut self, sources: &[String], _: &str, _: &str) -> Result<Vec<String>> {
            Ok(vec![String::new(); sources.len()])
        }
    }

    fn testset() -> MultiwaySet {
        let cols = BTreeMap::from([
            (
                "en".to_string(),
                vec!["the cat sat down".to_string(), "a dog ran off fast".to_string()],
            ),
            (
                "fr".to_string(),
                vec!["le chat est assis".to_string(), "un chien a couru vite".to_string()],
            ),
            (
                "de".to_string(),
                vec![
                    "die katze sitzt da".to_string(),
                    "ein hund lief schnell weg".to_string(),
                ],
            ),
        ]);
        MultiwaySet::from_columns(SplitRole::Test, cols, vec![0, 1]).unwrap()
    }

    fn pairs(ids: &[&str]) -> Vec<LanguagePair> {
        let reg = crate::corpus::LanguageRegistry::builtin();
        ids.iter().map(|id| LanguagePair::parse(id, &reg).unwrap()).collect()
    }

    #[test]
    fn oracle_translator_scores_100_and_silent_scores_0() {
        let t = testset();
        let dirs = pairs(&["en-fr", "fr-en", "de-fr"]);
        let s = evaluate_model(&mut Oracle(&t), &t, &dirs, Tokenizer::International).unwrap();
        assert!(s.values().all(|b| b.value == 100.0));
        let s = evaluate_model(&mut Silent, &t, &dirs, Tokenizer::International).unwrap();
        assert!(s.values().all(|b| b.value == 0.0));
        assert!(evaluate_model(&mut Silent, &t, &pairs(&["en-es"]), Tokenizer::International).is_err());
    }

    #[test]
    fn group_report_means_and_deltas() {
        let sizes = [("en-fr", 100u64), ("en-de", 50), ("en-es", 10)];
        let stats = DatasetStats::from_sizes(sizes, GroupFractions::thirds()).unwrap();
        let scores: BTreeMap<String, f64> = sizes.iter().map(|(k, _)| (k.to_string(), 7.0)).collect();
        let r = group_report(&scores, &stats, Some(&scores)).unwrap();
        assert!(r.group_means.values().all(|&m| m == 7.0));
        assert!(r.deltas.as_ref().unwrap().values().all(|&d| d == 0.0));
        assert_eq!(r.order, vec!["en-fr", "en-de", "en-es"]);
        let csv = r.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "en-fr,100,High,7.0000,7.0000,0.0000");

        let mut varied = scores.clone();
        varied.insert("en-fr".into(), 10.0);
        let r = group_report(&varied, &stats, Some(&scores)).unwrap();
        assert_eq!(r.group_means["High"], 10.0);
        assert_eq!(r.delta_group_means.unwrap()["High"], 3.0);

        let mut missing = scores.clone();
        missing.remove("en-es");
        assert!(matches!(
            group_report(&missing, &stats, None),
            Err(Error::MissingPair(_))
        ));
    }

    #[test]
    fn zero_shot_rejects_trained_pairs_and_reports_pivot() {
        let t = testset();
        let err = zero_shot_eval(
            &mut Oracle(&t),
            &pairs(&["fr-de"]),
            ["en-fr", "fr-de"],
            &t,
            Tokenizer::International,
        );
        assert!(matches!(err, Err(Error::NotZeroShot(p)) if p == "fr-de"));
        let r = zero_shot_eval(
            &mut Oracle(&t),
            &pairs(&["fr-de", "de-fr"]),
            ["en-fr", "fr-en"],
            &t,
            Tokenizer::International,
        )
        .unwrap();
        assert_eq!(r.direct["fr-de"], 100.0);
        assert_eq!(r.pivot["de-fr"], 100.0);
        assert_eq!(r.pivot.len(), 2);
    }
}
