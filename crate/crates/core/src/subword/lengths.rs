use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};

/// Mean segmented length per language for one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub vocab_size: usize,
    pub vocab_fingerprint: u64,
    pub mean_tokens: BTreeMap<String, f64>,
    pub sentences: BTreeMap<String, usize>,
}

impl LengthReport {
    /// Sentence-weighted mean over all languages.
    pub fn overall_mean(&self) -> f64 {
        let n: usize = self.sentences.values().sum();
        if n == 0 {
            return 0.0;
        }
        self.mean_tokens
            .iter()
            .map(|(l, m)| m * self.sentences[l] as f64)
            .sum::<f64>()
            / n as f64
    }
}

/// Segments up to `sample_size` sentences per language (drawn without
/// replacement) and reports mean token counts.
pub fn length_stats(
    vocab: &Vocabulary,
    sides: &BTreeMap<String, Vec<String>>,
    sample_size: usize,
    seed: u64,
) -> Result<LengthReport> {
    if sides.values().all(|v| v.is_empty()) {
        return Err(Error::EmptyCorpus("no sentences to measure".into()));
    }
    let mut segmenter = super::Segmenter::new(vocab);
    let mut mean_tokens = BTreeMap::new();
    let mut sentences = BTreeMap::new();
    for (lang, list) in sides {
        if list.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::corpus::fnv1a(lang.as_bytes()));
        let picked = sample(&mut rng, list.len(), sample_size.min(list.len()));
        let total: usize = picked.iter().map(|i| segmenter.segment(&list[i]).len()).sum();
        mean_tokens.insert(lang.clone(), total as f64 / picked.len() as f64);
        sentences.insert(lang.clone(), picked.len());
    }
    Ok(LengthReport {
        vocab_size: vocab.len(),
        vocab_fingerprint: vocab.fingerprint(),
        mean_tokens,
        sentences,
    })
}
