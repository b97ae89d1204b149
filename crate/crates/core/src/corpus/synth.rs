//! Synthetic base corpora, cipher-language pair corpora and multi-way
//! aligned dev/test splits.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CipherSet, LanguagePair, PairCorpus, HUB_LANGUAGE};
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

/// Parameters of a generated base-language corpus: sentences of i.i.d.
/// Zipf-distributed pseudo-words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseCorpusSpec {
    pub seed: u64,
    pub sentences: usize,
    pub vocab_words: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
    #[serde(default = "default_max_syllables")]
    pub max_syllables: usize,
}

fn default_zipf() -> f64 {
    1.0
}
fn default_min_words() -> usize {
    4
}
fn default_max_words() -> usize {
    8
}
fn default_max_syllables() -> usize {
    3
}

/// Generates unique sentences; duplicates are rejected so that sentence
/// identity is well defined for split disjointness.
pub fn generate_base_corpus(spec: &BaseCorpusSpec) -> Result<Vec<String>> {
    if spec.vocab_words == 0 || spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::Domain(format!("invalid base corpus spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = Vec::with_capacity(spec.vocab_words);
    let mut seen = HashSet::new();
    let mut attempts = 0usize;
    while words.len() < spec.vocab_words {
        attempts += 1;
        if attempts > spec.vocab_words * 1000 {
            return Err(Error::Domain(format!(
                "cannot generate {} distinct words with {} syllables",
                spec.vocab_words, spec.max_syllables
            )));
        }
        let syllables = rng.gen_range(1..=spec.max_syllables.max(1));
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            if rng.gen_bool(0.3) {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            }
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let weights: Vec<f64> = (1..=words.len())
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Domain(e.to_string()))?;

    let mut out = Vec::with_capacity(spec.sentences);
    let mut unique = HashSet::with_capacity(spec.sentences);
    let mut attempts = 0usize;
    while out.len() < spec.sentences {
        attempts += 1;
        if attempts > spec.sentences.saturating_mul(50) + 1000 {
            return Err(Error::Domain(format!(
                "cannot generate {} distinct sentences from {} words",
                spec.sentences, spec.vocab_words
            )));
        }
        let n = rng.gen_range(spec.min_words..=spec.max_words);
        let sentence = (0..n)
            .map(|_| words[zipf.sample(&mut rng)].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if unique.insert(sentence.clone()) {
            out.push(sentence);
        }
    }
    Ok(out)
}

/// Sizes `round(10^e)` for each exponent.
pub fn sizes_from_exponents(exponents: &[f64]) -> Vec<usize> {
    exponents.iter().map(|e| 10f64.powf(*e).round() as usize).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Dev,
    Test,
}

/// Evaluation sentences aligned across languages: index `i` of every
/// language column renders the same base sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiwaySet {
    pub role: SplitRole,
    columns: BTreeMap<String, Vec<String>>,
    base_indices: Vec<usize>,
}

impl MultiwaySet {
    pub fn from_columns(
        role: SplitRole,
        columns: BTreeMap<String, Vec<String>>,
        base_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = base_indices.len();
        if let Some((lang, col)) = columns.iter().find(|(_, c)| c.len() != n) {
            return Err(Error::format(
                "multi-way set",
                format!("language {lang} has {} sentences, expected {n}", col.len()),
            ));
        }
        Ok(Self {
            role,
            columns,
            base_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.base_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_indices.is_empty()
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_language(&self, code: &str) -> bool {
        self.columns.contains_key(code)
    }

    pub fn column(&self, code: &str) -> Result<&[String]> {
        self.columns
            .get(code)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn sentence(&self, index: usize, code: &str) -> Option<&str> {
        self.columns.get(code)?.get(index).map(String::as_str)
    }

    /// Positions in the base corpus the rows were drawn from.
    pub fn base_indices(&self) -> &[usize] {
        &self.base_indices
    }

    /// Tab-separated text: a header row of language codes, then one row per
    /// aligned sentence.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = self.columns.keys().cloned().collect::<Vec<_>>().join("\t");
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<&str> = self.columns.values().map(|c| c[i].as_str()).collect();
            if let Some(bad) = row.iter().find(|s| s.contains(['\t', '\n'])) {
                return Err(Error::format(
                    "multi-way set",
                    format!("sentence {bad:?} contains a tab or newline"),
                ));
            }
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_tsv(role: SplitRole, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .filter(|h| !h.trim().is_empty())
            .ok_or_else(|| Error::format("multi-way set", "missing header row"))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let mut columns: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for code in &header {
            if columns.insert(code.clone(), Vec::new()).is_some() {
                return Err(Error::format("multi-way set", format!("duplicate column {code}")));
            }
        }
        let mut rows = 0;
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != header.len() {
                return Err(Error::format(
                    "multi-way set",
                    format!("row {} has {} cells, expected {}", n + 2, cells.len(), header.len()),
                ));
            }
            for (code, cell) in header.iter().zip(cells) {
                columns.get_mut(code).expect("header column").push(cell.to_string());
            }
            rows += 1;
        }
        Self::from_columns(role, columns, (0..rows).collect())
    }

    pub fn read_tsv(role: SplitRole, path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(role, &text)
    }

    /// The first `n` rows (all rows if `n` exceeds the set).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            role: self.role,
            columns: self.columns.iter().map(|(k, v)| (k.clone(), v[..n].to_vec())).collect(),
            base_indices: self.base_indices[..n].to_vec(),
        }
    }
}

/// Held-out dev/test sets plus the remaining training pool.
#[derive(Debug, Clone)]
pub struct SyntheticSplit {
    pub dev: MultiwaySet,
    pub test: MultiwaySet,
    /// Base sentences available for training, disjoint from dev and test.
    pub training_pool: Vec<String>,
}

/// Draws dev and test rows uniformly from the base corpus and renders them in
/// the hub language and every cipher language.
pub fn split_multiway(
    base: &[String],
    ciphers: &CipherSet,
    dev_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<SyntheticSplit> {
    let held_out = dev_size + test_size;
    if base.len() <= held_out {
        return Err(Error::InsufficientData(format!(
            "base corpus has {} sentences; need more than dev {dev_size} + test {test_size}",
            base.len()
        )));
    }
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let render = |role, indices: &[usize]| {
        let mut columns = BTreeMap::new();
        columns.insert(
            HUB_LANGUAGE.to_string(),
            indices.iter().map(|&i| base[i].clone()).collect(),
        );
        for c in ciphers.iter() {
            columns.insert(c.id().to_string(), indices.iter().map(|&i| c.apply(&base[i])).collect());
        }
        MultiwaySet::from_columns(role, columns, indices.to_vec())
    };
    let dev = render(SplitRole::Dev, &order[..dev_size])?;
    let test = render(SplitRole::Test, &order[dev_size..held_out])?;
    let mut rest = order[held_out..].to_vec();
    rest.sort_unstable();
    Ok(SyntheticSplit {
        dev,
        test,
        training_pool: rest.into_iter().map(|i| base[i].clone()).collect(),
    })
}

/// For every cipher `c` with a requested size, samples that many distinct
/// sentences from `base` and emits the pair corpora `en-c` and `c-en`.
///
/// Output order follows cipher id order, `en-c` before `c-en`.
pub fn generate_synthetic(
    base: &[String],
    ciphers: &CipherSet,
    sizes: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Vec<PairCorpus>> {
    let mut out = Vec::new();
    for (id, &size) in sizes {
        let cipher = ciphers.get(id).ok_or_else(|| Error::UnknownLanguage(id.clone()))?;
        if size > base.len() {
            return Err(Error::InsufficientData(format!(
                "cipher {id} requests {size} sentences but the base corpus has {}",
                base.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(id.as_bytes()));
        let picked = rand::seq::index::sample(&mut rng, base.len(), size);
        let (mut forward, mut backward) = (Vec::with_capacity(size), Vec::with_capacity(size));
        for i in picked.iter() {
            let en = base[i].clone();
            let ciphered = cipher.apply(&en);
            forward.push((en.clone(), ciphered.clone()));
            backward.push((ciphered, en));
        }
        out.push(PairCorpus::from_examples(
            LanguagePair::unchecked(HUB_LANGUAGE, id)?,
            forward,
        )?);
        out.push(PairCorpus::from_examples(
            LanguagePair::unchecked(id, HUB_LANGUAGE)?,
            backward,
        )?);
    }
    Ok(out)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
