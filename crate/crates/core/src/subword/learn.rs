//! Unigram-LM vocabulary learning: sample text across languages at a
//! temperature, seed substring candidates, then alternate EM re-estimation
//! with loss-based pruning until the requested size is reached.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize, split_words, Vocabulary, CONTROL_TOKENS, WORD_BOUNDARY};
use crate::corpus::PairCorpus;
use crate::error::{Error, Result};
use crate::sampler::compute_probabilities;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabPolicy {
    /// Total vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    /// Fraction of sampled character occurrences the alphabet must cover.
    pub char_coverage: f64,
    /// Temperature for drawing training sentences across languages.
    pub temperature: f64,
    /// Number of sentences drawn to learn from.
    pub sample_sentences: usize,
    pub max_piece_chars: usize,
    /// Upper bound on initial candidates; 0 picks `max(4 * vocab_size, 20000)`.
    pub seed_pieces: usize,
    /// Fraction of pieces kept per pruning round.
    pub shrink_factor: f64,
    pub em_iterations: usize,
    pub seed: u64,
}

impl Default for VocabPolicy {
    fn default() -> Self {
        Self {
            vocab_size: 8000,
            char_coverage: 0.9995,
            temperature: 5.0,
            sample_sentences: 100_000,
            max_piece_chars: 16,
            seed_pieces: 0,
            shrink_factor: 0.75,
            em_iterations: 2,
            seed: 0,
        }
    }
}

impl VocabPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.char_coverage > 0.0 && self.char_coverage <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "char_coverage must lie in (0, 1], got {}",
                self.char_coverage
            )));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "shrink_factor must lie in (0, 1), got {}",
                self.shrink_factor
            )));
        }
        if self.max_piece_chars < 1 || self.sample_sentences == 0 {
            return Err(Error::InvalidConfig(
                "max_piece_chars and sample_sentences must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Distinct sentences per language across both sides of every corpus, in
/// first-seen order.
pub fn monolingual_sides(corpora: &[PairCorpus]) -> BTreeMap<String, Vec<String>> {
    let mut seen: BTreeMap<String, HashSet<&str>> = BTreeMap::new();
    let mut sides: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in corpora {
        for (lang, side) in [(c.pair.source(), 0), (c.pair.target(), 1)] {
            let set = seen.entry(lang.to_string()).or_default();
            let out = sides.entry(lang.to_string()).or_default();
            for ex in c.examples() {
                let s = if side == 0 { ex.0.as_str() } else { ex.1.as_str() };
                if set.insert(s) {
                    out.push(s.to_string());
                }
            }
        }
    }
    sides
}

/// Learns a vocabulary from the monolingual sides of `corpora`, reserving a
/// tag for every language that appears in them.
pub fn learn_vocabulary(corpora: &[PairCorpus], policy: &VocabPolicy) -> Result<Vocabulary> {
    learn_from_sides(&monolingual_sides(corpora), policy)
}

/// Learns from per-language sentence lists; every key gets a tag.
pub fn learn_from_sides(sides: &BTreeMap<String, Vec<String>>, policy: &VocabPolicy) -> Result<Vocabulary> {
    policy.validate()?;
    let tags: Vec<String> = sides.keys().cloned().collect();
    let words = sample_words(sides, policy)?;

    let alphabet = choose_alphabet(&words, policy.char_coverage);
    let reserved = CONTROL_TOKENS.len() + tags.len();
    let minimum = reserved + 1 + alphabet.len();
    if policy.vocab_size < minimum {
        return Err(Error::VocabTooSmall {
            requested: policy.vocab_size,
            minimum,
        });
    }
    let target = policy.vocab_size - reserved;

    let mut model = UnigramModel::seed(&words, &alphabet, policy, target)?;
    loop {
        for _ in 0..policy.em_iterations {
            model.em_step(&words, target);
        }
        if model.pieces.len() <= target {
            break;
        }
        let keep = target.max((model.pieces.len() as f64 * policy.shrink_factor) as usize);
        model.prune(&words, keep);
    }
    Vocabulary::new(&tags, model.finish())
}

struct Word {
    text: String,
    bounds: Vec<usize>,
    freq: f64,
}

fn sample_words(sides: &BTreeMap<String, Vec<String>>, policy: &VocabPolicy) -> Result<Vec<Word>> {
    let sizes: Vec<(&String, u64)> = sides.iter().map(|(k, v)| (k, v.len() as u64)).collect();
    if sizes.iter().all(|&(_, n)| n == 0) {
        return Err(Error::EmptyCorpus("no text to learn a vocabulary from".into()));
    }
    let probs = compute_probabilities(sizes.iter().map(|&(k, n)| (k, n)), policy.temperature)?;
    let langs: Vec<&String> = sides.keys().collect();
    let weights: Vec<f64> = langs.iter().map(|l| probs.probability(l).unwrap_or(0.0)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for _ in 0..policy.sample_sentences {
        let list = &sides[langs[dist.sample(&mut rng)]];
        let sentence = &list[rng.gen_range(0..list.len())];
        if sentence.is_empty() {
            continue;
        }
        for w in split_words(&normalize(sentence)) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(String, u64)> = counts.into_iter().collect();
    words.sort();
    Ok(words
        .into_iter()
        .map(|(text, f)| {
            let bounds = text.char_indices().map(|(b, _)| b).chain([text.len()]).collect();
            Word {
                text,
                bounds,
                freq: f as f64,
            }
        })
        .collect())
}

/// Smallest most-frequent-first character set covering `coverage` of all
/// non-boundary character occurrences.
fn choose_alphabet(words: &[Word], coverage: f64) -> Vec<char> {
    let mut counts: BTreeMap<char, u64> = BTreeMap::new();
    for w in words {
        for c in w.text.chars().filter(|&c| c != WORD_BOUNDARY) {
            *counts.entry(c).or_default() += w.freq as u64;
        }
    }
    let total: u64 = counts.values().sum();
    let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut alphabet = Vec::new();
    let mut covered = 0u64;
    for (c, n) in ranked {
        if covered as f64 >= coverage * total as f64 {
            break;
        }
        alphabet.push(c);
        covered += n;
    }
    alphabet
}

struct Piece {
    surface: String,
    score: f64,
    required: bool,
}

struct UnigramModel {
    pieces: Vec<Piece>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

const UNK_EDGE: usize = usize::MAX;
const UNK_SCORE: f64 = -50.0;

impl UnigramModel {
    fn seed(words: &[Word], alphabet: &[char], policy: &VocabPolicy, target: usize) -> Result<Self> {
        let covered: HashSet<char> = alphabet.iter().copied().collect();
        let mut char_freq: HashMap<char, f64> = HashMap::new();
        let mut subs: HashMap<&str, f64> = HashMap::new();
        for w in words {
            let n = w.bounds.len() - 1;
            let chars: Vec<char> = w.text.chars().collect();
            for i in 0..n {
                *char_freq.entry(chars[i]).or_default() += w.freq;
                if chars[i] != WORD_BOUNDARY && !covered.contains(&chars[i]) {
                    continue;
                }
                // Words carry a marker only at position 0.
                for j in i + 2..=n.min(i + policy.max_piece_chars) {
                    if !covered.contains(&chars[j - 1]) {
                        break;
                    }
                    *subs.entry(&w.text[w.bounds[i]..w.bounds[j]]).or_default() += w.freq;
                }
            }
        }
        let mut pieces: Vec<Piece> = std::iter::once(WORD_BOUNDARY)
            .chain(alphabet.iter().copied())
            .map(|c| Piece {
                score: char_freq.get(&c).copied().unwrap_or(0.0).max(0.5),
                surface: c.to_string(),
                required: true,
            })
            .collect();
        let required = pieces.len();
        let mut ranked: Vec<(&str, f64)> = subs.into_iter().collect();
        ranked.sort_by(|a, b| {
            let ka = a.1 * a.0.chars().count() as f64;
            let kb = b.1 * b.0.chars().count() as f64;
            kb.total_cmp(&ka).then(a.0.cmp(b.0))
        });
        let available = required + ranked.len();
        if available < target {
            return Err(Error::InsufficientData(format!(
                "text yields only {available} candidate pieces but {target} are requested"
            )));
        }
        let cap = if policy.seed_pieces == 0 {
            (4 * (target + CONTROL_TOKENS.len())).max(20_000)
        } else {
            policy.seed_pieces.max(target)
        };
        pieces.extend(
            ranked
                .into_iter()
                .take(cap.saturating_sub(required))
                .map(|(s, f)| Piece {
                    surface: s.to_string(),
                    score: f,
                    required: false,
                }),
        );
        let total: f64 = pieces.iter().map(|p| p.score).sum();
        for p in &mut pieces {
            p.score = (p.score / total).ln();
        }
        let mut model = Self {
            pieces,
            index: HashMap::new(),
            max_chars: policy.max_piece_chars,
        };
        model.reindex();
        Ok(model)
    }

    fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.surface.clone(), i))
            .collect();
    }

    /// Lattice edges `(start, end, piece)` over the word's characters.
    fn lattice(&self, text: &str, bounds: &[usize], exclude: Option<usize>) -> Vec<Vec<(usize, usize)>> {
        let n = bounds.len() - 1;
        let mut edges = vec![Vec::new(); n];
        for (i, out) in edges.iter_mut().enumerate() {
            for j in i + 1..=n.min(i + self.max_chars) {
                if let Some(&p) = self.index.get(&text[bounds[i]..bounds[j]]) {
                    if Some(p) != exclude {
                        out.push((j, p));
                    }
                }
            }
            if out.is_empty() {
                out.push((i + 1, UNK_EDGE));
            }
        }
        edges
    }

    fn edge_score(&self, p: usize) -> f64 {
        if p == UNK_EDGE {
            UNK_SCORE
        } else {
            self.pieces[p].score
        }
    }

    fn em_step(&mut self, words: &[Word], target: usize) {
        let mut expected = vec![0.0f64; self.pieces.len()];
        for w in words {
            let edges = self.lattice(&w.text, &w.bounds, None);
            let n = edges.len();
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            for i in 0..n {
                if alpha[i] == f64::NEG_INFINITY {
                    continue;
                }
                for &(j, p) in &edges[i] {
                    alpha[j] = log_add(alpha[j], alpha[i] + self.edge_score(p));
                }
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            for i in (0..n).rev() {
                for &(j, p) in &edges[i] {
                    beta[i] = log_add(beta[i], self.edge_score(p) + beta[j]);
                }
            }
            let z = alpha[n];
            for i in 0..n {
                for &(j, p) in &edges[i] {
                    if p != UNK_EDGE {
                        expected[p] += w.freq * (alpha[i] + self.pieces[p].score + beta[j] - z).exp();
                    }
                }
            }
        }
        let total: f64 = expected.iter().sum();
        for (p, &c) in self.pieces.iter_mut().zip(&expected) {
            p.score = (c.max(if p.required { 0.5 } else { 1e-10 }) / total).ln();
        }
        // Drop pieces the model no longer uses, keeping at least `target`.
        let mut removable: Vec<usize> = (0..self.pieces.len())
            .filter(|&i| !self.pieces[i].required && expected[i] < 0.5)
            .collect();
        let excess = self.pieces.len().saturating_sub(target);
        if excess > 0 && !removable.is_empty() {
            removable.sort_by(|&a, &b| expected[a].total_cmp(&expected[b]).then(a.cmp(&b)));
            let drop: HashSet<usize> = removable.into_iter().take(excess).collect();
            let mut i = 0;
            self.pieces.retain(|_| {
                i += 1;
                !drop.contains(&(i - 1))
            });
            self.reindex();
        }
    }

    /// Best-scoring path as piece indices (ties: fewer pieces).
    fn viterbi(&self, edges: &[Vec<(usize, usize)>]) -> Vec<usize> {
        let n = edges.len();
        let mut best: Vec<(f64, usize, usize, usize)> = vec![(0.0, 0, n, UNK_EDGE); n + 1];
        for i in (0..n).rev() {
            let mut choice = (f64::NEG_INFINITY, usize::MAX, i + 1, UNK_EDGE);
            for &(j, p) in &edges[i] {
                let s = self.edge_score(p) + best[j].0;
                let k = 1 + best[j].1;
                if s > choice.0 || (s == choice.0 && k <= choice.1) {
                    choice = (s, k, j, p);
                }
            }
            best[i] = choice;
        }
        let mut path = Vec::new();
        let mut i = 0;
        while i < n {
            path.push(best[i].3);
            i = best[i].2;
        }
        path
    }

    /// Keeps the `keep` pieces whose removal would cost the most likelihood.
    fn prune(&mut self, words: &[Word], keep: usize) {
        let mut freq = vec![0.0f64; self.pieces.len()];
        for w in words {
            let edges = self.lattice(&w.text, &w.bounds, None);
            for p in self.viterbi(&edges) {
                if p != UNK_EDGE {
                    freq[p] += w.freq;
                }
            }
        }
        let total: f64 = freq.iter().sum();
        let log_total = total.ln();
        let mut loss = vec![f64::INFINITY; self.pieces.len()];
        for (i, piece) in self.pieces.iter().enumerate() {
            if piece.required {
                continue;
            }
            if freq[i] == 0.0 {
                loss[i] = f64::NEG_INFINITY;
                continue;
            }
            let bounds: Vec<usize> = piece
                .surface
                .char_indices()
                .map(|(b, _)| b)
                .chain([piece.surface.len()])
                .collect();
            let edges = self.lattice(&piece.surface, &bounds, Some(i));
            let alt = self.viterbi(&edges);
            let new_total = total + freq[i] * (alt.len() as f64 - 1.0);
            let log_new_total = new_total.ln();
            let logprob_alt: f64 = alt
                .iter()
                .map(|&a| {
                    let f = if a == UNK_EDGE { 0.0 } else { freq[a] };
                    (f + freq[i]).ln() - log_new_total
                })
                .sum();
            let logprob = freq[i].ln() - log_total;
            loss[i] = freq[i] * (logprob - logprob_alt);
        }
        let mut order: Vec<usize> = (0..self.pieces.len()).collect();
        order.sort_by(|&a, &b| {
            loss[b]
                .total_cmp(&loss[a])
                .then(self.pieces[b].score.total_cmp(&self.pieces[a].score))
                .then(self.pieces[a].surface.cmp(&self.pieces[b].surface))
        });
        let kept: HashSet<usize> = order.into_iter().take(keep).collect();
        let mut i = 0;
        self.pieces.retain(|_| {
            i += 1;
            kept.contains(&(i - 1))
        });
        self.reindex();
    }

    /// Pieces sorted by descending score.
    fn finish(self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.pieces.into_iter().map(|p| (p.surface, p.score)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::UNK_ID;

    fn sides() -> BTreeMap<String, Vec<String>> {
        let en = [
            "the cat sat on the mat",
            "the dog sat on the log",
            "a cat and a dog",
            "the cat ran to the dog",
            "on the mat sat a cat",
        ];
        let xx = ["uif dbu tbu po uif nbu", "uif eph tbu po uif mph", "b dbu boe b eph"];
        BTreeMap::from([
            ("en".to_string(), en.iter().map(|s| s.to_string()).collect()),
            ("xx".to_string(), xx.iter().map(|s| s.to_string()).collect()),
        ])
    }

    fn policy(size: usize) -> VocabPolicy {
        VocabPolicy {
            vocab_size: size,
            sample_sentences: 2000,
            char_coverage: 1.0,
            ..VocabPolicy::default()
        }
    }

    #[test]
    fn learns_exact_size_with_reserved_prefix() {
        let v = learn_from_sides(&sides(), &policy(60)).unwrap();
        assert_eq!(v.len(), 60);
        assert_eq!(v.tag_codes(), vec!["en", "xx"]);
        assert_eq!(v.reserved_count(), 6);
        for s in sides().values().flatten() {
            let ids = v.segment(s);
            assert!(!ids.contains(&UNK_ID));
            assert_eq!(v.detokenize(&ids).unwrap(), *s);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = learn_from_sides(&sides(), &policy(50)).unwrap();
        let b = learn_from_sides(&sides(), &policy(50)).unwrap();
        assert_eq!(a.to_file_string(), b.to_file_string());
    }

    #[test]
    fn larger_vocabularies_shorten_text() {
        let Err(Error::VocabTooSmall { minimum, .. }) = learn_from_sides(&sides(), &policy(1)) else {
            panic!("expected a size error");
        };
        let small = learn_from_sides(&sides(), &policy(minimum + 3)).unwrap();
        let large = learn_from_sides(&sides(), &policy(80)).unwrap();
        let count = |v: &Vocabulary| -> usize { sides().values().flatten().map(|s| v.segment(s).len()).sum() };
        assert!(count(&large) < count(&small));
    }

    #[test]
    fn too_small_is_an_error() {
        let err = learn_from_sides(&sides(), &policy(10)).unwrap_err();
        assert!(matches!(err, Error::VocabTooSmall { requested: 10, .. }));
    }

    #[test]
    fn too_large_is_an_error() {
        let err = learn_from_sides(&sides(), &policy(100_000)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn coverage_excludes_rare_characters() {
        let mut en = vec!["abc cab".to_string(); 50];
        en.push("q".into());
        let s = BTreeMap::from([("en".to_string(), en)]);
        let v = learn_from_sides(
            &s,
            &VocabPolicy {
                char_coverage: 0.99,
                ..policy(12)
            },
        )
        .unwrap();
        assert!(!v.covers('q'));
        assert!(v.covers('a'));
        assert_eq!(v.segment("q"), vec![v.id_of("\u{2581}").unwrap(), UNK_ID]);
    }

    #[test]
    fn alphabet_coverage_is_minimal() {
        let words: Vec<Word> = [("aaaaaaab", 1.0)]
            .iter()
            .map(|&(t, f)| Word {
                text: t.to_string(),
                bounds: t.char_indices().map(|(b, _)| b).chain([t.len()]).collect(),
                freq: f,
            })
            .collect();
        assert_eq!(choose_alphabet(&words, 0.8), vec!['a']);
        assert_eq!(choose_alphabet(&words, 0.9), vec!['a', 'b']);
        assert_eq!(choose_alphabet(&words, 1.0), vec!['a', 'b']);
    }
}
