use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{prepend_language_tag, PairKeyed, SamplingPolicy};
use crate::corpus::{LanguagePair, LanguageRegistry, PairCorpus};
use crate::error::{Error, Result};
use crate::subword::Segmenter;

/// Draws `(pair, example)` index pairs: the pair i.i.d. from the sampling
/// distribution, the example from a per-pair shuffled epoch that is
/// reshuffled on wraparound (so over-sampling shows up as repetition).
#[derive(Debug, Clone)]
pub struct PairSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    cursors: Vec<EpochCursor>,
}

#[derive(Debug, Clone)]
struct EpochCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochCursor {
    fn new(size: usize, seed: u64) -> Self {
        Self {
            order: (0..size).collect(),
            // Forces a shuffle on first use.
            pos: size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

impl PairSampler {
    pub fn new(sizes: &[usize], probabilities: &[f64], seed: u64) -> Result<Self> {
        if sizes.len() != probabilities.len() || sizes.is_empty() {
            return Err(Error::Shape(format!(
                "{} corpus sizes vs {} probabilities",
                sizes.len(),
                probabilities.len()
            )));
        }
        if let Some(i) = (0..sizes.len()).find(|&i| sizes[i] == 0 && probabilities[i] > 0.0) {
            return Err(Error::Domain(format!("pair {i} has probability mass but no data")));
        }
        let dist = WeightedIndex::new(probabilities).map_err(|e| Error::Domain(e.to_string()))?;
        let cursors = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                EpochCursor::new(
                    n,
                    seed.wrapping_add(0x5851_F42D_4C95_7F2D_u64.wrapping_mul(i as u64 + 1)),
                )
            })
            .collect();
        Ok(Self {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursors,
        })
    }

    pub fn next_index(&mut self) -> (usize, usize) {
        let pair = self.dist.sample(&mut self.rng);
        (pair, self.cursors[pair].next())
    }
}

impl Iterator for PairSampler {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_index())
    }
}

fn policy_weights(pair_ids: impl Iterator<Item = String>, policy: &SamplingPolicy) -> Result<Vec<f64>> {
    pair_ids
        .map(|id| policy.probability(&id).ok_or_else(|| Error::MissingPair(id.clone())))
        .collect()
}

/// A training example with the target-language tag already on the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedExample {
    pub pair: LanguagePair,
    pub source_text: String,
    pub target_text: String,
}

impl PairKeyed for TaggedExample {
    fn pair_key(&self) -> String {
        self.pair.id()
    }
}

/// Infinite stream of tagged text examples mixed across pair corpora.
#[derive(Debug, Clone)]
pub struct MixedStream<'a> {
    corpora: &'a [PairCorpus],
    tags: Vec<String>,
    sampler: PairSampler,
}

impl<'a> MixedStream<'a> {
    pub fn new(
        corpora: &'a [PairCorpus],
        policy: &SamplingPolicy,
        registry: &LanguageRegistry,
        seed: u64,
    ) -> Result<Self> {
        let weights = policy_weights(corpora.iter().map(|c| c.pair.id()), policy)?;
        let sizes: Vec<usize> = corpora.iter().map(PairCorpus::size).collect();
        let tags = corpora
            .iter()
            .map(|c| prepend_language_tag("", c.pair.target(), registry))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            corpora,
            tags,
            sampler: PairSampler::new(&sizes, &weights, seed)?,
        })
    }
}

impl Iterator for MixedStream<'_> {
    type Item = TaggedExample;

    fn next(&mut self) -> Option<TaggedExample> {
        let (p, i) = self.sampler.next_index();
        let corpus = &self.corpora[p];
        let (src, tgt) = &corpus.examples()[i];
        Some(TaggedExample {
            pair: corpus.pair.clone(),
            source_text: format!("{}{src}", self.tags[p]),
            target_text: tgt.clone(),
        })
    }
}

/// A pair corpus already segmented into ids; sources carry the tag id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub pair: LanguagePair,
    pub examples: Vec<(Vec<u32>, Vec<u32>)>,
}

impl EncodedCorpus {
    /// Segments both sides and prefixes each source with the target tag.
    pub fn encode(corpus: &PairCorpus, segmenter: &mut Segmenter<'_>) -> Result<Self> {
        let tag = segmenter
            .vocab()
            .tag_id(corpus.pair.target())
            .ok_or_else(|| Error::UnknownLanguage(format!("{} (no tag in vocabulary)", corpus.pair.target())))?;
        let examples = corpus
            .examples()
            .iter()
            .map(|(s, t)| {
                let mut src = vec![tag];
                src.extend(segmenter.segment(s));
                (src, segmenter.segment(t))
            })
            .collect();
        Ok(Self {
            pair: corpus.pair.clone(),
            examples,
        })
    }

    pub fn size(&self) -> usize {
        self.examples.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub pair_id: Arc<str>,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl EncodedExample {
    pub fn token_count(&self) -> usize {
        self.source.len() + self.target.len()
    }
}

impl PairKeyed for EncodedExample {
    fn pair_key(&self) -> String {
        self.pair_id.to_string()
    }
}

/// Id-level counterpart of [`MixedStream`] used for training.
#[derive(Debug, Clone)]
pub struct EncodedStream<'a> {
    corpora: &'a [EncodedCorpus],
    ids: Vec<Arc<str>>,
    sampler: PairSampler,
}

impl<'a> EncodedStream<'a> {
    pub fn new(corpora: &'a [EncodedCorpus], policy: &SamplingPolicy, seed: u64) -> Result<Self> {
        let weights = policy_weights(corpora.iter().map(|c| c.pair.id()), policy)?;
        let sizes: Vec<usize> = corpora.iter().map(EncodedCorpus::size).collect();
        Ok(Self {
            corpora,
            ids: corpora.iter().map(|c| Arc::from(c.pair.id())).collect(),
            sampler: PairSampler::new(&sizes, &weights, seed)?,
        })
    }
}

impl Iterator for EncodedStream<'_> {
    type Item = EncodedExample;

    fn next(&mut self) -> Option<EncodedExample> {
        let (p, i) = self.sampler.next_index();
        let (src, tgt) = &self.corpora[p].examples[i];
        Some(EncodedExample {
            pair_id: Arc::clone(&self.ids[p]),
            source: src.clone(),
            target: tgt.clone(),
        })
    }
}
