use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Items that know which language pair they belong to.
pub trait PairKeyed {
    fn pair_key(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<E> {
    pub examples: Vec<E>,
    /// Source plus target tokens; padding is not counted.
    pub token_count: usize,
    /// Examples per pair id.
    pub composition: BTreeMap<String, usize>,
}

impl<E> Batch<E> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Greedy token-budget packing over an example stream.
pub struct Batches<I: Iterator, F> {
    inner: I,
    budget: usize,
    count_tokens: F,
    pending: Option<(I::Item, usize)>,
    position: usize,
    deferred: Option<Error>,
    failed: bool,
}

/// Packs examples greedily until the next one would push the batch past
/// `token_budget`. An example that alone exceeds the budget is an error,
/// after which the iterator is exhausted.
pub fn make_batches<I, F>(stream: I, token_budget: usize, count_tokens: F) -> Batches<I::IntoIter, F>
where
    I: IntoIterator,
    I::Item: PairKeyed,
    F: FnMut(&I::Item) -> usize,
{
    Batches {
        inner: stream.into_iter(),
        budget: token_budget,
        count_tokens,
        pending: None,
        position: 0,
        deferred: None,
        failed: false,
    }
}

impl<I, F> Iterator for Batches<I, F>
where
    I: Iterator,
    I::Item: PairKeyed,
    F: FnMut(&I::Item) -> usize,
{
    type Item = Result<Batch<I::Item>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if let Some(err) = self.deferred.take() {
            self.failed = true;
            return Some(Err(err));
        }
        let mut batch = Batch {
            examples: Vec::new(),
            token_count: 0,
            composition: BTreeMap::new(),
        };
        loop {
            let (example, tokens) = match self.pending.take() {
                Some(p) => p,
                None => match self.inner.next() {
                    Some(e) => {
                        let t = (self.count_tokens)(&e);
                        self.position += 1;
                        if t > self.budget {
                            let err = Error::ExampleTooLong {
                                index: self.position - 1,
                                tokens: t,
                                budget: self.budget,
                            };
                            if batch.is_empty() {
                                self.failed = true;
                                return Some(Err(err));
                            }
                            self.deferred = Some(err);
                            break;
                        }
                        (e, t)
                    }
                    None => break,
                },
            };
            if batch.token_count + tokens > self.budget {
                self.pending = Some((example, tokens));
                break;
            }
            batch.token_count += tokens;
            *batch.composition.entry(example.pair_key()).or_default() += 1;
            batch.examples.push(example);
        }
        (!batch.is_empty()).then_some(Ok(batch))
    }
}
