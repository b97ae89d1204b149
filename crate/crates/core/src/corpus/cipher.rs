//! Deterministic cipher languages derived from a base corpus.
//!
//! A cipher rewrites the letters `a-z` (case preserved) through a keyed
//! permutation and may additionally permute word order. Because the map is
//! invertible, every synthetic language comes with an exact translation
//! oracle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LETTERS: usize = 26;
const AFFINE_MULTIPLIERS: [usize; 11] = [3, 5, 7, 9, 11, 15, 17, 19, 21, 23, 25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherKind {
    Identity,
    Substitution,
    WordShuffleWithKey,
    AffineSubstitution,
}

/// Declarative description of one synthetic language.
///
/// When `parent` is set the key is the parent's key with `perturb` letter
/// positions rotated (the child inherits the parent's word order); `kind`
/// then only documents intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherSpec {
    pub id: String,
    pub kind: CipherKind,
    pub seed: u64,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub perturb: usize,
}

impl CipherSpec {
    pub fn new(id: &str, kind: CipherKind, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            kind,
            seed,
            parent: None,
            perturb: 0,
        }
    }

    pub fn child_of(id: &str, parent: &str, perturb: usize, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            kind: CipherKind::Substitution,
            seed,
            parent: Some(parent.to_string()),
            perturb,
        }
    }
}

/// A resolved cipher key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cipher {
    id: String,
    forward: [u8; LETTERS],
    inverse: [u8; LETTERS],
    word_order_seed: Option<u64>,
}

impl Cipher {
    fn from_letters(id: &str, forward: [u8; LETTERS], word_order_seed: Option<u64>) -> Self {
        let mut inverse = [0u8; LETTERS];
        for (i, &f) in forward.iter().enumerate() {
            inverse[f as usize] = i as u8;
        }
        Self {
            id: id.to_string(),
            forward,
            inverse,
            word_order_seed,
        }
    }

    fn root(spec: &CipherSpec) -> Self {
        let identity: [u8; LETTERS] = std::array::from_fn(|i| i as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        match spec.kind {
            CipherKind::Identity => Self::from_letters(&spec.id, identity, None),
            CipherKind::Substitution => {
                let mut letters = identity;
                letters.shuffle(&mut rng);
                Self::from_letters(&spec.id, letters, None)
            }
            CipherKind::AffineSubstitution => {
                let a = AFFINE_MULTIPLIERS[rng.gen_range(0..AFFINE_MULTIPLIERS.len())];
                let b = rng.gen_range(0..LETTERS);
                let letters = std::array::from_fn(|i| ((a * i + b) % LETTERS) as u8);
                Self::from_letters(&spec.id, letters, None)
            }
            CipherKind::WordShuffleWithKey => Self::from_letters(&spec.id, identity, Some(spec.seed)),
        }
    }

    fn perturbed(parent: &Cipher, spec: &CipherSpec) -> Result<Self> {
        let k = spec.perturb;
        if k == 1 || k > LETTERS {
            return Err(Error::Domain(format!(
                "cipher {}: perturbation must touch 0 or 2..={LETTERS} positions, got {k}",
                spec.id
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut positions: Vec<usize> = (0..LETTERS).collect();
        positions.shuffle(&mut rng);
        positions.truncate(k);
        let mut letters = parent.forward;
        // Rotating the images along a k-cycle changes exactly k positions.
        for w in 0..k {
            letters[positions[w]] = parent.forward[positions[(w + 1) % k]];
        }
        Ok(Self::from_letters(&spec.id, letters, parent.word_order_seed))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Image of a lowercase letter under the key (other characters pass).
    pub fn map_char(&self, c: char) -> char {
        map_with(&self.forward, c)
    }

    /// Letters (as lowercase chars) whose image differs from `other`'s.
    pub fn differing_letters(&self, other: &Cipher) -> Vec<char> {
        (0..LETTERS)
            .filter(|&i| self.forward[i] != other.forward[i])
            .map(|i| (b'a' + i as u8) as char)
            .collect()
    }

    pub fn apply(&self, sentence: &str) -> String {
        let mapped: String = sentence.chars().map(|c| map_with(&self.forward, c)).collect();
        match self.word_order_seed {
            None => mapped,
            Some(seed) => {
                let words: Vec<&str> = mapped.split(' ').collect();
                let perm = word_permutation(seed, words.len());
                perm.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ")
            }
        }
    }

    pub fn invert(&self, sentence: &str) -> String {
        let reordered = match self.word_order_seed {
            None => sentence.to_string(),
            Some(seed) => {
                let words: Vec<&str> = sentence.split(' ').collect();
                let perm = word_permutation(seed, words.len());
                let mut original = vec![""; words.len()];
                for (slot, &src) in perm.iter().enumerate() {
                    original[src] = words[slot];
                }
                original.join(" ")
            }
        };
        reordered.chars().map(|c| map_with(&self.inverse, c)).collect()
    }
}

fn map_with(table: &[u8; LETTERS], c: char) -> char {
    if c.is_ascii_lowercase() {
        (b'a' + table[(c as u8 - b'a') as usize]) as char
    } else if c.is_ascii_uppercase() {
        (b'A' + table[(c as u8 - b'A') as usize]) as char
    } else {
        c
    }
}

/// Output slot `i` holds input word `perm[i]`; fixed per (seed, length).
fn word_permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    perm.shuffle(&mut rng);
    perm
}

/// A set of resolved ciphers keyed by language code.
#[derive(Debug, Clone, Default)]
pub struct CipherSet {
    ciphers: BTreeMap<String, Cipher>,
}

impl CipherSet {
    /// Resolves specs, deriving children from their parents. Ids must be
    /// unique and parents must exist and be acyclic.
    pub fn build(specs: &[CipherSpec]) -> Result<Self> {
        let mut by_id: BTreeMap<&str, &CipherSpec> = BTreeMap::new();
        for spec in specs {
            if by_id.insert(spec.id.as_str(), spec).is_some() {
                return Err(Error::Domain(format!("duplicate cipher id `{}`", spec.id)));
            }
        }
        let mut ciphers = BTreeMap::new();
        let mut remaining: Vec<&CipherSpec> = specs.iter().collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            let mut pending = Vec::new();
            for spec in remaining {
                let resolved = match &spec.parent {
                    None => Some(Cipher::root(spec)),
                    Some(parent) => {
                        if !by_id.contains_key(parent.as_str()) {
                            return Err(Error::Domain(format!(
                                "cipher `{}` names unknown parent `{parent}`",
                                spec.id
                            )));
                        }
                        match ciphers.get(parent) {
                            Some(p) => Some(Cipher::perturbed(p, spec)?),
                            None => None,
                        }
                    }
                };
                match resolved {
                    Some(c) => {
                        ciphers.insert(spec.id.clone(), c);
                    }
                    None => pending.push(spec),
                }
            }
            if pending.len() == before {
                return Err(Error::Domain("cipher parent links form a cycle".into()));
            }
            remaining = pending;
        }
        Ok(Self { ciphers })
    }

    pub fn get(&self, id: &str) -> Option<&Cipher> {
        self.ciphers.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cipher> {
        self.ciphers.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ciphers.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ciphers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ciphers.is_empty()
    }
}
