//! Shared multilingual subword vocabulary.
//!
//! Text is normalized SentencePiece-style: every space becomes the word
//! boundary marker `▁` and one marker is prefixed to the text, so pieces
//! carry their own spacing and detokenization is lossless. Pieces never
//! contain a marker except as their first character, which lets
//! segmentation run word by word.

mod learn;
mod lengths;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use regex::Regex;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::sampler::language_tag;

pub use learn::{learn_from_sides, learn_vocabulary, monolingual_sides, VocabPolicy};
pub use lengths::{length_stats, LengthReport};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const CONTROL_TOKENS: [&str; 4] = [PAD, BOS, EOS, UNK];
/// Id of the first language tag; tags follow the control tokens.
pub const FIRST_TAG_ID: u32 = 4;

/// Word boundary marker (U+2581).
pub const WORD_BOUNDARY: char = '\u{2581}';
/// Rendering of `<unk>` in detokenized text (U+2047).
pub const UNK_GLYPH: char = '\u{2047}';

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub surface: String,
    pub score: f64,
}

/// Ordered subword inventory. Ids: control tokens, then language tags
/// (sorted by code), then learned pieces.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<String, u32>,
    tag_count: usize,
    alphabet: BTreeSet<char>,
    max_piece_chars: usize,
    unk_score: f64,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.tag_count == other.tag_count
    }
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<2[a-z0-9]+>").expect("valid tag regex"))
}

impl Vocabulary {
    /// Builds a vocabulary from language codes and learned `(surface, score)`
    /// pieces. Every character used by a piece must also exist as a
    /// single-character piece, and the boundary marker must be present.
    pub fn new(tag_codes: &[String], pieces: Vec<(String, f64)>) -> Result<Self> {
        let mut codes: Vec<&String> = tag_codes.iter().collect();
        codes.sort();
        codes.dedup();
        let mut tokens: Vec<Token> = CONTROL_TOKENS
            .iter()
            .map(|s| Token {
                surface: s.to_string(),
                score: 0.0,
            })
            .collect();
        tokens.extend(codes.iter().map(|c| Token {
            surface: language_tag(c),
            score: 0.0,
        }));
        let tag_count = codes.len();
        tokens.extend(pieces.into_iter().map(|(surface, score)| Token { surface, score }));
        Self::from_tokens(tokens, tag_count)
    }

    fn from_tokens(tokens: Vec<Token>, tag_count: usize) -> Result<Self> {
        let reserved = CONTROL_TOKENS.len() + tag_count;
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.surface.is_empty() {
                return Err(Error::format("vocabulary", format!("token {i} is empty")));
            }
            if index.insert(t.surface.clone(), i as u32).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token `{}`", t.surface)));
            }
        }
        let alphabet: BTreeSet<char> = tokens[reserved..]
            .iter()
            .filter_map(|t| single_char(&t.surface))
            .filter(|&c| c != WORD_BOUNDARY)
            .collect();
        if !index.contains_key(WORD_BOUNDARY.to_string().as_str()) {
            return Err(Error::format("vocabulary", "missing the word boundary piece"));
        }
        let mut max_piece_chars = 1;
        let mut min_score = 0.0f64;
        for t in &tokens[reserved..] {
            let mut n = 0;
            for (k, c) in t.surface.chars().enumerate() {
                n += 1;
                let ok = if c == WORD_BOUNDARY {
                    k == 0
                } else {
                    alphabet.contains(&c)
                };
                if !ok {
                    return Err(Error::format(
                        "vocabulary",
                        format!("piece `{}` uses uncovered character {c:?}", t.surface),
                    ));
                }
            }
            max_piece_chars = max_piece_chars.max(n);
            min_score = min_score.min(t.score);
        }
        Ok(Self {
            tokens,
            index,
            tag_count,
            alphabet,
            max_piece_chars,
            unk_score: min_score - 10.0,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|t| t.surface.as_str())
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    /// Characters representable without `<unk>` (the boundary marker aside).
    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    pub fn covers(&self, c: char) -> bool {
        c == ' ' || self.alphabet.contains(&c)
    }

    pub fn reserved_count(&self) -> usize {
        CONTROL_TOKENS.len() + self.tag_count
    }

    pub fn tag_count(&self) -> usize {
        self.tag_count
    }

    pub fn tag_id(&self, code: &str) -> Option<u32> {
        let id = self.id_of(&language_tag(code))?;
        self.is_tag(id).then_some(id)
    }

    pub fn is_tag(&self, id: u32) -> bool {
        id >= FIRST_TAG_ID && (id as usize) < self.reserved_count()
    }

    /// Codes with a reserved tag, in id order.
    pub fn tag_codes(&self) -> Vec<String> {
        self.tokens[FIRST_TAG_ID as usize..self.reserved_count()]
            .iter()
            .map(|t| t.surface[2..t.surface.len() - 1].to_string())
            .collect()
    }

    /// Stable 64-bit fingerprint of the token list.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.surface.bytes().chain(t.score.to_bits().to_le_bytes()) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Maximum-score segmentation into token ids. Ties prefer fewer tokens,
    /// then the longest leftmost piece. Tag tokens (`<2xx>`) in the text are
    /// kept atomic and swallow one following space. Characters outside the
    /// alphabet become one `<unk>` each.
    pub fn segment(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        self.segment_with(
            text,
            &mut |word, out: &mut Vec<u32>| self.segment_word(word, out),
            &mut out,
        );
        out
    }

    fn segment_with(&self, text: &str, word_fn: &mut dyn FnMut(&str, &mut Vec<u32>), out: &mut Vec<u32>) {
        let mut rest = text;
        while let Some(m) = tag_regex().find(rest) {
            let Some(id) = self.id_of(m.as_str()).filter(|&id| self.is_tag(id)) else {
                break;
            };
            self.segment_plain(&rest[..m.start()], word_fn, out);
            out.push(id);
            rest = &rest[m.end()..];
            rest = rest.strip_prefix(' ').unwrap_or(rest);
        }
        self.segment_plain(rest, word_fn, out);
    }

    fn segment_plain(&self, text: &str, word_fn: &mut dyn FnMut(&str, &mut Vec<u32>), out: &mut Vec<u32>) {
        if text.is_empty() {
            return;
        }
        let normalized = normalize(text);
        for word in split_words(&normalized) {
            word_fn(word, out);
        }
    }

    fn segment_word(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = bounds.len() - 1;
        // best[i]: (score, tokens, end of first piece, id) for word[i..].
        let mut best: Vec<(f64, usize, usize, u32)> = vec![(0.0, 0, n, 0); n + 1];
        for i in (0..n).rev() {
            let c = word[bounds[i]..].chars().next().unwrap_or(' ');
            let covered = c == WORD_BOUNDARY || self.alphabet.contains(&c);
            let mut choice: Option<(f64, usize, usize, u32)> = None;
            if covered {
                for j in i + 1..=n.min(i + self.max_piece_chars) {
                    let Some(&id) = self.index.get(&word[bounds[i]..bounds[j]]) else {
                        continue;
                    };
                    if (id as usize) < self.reserved_count() {
                        continue;
                    }
                    let score = self.tokens[id as usize].score + best[j].0;
                    let count = 1 + best[j].1;
                    let better = match choice {
                        None => true,
                        // Later (longer) candidates win exact ties.
                        Some((s, k, _, _)) => score > s || (score == s && count <= k),
                    };
                    if better {
                        choice = Some((score, count, j, id));
                    }
                }
            }
            best[i] = choice.unwrap_or((self.unk_score + best[i + 1].0, 1 + best[i + 1].1, i + 1, UNK_ID));
        }
        let mut i = 0;
        while i < n {
            out.push(best[i].3);
            i = best[i].2;
        }
    }

    /// Inverse of [`segment`](Self::segment) on covered text. Control tokens
    /// render as nothing, `<unk>` as [`UNK_GLYPH`], tags as their surface.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.tokens.get(id as usize).ok_or(Error::InvalidTokenId {
                id,
                size: self.tokens.len(),
            })?;
            match id {
                PAD_ID | BOS_ID | EOS_ID => {}
                UNK_ID => out.push(UNK_GLYPH),
                _ => out.extend(token.surface.chars().map(|c| if c == WORD_BOUNDARY { ' ' } else { c })),
            }
        }
        if out.starts_with(' ') {
            out.remove(0);
        }
        Ok(out)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{}\t{}", escape(&t.surface), t.score);
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (surface, score) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format("vocabulary file", format!("line {}: no tab", i + 1)))?;
            let score: f64 = score
                .parse()
                .map_err(|_| Error::format("vocabulary file", format!("line {}: bad score `{score}`", i + 1)))?;
            tokens.push(Token {
                surface: unescape(surface),
                score,
            });
        }
        for (i, want) in CONTROL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(|t| t.surface.as_str()) != Some(*want) {
                return Err(Error::format(
                    "vocabulary file",
                    format!("expected control token {want} at line {}", i + 1),
                ));
            }
        }
        let tag_count = tokens[CONTROL_TOKENS.len()..]
            .iter()
            .take_while(|t| tag_regex().find(&t.surface).is_some_and(|m| m.len() == t.surface.len()))
            .count();
        Self::from_tokens(tokens, tag_count)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

/// Memoizes per-word segmentations for bulk encoding.
pub struct Segmenter<'v> {
    vocab: &'v Vocabulary,
    cache: HashMap<String, Vec<u32>>,
}

impl<'v> Segmenter<'v> {
    pub fn new(vocab: &'v Vocabulary) -> Self {
        Self {
            vocab,
            cache: HashMap::new(),
        }
    }

    pub fn vocab(&self) -> &'v Vocabulary {
        self.vocab
    }

    pub fn segment(&mut self, text: &str) -> Vec<u32> {
        let vocab = self.vocab;
        let cache = &mut self.cache;
        let mut out = Vec::new();
        vocab.segment_with(
            text,
            &mut |word, out: &mut Vec<u32>| {
                if let Some(ids) = cache.get(word) {
                    out.extend_from_slice(ids);
                } else {
                    let mut ids = Vec::new();
                    vocab.segment_word(word, &mut ids);
                    out.extend_from_slice(&ids);
                    cache.insert(word.to_string(), ids);
                }
            },
            &mut out,
        );
        out
    }
}

pub(crate) fn normalize(text: &str) -> String {
    let mut s = String::with_capacity(text.len() + 3);
    s.push(WORD_BOUNDARY);
    s.extend(text.chars().map(|c| if c == ' ' { WORD_BOUNDARY } else { c }));
    s
}

/// Splits normalized text before every boundary marker.
pub(crate) fn split_words(normalized: &str) -> impl Iterator<Item = &str> {
    let mut starts: Vec<usize> = normalized
        .char_indices()
        .filter(|&(_, c)| c == WORD_BOUNDARY)
        .map(|(b, _)| b)
        .collect();
    if starts.first() != Some(&0) {
        starts.insert(0, 0);
    }
    let ends: Vec<usize> = starts[1..].iter().copied().chain([normalized.len()]).collect();
    starts.into_iter().zip(ends).map(move |(a, b)| &normalized[a..b])
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    let c = it.next()?;
    it.next().is_none().then_some(c)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(pieces: &[(&str, f64)]) -> Vocabulary {
        let mut all: Vec<(String, f64)> = vec![(WORD_BOUNDARY.to_string(), -5.0)];
        all.extend(pieces.iter().map(|(s, v)| (s.to_string(), *v)));
        Vocabulary::new(&["fr".to_string(), "de".to_string()], all).unwrap()
    }

    fn ids(v: &Vocabulary, surfaces: &[&str]) -> Vec<u32> {
        surfaces.iter().map(|s| v.id_of(s).unwrap()).collect()
    }

    #[test]
    fn reserved_tokens_come_first() {
        let v = vocab(&[("a", -1.0)]);
        assert_eq!(v.surface(PAD_ID), Some(PAD));
        assert_eq!(v.surface(UNK_ID), Some(UNK));
        assert_eq!(v.tag_id("de"), Some(4));
        assert_eq!(v.tag_id("fr"), Some(5));
        assert_eq!(v.tag_id("xx"), None);
        assert_eq!(v.reserved_count(), 6);
        assert_eq!(v.tag_codes(), vec!["de", "fr"]);
    }

    #[test]
    fn viterbi_prefers_high_scoring_piece() {
        let v = vocab(&[("a", -3.0), ("b", -3.0), ("ab", -1.0), ("\u{2581}ab", -10.0)]);
        // "abab" -> ▁abab; the word-initial marker must be its own piece here.
        let got = v.segment("abab");
        assert_eq!(got, ids(&v, &["\u{2581}", "ab", "ab"]));
    }

    #[test]
    fn ties_prefer_fewer_tokens_then_longest_first() {
        let v = vocab(&[("a", -1.0), ("b", -1.0), ("ab", -2.0), ("\u{2581}a", -1.0)]);
        // ▁ab scores: [▁a, b] = -2, [▁, ab] = -7, [▁, a, b] = -7.
        assert_eq!(v.segment("ab"), ids(&v, &["\u{2581}a", "b"]));
        let w = vocab(&[("a", -1.0), ("b", -1.0), ("c", -1.0), ("ab", -1.0), ("bc", -1.0)]);
        // ▁abc: [▁, ab, c] and [▁, a, bc] tie on score and count; longest-leftmost wins.
        assert_eq!(w.segment("abc"), ids(&w, &["\u{2581}", "ab", "c"]));
    }

    #[test]
    fn uncovered_characters_become_single_unks() {
        let v = vocab(&[("a", -1.0), ("\u{2581}a", -1.0)]);
        assert_eq!(
            v.segment("aqa"),
            vec![v.id_of("\u{2581}a").unwrap(), UNK_ID, v.id_of("a").unwrap()]
        );
        assert_eq!(v.segment("qq").iter().filter(|&&i| i == UNK_ID).count(), 2);
        assert_eq!(v.detokenize(&v.segment("aqa")).unwrap(), "a\u{2047}a");
    }

    #[test]
    fn tags_are_atomic() {
        let v = vocab(&[("h", -1.0), ("i", -1.0), ("\u{2581}hi", -1.0)]);
        let got = v.segment("<2fr> hi");
        assert_eq!(got, vec![v.tag_id("fr").unwrap(), v.id_of("\u{2581}hi").unwrap()]);
        assert_eq!(v.detokenize(&got).unwrap(), "<2fr> hi");
        assert_eq!(v.segment("<2de> "), vec![v.tag_id("de").unwrap()]);
    }

    #[test]
    fn detokenize_edges() {
        let v = vocab(&[("a", -1.0)]);
        assert_eq!(v.detokenize(&[]).unwrap(), "");
        assert!(matches!(
            v.detokenize(&[999]),
            Err(Error::InvalidTokenId { id: 999, .. })
        ));
        assert_eq!(v.detokenize(&[BOS_ID, EOS_ID, PAD_ID]).unwrap(), "");
    }

    #[test]
    fn hello_world_round_trip() {
        let pieces: Vec<(String, f64)> = "helowrd"
            .chars()
            .map(|c| (c.to_string(), -2.0))
            .chain([("\u{2581}hello".to_string(), -1.0), ("\u{2581}".to_string(), -3.0)])
            .collect();
        let v = Vocabulary::new(&[], pieces).unwrap();
        assert_eq!(v.detokenize(&v.segment("hello world")).unwrap(), "hello world");
    }

    #[test]
    fn file_round_trip() {
        let v = vocab(&[("a", -1.25), ("\\", -2.0), ("\t", -3.0), ("a\\", -4.0), ("a\t", 0.1)]);
        let back = Vocabulary::from_file_string(&v.to_file_string()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.tag_count(), 2);
        assert!(Vocabulary::from_file_string("x\t0\n").is_err());
    }

    #[test]
    fn construction_rejects_bad_pieces() {
        assert!(Vocabulary::new(&[], vec![("a".into(), 0.0)]).is_err(), "missing marker");
        let r = Vocabulary::new(
            &[],
            vec![("\u{2581}".into(), 0.0), ("ab".into(), 0.0), ("a".into(), 0.0)],
        );
        assert!(r.is_err(), "b not covered");
        let r = Vocabulary::new(
            &[],
            vec![("\u{2581}".into(), 0.0), ("a".into(), 0.0), ("a".into(), 0.0)],
        );
        assert!(r.is_err(), "duplicate");
    }

    #[test]
    fn nested_uniform_vocabularies_never_lengthen() {
        // With equal scores the best path is the one with fewest tokens, so a
        // superset vocabulary can only shorten segmentations.
        let base: Vec<(&str, f64)> = ["a", "b", "c", "d", "e", "f", "g"].map(|c| (c, -1.0)).to_vec();
        let extra = [
            ("ab", -1.0),
            ("\u{2581}ab", -1.0),
            ("cde", -1.0),
            ("fg", -1.0),
            ("\u{2581}gab", -1.0),
            ("bcd", -1.0),
        ];
        let mut levels = vec![base.clone()];
        for k in 1..=extra.len() {
            let mut l = base.clone();
            l.extend_from_slice(&extra[..k]);
            levels.push(l);
        }
        let vocabs: Vec<Vocabulary> = levels.iter().map(|l| vocab(l)).collect();
        for s in ["abcdefg", "gab ab cde", "fgfg abab", "g a b", "bcdefgab"] {
            let lens: Vec<usize> = vocabs.iter().map(|v| v.segment(s).len()).collect();
            assert!(lens.windows(2).all(|w| w[1] <= w[0]), "{s}: {lens:?}");
        }
    }

    proptest! {
        #[test]
        fn covered_text_round_trips(text in "[abc ]{0,40}") {
            let v = vocab(&[("a", -1.0), ("b", -1.5), ("c", -2.0), ("ab", -1.2), ("\u{2581}c", -0.5), ("bca", -2.5)]);
            let ids = v.segment(&text);
            prop_assert!(!ids.contains(&UNK_ID));
            prop_assert_eq!(v.detokenize(&ids).unwrap(), text.clone());
            let mut seg = Segmenter::new(&v);
            prop_assert_eq!(seg.segment(&text), ids);
        }
    }
}
