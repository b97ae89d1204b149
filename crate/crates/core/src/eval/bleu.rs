//! Corpus BLEU with mteval-v13a tokenization.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tokenizer {
    /// mteval-v13a `--international-tokenization`, case preserved.
    #[default]
    International,
    /// mteval-v13a default (Western) tokenization, case preserved.
    Standard13a,
    Whitespace,
}

struct InternationalRules {
    hyphen_break: Regex,
    line_sep: Regex,
    punct_after: Regex,
    punct_before: Regex,
    symbol: Regex,
    spaces: Regex,
}

fn international_rules() -> &'static InternationalRules {
    static R: OnceLock<InternationalRules> = OnceLock::new();
    R.get_or_init(|| InternationalRules {
        // Perl's \p{Hyphen} set.
        hyphen_break: Regex::new(
            r"[\x{2D}\x{AD}\x{58A}\x{1806}\x{2010}\x{2011}\x{2E17}\x{30FB}\x{FE63}\x{FF0D}\x{FF65}]\p{Zl}",
        )
        .unwrap(),
        line_sep: Regex::new(r"\p{Zl}").unwrap(),
        punct_after: Regex::new(r"(\P{N})(\p{P})").unwrap(),
        punct_before: Regex::new(r"(\p{P})(\P{N})").unwrap(),
        symbol: Regex::new(r"(\p{S})").unwrap(),
        spaces: Regex::new(r"\p{Z}+").unwrap(),
    })
}

struct StandardRules {
    punct: Regex,
    period_after: Regex,
    period_before: Regex,
    dash: Regex,
    spaces: Regex,
}

fn standard_rules() -> &'static StandardRules {
    static R: OnceLock<StandardRules> = OnceLock::new();
    R.get_or_init(|| StandardRules {
        punct: Regex::new(r"([{-~\[-` -&(-+:-@/])").unwrap(),
        period_after: Regex::new(r"([^0-9])([.,])").unwrap(),
        period_before: Regex::new(r"([.,])([^0-9])").unwrap(),
        dash: Regex::new(r"([0-9])(-)").unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
    })
}

fn unescape_entities(s: &str, apos: bool) -> String {
    let s = s
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">");
    if apos {
        s.replace("&apos;", "'")
    } else {
        s
    }
}

fn tokenize_international(text: &str) -> String {
    let r = international_rules();
    let t = text.replace("<skipped>", "");
    let t = r.hyphen_break.replace_all(&t, "");
    let t = r.line_sep.replace_all(&t, " ");
    let t = unescape_entities(&t, true);
    let t = r.punct_after.replace_all(&t, "$1 $2 ");
    let t = r.punct_before.replace_all(&t, " $1 $2");
    let t = r.symbol.replace_all(&t, " $1 ");
    let t = r.spaces.replace_all(&t, " ");
    t.trim_matches(|c: char| c == ' ').to_string()
}

fn tokenize_standard(text: &str) -> String {
    let r = standard_rules();
    let t = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    let t = unescape_entities(&t, false);
    let t = format!(" {t} ");
    let t = r.punct.replace_all(&t, " $1 ");
    let t = r.period_after.replace_all(&t, "$1 $2 ");
    let t = r.period_before.replace_all(&t, " $1 $2");
    let t = r.dash.replace_all(&t, "$1 $2 ");
    let t = r.spaces.replace_all(&t, " ");
    t.trim().to_string()
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::International => tokenize_international(text)
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            Tokenizer::Standard13a => tokenize_standard(text)
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Normalized text as the reference scorer would print it.
    pub fn normalize(self, text: &str) -> String {
        match self {
            Tokenizer::International => tokenize_international(text),
            Tokenizer::Standard13a => tokenize_standard(text),
            Tokenizer::Whitespace => text.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0–100.
    pub value: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Unsmoothed corpus BLEU-4: clipped n-gram counts summed over the corpus,
/// zero when any order has no match, brevity penalty
/// `min(1, exp(1 - ref_len/hyp_len))`.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenizer: Tokenizer,
) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::InsufficientData("BLEU needs at least one sentence".into()));
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenizer.tokenize(h.as_ref());
        let r = tokenizer.tokenize(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&r, n);
            let hyp_counts = ngram_counts(&h, n);
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
            matches[n - 1] += hyp_counts
                .iter()
                .map(|(g, &c)| c.min(*ref_counts.get(g).unwrap_or(&0)))
                .sum::<u64>();
        }
    }
    Ok(score_from_counts(matches, totals, hyp_len, ref_len))
}

pub(crate) fn score_from_counts(
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
) -> BleuScore {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let value = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    BleuScore {
        value,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_default() += 1;
        }
    }
    m
}
