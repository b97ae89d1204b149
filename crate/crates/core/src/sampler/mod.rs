//! Temperature-based sampling over language pairs.
//!
//! With `D_l` sentence pairs available for pair `l`, the data distribution is
//! `p_l = D_l / sum_k D_k`; sampling at temperature `T` draws pair `l` with
//! probability proportional to `p_l^(1/T)`. `T = 1` reproduces the data
//! distribution and large `T` approaches uniform sampling, which
//! over-samples low-resource pairs.

mod batch;
mod stream;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageRegistry;
use crate::error::{Error, Result};

pub use batch::{make_batches, Batch, Batches, PairKeyed};
pub use stream::{EncodedCorpus, EncodedExample, EncodedStream, MixedStream, PairSampler, TaggedExample};

/// A temperature and the per-pair sampling distribution it induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub temperature: f64,
    pub probabilities: BTreeMap<String, f64>,
}

impl SamplingPolicy {
    pub fn probability(&self, pair_id: &str) -> Option<f64> {
        self.probabilities.get(pair_id).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let policy: Self = serde_json::from_str(text)?;
        let total: f64 = policy.probabilities.values().sum();
        if !(policy.temperature > 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::format(
                "sampling policy",
                format!("temperature {} / total mass {total}", policy.temperature),
            ));
        }
        Ok(policy)
    }
}

/// `p_l(T) = (D_l/ΣD)^(1/T) / Σ_k (D_k/ΣD)^(1/T)`, evaluated in log space.
/// Pairs with `D_l = 0` get probability zero.
pub fn compute_probabilities<K: AsRef<str>>(
    sizes: impl IntoIterator<Item = (K, u64)>,
    temperature: f64,
) -> Result<SamplingPolicy> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "sampling temperature must be positive and finite, got {temperature}"
        )));
    }
    let sizes: BTreeMap<String, u64> = sizes.into_iter().map(|(k, v)| (k.as_ref().to_string(), v)).collect();
    let total: f64 = sizes.values().map(|&d| d as f64).sum();
    if total <= 0.0 {
        return Err(Error::Domain("all pair sizes are zero".into()));
    }
    let inv_t = 1.0 / temperature;
    let log_total = total.ln();
    let logits: BTreeMap<&String, Option<f64>> = sizes
        .iter()
        .map(|(k, &d)| (k, (d > 0).then(|| ((d as f64).ln() - log_total) * inv_t)))
        .collect();
    // Shift by the max before exponentiating; the shift cancels on
    // normalization and keeps the terms away from underflow at small T.
    let max = logits.values().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let weights: BTreeMap<String, f64> = logits
        .into_iter()
        .map(|(k, l)| (k.clone(), l.map_or(0.0, |l| (l - max).exp())))
        .collect();
    let norm: f64 = weights.values().sum();
    Ok(SamplingPolicy {
        temperature,
        probabilities: weights.into_iter().map(|(k, w)| (k, w / norm)).collect(),
    })
}

/// Surface form of the target-language tag token for `code`.
pub fn language_tag(code: &str) -> String {
    format!("<2{code}>")
}

/// Returns `"<2" + code + "> " + source`. Callers must not tag twice.
pub fn prepend_language_tag(source: &str, target_code: &str, registry: &LanguageRegistry) -> Result<String> {
    registry.require(target_code)?;
    Ok(format!("{} {source}", language_tag(target_code)))
}

/// If `text` starts with a tag token, returns the tag's language code.
pub fn leading_tag(text: &str) -> Option<&str> {
    let rest = text.strip_prefix("<2")?;
    let end = rest.find('>')?;
    let code = &rest[..end];
    (!code.is_empty() && code.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())).then_some(code)
}
