//! Parallel corpora, the language registry, synthetic cipher languages and
//! multi-way aligned evaluation splits.

mod cipher;
mod languages;
mod manifest;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cipher::{Cipher, CipherKind, CipherSet, CipherSpec};
pub use manifest::{load_manifest, ManifestEntry, RegistryManifest};
pub(crate) use synth::fnv1a;
pub use synth::{
    generate_base_corpus, generate_synthetic, sizes_from_exponents, split_multiway, BaseCorpusSpec, MultiwaySet,
    SplitRole, SyntheticSplit,
};

/// Code of the hub language every synthetic language is paired with.
pub const HUB_LANGUAGE: &str = "en";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageInfo {
    pub code: String,
    pub name: String,
    pub synthetic: bool,
}

/// Known language codes: the built-in table plus any registered synthetic
/// codes.
#[derive(Debug, Clone)]
pub struct LanguageRegistry {
    languages: BTreeMap<String, LanguageInfo>,
}

impl Default for LanguageRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LanguageRegistry {
    pub fn builtin() -> Self {
        let languages = languages::BUILTIN_LANGUAGES
            .iter()
            .map(|&(code, name)| {
                (
                    code.to_string(),
                    LanguageInfo {
                        code: code.to_string(),
                        name: name.to_string(),
                        synthetic: false,
                    },
                )
            })
            .collect();
        Self { languages }
    }

    /// Number of built-in (non-synthetic) languages.
    pub fn builtin_count() -> usize {
        languages::BUILTIN_LANGUAGES.len()
    }

    /// Registers a synthetic language code. Codes are lowercase ASCII
    /// alphanumerics so that pair ids `src-tgt` stay unambiguous.
    pub fn register_synthetic(&mut self, code: &str) -> Result<()> {
        validate_code(code)?;
        if let Some(existing) = self.languages.get(code) {
            if existing.synthetic {
                return Ok(());
            }
            return Err(Error::Domain(format!(
                "synthetic code `{code}` collides with built-in language {}",
                existing.name
            )));
        }
        self.languages.insert(
            code.to_string(),
            LanguageInfo {
                code: code.to_string(),
                name: format!("synthetic-{code}"),
                synthetic: true,
            },
        );
        Ok(())
    }

    pub fn contains(&self, code: &str) -> bool {
        self.languages.contains_key(code)
    }

    pub fn get(&self, code: &str) -> Option<&LanguageInfo> {
        self.languages.get(code)
    }

    pub fn require(&self, code: &str) -> Result<&LanguageInfo> {
        self.get(code).ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }
}

fn validate_code(code: &str) -> Result<()> {
    let ok = !code.is_empty() && code.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "language code `{code}` must be non-empty lowercase ASCII alphanumerics"
        )))
    }
}

/// An ordered translation direction. Serialized as its id `src-tgt`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguagePair {
    source: String,
    target: String,
}

impl LanguagePair {
    /// Builds a pair after checking both codes against the registry.
    pub fn new(source: &str, target: &str, registry: &LanguageRegistry) -> Result<Self> {
        registry.require(source)?;
        registry.require(target)?;
        Self::unchecked(source, target)
    }

    pub(crate) fn unchecked(source: &str, target: &str) -> Result<Self> {
        validate_code(source)?;
        validate_code(target)?;
        if source == target {
            return Err(Error::InvalidPair(format!("source and target are both `{source}`")));
        }
        Ok(Self {
            source: source.to_string(),
            target: target.to_string(),
        })
    }

    /// Parses a `src-tgt` id, validating codes against the registry.
    pub fn parse(id: &str, registry: &LanguageRegistry) -> Result<Self> {
        let pair = Self::try_from(id.to_string())?;
        registry.require(&pair.source)?;
        registry.require(&pair.target)?;
        Ok(pair)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.source, self.target)
    }

    pub fn reversed(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
        }
    }
}

impl fmt::Display for LanguagePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

impl TryFrom<String> for LanguagePair {
    type Error = Error;

    fn try_from(id: String) -> Result<Self> {
        let (source, target) = id
            .split_once('-')
            .ok_or_else(|| Error::InvalidPair(format!("`{id}` is not of the form src-tgt")))?;
        Self::unchecked(source, target)
    }
}

impl From<LanguagePair> for String {
    fn from(pair: LanguagePair) -> String {
        pair.id()
    }
}

/// Parallel sentences for a single translation direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCorpus {
    pub pair: LanguagePair,
    examples: Vec<(String, String)>,
    /// Lines dropped at ingestion because one side was empty.
    pub dropped: usize,
}

impl PairCorpus {
    /// Wraps already-clean examples. Fails if any side is blank.
    pub fn from_examples(pair: LanguagePair, examples: Vec<(String, String)>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus(pair.id()));
        }
        if let Some(i) = examples
            .iter()
            .position(|(s, t)| s.trim().is_empty() || t.trim().is_empty())
        {
            return Err(Error::format(
                "corpus",
                format!("example {i} of {} has an empty side", pair.id()),
            ));
        }
        Ok(Self {
            pair,
            examples,
            dropped: 0,
        })
    }

    /// D_l: the number of sentence pairs.
    pub fn size(&self) -> usize {
        self.examples.len()
    }

    pub fn examples(&self) -> &[(String, String)] {
        &self.examples
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|(s, _)| s.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|(_, t)| t.as_str())
    }
}

/// Ingests two aligned line streams. Lines are trimmed; pairs with an empty
/// side are dropped and counted.
pub fn register_corpus<S, T>(
    pair: LanguagePair,
    source_lines: impl IntoIterator<Item = S>,
    target_lines: impl IntoIterator<Item = T>,
) -> Result<PairCorpus>
where
    S: AsRef<str>,
    T: AsRef<str>,
{
    let sources: Vec<S> = source_lines.into_iter().collect();
    let targets: Vec<T> = target_lines.into_iter().collect();
    if sources.len() != targets.len() {
        return Err(Error::LineCountMismatch {
            source_lines: sources.len(),
            target_lines: targets.len(),
        });
    }
    let mut examples = Vec::with_capacity(sources.len());
    let mut dropped = 0;
    for (s, t) in sources.iter().zip(&targets) {
        let (s, t) = (s.as_ref().trim(), t.as_ref().trim());
        if s.is_empty() || t.is_empty() {
            dropped += 1;
        } else {
            examples.push((s.to_string(), t.to_string()));
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus(pair.id()));
    }
    Ok(PairCorpus {
        pair,
        examples,
        dropped,
    })
}

/// Reads a corpus from two line-aligned UTF-8 files.
pub fn read_parallel_files(pair: LanguagePair, source: &Path, target: &Path) -> Result<PairCorpus> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    register_corpus(pair, src, tgt)
}

/// Reads a corpus from a two-column TSV file (source, target).
pub fn read_tsv(pair: LanguagePair, path: &Path) -> Result<PairCorpus> {
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        let (s, t) = line.split_once('\t').ok_or_else(|| {
            Error::format(
                "tsv",
                format!("{}:{}: expected two tab-separated columns", path.display(), i + 1),
            )
        })?;
        src.push(s.to_string());
        tgt.push(t.to_string());
    }
    register_corpus(pair, src, tgt)
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Fractions of pairs assigned to the High, Med and Low resource groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFractions {
    pub high: f64,
    pub med: f64,
    pub low: f64,
}

impl Default for GroupFractions {
    /// 25 / 52 / 25 out of 102 pairs per side.
    fn default() -> Self {
        Self {
            high: 25.0 / 102.0,
            med: 52.0 / 102.0,
            low: 25.0 / 102.0,
        }
    }
}

impl GroupFractions {
    pub fn new(high: f64, med: f64, low: f64) -> Result<Self> {
        let f = Self { high, med, low };
        f.validate()?;
        Ok(f)
    }

    pub fn thirds() -> Self {
        Self {
            high: 1.0 / 3.0,
            med: 1.0 / 3.0,
            low: 1.0 / 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.high, self.med, self.low];
        if all.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Domain(format!("invalid group fractions {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("group fractions {all:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Group sizes for `n` pairs: rounded High and Low cuts, Med takes the rest.
    pub fn cuts(&self, n: usize) -> (usize, usize, usize) {
        let high = ((self.high * n as f64).round() as usize).min(n);
        let low = ((self.low * n as f64).round() as usize).min(n - high);
        (high, n - high - low, low)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceGroup {
    High,
    Med,
    Low,
}

impl ResourceGroup {
    pub const ALL: [ResourceGroup; 3] = [ResourceGroup::High, ResourceGroup::Med, ResourceGroup::Low];

    pub fn name(self) -> &'static str {
        match self {
            ResourceGroup::High => "High",
            ResourceGroup::Med => "Med",
            ResourceGroup::Low => "Low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Groups {
    pub high: Vec<String>,
    pub med: Vec<String>,
    pub low: Vec<String>,
}

impl Groups {
    pub fn members(&self, group: ResourceGroup) -> &[String] {
        match group {
            ResourceGroup::High => &self.high,
            ResourceGroup::Med => &self.med,
            ResourceGroup::Low => &self.low,
        }
    }
}

/// Per-pair sizes and their partition into resource groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_pairs: usize,
    pub sizes: BTreeMap<String, u64>,
    pub groups: Groups,
}

impl DatasetStats {
    pub fn from_sizes<I, K>(sizes: I, fractions: GroupFractions) -> Result<Self>
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<String>,
    {
        fractions.validate()?;
        let sizes: BTreeMap<String, u64> = sizes.into_iter().map(|(k, v)| (k.into(), v)).collect();
        if sizes.is_empty() {
            return Err(Error::InsufficientData(
                "dataset statistics need at least one corpus".into(),
            ));
        }
        // BTreeMap iteration is lexicographic, so a stable sort on size
        // leaves ties in pair-id order.
        let mut order: Vec<(&String, u64)> = sizes.iter().map(|(k, &v)| (k, v)).collect();
        order.sort_by_key(|a| std::cmp::Reverse(a.1));
        let (n_high, n_med, _) = fractions.cuts(order.len());
        let ids: Vec<String> = order.into_iter().map(|(k, _)| k.clone()).collect();
        let groups = Groups {
            high: ids[..n_high].to_vec(),
            med: ids[n_high..n_high + n_med].to_vec(),
            low: ids[n_high + n_med..].to_vec(),
        };
        Ok(Self {
            num_pairs: sizes.len(),
            sizes,
            groups,
        })
    }

    pub fn group_of(&self, pair_id: &str) -> Option<ResourceGroup> {
        ResourceGroup::ALL
            .into_iter()
            .find(|&g| self.groups.members(g).iter().any(|p| p == pair_id))
    }

    /// Pair ids by descending size (ties by id).
    pub fn ordered_pairs(&self) -> Vec<String> {
        let g = &self.groups;
        g.high.iter().chain(&g.med).chain(&g.low).cloned().collect()
    }
}

pub fn compute_stats(corpora: &[PairCorpus], fractions: GroupFractions) -> Result<DatasetStats> {
    DatasetStats::from_sizes(corpora.iter().map(|c| (c.pair.id(), c.size() as u64)), fractions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: &str, t: &str) -> LanguagePair {
        LanguagePair::new(s, t, &LanguageRegistry::builtin()).unwrap()
    }

    #[test]
    fn registry_holds_table_codes_and_english() {
        let reg = LanguageRegistry::builtin();
        assert_eq!(reg.len(), 102);
        for code in ["en", "be", "ru", "yi", "de", "ceb", "haw", "hmn", "iw", "jw"] {
            assert!(reg.contains(code), "{code}");
        }
        assert!(!reg.contains("qq"));
    }

    #[test]
    fn synthetic_codes_cannot_shadow_builtins() {
        let mut reg = LanguageRegistry::builtin();
        assert!(reg.register_synthetic("fr").is_err());
        assert!(reg.register_synthetic("Bad").is_err());
        reg.register_synthetic("xa").unwrap();
        reg.register_synthetic("xa").unwrap();
        assert!(reg.get("xa").unwrap().synthetic);
    }

    #[test]
    fn pair_ids_round_trip() {
        let p = pair("en", "fr");
        assert_eq!(p.id(), "en-fr");
        assert_eq!(p.reversed().id(), "fr-en");
        let reg = LanguageRegistry::builtin();
        assert_eq!(LanguagePair::parse("en-fr", &reg).unwrap(), p);
        assert!(LanguagePair::parse("en-en", &reg).is_err());
        assert!(LanguagePair::parse("en-qq", &reg).is_err());
        assert!(LanguagePair::parse("enfr", &reg).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"en-fr\"");
    }

    #[test]
    fn register_counts_aligned_lines() {
        let c = register_corpus(pair("en", "fr"), ["a", "b", "c"], ["x", "y", "z"]).unwrap();
        assert_eq!(c.size(), 3);
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn register_drops_empty_sides() {
        let c = register_corpus(pair("en", "fr"), [" a ", "b", "c"], ["x", "  ", "z"]).unwrap();
        assert_eq!(c.size(), 2);
        assert_eq!(c.dropped, 1);
        assert_eq!(c.examples()[0], ("a".to_string(), "x".to_string()));
    }

    #[test]
    fn register_rejects_mismatched_streams() {
        let err = register_corpus(pair("en", "fr"), ["1", "2", "3", "4", "5"], ["1", "2", "3", "4"]).unwrap_err();
        match err {
            Error::LineCountMismatch {
                source_lines,
                target_lines,
            } => assert_eq!((source_lines, target_lines), (5, 4)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn register_rejects_all_empty() {
        let err = register_corpus(pair("en", "fr"), ["", " "], ["x", "y"]).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus(_)));
    }

    #[test]
    fn symmetric_cut_groups() {
        let stats =
            DatasetStats::from_sizes([("a-en", 100u64), ("b-en", 10), ("c-en", 1)], GroupFractions::thirds()).unwrap();
        assert_eq!(stats.groups.high, vec!["a-en"]);
        assert_eq!(stats.groups.med, vec!["b-en"]);
        assert_eq!(stats.groups.low, vec!["c-en"]);
    }

    #[test]
    fn default_fractions_give_25_52_25_per_side() {
        let reg = LanguageRegistry::builtin();
        let others: Vec<&str> = reg.codes().filter(|c| *c != "en").collect();
        assert_eq!(others.len(), 101);
        // 102 pairs per side as in the full-scale setting; one extra synthetic.
        let mut sizes: Vec<(String, u64)> = others
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("en-{c}"), 35_000 + i as u64 * 1_000_000))
            .collect();
        sizes.push(("en-zz".into(), 2_000_000_000));
        let stats = DatasetStats::from_sizes(sizes, GroupFractions::default()).unwrap();
        assert_eq!(stats.num_pairs, 102);
        assert_eq!(
            (stats.groups.high.len(), stats.groups.med.len(), stats.groups.low.len()),
            (25, 52, 25)
        );
        assert_eq!(stats.groups.high[0], "en-zz");
        assert_eq!(stats.sizes["en-zz"], 2_000_000_000);
    }

    #[test]
    fn ties_break_by_pair_id() {
        let stats =
            DatasetStats::from_sizes([("b-en", 5u64), ("a-en", 5), ("c-en", 5)], GroupFractions::thirds()).unwrap();
        assert_eq!(stats.ordered_pairs(), vec!["a-en", "b-en", "c-en"]);
    }

    #[test]
    fn empty_stats_is_an_error() {
        let none: Vec<(String, u64)> = Vec::new();
        assert!(DatasetStats::from_sizes(none, GroupFractions::default()).is_err());
        assert!(GroupFractions::new(0.5, 0.5, 0.5).is_err());
    }
}
