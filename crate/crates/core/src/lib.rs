//! Desk-scale toolkit for studying massively multilingual neural machine
//! translation.
//!
//! The crate covers the full loop of a multilingual experiment:
//!
//! * [`corpus`]: parallel corpus ingestion, a language registry, synthetic
//!   cipher languages and multi-way aligned dev/test splits.
//! * [`sampler`]: temperature-based sampling over language pairs, mixed
//!   example streams with target-language tags and token-budget batching.
//! * [`subword`]: a shared unigram subword vocabulary learned with
//!   language-temperature sampling, lossless segmentation and
//!   sequence-length analytics.
//! * [`model`]: a small transformer encoder-decoder with hand-written
//!   backpropagation and optional transparent attention.
//! * [`trainer`]: inverse-square-root learning-rate schedule, Adam,
//!   gradient clipping, checkpoints and checkpoint selection.
//! * [`eval`]: corpus BLEU with mteval-v13a tokenization, per-pair
//!   evaluation, resource-group reports and zero-shot evaluation.
//! * [`experiment`]: config-driven end-to-end runs producing JSON reports.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod sampler;
pub mod subword;
pub mod trainer;

pub use error::{Error, Result};
