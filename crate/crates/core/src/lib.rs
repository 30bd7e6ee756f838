//! Corpus construction toolkit: turns METS/ALTO OCR output and born-digital
//! text into a filtered, cleaned and deduplicated paragraph corpus, profiles
//! its language mix, and exports masked-language-model pre-training examples.
//!
//! Stages, in pipeline order:
//!
//! * [`ingest`]: ALTO / METS / plain text into [`ingest::OcrDocument`]
//! * [`filter`]: confidence, word-count and digitization-period rules
//! * [`clean`]: NFC, control-character removal, quote/dash canonicalization
//! * [`dedup`]: exact paragraph deduplication, in memory or sharded on disk
//! * [`lang`]: marker-word language composition
//! * [`export`]: WordPiece tokenization, example packing and MLM masking
//!
//! [`schedule`] and [`metrics`] hold the pre-training schedule planner and
//! the sequence-labelling / classification scorers. [`pipeline`] ties the
//! stages together with checkpointing.

// `!(x >= y)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clean;
pub mod config;
pub mod dedup;
pub mod export;
pub mod filter;
pub mod ingest;
pub mod lang;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub(crate) mod util;
