//! Parser-free log anomaly detection with a masked-language-model
//! transformer.
//!
//! The pipeline normalizes raw log lines with regular expressions
//! ([`ingest`]), trains a WordPiece vocabulary ([`tokenizer`]) and a small
//! transformer encoder ([`model`], [`trainer`]) on normal logs only, then
//! scores each test line by masking every position in turn ([`scorer`]),
//! memoizing scores for duplicate lines ([`cache`]). [`eval`] reports best
//! F1 and AUROC; [`synthgen`] produces a deterministic synthetic benchmark.

pub mod cache;
pub mod cli;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod scorer;
pub mod synthgen;
pub mod tokenizer;
pub mod trainer;
