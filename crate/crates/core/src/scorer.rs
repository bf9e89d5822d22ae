//! Test-time anomaly scoring.
//!
//! Each content position of a sequence is masked in turn. At the masked
//! position the model yields a prediction error (cross-entropy of the true
//! token) and a predictive probability (the largest probability in the
//! distribution). The `k` largest errors and the `k` smallest probabilities
//! are averaged into the two sequence-level abnormal scores.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{CacheError, ScoreCache};
use crate::ingest::{Label, LogRecord};
use crate::model::{forward_ids, Checkpoint, CheckpointError, ForwardMode, ModelConfig, ModelError, ModelParameters};
use crate::tokenizer::{encode, fingerprint, word_spans, TokenSequence, Vocab, MASK};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("sequence was encoded with a different vocabulary")]
    VocabMismatch,
    #[error("cannot aggregate an empty list of values")]
    EmptyValues,
    #[error("cannot aggregate an empty group")]
    EmptyGroup,
    #[error("sequence has no content tokens")]
    EmptySequence,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Granularity of test-time masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// One WordPiece token at a time.
    #[default]
    Token,
    /// All pieces of one whitespace word at once, scored at its first piece.
    Key,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Token => "token",
            MaskMode::Key => "key",
        })
    }
}

impl std::str::FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(MaskMode::Token),
            "key" => Ok(MaskMode::Key),
            other => Err(format!("unknown mask mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionScore {
    pub position: usize,
    /// `-ln p(true token)`
    pub error: f64,
    /// Largest probability in the predicted distribution.
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub abnormal_error: f64,
    pub abnormal_prob: f64,
    pub s_len: usize,
    pub key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Largest,
    Smallest,
}

/// Mean of the `k` most extreme values in `direction`; the mean of all
/// values when there are fewer than `k`.
pub fn top_k_mean(values: &[f64], k: usize, direction: Direction) -> Result<f64, ScoreError> {
    if values.is_empty() {
        return Err(ScoreError::EmptyValues);
    }
    if k == 0 {
        return Err(ScoreError::InvalidK);
    }
    let mut sorted = values.to_vec();
    match direction {
        Direction::Largest => sorted.sort_by(|a, b| b.total_cmp(a)),
        Direction::Smallest => sorted.sort_by(|a, b| a.total_cmp(b)),
    }
    let take = k.min(sorted.len());
    Ok(sorted[..take].iter().sum::<f64>() / take as f64)
}

/// Combines per-position scores into the two sequence-level scores.
pub fn aggregate_positions(positions: &[PositionScore], k: usize, s_len: usize, key: &str) -> Result<SequenceScore, ScoreError> {
    let errors: Vec<f64> = positions.iter().map(|p| p.error).collect();
    let probs: Vec<f64> = positions.iter().map(|p| p.prob).collect();
    Ok(SequenceScore {
        abnormal_error: top_k_mean(&errors, k, Direction::Largest)?,
        abnormal_prob: top_k_mean(&probs, k, Direction::Smallest)?,
        s_len,
        key: key.to_string(),
    })
}

/// Block-level score: largest member error, smallest member probability.
pub fn aggregate_group(scores: &[SequenceScore], group_key: &str) -> Result<SequenceScore, ScoreError> {
    let first = scores.first().ok_or(ScoreError::EmptyGroup)?;
    let mut out = SequenceScore {
        abnormal_error: first.abnormal_error,
        abnormal_prob: first.abnormal_prob,
        s_len: 0,
        key: group_key.to_string(),
    };
    for s in scores {
        out.abnormal_error = out.abnormal_error.max(s.abnormal_error);
        out.abnormal_prob = out.abnormal_prob.min(s.abnormal_prob);
        out.s_len += s.s_len;
    }
    Ok(out)
}

/// What a cache must agree on to reuse scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringBinding {
    pub checkpoint_hash: [u8; 32],
    pub k: usize,
    pub mask_mode: MaskMode,
}

/// A checkpoint, its vocabulary and the scoring parameters.
pub struct ScoringContext {
    pub params: ModelParameters,
    pub config: ModelConfig,
    pub vocab: Vocab,
    binding: ScoringBinding,
    vocab_fingerprint: u64,
    forward_passes: AtomicU64,
}

impl ScoringContext {
    pub fn new(checkpoint: Checkpoint, vocab: Vocab, k: usize, mask_mode: MaskMode) -> Result<Self, ScoreError> {
        if k == 0 {
            return Err(ScoreError::InvalidK);
        }
        checkpoint.check_vocab(&vocab)?;
        let binding = ScoringBinding {
            checkpoint_hash: checkpoint.hash(),
            k,
            mask_mode,
        };
        Ok(Self {
            params: checkpoint.params,
            config: checkpoint.config,
            vocab_fingerprint: fingerprint(&vocab),
            vocab,
            binding,
            forward_passes: AtomicU64::new(0),
        })
    }

    pub fn binding(&self) -> ScoringBinding {
        self.binding
    }

    pub fn k(&self) -> usize {
        self.binding.k
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.binding.mask_mode
    }

    /// Total model evaluations performed so far.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    /// Encodes normalized text with this context's vocabulary.
    pub fn encode(&self, text: &str) -> (TokenSequence, bool) {
        let enc = encode(text, &self.vocab, self.config.max_seq_len);
        (enc.sequence, enc.truncated)
    }

    /// Builds the masked variants: (input ids, scored position, true id).
    fn variants(&self, seq: &TokenSequence) -> Result<Vec<(Vec<u32>, usize, u32)>, ScoreError> {
        if seq.vocab_fingerprint != self.vocab_fingerprint {
            return Err(ScoreError::VocabMismatch);
        }
        if seq.s_len == 0 {
            return Err(ScoreError::EmptySequence);
        }
        let spans: Vec<std::ops::Range<usize>> = match self.binding.mask_mode {
            MaskMode::Token => seq.content_positions().map(|p| p..p + 1).collect(),
            MaskMode::Key => word_spans(seq, &self.vocab),
        };
        Ok(spans
            .into_iter()
            .map(|span| {
                let mut ids = seq.ids.clone();
                for p in span.clone() {
                    ids[p] = MASK;
                }
                (ids, span.start, seq.ids[span.start])
            })
            .collect())
    }

    fn score_variant(&self, ids: &[u32], position: usize, truth: u32) -> Result<PositionScore, ScoreError> {
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        let out = forward_ids(&self.params, &self.config, ids, &vec![true; ids.len()], ForwardMode::Eval)?;
        let row = out.logits.row(position);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let prob = (max - lse).exp();
        // exp/ln round trips can lose an ulp when the true token is the argmax
        let error = (lse - row[truth as usize]).max(-prob.ln());
        Ok(PositionScore { position, error, prob })
    }

    /// Scores every masked variant, evaluating them in parallel.
    pub fn score_positions(&self, seq: &TokenSequence) -> Result<Vec<PositionScore>, ScoreError> {
        self.variants(seq)?
            .par_iter()
            .map(|(ids, pos, truth)| self.score_variant(ids, *pos, *truth))
            .collect()
    }

    /// Same as [`Self::score_positions`], one variant at a time.
    pub fn score_positions_sequential(&self, seq: &TokenSequence) -> Result<Vec<PositionScore>, ScoreError> {
        self.variants(seq)?
            .iter()
            .map(|(ids, pos, truth)| self.score_variant(ids, *pos, *truth))
            .collect()
    }

    pub fn score_sequence(&self, seq: &TokenSequence, key: &str) -> Result<SequenceScore, ScoreError> {
        let positions = self.score_positions(seq)?;
        aggregate_positions(&positions, self.binding.k, seq.s_len, key)
    }

    /// Encodes and scores one normalized line. The flag reports truncation.
    pub fn score_text(&self, text: &str) -> Result<(SequenceScore, bool), ScoreError> {
        let (seq, truncated) = self.encode(text);
        Ok((self.score_sequence(&seq, text)?, truncated))
    }
}

/// One row of the score output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUnit {
    pub key_hash: String,
    pub group_id: Option<String>,
    pub label: Label,
    pub score: SequenceScore,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreRun {
    pub units: Vec<ScoredUnit>,
    pub truncated: usize,
    pub skipped_empty: usize,
}

/// First 16 hex digits of SHA-256 of the key.
pub fn key_hash(key: &str) -> String {
    let digest = Sha256::digest(key.as_bytes());
    hex::encode(&digest[..8])
}

/// Scores records in order, through `cache` when given. Records carrying a
/// group id are reduced to one unit per group (in order of first
/// appearance); a group is abnormal if any member is.
pub fn score_records(ctx: &ScoringContext, cache: Option<&ScoreCache>, records: &[LogRecord]) -> Result<ScoreRun, ScoreError> {
    let mut run = ScoreRun::default();
    let mut per_record = Vec::with_capacity(records.len());
    for r in records {
        if r.normalized.trim().is_empty() {
            run.skipped_empty += 1;
            continue;
        }
        let (_, truncated) = ctx.encode(&r.normalized);
        run.truncated += usize::from(truncated);
        let score = match cache {
            Some(c) => c.get_or_score(&r.normalized, ctx)?,
            None => ctx.score_text(&r.normalized)?.0,
        };
        per_record.push((r, score));
    }

    let grouped = per_record.iter().any(|(r, _)| r.group_id.is_some());
    if !grouped {
        run.units = per_record
            .into_iter()
            .map(|(r, score)| ScoredUnit {
                key_hash: key_hash(&score.key),
                group_id: None,
                label: r.label,
                score,
            })
            .collect();
        return Ok(run);
    }

    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Label, Vec<SequenceScore>)> = HashMap::new();
    for (r, score) in &per_record {
        let gid = r.group_id.as_deref().unwrap_or("");
        let entry = groups.entry(gid).or_insert_with(|| {
            order.push(gid);
            (r.label, Vec::new())
        });
        if r.label == Label::Abnormal {
            entry.0 = Label::Abnormal;
        }
        entry.1.push(score.clone());
    }
    for gid in order {
        let (label, members) = &groups[gid];
        let score = aggregate_group(members, gid)?;
        run.units.push(ScoredUnit {
            key_hash: key_hash(gid),
            group_id: Some(gid.to_string()),
            label: *label,
            score,
        });
    }
    Ok(run)
}

pub const SCORES_HEADER: [&str; 6] = ["key_hash", "group_id", "label", "s_len", "abnormal_error", "abnormal_prob"];

pub fn write_scores_csv<W: Write>(writer: W, units: &[ScoredUnit]) -> Result<(), ScoreError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORES_HEADER)?;
    for u in units {
        w.write_record([
            u.key_hash.clone(),
            u.group_id.clone().unwrap_or_default(),
            u.label.to_string(),
            u.score.s_len.to_string(),
            u.score.abnormal_error.to_string(),
            u.score.abnormal_prob.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
