//! Best-F1 and AUROC over abnormal scores.
//!
//! Scores are first oriented so that higher always means more anomalous:
//! errors are used as-is, probabilities are negated. A sample is predicted
//! abnormal iff its oriented score is `>=` the threshold.

use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::ingest::Label;
use crate::scorer::{ScoredUnit, SequenceScore, SCORES_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation needs at least one normal and one abnormal sample")]
    DegenerateLabels,
    #[error("record {0} has no label")]
    UnlabeledRecord(usize),
    #[error("malformed scores file at row {row}: {reason}")]
    MalformedScores { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Error,
    Prob,
}

impl ScoreKind {
    pub fn column(self) -> &'static str {
        match self {
            ScoreKind::Error => "abnormal_error",
            ScoreKind::Prob => "abnormal_prob",
        }
    }

    pub fn orient(self, score: &SequenceScore) -> f64 {
        match self {
            ScoreKind::Error => score.abnormal_error,
            ScoreKind::Prob => -score.abnormal_prob,
        }
    }
}

/// `(oriented score, is_abnormal)` pairs.
pub fn orient(units: &[ScoredUnit], kind: ScoreKind) -> Result<Vec<(f64, bool)>, EvalError> {
    units
        .iter()
        .enumerate()
        .map(|(i, u)| match u.label {
            Label::Unlabeled => Err(EvalError::UnlabeledRecord(i)),
            l => Ok((kind.orient(&u.score), l == Label::Abnormal)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn at(scored: &[(f64, bool)], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for &(s, abnormal) in scored {
            match (s >= threshold, abnormal) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, which equals the harmonic mean of precision
    /// and recall, and 0 when both are 0.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn f1_fraction(&self) -> (u128, u128) {
        (2 * self.tp as u128, (2 * self.tp + self.fp + self.fn_) as u128)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Result {
    pub f1: f64,
    /// In oriented units.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

fn class_counts(scored: &[(f64, bool)]) -> Result<(u64, u64), EvalError> {
    let pos = scored.iter().filter(|s| s.1).count() as u64;
    let neg = scored.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Distinct scores in descending order with their (abnormal, normal)
/// counts.
fn grouped_desc(scored: &[(f64, bool)]) -> Vec<(f64, u64, u64)> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    for (s, abnormal) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == s => {}
            _ => out.push((s, 0, 0)),
        }
        let last = out.last_mut().unwrap();
        if abnormal {
            last.1 += 1;
        } else {
            last.2 += 1;
        }
    }
    out
}

/// Threshold strictly between `lo < hi` that separates them under `>=`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m > lo && m <= hi {
        m
    } else {
        hi
    }
}

/// Candidate thresholds in descending order: `+inf`, the midpoints between
/// adjacent distinct scores, `-inf`.
pub fn candidate_thresholds(scored: &[(f64, bool)]) -> Vec<f64> {
    let groups = grouped_desc(scored);
    let mut out = vec![f64::INFINITY];
    for w in groups.windows(2) {
        out.push(midpoint(w[1].0, w[0].0));
    }
    out.push(f64::NEG_INFINITY);
    out
}

/// Maximum F1 over all candidate thresholds; among ties, the smallest
/// threshold.
pub fn best_f1(scored: &[(f64, bool)]) -> Result<F1Result, EvalError> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let groups = grouped_desc(scored);
    let thresholds = candidate_thresholds(scored);

    let mut c = Confusion { tp: 0, fp: 0, tn: n_neg, fn_: n_pos };
    let mut best = (c, thresholds[0]);
    // thresholds[i + 1] admits every score group up to and including i
    for (i, &(_, pos, neg)) in groups.iter().enumerate() {
        c.tp += pos;
        c.fn_ -= pos;
        c.fp += neg;
        c.tn -= neg;
        let (a, b) = c.f1_fraction();
        let (x, y) = best.0.f1_fraction();
        // denominators include TP + FN = n_pos > 0
        if a * y >= x * b {
            best = (c, thresholds[i + 1]);
        }
    }
    let (conf, threshold) = best;
    Ok(F1Result {
        f1: conf.f1(),
        threshold,
        precision: conf.precision(),
        recall: conf.recall(),
        confusion: conf,
    })
}

/// Mann-Whitney AUROC via average ranks; ties between a normal and an
/// abnormal sample count one half.
pub fn auroc(scored: &[(f64, bool)]) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let mut groups = grouped_desc(scored);
    groups.reverse();
    let mut rank_sum = 0.0;
    let mut seen = 0u64;
    for (_, pos, neg) in groups {
        let size = pos + neg;
        // ranks seen+1 ..= seen+size, averaged
        let avg_rank = seen as f64 + (size as f64 + 1.0) / 2.0;
        rank_sum += avg_rank * pos as f64;
        seen += size;
    }
    let u = rank_sum - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per candidate threshold, from (0, 0) to (1, 1).
pub fn roc_curve(scored: &[(f64, bool)]) -> Result<Vec<RocPoint>, EvalError> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let groups = grouped_desc(scored);
    let thresholds = candidate_thresholds(scored);
    let mut out = vec![RocPoint { threshold: thresholds[0], fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(_, pos, neg)) in groups.iter().enumerate() {
        tp += pos;
        fp += neg;
        out.push(RocPoint {
            threshold: thresholds[i + 1],
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub best_f1: f64,
    /// In the score's own units; see `rule`.
    pub best_threshold: f64,
    pub rule: String,
    pub precision: f64,
    pub recall: f64,
    pub auroc: f64,
    pub confusion: Confusion,
    pub n_pos: u64,
    pub n_neg: u64,
}

pub fn evaluate_kind(units: &[ScoredUnit], kind: ScoreKind) -> Result<EvalResult, EvalError> {
    let scored = orient(units, kind)?;
    let (n_pos, n_neg) = class_counts(&scored)?;
    let f1 = best_f1(&scored)?;
    let (best_threshold, rule) = match kind {
        ScoreKind::Error => (f1.threshold, "abnormal if abnormal_error >= best_threshold"),
        ScoreKind::Prob => (-f1.threshold, "abnormal if abnormal_prob <= best_threshold"),
    };
    Ok(EvalResult {
        best_f1: f1.f1,
        best_threshold,
        rule: rule.to_string(),
        precision: f1.precision,
        recall: f1.recall,
        auroc: auroc(&scored)?,
        confusion: f1.confusion,
        n_pos,
        n_neg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub abnormal_error: EvalResult,
    pub abnormal_prob: EvalResult,
}

impl EvalReport {
    pub fn from_units(units: &[ScoredUnit]) -> Result<Self, EvalError> {
        Ok(Self {
            abnormal_error: evaluate_kind(units, ScoreKind::Error)?,
            abnormal_prob: evaluate_kind(units, ScoreKind::Prob)?,
        })
    }

    pub fn get(&self, kind: ScoreKind) -> &EvalResult {
        match kind {
            ScoreKind::Error => &self.abnormal_error,
            ScoreKind::Prob => &self.abnormal_prob,
        }
    }

    /// TOML rendering, one table per score.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// Parses a scores CSV written by [`crate::scorer::write_scores_csv`].
pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoredUnit>, EvalError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SCORES_HEADER {
        return Err(EvalError::MalformedScores { row: 1, reason: format!("unexpected header {header:?}") });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |reason: &str| EvalError::MalformedScores { row, reason: reason.to_string() };
        let group = rec[1].to_string();
        out.push(ScoredUnit {
            key_hash: rec[0].to_string(),
            group_id: (!group.is_empty()).then_some(group),
            label: rec[2].parse().map_err(|_| bad("bad label"))?,
            score: SequenceScore {
                s_len: rec[3].parse().map_err(|_| bad("bad s_len"))?,
                abnormal_error: rec[4].parse().map_err(|_| bad("bad abnormal_error"))?,
                abnormal_prob: rec[5].parse().map_err(|_| bad("bad abnormal_prob"))?,
                key: String::new(),
            },
        });
    }
    Ok(out)
}

pub fn write_roc_csv<W: Write>(writer: W, points: &[RocPoint]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
