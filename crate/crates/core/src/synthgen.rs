//! Deterministic synthetic log benchmark.
//!
//! Normal lines are drawn from a small template grammar. Test lines can be
//! corrupted at the token level (an unseen word), the slot level (a filler
//! from the wrong slot) or the order level (two adjacent literals swapped).
//!
//! Grammar file format, one directive per line, `#` starts a comment:
//!
//! ```text
//! seed 7
//! slot node alpha beta gamma delta
//! slot rack north south east west
//! link node rack
//! slot status ok:0.9 retried:0.1
//! template 0.3 [info] receiving block {int} src {node} dest {rack}
//! reserved qzx
//! ```
//!
//! Linked slots draw the same variant index, so `alpha` always appears with
//! `north`. Unlinked fillers may carry `:weight` suffixes. `{int}` expands to
//! a random integer and `[word]` is a literal present in half of the lines.
//! Reserved words never occur in normal lines.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{normalize_line, Label, LogRecord, LogSource, NormalizationRuleSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("grammar has no templates")]
    EmptyGrammar,
    #[error("grammar line {line}: {reason}")]
    InvalidGrammar { line: usize, reason: String },
    #[error("anomaly rate must be in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("no anomaly kinds selected")]
    NoKinds,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Literal(String),
    /// A literal present in about half of the lines.
    Optional(String),
    Slot(String),
    Int,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub weight: f64,
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogGrammar {
    pub templates: Vec<Template>,
    pub slot_fillers: BTreeMap<String, Vec<String>>,
    /// Relative filler weights, parallel to `slot_fillers`.
    pub slot_weights: BTreeMap<String, Vec<f64>>,
    /// Groups of slots sharing one variant index.
    pub links: Vec<Vec<String>>,
    pub reserved: Vec<String>,
    pub seed: u64,
}

/// Six templates over 26 distinct words. The optional leading `info`
/// shifts every position by one in about half the lines, so a model cannot
/// rely on absolute positions alone.
pub const DEFAULT_GRAMMAR: &str = "\
seed 7
slot node alpha beta gamma delta
slot rack north south east west
link node rack
template 0.25 [info] receiving block {int} src {node} dest {rack}
template 0.20 [info] served block {int} to {node} {rack}
template 0.15 [info] packet responder {int} for block terminating
template 0.15 [info] deleting block {int} file {node} {rack}
template 0.15 [info] verification succeeded for block {int}
template 0.10 [info] connection closed by {node} {rack}
reserved qzx xjq zqj jxz
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
pub enum AnomalyKind {
    UnseenToken,
    SlotViolation,
    OrderBreak,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::UnseenToken, AnomalyKind::SlotViolation, AnomalyKind::OrderBreak];
}

impl std::fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnomalyKind::UnseenToken => "UnseenToken",
            AnomalyKind::SlotViolation => "SlotViolation",
            AnomalyKind::OrderBreak => "OrderBreak",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLine {
    pub text: String,
    pub template: usize,
    /// Template part index of each word of the uncorrupted line.
    pub layout: Vec<usize>,
    pub label: Label,
    pub kind: Option<AnomalyKind>,
    /// Word indices touched by the corruption.
    pub corrupted_positions: Vec<usize>,
}

impl SyntheticLine {
    /// `-` for normal lines, the anomaly kind otherwise, then the text.
    pub fn tagged(&self) -> String {
        match self.kind {
            None => format!("- {}", self.text),
            Some(k) => format!("{k} {}", self.text),
        }
    }
}

/// Generator for independent per-line streams: `(seed, stream, index)`
/// fully determines the draw.
fn line_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

const STREAM_NORMAL: u64 = 1;
const STREAM_ANOMALY: u64 = 2;

impl LogGrammar {
    pub fn default_benchmark() -> Self {
        Self::parse(DEFAULT_GRAMMAR).expect("default grammar is valid")
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut g = LogGrammar {
            templates: Vec::new(),
            slot_fillers: BTreeMap::new(),
            slot_weights: BTreeMap::new(),
            links: Vec::new(),
            reserved: Vec::new(),
            seed: 0,
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: String| SynthError::InvalidGrammar { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut words = line.split_whitespace();
            let Some(directive) = words.next() else { continue };
            let rest: Vec<&str> = words.collect();
            match directive {
                "seed" => {
                    g.seed = rest
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("seed needs an integer".into()))?;
                }
                "slot" => {
                    let (name, fillers) = rest.split_first().ok_or_else(|| bad("slot needs a name".into()))?;
                    if fillers.is_empty() {
                        return Err(bad(format!("slot {name} has no fillers")));
                    }
                    let mut words = Vec::new();
                    let mut weights = Vec::new();
                    for f in fillers {
                        let (word, weight) = match f.split_once(':') {
                            Some((w, x)) => (w, x.parse::<f64>().map_err(|_| bad(format!("bad filler weight {f:?}")))?),
                            None => (*f, 1.0),
                        };
                        if !(weight > 0.0 && weight.is_finite()) {
                            return Err(bad(format!("bad filler weight {f:?}")));
                        }
                        words.push(word.to_string());
                        weights.push(weight);
                    }
                    g.slot_fillers.insert(name.to_string(), words);
                    g.slot_weights.insert(name.to_string(), weights);
                }
                "link" => {
                    if rest.len() < 2 {
                        return Err(bad("link needs at least two slots".into()));
                    }
                    g.links.push(rest.iter().map(|s| s.to_string()).collect());
                }
                "template" => {
                    let (w, words) = rest.split_first().ok_or_else(|| bad("template needs a weight".into()))?;
                    let weight: f64 = w.parse().map_err(|_| bad(format!("bad weight {w:?}")))?;
                    if !(weight > 0.0 && weight.is_finite()) || words.is_empty() {
                        return Err(bad("template needs a positive weight and words".into()));
                    }
                    let parts = words
                        .iter()
                        .map(|w| match w.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                            Some("int") => Part::Int,
                            Some(slot) => Part::Slot(slot.to_string()),
                            None => match w.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                                Some(opt) => Part::Optional(opt.to_string()),
                                None => Part::Literal(w.to_string()),
                            },
                        })
                        .collect();
                    g.templates.push(Template { weight, parts });
                }
                "reserved" => g.reserved.extend(rest.iter().map(|s| s.to_string())),
                other => return Err(bad(format!("unknown directive {other:?}"))),
            }
        }
        g.validate()?;
        Ok(g)
    }

    pub fn from_file(path: &Path) -> Result<Self, SynthError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: String| SynthError::InvalidGrammar { line: 0, reason };
        if self.templates.is_empty() {
            return Err(SynthError::EmptyGrammar);
        }
        for t in &self.templates {
            for p in &t.parts {
                if let Part::Slot(s) = p {
                    if !self.slot_fillers.contains_key(s) {
                        return Err(bad(format!("undefined slot {s}")));
                    }
                }
            }
        }
        for group in &self.links {
            let sizes: BTreeSet<usize> = group
                .iter()
                .map(|s| self.slot_fillers.get(s).map(Vec::len).ok_or_else(|| bad(format!("undefined slot {s}"))))
                .collect::<Result<_, _>>()?;
            if sizes.len() != 1 {
                return Err(bad("linked slots need the same number of fillers".into()));
            }
            if group.iter().any(|s| self.slot_weights[s].iter().any(|&w| w != 1.0)) {
                return Err(bad("linked slots cannot carry filler weights".into()));
            }
        }
        let normal = self.normal_words();
        if let Some(r) = self.reserved.iter().find(|r| normal.contains(r.as_str())) {
            return Err(bad(format!("reserved word {r} occurs in normal lines")));
        }
        Ok(())
    }

    /// Every literal and filler that can appear in a normal line.
    pub fn normal_words(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for t in &self.templates {
            for p in &t.parts {
                if let Part::Literal(w) | Part::Optional(w) = p {
                    out.insert(w.as_str());
                }
            }
        }
        for fillers in self.slot_fillers.values() {
            out.extend(fillers.iter().map(String::as_str));
        }
        out
    }

    fn link_group(&self, slot: &str) -> Option<usize> {
        self.links.iter().position(|g| g.iter().any(|s| s == slot))
    }

    fn pick_template<R: Rng>(&self, rng: &mut R) -> usize {
        let weights: Vec<f64> = self.templates.iter().map(|t| t.weight).collect();
        pick_weighted(&weights, rng)
    }

    /// Expands a template into words, each tagged with its part index.
    fn render<R: Rng>(&self, template: usize, rng: &mut R) -> Vec<(usize, String)> {
        let mut variants: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out = Vec::new();
        for (i, p) in self.templates[template].parts.iter().enumerate() {
            let word = match p {
                Part::Literal(w) => w.clone(),
                Part::Optional(w) => {
                    if !rng.random_bool(0.5) {
                        continue;
                    }
                    w.clone()
                }
                Part::Int => rng.random_range(0..100_000u32).to_string(),
                Part::Slot(s) => {
                    let fillers = &self.slot_fillers[s];
                    let idx = match self.link_group(s) {
                        Some(g) => *variants.entry(g).or_insert_with(|| rng.random_range(0..fillers.len())),
                        None => pick_weighted(&self.slot_weights[s], rng),
                    };
                    fillers[idx].clone()
                }
            };
            out.push((i, word));
        }
        out
    }

    /// Line `index` of normal stream `stream`.
    pub fn normal_line(&self, stream: u64, index: u64) -> SyntheticLine {
        let mut rng = line_rng(self.seed, STREAM_NORMAL.wrapping_add(stream << 8), index);
        let template = self.pick_template(&mut rng);
        let (layout, words): (Vec<usize>, Vec<String>) = self.render(template, &mut rng).into_iter().unzip();
        SyntheticLine {
            text: words.join(" "),
            layout,
            template,
            label: Label::Normal,
            kind: None,
            corrupted_positions: Vec::new(),
        }
    }
}

fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// `n` normal lines from stream `stream`. Different streams give
/// independent corpora from the same grammar.
pub fn generate_normal(grammar: &LogGrammar, n: usize, stream: u64) -> Result<Vec<SyntheticLine>, SynthError> {
    if grammar.templates.is_empty() {
        return Err(SynthError::EmptyGrammar);
    }
    Ok((0..n as u64).map(|i| grammar.normal_line(stream, i)).collect())
}

fn corrupt<R: Rng>(
    grammar: &LogGrammar,
    line: &SyntheticLine,
    kind: AnomalyKind,
    rng: &mut R,
) -> Option<(Vec<String>, Vec<usize>)> {
    let mut words: Vec<String> = line.text.split(' ').map(str::to_string).collect();
    let parts = &grammar.templates[line.template].parts;
    match kind {
        AnomalyKind::UnseenToken => {
            let token = grammar.reserved.choose(rng)?;
            let at = rng.random_range(0..=words.len());
            words.insert(at, token.clone());
            Some((words, vec![at]))
        }
        AnomalyKind::SlotViolation => {
            let slots: Vec<(usize, &String)> = line
                .layout
                .iter()
                .enumerate()
                .filter_map(|(w, &p)| match &parts[p] {
                    Part::Slot(s) => Some((w, s)),
                    _ => None,
                })
                .collect();
            let candidates: Vec<(usize, &String)> = slots
                .into_iter()
                .filter(|(_, s)| grammar.slot_fillers.keys().any(|o| o != *s))
                .collect();
            let &(at, slot) = candidates.choose(rng)?;
            let others: Vec<&String> = grammar.slot_fillers.keys().filter(|o| *o != slot).collect();
            let other = others.choose(rng)?;
            let own = &grammar.slot_fillers[slot];
            let foreign: Vec<&String> = grammar.slot_fillers[*other].iter().filter(|f| !own.contains(f)).collect();
            words[at] = (*foreign.choose(rng)?).clone();
            Some((words, vec![at]))
        }
        AnomalyKind::OrderBreak => {
            let fixed = |w: usize| matches!(parts[line.layout[w]], Part::Literal(_));
            let pairs: Vec<usize> = (0..words.len().saturating_sub(1))
                .filter(|&i| fixed(i) && fixed(i + 1) && words[i] != words[i + 1])
                .collect();
            let &at = pairs.choose(rng)?;
            words.swap(at, at + 1);
            Some((words, vec![at, at + 1]))
        }
    }
}

/// Corrupts each line independently with probability `rate`, using a kind
/// drawn uniformly from `kinds` (falling back to the other selected kinds
/// when a template cannot take it). Untouched lines are returned as is.
pub fn inject_anomalies(
    grammar: &LogGrammar,
    lines: &[SyntheticLine],
    kinds: &[AnomalyKind],
    rate: f64,
    seed: u64,
) -> Result<Vec<SyntheticLine>, SynthError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(SynthError::InvalidRate(rate));
    }
    if kinds.is_empty() {
        return Err(SynthError::NoKinds);
    }
    Ok(lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let mut rng = line_rng(seed, STREAM_ANOMALY, i as u64);
            if rng.random::<f64>() >= rate {
                return line.clone();
            }
            let first = rng.random_range(0..kinds.len());
            for offset in 0..kinds.len() {
                let kind = kinds[(first + offset) % kinds.len()];
                if let Some((words, positions)) = corrupt(grammar, line, kind, &mut rng) {
                    return SyntheticLine {
                        text: words.join(" "),
                        template: line.template,
                        layout: line.layout.clone(),
                        label: Label::Abnormal,
                        kind: Some(kind),
                        corrupted_positions: positions,
                    };
                }
            }
            line.clone()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub train_lines: usize,
    pub test_lines: usize,
    pub anomaly_rate: f64,
    pub kinds: Vec<AnomalyKind>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_lines: 20_000,
            test_lines: 2_000,
            anomaly_rate: 0.1,
            kinds: AnomalyKind::ALL.to_vec(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: Vec<SyntheticLine>,
    pub test: Vec<SyntheticLine>,
}

pub fn generate_benchmark(grammar: &LogGrammar, cfg: &BenchmarkConfig) -> Result<Benchmark, SynthError> {
    let mut g = grammar.clone();
    g.seed = cfg.seed;
    let train = generate_normal(&g, cfg.train_lines, 0)?;
    let clean_test = generate_normal(&g, cfg.test_lines, 1)?;
    let test = inject_anomalies(&g, &clean_test, &cfg.kinds, cfg.anomaly_rate, cfg.seed)?;
    Ok(Benchmark { train, test })
}

/// Writes lines in the tagged one-line-per-record format read by
/// [`crate::ingest::line_labeled_stream`].
pub fn write_tagged<W: Write>(mut writer: W, lines: &[SyntheticLine]) -> std::io::Result<()> {
    for l in lines {
        writeln!(writer, "{}", l.tagged())?;
    }
    writer.flush()
}

/// Normalized records, numbered from 1.
pub fn to_records(lines: &[SyntheticLine], rules: &NormalizationRuleSet) -> Vec<LogRecord> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| LogRecord {
            raw: l.tagged(),
            normalized: normalize_line(&l.text, rules),
            source: LogSource::Synthetic,
            group_id: None,
            label: l.label,
            line_no: i + 1,
        })
        .collect()
}
