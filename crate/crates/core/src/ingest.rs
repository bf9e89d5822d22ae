//! Raw log loading, regex normalization and train/test splitting.
//!
//! Normalization replaces volatile fields (block ids, addresses, dates, hex
//! literals, numbers) with uppercase placeholder words and lowercases
//! everything else. No template mining is performed: the normalized line is
//! the unit that gets tokenized and scored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("label file {0} not found")]
    MissingLabelFile(PathBuf),
    #[error("malformed label row {line}: {row:?}")]
    MalformedLabelRow { line: usize, row: String },
    #[error("no normal records available for training")]
    NoNormalRecords,
    #[error("invalid rule on line {line}: {reason}")]
    InvalidRule { line: usize, reason: String },
    #[error("train fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum LogSource {
    Hdfs,
    Bgl,
    Thunderbird,
    Synthetic,
    Generic,
}

impl fmt::Display for LogSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LogSource::Hdfs => "hdfs",
            LogSource::Bgl => "bgl",
            LogSource::Thunderbird => "thunderbird",
            LogSource::Synthetic => "synthetic",
            LogSource::Generic => "generic",
        };
        f.write_str(s)
    }
}

impl FromStr for LogSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hdfs" => Ok(LogSource::Hdfs),
            "bgl" => Ok(LogSource::Bgl),
            "thunderbird" => Ok(LogSource::Thunderbird),
            "synthetic" => Ok(LogSource::Synthetic),
            "generic" => Ok(LogSource::Generic),
            other => Err(format!("unknown log source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Abnormal,
    Unlabeled,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "Normal",
            Label::Abnormal => "Abnormal",
            Label::Unlabeled => "Unlabeled",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Normal" | "normal" => Ok(Label::Normal),
            "Abnormal" | "abnormal" | "Anomaly" | "anomaly" => Ok(Label::Abnormal),
            "Unlabeled" | "unlabeled" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// One normalized log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub raw: String,
    pub normalized: String,
    pub source: LogSource,
    /// HDFS block id; `None` for every other source.
    pub group_id: Option<String>,
    pub label: Label,
    pub line_no: usize,
}

#[derive(Debug, Clone)]
pub struct NormalizationRule {
    pub pattern: Regex,
    pub placeholder: String,
}

/// Ordered regex → placeholder rules.
///
/// The text format is one rule per line: the placeholder word, whitespace,
/// then the regular expression (rest of the line). Blank lines and lines
/// starting with `#` are ignored; a `version <text>` line sets the version.
#[derive(Debug, Clone)]
pub struct NormalizationRuleSet {
    pub rules: Vec<NormalizationRule>,
    pub version: String,
}

pub const DEFAULT_RULES: &str = r"# default normalization rules, applied top to bottom
version default-1
BLK   blk_-?\d+
IP    /?\b\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?\b
DATE  \b\d{4}-\d{2}-\d{2}(?:[-T ]\d{2}[:.]\d{2}[:.]\d{2}(?:\.\d+)?)?\b
DATE  \b\d{4}\.\d{2}\.\d{2}\b
DATE  \b1\d{9}\b
HEX   (?i)\b0x[0-9a-f]+\b
NUM   \d+
";

impl Default for NormalizationRuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("default rules are valid")
    }
}

impl NormalizationRuleSet {
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut rules = Vec::new();
        let mut version = String::from("unversioned");
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (head, rest) = match trimmed.split_once(char::is_whitespace) {
                Some((h, r)) => (h, r.trim()),
                None => {
                    return Err(IngestError::InvalidRule {
                        line: line_no,
                        reason: "expected `PLACEHOLDER regex`".into(),
                    })
                }
            };
            if head == "version" {
                version = rest.to_string();
                continue;
            }
            if head.is_empty() || !head.chars().all(|c| c.is_ascii_uppercase()) {
                return Err(IngestError::InvalidRule {
                    line: line_no,
                    reason: format!("placeholder {head:?} must be uppercase alphabetic"),
                });
            }
            let pattern = Regex::new(rest).map_err(|e| IngestError::InvalidRule {
                line: line_no,
                reason: e.to_string(),
            })?;
            rules.push(NormalizationRule {
                pattern,
                placeholder: head.to_string(),
            });
        }
        Ok(Self { rules, version })
    }

    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn placeholders(&self) -> Vec<&str> {
        let mut words: Vec<&str> = self.rules.iter().map(|r| r.placeholder.as_str()).collect();
        words.sort_unstable();
        words.dedup();
        // longest first so greedy decomposition prefers e.g. DATE over a hypothetical DA
        words.sort_by_key(|w| std::cmp::Reverse(w.len()));
        words
    }
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

/// Splits a run of uppercase letters into placeholder words, if possible.
fn decompose_placeholders<'p>(run: &str, words: &[&'p str]) -> Option<Vec<&'p str>> {
    if run.is_empty() {
        return Some(Vec::new());
    }
    for w in words {
        if let Some(rest) = run.strip_prefix(w) {
            if let Some(mut tail) = decompose_placeholders(rest, words) {
                tail.insert(0, w);
                return Some(tail);
            }
        }
    }
    None
}

/// Recognizes placeholder words already present in the input so that
/// normalizing an already-normalized line leaves it unchanged.
fn protect_placeholders<'a>(line: &'a str, words: &[&'a str]) -> Vec<Segment<'a>> {
    let mut segments = Vec::new();
    let bytes = line.as_bytes();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_uppercase() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_uppercase() {
                i += 1;
            }
            if let Some(parts) = decompose_placeholders(&line[start..i], words) {
                if text_start < start {
                    segments.push(Segment::Text(&line[text_start..start]));
                }
                segments.extend(parts.into_iter().map(Segment::Placeholder));
                text_start = i;
            }
        } else {
            i += 1;
        }
    }
    if text_start < line.len() {
        segments.push(Segment::Text(&line[text_start..]));
    }
    segments
}

/// Applies every rule in order, collapses whitespace and lowercases all text
/// that is not a placeholder word.
pub fn normalize_line(raw: &str, rules: &NormalizationRuleSet) -> String {
    let words = rules.placeholders();
    let mut segments = protect_placeholders(raw, &words);
    for rule in &rules.rules {
        let mut next = Vec::with_capacity(segments.len());
        for seg in segments {
            match seg {
                Segment::Placeholder(_) => next.push(seg),
                Segment::Text(text) => {
                    let mut last = 0;
                    for m in rule.pattern.find_iter(text) {
                        if m.start() == m.end() {
                            continue;
                        }
                        if last < m.start() {
                            next.push(Segment::Text(&text[last..m.start()]));
                        }
                        next.push(Segment::Placeholder(&rule.placeholder));
                        last = m.end();
                    }
                    if last < text.len() {
                        next.push(Segment::Text(&text[last..]));
                    }
                }
            }
        }
        segments = next;
    }

    let mut joined = String::with_capacity(raw.len());
    for seg in &segments {
        match seg {
            Segment::Placeholder(p) => joined.push_str(p),
            Segment::Text(t) => joined.push_str(&t.to_lowercase()),
        }
    }
    joined.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn block_id_regex() -> Regex {
    Regex::new(r"blk_-?\d+").expect("static regex")
}

/// Counters reported by the loaders.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub skipped_empty: usize,
    /// Invalid UTF-8 sequences replaced with U+FFFD.
    pub invalid_utf8: usize,
    pub normal: usize,
    pub abnormal: usize,
    pub unlabeled: usize,
}

impl LoadStats {
    fn count(&mut self, label: Label) {
        match label {
            Label::Normal => self.normal += 1,
            Label::Abnormal => self.abnormal += 1,
            Label::Unlabeled => self.unlabeled += 1,
        }
    }
}

/// Reads `\n`-separated lines, replacing invalid UTF-8 and counting replacements.
struct LossyLines<R> {
    reader: R,
    buf: Vec<u8>,
    line_no: usize,
}

impl<R: BufRead> LossyLines<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            buf: Vec::new(),
            line_no: 0,
        }
    }

    /// Returns (line_no, text, invalid sequence count).
    fn next_line(&mut self) -> std::io::Result<Option<(usize, String, usize)>> {
        self.buf.clear();
        let n = self.reader.read_until(b'\n', &mut self.buf)?;
        if n == 0 {
            return Ok(None);
        }
        while matches!(self.buf.last(), Some(b'\n' | b'\r')) {
            self.buf.pop();
        }
        let mut text = String::with_capacity(self.buf.len());
        let mut invalid = 0;
        for chunk in self.buf.utf8_chunks() {
            text.push_str(chunk.valid());
            if !chunk.invalid().is_empty() {
                text.push(char::REPLACEMENT_CHARACTER);
                invalid += 1;
            }
        }
        let line_no = self.line_no;
        self.line_no += 1;
        Ok(Some((line_no, text, invalid)))
    }
}

/// Streaming loader: yields one [`LogRecord`] per non-empty input line.
pub struct RecordStream<R> {
    lines: LossyLines<R>,
    rules: NormalizationRuleSet,
    kind: StreamKind,
    stats: LoadStats,
    error: Option<std::io::Error>,
}

enum StreamKind {
    Hdfs {
        labels: HashMap<String, Label>,
        block_re: Regex,
    },
    LineLabeled(LogSource),
}

impl<R> RecordStream<R> {
    pub fn stats(&self) -> &LoadStats {
        &self.stats
    }

    /// I/O error that terminated the stream early, if any.
    pub fn take_error(&mut self) -> Option<std::io::Error> {
        self.error.take()
    }
}

impl<R: BufRead> Iterator for RecordStream<R> {
    type Item = LogRecord;

    fn next(&mut self) -> Option<LogRecord> {
        loop {
            let (line_no, text, invalid) = match self.lines.next_line() {
                Ok(Some(l)) => l,
                Ok(None) => return None,
                Err(e) => {
                    self.error = Some(e);
                    return None;
                }
            };
            self.stats.lines += 1;
            self.stats.invalid_utf8 += invalid;
            let record = match &self.kind {
                StreamKind::Hdfs { labels, block_re } => {
                    if text.trim().is_empty() {
                        self.stats.skipped_empty += 1;
                        continue;
                    }
                    let group_id = block_re.find(&text).map(|m| m.as_str().to_string());
                    let label = group_id
                        .as_ref()
                        .and_then(|g| labels.get(g).copied())
                        .unwrap_or(Label::Unlabeled);
                    LogRecord {
                        normalized: normalize_line(&text, &self.rules),
                        raw: text,
                        source: LogSource::Hdfs,
                        group_id,
                        label,
                        line_no,
                    }
                }
                StreamKind::LineLabeled(source) => {
                    let trimmed = text.trim_start();
                    let (tag, body) = match trimmed.split_once(char::is_whitespace) {
                        Some((t, b)) => (t, b.trim()),
                        None => (trimmed, ""),
                    };
                    if body.is_empty() {
                        self.stats.skipped_empty += 1;
                        continue;
                    }
                    let label = if tag == "-" { Label::Normal } else { Label::Abnormal };
                    LogRecord {
                        normalized: normalize_line(body, &self.rules),
                        raw: text.clone(),
                        source: *source,
                        group_id: None,
                        label,
                        line_no,
                    }
                }
            };
            self.stats.count(record.label);
            return Some(record);
        }
    }
}

/// Parses an HDFS `BlockId,Label` file. The header row is optional.
pub fn read_hdfs_labels<R: Read>(reader: R) -> Result<HashMap<String, Label>, IngestError> {
    let mut out = HashMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let row = line.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let malformed = || IngestError::MalformedLabelRow {
            line: idx + 1,
            row: row.to_string(),
        };
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(malformed());
        }
        if idx == 0 && fields[0].eq_ignore_ascii_case("blockid") {
            continue;
        }
        let label = match fields[1] {
            "Normal" => Label::Normal,
            "Anomaly" => Label::Abnormal,
            _ => return Err(malformed()),
        };
        out.insert(fields[0].to_string(), label);
    }
    Ok(out)
}

/// Streams HDFS records; lines whose block has no label row are `Unlabeled`.
pub fn load_hdfs(
    log_path: &Path,
    label_path: &Path,
    rules: &NormalizationRuleSet,
) -> Result<RecordStream<BufReader<File>>, IngestError> {
    let label_file = File::open(label_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::MissingLabelFile(label_path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    let labels = read_hdfs_labels(label_file)?;
    let log = BufReader::new(File::open(log_path)?);
    Ok(hdfs_stream(log, labels, rules))
}

pub fn hdfs_stream<R: BufRead>(
    reader: R,
    labels: HashMap<String, Label>,
    rules: &NormalizationRuleSet,
) -> RecordStream<R> {
    RecordStream {
        lines: LossyLines::new(reader),
        rules: rules.clone(),
        kind: StreamKind::Hdfs {
            labels,
            block_re: block_id_regex(),
        },
        stats: LoadStats::default(),
        error: None,
    }
}

/// Streams BGL/Thunderbird style logs whose first field is an alert tag
/// (`-` for non-alert lines).
pub fn load_line_labeled(
    log_path: &Path,
    source: LogSource,
    rules: &NormalizationRuleSet,
) -> Result<RecordStream<BufReader<File>>, IngestError> {
    let log = BufReader::new(File::open(log_path)?);
    Ok(line_labeled_stream(log, source, rules))
}

pub fn line_labeled_stream<R: BufRead>(
    reader: R,
    source: LogSource,
    rules: &NormalizationRuleSet,
) -> RecordStream<R> {
    RecordStream {
        lines: LossyLines::new(reader),
        rules: rules.clone(),
        kind: StreamKind::LineLabeled(source),
        stats: LoadStats::default(),
        error: None,
    }
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<LogRecord>,
    pub test: Vec<LogRecord>,
}

fn window_len(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction).round().min(n as f64) as usize
}

/// Chronological split by `line_no`. The earliest `train_fraction` of the
/// records (of the blocks, for grouped records) forms the training window;
/// abnormal units inside it move to the test side. Unlabeled records are
/// dropped.
pub fn split_train_test<I>(records: I, train_fraction: f64) -> Result<Split, IngestError>
where
    I: IntoIterator<Item = LogRecord>,
{
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(IngestError::InvalidFraction(train_fraction));
    }
    let mut records: Vec<LogRecord> = records
        .into_iter()
        .filter(|r| r.label != Label::Unlabeled)
        .collect();
    records.sort_by_key(|r| r.line_no);

    let mut split = Split::default();
    let grouped = records.iter().any(|r| r.group_id.is_some());
    if grouped {
        // blocks ordered by first appearance
        let mut order: Vec<String> = Vec::new();
        let mut members: HashMap<String, Vec<LogRecord>> = HashMap::new();
        let mut ungrouped = Vec::new();
        for r in records {
            match &r.group_id {
                Some(g) => {
                    if !members.contains_key(g) {
                        order.push(g.clone());
                    }
                    members.entry(g.clone()).or_default().push(r);
                }
                None => ungrouped.push(r),
            }
        }
        let n_train = window_len(order.len(), train_fraction);
        let mut test_blocks: HashSet<String> = HashSet::new();
        for (i, g) in order.iter().enumerate() {
            let block = &members[g];
            let abnormal = block.iter().any(|r| r.label == Label::Abnormal);
            if i < n_train && !abnormal {
                split.train.extend(block.iter().cloned());
            } else {
                test_blocks.insert(g.clone());
            }
        }
        let mut test: Vec<LogRecord> = members
            .into_iter()
            .filter(|(g, _)| test_blocks.contains(g))
            .flat_map(|(_, v)| v)
            .collect();
        test.extend(ungrouped);
        test.sort_by_key(|r| r.line_no);
        split.train.sort_by_key(|r| r.line_no);
        split.test = test;
    } else {
        let n_train = window_len(records.len(), train_fraction);
        for (i, r) in records.into_iter().enumerate() {
            if i < n_train && r.label == Label::Normal {
                split.train.push(r);
            } else {
                split.test.push(r);
            }
        }
    }
    if split.train.is_empty() {
        return Err(IngestError::NoNormalRecords);
    }
    Ok(split)
}

/// Per-label counts, handy for manifests.
pub fn label_counts(records: &[LogRecord]) -> BTreeMap<Label, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.label).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-rolled interpreter for the default rules: scans left to right and
    /// recognizes each field shape without regexes.
    fn reference_normalize(raw: &str) -> String {
        raw.split_whitespace()
            .map(|word| {
                let mut out = String::new();
                let chars: Vec<char> = word.chars().collect();
                let mut i = 0;
                while i < chars.len() {
                    let rest: String = chars[i..].iter().collect();
                    if rest.starts_with("blk_") {
                        let mut j = i + 4;
                        if j < chars.len() && chars[j] == '-' {
                            j += 1;
                        }
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        out.push_str("BLK");
                        i = j;
                        continue;
                    }
                    let start = if chars[i] == '/' { i + 1 } else { i };
                    if start < chars.len() && chars[start].is_ascii_digit() {
                        // dotted quad with optional port
                        let mut j = start;
                        let mut groups = 0;
                        loop {
                            let g0 = j;
                            while j < chars.len() && chars[j].is_ascii_digit() {
                                j += 1;
                            }
                            if j == g0 || j - g0 > 3 {
                                break;
                            }
                            groups += 1;
                            if groups == 4 || j >= chars.len() || chars[j] != '.' {
                                break;
                            }
                            j += 1;
                        }
                        if groups == 4 {
                            if j < chars.len() && chars[j] == ':' {
                                j += 1;
                                while j < chars.len() && chars[j].is_ascii_digit() {
                                    j += 1;
                                }
                            }
                            out.push_str("IP");
                            i = j;
                            continue;
                        }
                        // yyyy-mm-dd
                        let s: String = chars[start..].iter().take(10).collect();
                        let b: Vec<char> = s.chars().collect();
                        if start == i
                            && b.len() == 10
                            && b[4] == '-'
                            && b[7] == '-'
                            && b.iter().enumerate().all(|(k, c)| k == 4 || k == 7 || c.is_ascii_digit())
                        {
                            out.push_str("DATE");
                            i += 10;
                            continue;
                        }
                    }
                    if chars[i].is_ascii_digit() {
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                        out.push_str("NUM");
                        continue;
                    }
                    out.extend(chars[i].to_lowercase());
                    i += 1;
                }
                out
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn normalizes_hdfs_receiving_line() {
        let rules = NormalizationRuleSet::default();
        let raw = "Receiving block blk_-160899 src: /10.250.19.102:54106";
        assert_eq!(normalize_line(raw, &rules), "receiving block BLK src: IP");
        assert_eq!(reference_normalize(raw), "receiving block BLK src: IP");
    }

    #[test]
    fn normalizes_dates_and_numbers() {
        let rules = NormalizationRuleSet::default();
        let raw = "error code 404 at 2008-11-09";
        assert_eq!(normalize_line(raw, &rules), "error code NUM at DATE");
        assert_eq!(reference_normalize(raw), "error code NUM at DATE");
    }

    #[test]
    fn empty_line_stays_empty() {
        assert_eq!(normalize_line("", &NormalizationRuleSet::default()), "");
    }

    #[test]
    fn hex_and_epoch() {
        let rules = NormalizationRuleSet::default();
        assert_eq!(
            normalize_line("- 1117838570 fault at 0x1F3a  addr", &rules),
            "- DATE fault at HEX addr"
        );
    }

    #[test]
    fn uppercase_words_that_are_not_placeholders_get_lowercased() {
        let rules = NormalizationRuleSet::default();
        assert_eq!(normalize_line("RAS KERNEL NUMBER IP", &rules), "ras kernel number IP");
        // concatenated placeholders survive renormalization
        assert_eq!(normalize_line("at DATENUM", &rules), "at DATENUM");
        let once = normalize_line("at 2008-11-09/12", &rules);
        assert_eq!(once, "at DATE/NUM");
        assert_eq!(normalize_line(&once, &rules), once);
    }

    #[test]
    fn rule_file_parsing() {
        let rules = NormalizationRuleSet::parse("version v2\n# c\nID  id-\\d+\n").unwrap();
        assert_eq!(rules.version, "v2");
        assert_eq!(rules.rules.len(), 1);
        assert_eq!(normalize_line("Got id-77 ok", &rules), "got ID ok");
        assert!(matches!(
            NormalizationRuleSet::parse("lower x"),
            Err(IngestError::InvalidRule { line: 1, .. })
        ));
        assert!(NormalizationRuleSet::parse("NUM (").is_err());
    }

    #[test]
    fn hdfs_labels_propagate() {
        let labels = read_hdfs_labels("BlockId,Label\nblk_123,Anomaly\nblk_9,Normal\n".as_bytes()).unwrap();
        let log = "081109 203615 148 INFO served blk_123 to /10.0.0.1\n\
                   081109 203616 149 INFO served blk_9 ok\n\
                   081109 203617 150 INFO served blk_77 ok\n";
        let mut stream = hdfs_stream(log.as_bytes(), labels, &NormalizationRuleSet::default());
        let recs: Vec<_> = stream.by_ref().collect();
        assert_eq!(recs[0].group_id.as_deref(), Some("blk_123"));
        assert_eq!(recs[0].label, Label::Abnormal);
        assert_eq!(recs[1].label, Label::Normal);
        assert_eq!(recs[2].label, Label::Unlabeled);
        assert_eq!(recs[0].normalized, "NUM NUM NUM info served BLK to IP");
        let s = stream.stats();
        assert_eq!((s.normal, s.abnormal, s.unlabeled), (1, 1, 1));
    }

    #[test]
    fn malformed_label_rows() {
        assert!(matches!(
            read_hdfs_labels("blk_1,Normal,extra\n".as_bytes()),
            Err(IngestError::MalformedLabelRow { line: 1, .. })
        ));
        assert!(matches!(
            read_hdfs_labels("blk_1,Weird\n".as_bytes()),
            Err(IngestError::MalformedLabelRow { .. })
        ));
        assert!(read_hdfs_labels("blk_1,Normal\n".as_bytes()).is_ok());
    }

    #[test]
    fn missing_label_file() {
        let err = load_hdfs(
            Path::new("/nonexistent/log"),
            Path::new("/nonexistent/labels.csv"),
            &NormalizationRuleSet::default(),
        );
        assert!(matches!(err, Err(IngestError::MissingLabelFile(_))));
    }

    #[test]
    fn line_labeled_tags() {
        let log = "- 1117838570 2005.06.03 R02-M1-N0 instruction cache parity error corrected\n\
                   KERNDTLB 1117838573 2005.06.03 R02-M1-N0 data TLB error\n\
                   -\n\
                   \n";
        let mut stream = line_labeled_stream(log.as_bytes(), LogSource::Bgl, &NormalizationRuleSet::default());
        let recs: Vec<_> = stream.by_ref().collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].label, Label::Normal);
        assert_eq!(recs[1].label, Label::Abnormal);
        assert_eq!(
            recs[0].normalized,
            "DATE DATE rNUM-mNUM-nNUM instruction cache parity error corrected"
        );
        assert!(!recs[1].normalized.contains("kerndtlb"));
        assert_eq!(stream.stats().skipped_empty, 2);
        // label conservation
        let s = stream.stats();
        assert_eq!(s.normal + s.abnormal + s.unlabeled, s.lines - s.skipped_empty);
    }

    #[test]
    fn invalid_utf8_is_replaced_and_counted() {
        let bytes: &[u8] = b"- bad \xff\xfe byte\n- fine\n";
        let mut stream = line_labeled_stream(bytes, LogSource::Bgl, &NormalizationRuleSet::default());
        let recs: Vec<_> = stream.by_ref().collect();
        assert!(recs[0].raw.contains(char::REPLACEMENT_CHARACTER));
        assert_eq!(stream.stats().invalid_utf8, 2);
    }

    fn rec(line_no: usize, label: Label, group: Option<&str>) -> LogRecord {
        LogRecord {
            raw: format!("line {line_no}"),
            normalized: "line NUM".into(),
            source: if group.is_some() { LogSource::Hdfs } else { LogSource::Generic },
            group_id: group.map(str::to_string),
            label,
            line_no,
        }
    }

    #[test]
    fn split_all_normal() {
        let records: Vec<_> = (0..100).map(|i| rec(i, Label::Normal, None)).collect();
        let split = split_train_test(records, 0.8).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (80, 20));
    }

    #[test]
    fn split_moves_abnormal_to_test() {
        // every fifth record is abnormal
        let records: Vec<_> = (0..100)
            .map(|i| rec(i, if i % 5 == 4 { Label::Abnormal } else { Label::Normal }, None))
            .collect();
        let split = split_train_test(records.clone(), 0.5).unwrap();
        // brute-force recount
        let expected_train = records[..50].iter().filter(|r| r.label == Label::Normal).count();
        assert_eq!(split.train.len(), expected_train);
        assert!(split.train.len() <= 50);
        assert!(split.train.iter().all(|r| r.label == Label::Normal));
        assert_eq!(split.test.iter().filter(|r| r.label == Label::Abnormal).count(), 20);
        assert_eq!(split.train.len() + split.test.len(), 100);
    }

    #[test]
    fn split_hdfs_by_whole_blocks() {
        let mut records = Vec::new();
        let mut line = 0;
        for b in 0..10 {
            for _ in 0..3 {
                records.push(rec(line, Label::Normal, Some(&format!("blk_{b}"))));
                line += 1;
            }
        }
        // interleave one block's lines with later ones
        records[2].line_no = 1000;
        let split = split_train_test(records, 0.5).unwrap();
        let blocks = |v: &[LogRecord]| v.iter().map(|r| r.group_id.clone().unwrap()).collect::<HashSet<_>>();
        let (tr, te) = (blocks(&split.train), blocks(&split.test));
        assert_eq!((tr.len(), te.len()), (5, 5));
        assert!(tr.is_disjoint(&te));
    }

    #[test]
    fn split_errors() {
        let abnormal: Vec<_> = (0..5).map(|i| rec(i, Label::Abnormal, None)).collect();
        assert!(matches!(split_train_test(abnormal, 0.8), Err(IngestError::NoNormalRecords)));
        assert!(matches!(
            split_train_test(Vec::new(), 0.0),
            Err(IngestError::InvalidFraction(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn fuzz_line() -> impl Strategy<Value = String> {
            let piece = prop_oneof![
                "[a-zA-Z]{1,8}",
                "[0-9]{1,12}",
                "blk_-?[0-9]{1,10}",
                "/?[0-9]{1,3}\\.[0-9]{1,3}\\.[0-9]{1,3}\\.[0-9]{1,3}(:[0-9]{1,5})?",
                "20[0-9]{2}-[01][0-9]-[0-3][0-9]",
                "0x[0-9a-fA-F]{1,8}",
                "(NUM|IP|DATE|HEX|BLK)",
                "[:;,._$/-]",
                "[ \t]{1,3}",
            ];
            proptest::collection::vec(piece, 0..12).prop_map(|v| v.concat())
        }

        proptest! {
            #[test]
            fn normalization_is_idempotent(line in fuzz_line()) {
                let rules = NormalizationRuleSet::default();
                let once = normalize_line(&line, &rules);
                prop_assert_eq!(normalize_line(&once, &rules), once.clone());
                // no rule pattern survives
                for rule in &rules.rules {
                    prop_assert!(!rule.pattern.is_match(&once), "{} matches {:?}", rule.pattern, once);
                }
                prop_assert!(!once.contains("  "));
            }

            #[test]
            fn train_side_is_pure_and_blocks_atomic(
                labels in proptest::collection::vec((0usize..8, proptest::bool::weighted(0.2)), 1..120),
                fraction in 0.05f64..=1.0,
            ) {
                let records: Vec<_> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, (b, ab))| rec(i, if *ab { Label::Abnormal } else { Label::Normal }, Some(&format!("blk_{b}"))))
                    .collect();
                // block labels are block-level in HDFS: propagate abnormal to the whole block
                let bad: HashSet<_> = records.iter().filter(|r| r.label == Label::Abnormal).map(|r| r.group_id.clone()).collect();
                let records: Vec<_> = records.into_iter().map(|mut r| { if bad.contains(&r.group_id) { r.label = Label::Abnormal; } r }).collect();
                if let Ok(split) = split_train_test(records.clone(), fraction) {
                    prop_assert!(split.train.iter().all(|r| r.label == Label::Normal));
                    let tr: HashSet<_> = split.train.iter().map(|r| r.group_id.clone()).collect();
                    let te: HashSet<_> = split.test.iter().map(|r| r.group_id.clone()).collect();
                    prop_assert!(tr.is_disjoint(&te));
                    prop_assert_eq!(split.train.len() + split.test.len(), records.len());
                }
            }
        }
    }
}
