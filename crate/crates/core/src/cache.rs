//! Memoization of sequence scores by normalized log key.
//!
//! Entries are only valid for the checkpoint, `k` and mask mode they were
//! computed under; the cache refuses to serve a context with another binding.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::scorer::{MaskMode, ScoreError, ScoringBinding, ScoringContext, SequenceScore};

const FILE_MAGIC: &str = "logmlm-score-cache 1";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache was built for a different checkpoint or scoring setup")]
    CheckpointMismatch,
    #[error("corrupt cache file at line {line}: {reason}")]
    CorruptCacheFile { line: usize, reason: String },
    #[error("scoring failed: {0}")]
    Score(Box<ScoreError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ScoreError> for CacheError {
    fn from(e: ScoreError) -> Self {
        CacheError::Score(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

#[derive(Default)]
struct Entries {
    map: HashMap<String, (SequenceScore, u64)>,
    // last-use tick -> key, for eviction
    recency: BTreeMap<u64, String>,
    tick: u64,
}

impl Entries {
    fn touch(&mut self, key: &str) -> Option<SequenceScore> {
        self.tick += 1;
        let tick = self.tick;
        let (score, last) = self.map.get_mut(key)?;
        let old = std::mem::replace(last, tick);
        let score = score.clone();
        let k = self.recency.remove(&old).expect("recency in sync");
        self.recency.insert(tick, k);
        Some(score)
    }

    fn insert(&mut self, key: String, score: SequenceScore, capacity: Option<usize>) {
        if self.touch(&key).is_some() {
            return;
        }
        self.tick += 1;
        self.recency.insert(self.tick, key.clone());
        self.map.insert(key, (score, self.tick));
        if let Some(cap) = capacity {
            while self.map.len() > cap {
                let (_, oldest) = self.recency.pop_first().expect("non-empty");
                self.map.remove(&oldest);
            }
        }
    }
}

pub struct ScoreCache {
    binding: ScoringBinding,
    capacity: Option<usize>,
    entries: Mutex<Entries>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    /// Unbounded cache bound to `binding`.
    pub fn new(binding: ScoringBinding) -> Self {
        Self {
            binding,
            capacity: None,
            entries: Mutex::new(Entries::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Cache that evicts the least recently used entry beyond `capacity`.
    pub fn with_capacity(binding: ScoringBinding, capacity: usize) -> Self {
        Self {
            capacity: Some(capacity.max(1)),
            ..Self::new(binding)
        }
    }

    /// Bounds the cache, evicting least recently used entries if needed.
    pub fn set_capacity(&mut self, capacity: usize) {
        let cap = capacity.max(1);
        self.capacity = Some(cap);
        let entries = self.entries.get_mut().expect("cache lock");
        while entries.map.len() > cap {
            let (_, oldest) = entries.recency.pop_first().expect("non-empty");
            entries.map.remove(&oldest);
        }
    }

    pub fn for_context(ctx: &ScoringContext) -> Self {
        Self::new(ctx.binding())
    }

    pub fn binding(&self) -> ScoringBinding {
        self.binding
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<SequenceScore> {
        self.entries.lock().expect("cache lock").touch(key)
    }

    /// Returns the cached score for `key` or computes it with `ctx`.
    /// Scoring runs without holding the lock, so distinct keys can be
    /// scored concurrently.
    pub fn get_or_score(&self, key: &str, ctx: &ScoringContext) -> Result<SequenceScore, CacheError> {
        if ctx.binding() != self.binding {
            return Err(CacheError::CheckpointMismatch);
        }
        self.get_or_insert_with(key, || Ok(ctx.score_text(key)?.0))
    }

    pub fn get_or_insert_with<F>(&self, key: &str, compute: F) -> Result<SequenceScore, CacheError>
    where
        F: FnOnce() -> Result<SequenceScore, CacheError>,
    {
        if let Some(hit) = self.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let score = compute()?;
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), score.clone(), self.capacity);
        Ok(score)
    }

    /// Writes all entries sorted by key. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let entries = self.entries.lock().expect("cache lock");
        let mut keys: Vec<&String> = entries.map.keys().collect();
        keys.sort();
        let mut out = String::new();
        out.push_str(FILE_MAGIC);
        out.push('\n');
        out.push_str(&format!("checkpoint {}\n", hex::encode(self.binding.checkpoint_hash)));
        out.push_str(&format!("k {}\n", self.binding.k));
        out.push_str(&format!("mask_mode {}\n", self.binding.mask_mode));
        for key in keys {
            let s = &entries.map[key].0;
            out.push_str(&format!("{:e}\t{:e}\t{}\t{}\n", s.abnormal_error, s.abnormal_prob, s.s_len, key));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a saved cache, refusing it if it was built under a different
    /// binding.
    pub fn load(path: &Path, binding: ScoringBinding) -> Result<Self, CacheError> {
        let text = std::fs::read_to_string(path)?;
        let cache = Self::new(binding);
        let corrupt = |line: usize, reason: &str| CacheError::CorruptCacheFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.split_terminator('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |name: &str| -> Result<String, CacheError> {
            let (no, line) = lines.next().ok_or_else(|| corrupt(0, "missing header"))?;
            if name.is_empty() {
                return if line == FILE_MAGIC { Ok(String::new()) } else { Err(corrupt(no, "bad magic")) };
            }
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| corrupt(no, &format!("expected {name}")))
        };
        header("")?;
        let hash = header("checkpoint")?;
        let k = header("k")?;
        let mode = header("mask_mode")?;
        let k: usize = k.parse().map_err(|_| corrupt(3, "bad k"))?;
        let mode: MaskMode = mode.parse().map_err(|e: String| corrupt(4, &e))?;
        let hash_bytes = hex::decode(&hash).map_err(|_| corrupt(2, "bad checkpoint hash"))?;
        if hash_bytes.as_slice() != binding.checkpoint_hash || k != binding.k || mode != binding.mask_mode {
            return Err(CacheError::CheckpointMismatch);
        }
        {
            let mut entries = cache.entries.lock().expect("cache lock");
            for (no, line) in lines {
                let mut parts = line.splitn(4, '\t');
                let mut field = || parts.next().ok_or_else(|| corrupt(no, "too few fields"));
                let error: f64 = field()?.parse().map_err(|_| corrupt(no, "bad error"))?;
                let prob: f64 = field()?.parse().map_err(|_| corrupt(no, "bad prob"))?;
                let s_len: usize = field()?.parse().map_err(|_| corrupt(no, "bad s_len"))?;
                let key = field()?.to_string();
                let score = SequenceScore {
                    abnormal_error: error,
                    abnormal_prob: prob,
                    s_len,
                    key: key.clone(),
                };
                entries.insert(key, score, None);
            }
        }
        Ok(cache)
    }
}
