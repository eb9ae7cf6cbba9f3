//! Record ingestion, string normalization, k-gram shingling and exact
//! Jaccard similarity.
//!
//! Records are rows of string attributes with dense integer ids assigned in
//! file order. Each record can be rendered to a single normalized string and
//! shingled into a set of 64-bit token identifiers (hashed k-grams); exact
//! Jaccard similarity between two records is computed on those token sets.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::token_hash;

/// Dense record index within a [`Dataset`] (0..M-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordId(pub u32);

impl std::fmt::Display for RecordId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// A single row: ordered attribute strings. Missing values are kept as empty
/// strings so attribute positions stay aligned.
#[derive(Debug, Clone)]
pub struct Record {
    pub id: RecordId,
    pub attributes: Vec<String>,
}

/// A collection of records sharing one schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("no data rows".into()));
        }
        let arity = schema.len();
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, attributes)| {
                if attributes.len() != arity {
                    return Err(Error::MalformedRow {
                        line: i + 2, // 1-based, after the header
                        msg: format!("expected {} columns, got {}", arity, attributes.len()),
                    });
                }
                Ok(Record {
                    id: RecordId(i as u32),
                    attributes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { schema, records })
    }

    /// Number of records M.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Shingle every record under the default normalization policy.
    pub fn shingle_all(&self, k: usize) -> Vec<ShingleSet> {
        use rayon::prelude::*;
        let policy = NormalizationPolicy::default();
        self.records
            .par_iter()
            .map(|r| shingle(&record_string(r, &policy), k))
            .collect()
    }
}

/// Match/non-match label for a record pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    Match,
    NonMatch,
}

/// Canonicalized labeled record pairs: smaller id first, no duplicates, no
/// self-pairs.
#[derive(Debug, Clone, Default)]
pub struct LabeledPairs {
    pairs: Vec<(RecordId, RecordId, MatchLabel)>,
}

impl LabeledPairs {
    pub fn from_rows(rows: impl IntoIterator<Item = (u32, u32, bool)>, m: usize) -> Result<Self> {
        let mut seen: HashMap<(u32, u32), bool> = HashMap::new();
        let mut order: Vec<(u32, u32)> = Vec::new();
        for (a, b, is_match) in rows {
            if a == b {
                return Err(Error::SelfPair(a));
            }
            for id in [a, b] {
                if id as usize >= m {
                    return Err(Error::IdOutOfRange { id, size: m });
                }
            }
            let key = (a.min(b), a.max(b));
            match seen.get(&key) {
                Some(&prev) if prev != is_match => {
                    return Err(Error::ConflictingLabel(key.0, key.1));
                }
                Some(_) => {}
                None => {
                    seen.insert(key, is_match);
                    order.push(key);
                }
            }
        }
        let pairs = order
            .into_iter()
            .map(|key| {
                let label = if seen[&key] {
                    MatchLabel::Match
                } else {
                    MatchLabel::NonMatch
                };
                (RecordId(key.0), RecordId(key.1), label)
            })
            .collect();
        Ok(LabeledPairs { pairs })
    }

    pub fn iter(&self) -> impl Iterator<Item = &(RecordId, RecordId, MatchLabel)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The matched pairs only, canonical order.
    pub fn matches(&self) -> Vec<(RecordId, RecordId)> {
        self.pairs
            .iter()
            .filter(|(_, _, l)| *l == MatchLabel::Match)
            .map(|&(a, b, _)| (a, b))
            .collect()
    }

    /// Deterministic disjoint split: the first part holds `fraction` of the
    /// pairs (seeded shuffle), the second the rest. Lets recall estimation
    /// and classifier training use disjoint labeled pairs.
    pub fn split(&self, fraction: f64, seed: u64) -> (LabeledPairs, LabeledPairs) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut pairs = self.pairs.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        pairs.shuffle(&mut rng);
        let cut = ((pairs.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let second = pairs.split_off(cut.min(pairs.len()));
        (LabeledPairs { pairs }, LabeledPairs { pairs: second })
    }
}

/// A record's k-gram token set. Tokens are 64-bit seed-independent hashes of
/// the raw k-gram bytes; the set is stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    tokens: Vec<u64>,
    pub k: usize,
}

impl ShingleSet {
    pub fn from_tokens(mut tokens: Vec<u64>, k: usize) -> Self {
        tokens.sort_unstable();
        tokens.dedup();
        ShingleSet { tokens, k }
    }

    /// Sorted, deduplicated token identifiers.
    pub fn tokens(&self) -> &[u64] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sorted symmetric difference of two token sets.
    pub fn symmetric_difference(&self, other: &ShingleSet) -> Vec<u64> {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.tokens, &other.tokens);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        out
    }
}

/// String normalization applied before shingling: uppercase, non-alphanumeric
/// characters become separators, separator runs collapse to a single space,
/// attributes join on a single space.
#[derive(Debug, Clone)]
pub struct NormalizationPolicy {
    pub separator: char,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy { separator: ' ' }
    }
}

/// Render a record as one normalized string under the policy.
pub fn record_string(record: &Record, policy: &NormalizationPolicy) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for attr in &record.attributes {
        for ch in attr.chars() {
            if ch.is_alphanumeric() {
                if pending_sep && !out.is_empty() {
                    out.push(policy.separator);
                }
                pending_sep = false;
                out.extend(ch.to_uppercase());
            } else {
                pending_sep = true;
            }
        }
        pending_sep = true; // attribute boundary acts as a separator
    }
    out
}

/// The set of all length-k contiguous substrings of `s`, each mapped to a
/// 64-bit token id. Strings shorter than k yield the empty set.
pub fn shingle(s: &str, k: usize) -> ShingleSet {
    assert!(k >= 1, "shingle length must be >= 1");
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < k {
        return ShingleSet::from_tokens(Vec::new(), k);
    }
    let mut buf = String::new();
    let tokens = chars
        .windows(k)
        .map(|w| {
            buf.clear();
            buf.extend(w.iter());
            token_hash(buf.as_bytes())
        })
        .collect();
    ShingleSet::from_tokens(tokens, k)
}

static JACCARD_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of exact Jaccard evaluations performed so far in this process.
/// The LSH sampling path must never move this counter.
pub fn jaccard_calls() -> u64 {
    JACCARD_CALLS.load(Ordering::Relaxed)
}

/// Exact Jaccard similarity |a ∩ b| / |a ∪ b|. Two empty sets compare equal
/// (1.0): fully-missing records are textually indistinguishable.
pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    JACCARD_CALLS.fetch_add(1, Ordering::Relaxed);
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j) = (0, 0);
    let (ta, tb) = (a.tokens(), b.tokens());
    let mut inter = 0usize;
    while i < ta.len() && j < tb.len() {
        match ta[i].cmp(&tb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

/// Load records from a delimited file with a header row. `columns` selects
/// the attribute columns by name; row order defines record ids.
pub fn load_records(path: &Path, columns: &[String], delimiter: u8) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut indices = Vec::with_capacity(columns.len());
    for col in columns {
        let idx = header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::MissingColumn(col.clone()))?;
        indices.push(idx);
    }
    let arity = header.len();
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != arity {
            return Err(Error::MalformedRow {
                line,
                msg: format!("expected {} columns, got {}", arity, row.len()),
            });
        }
        rows.push(
            indices
                .iter()
                .map(|&idx| row.get(idx).unwrap_or("").to_string())
                .collect::<Vec<_>>(),
        );
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{}", path.display())));
    }
    Dataset::new(columns.to_vec(), rows)
}

/// Load a single column as per-record values (e.g. an entity-id column used
/// as complete ground truth).
pub fn load_column(path: &Path, column: &str, delimiter: u8) -> Result<Vec<String>> {
    let ds = load_records(path, &[column.to_string()], delimiter)?;
    Ok(ds
        .records
        .into_iter()
        .map(|mut r| r.attributes.pop().unwrap_or_default())
        .collect())
}

/// Load labeled pairs from a delimited file of `id_a,id_b,label` rows with
/// label in {0,1}. Pairs are canonicalized and deduplicated; `m` is the
/// companion dataset size used for range checks.
pub fn load_labeled_pairs(path: &Path, m: usize) -> Result<LabeledPairs> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() < 3 {
            return Err(Error::MalformedRow {
                line,
                msg: format!("expected 3 columns, got {}", row.len()),
            });
        }
        let parse = |field: usize| -> Result<u32> {
            row.get(field)
                .unwrap_or("")
                .trim()
                .parse::<u32>()
                .map_err(|e| Error::MalformedRow {
                    line,
                    msg: format!("column {}: {}", field, e),
                })
        };
        let a = parse(0)?;
        let b = parse(1)?;
        let label = match row.get(2).unwrap_or("").trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    msg: format!("label must be 0 or 1, got {:?}", other),
                })
            }
        };
        rows.push((a, b, label));
    }
    LabeledPairs::from_rows(rows, m)
}
