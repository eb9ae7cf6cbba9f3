//! L hash tables keyed by K-row meta-hashes, and the adaptive candidate-pair
//! sampler built on them.
//!
//! Building the tables is one pass over signatures; sampling emits the union
//! over tables of all unordered pairs co-resident in a bucket. No pairwise
//! similarity is ever evaluated here — the [`crate::record::jaccard_calls`]
//! counter can prove it.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hashing::mix64;
use crate::minhash::{LshParams, MinHashSignature};
use crate::record::{LabeledPairs, RecordId};

/// Default mega-bucket guard: buckets beyond this size contribute only pairs
/// against a seeded subset of members instead of all O(b^2) pairs.
pub const DEFAULT_BUCKET_CAP: usize = 2000;

/// Pack a canonical unordered pair into one u64 (smaller id in the high word).
#[inline]
pub fn pack_pair(a: u32, b: u32) -> u64 {
    debug_assert_ne!(a, b);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    ((lo as u64) << 32) | hi as u64
}

#[inline]
pub fn unpack_pair(p: u64) -> (u32, u32) {
    ((p >> 32) as u32, p as u32)
}

/// L tables, each a list of (bucket key, record id) sorted by key. Runs of
/// equal keys are the buckets. Every non-sentinel record appears exactly once
/// per table.
#[derive(Debug, Clone)]
pub struct LshTables {
    params: LshParams,
    seed: u64,
    num_records: usize,
    skipped_sentinels: usize,
    tables: Vec<Vec<(u64, u32)>>,
}

/// Incremental table construction, for callers that stream signatures
/// instead of materializing all of them.
pub struct LshTablesBuilder {
    params: LshParams,
    seed: u64,
    table_salts: Vec<u64>,
    tables: Vec<Vec<(u64, u32)>>,
    num_records: usize,
    skipped_sentinels: usize,
}

impl LshTablesBuilder {
    pub fn new(params: LshParams, seed: u64) -> Self {
        let table_salts = (0..params.l as u64)
            .map(|i| mix64(seed ^ 0x7462_6c73_616c_7400 ^ i))
            .collect();
        LshTablesBuilder {
            params,
            seed,
            table_salts,
            tables: vec![Vec::new(); params.l],
            num_records: 0,
            skipped_sentinels: 0,
        }
    }

    /// Insert one record's signature. Sentinel signatures are skipped: empty
    /// records stay singletons by construction.
    pub fn insert(&mut self, id: RecordId, signature: &MinHashSignature) -> Result<()> {
        if signature.params() != self.params {
            return Err(Error::SignatureLengthMismatch {
                expected: self.params.slots(),
                got: signature.params().slots(),
            });
        }
        self.num_records += 1;
        if signature.is_sentinel() {
            self.skipped_sentinels += 1;
            return Ok(());
        }
        for (table, salt) in self.table_salts.iter().enumerate() {
            let key = bucket_key(*salt, signature.table_rows(table));
            self.tables[table].push((key, id.0));
        }
        Ok(())
    }

    pub fn finish(mut self) -> LshTables {
        for table in &mut self.tables {
            table.sort_unstable();
        }
        LshTables {
            params: self.params,
            seed: self.seed,
            num_records: self.num_records,
            skipped_sentinels: self.skipped_sentinels,
            tables: self.tables,
        }
    }
}

/// Order-sensitive 64-bit digest of the K row values of one table.
#[inline]
fn bucket_key(table_salt: u64, rows: &[u64]) -> u64 {
    let mut acc = table_salt;
    for &v in rows {
        acc = mix64(acc ^ v);
    }
    acc
}

/// Build all L tables from per-record signatures (record ids follow slice
/// order).
pub fn build_tables(
    signatures: &[MinHashSignature],
    params: LshParams,
    seed: u64,
) -> Result<LshTables> {
    if signatures.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot build tables for zero records".into(),
        ));
    }
    let mut builder = LshTablesBuilder::new(params, seed);
    for (i, sig) in signatures.iter().enumerate() {
        builder.insert(RecordId(i as u32), sig)?;
    }
    Ok(builder.finish())
}

impl LshTables {
    pub fn params(&self) -> LshParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_records(&self) -> usize {
        self.num_records
    }

    /// Records skipped at insert time because their shingle set was empty.
    pub fn skipped_sentinels(&self) -> usize {
        self.skipped_sentinels
    }

    /// Total (record, table) memberships; equals L x (non-sentinel records).
    pub fn total_bucket_memberships(&self) -> usize {
        self.tables.iter().map(Vec::len).sum()
    }

    /// Iterate one table's buckets as (key, member ids) runs.
    pub fn buckets(&self, table: usize) -> impl Iterator<Item = (u64, &[(u64, u32)])> {
        BucketIter {
            entries: &self.tables[table],
            pos: 0,
        }
    }

    /// Union over tables of all unordered pairs co-resident in a bucket,
    /// globally deduplicated. Buckets larger than `bucket_cap` contribute
    /// only pairs between each member and a seeded random subset of
    /// `bucket_cap` members.
    pub fn sample_pairs(&self, bucket_cap: usize) -> SamplePairSet {
        let start = Instant::now();
        let mut pairs: HashSet<u64> = HashSet::new();
        let mut capped_buckets = 0usize;
        for table in 0..self.tables.len() {
            for (key, members) in self.buckets(table) {
                let b = members.len();
                if b < 2 {
                    continue;
                }
                if b <= bucket_cap {
                    for i in 0..b {
                        for j in i + 1..b {
                            pairs.insert(pack_pair(members[i].1, members[j].1));
                        }
                    }
                } else {
                    capped_buckets += 1;
                    log::warn!(
                        "bucket of {} members in table {} exceeds cap {}; subsampling",
                        b,
                        table,
                        bucket_cap
                    );
                    let mut rng = ChaCha8Rng::seed_from_u64(mix64(
                        self.seed ^ key ^ ((table as u64) << 48) ^ 0x6361_7070_6564,
                    ));
                    let mut ids: Vec<u32> = members.iter().map(|&(_, id)| id).collect();
                    ids.shuffle(&mut rng);
                    let subset = &ids[..bucket_cap];
                    for &(_, id) in members {
                        for &other in subset {
                            if other != id {
                                pairs.insert(pack_pair(id, other));
                            }
                        }
                    }
                }
            }
        }
        SamplePairSet {
            pairs,
            params: self.params,
            seed: self.seed,
            capped_buckets,
            elapsed_ms: start.elapsed().as_millis() as u64,
        }
    }
}

struct BucketIter<'a> {
    entries: &'a [(u64, u32)],
    pos: usize,
}

impl<'a> Iterator for BucketIter<'a> {
    type Item = (u64, &'a [(u64, u32)]);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.entries.len() {
            return None;
        }
        let key = self.entries[self.pos].0;
        let start = self.pos;
        while self.pos < self.entries.len() && self.entries[self.pos].0 == key {
            self.pos += 1;
        }
        Some((key, &self.entries[start..self.pos]))
    }
}

/// Deduplicated unordered candidate pairs with generation metadata.
#[derive(Debug, Clone)]
pub struct SamplePairSet {
    pairs: HashSet<u64>,
    pub params: LshParams,
    pub seed: u64,
    pub capped_buckets: usize,
    pub elapsed_ms: u64,
}

impl SamplePairSet {
    /// Sample size m.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: RecordId, b: RecordId) -> bool {
        a != b && self.pairs.contains(&pack_pair(a.0, b.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (RecordId, RecordId)> + '_ {
        self.pairs.iter().map(|&p| {
            let (a, b) = unpack_pair(p);
            (RecordId(a), RecordId(b))
        })
    }

    /// Pairs in canonical sorted order.
    pub fn sorted_pairs(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<u64> = self.pairs.iter().copied().collect();
        v.sort_unstable();
        v.into_iter().map(unpack_pair).collect()
    }

    /// Export as delimited text, one `id_a,id_b` pair per line, sorted.
    pub fn export(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (a, b) in self.sorted_pairs() {
            writeln!(w, "{},{}", a, b)?;
        }
        Ok(())
    }
}

/// Fraction of known true match pairs recovered by the sample: the empirical
/// sampling probability p.
pub fn empirical_recall(sample: &SamplePairSet, truth: &LabeledPairs) -> Result<f64> {
    let matches = truth.matches();
    if matches.is_empty() {
        return Err(Error::RecallUndefined);
    }
    let hit = matches
        .iter()
        .filter(|&&(a, b)| sample.contains(a, b))
        .count();
    Ok(hit as f64 / matches.len() as f64)
}

/// Fraction of all C(M,2) pairs avoided: `1 - m / (M(M-1)/2)`.
pub fn reduction_ratio(m: usize, num_records: usize) -> Result<f64> {
    if num_records < 2 {
        return Err(Error::InvalidParameter(
            "reduction ratio needs at least 2 records".into(),
        ));
    }
    let total = num_records as f64 * (num_records as f64 - 1.0) / 2.0;
    Ok(1.0 - m as f64 / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minhash::{signatures_for, Backend};
    use crate::record::{jaccard_calls, ShingleSet};

    fn sets(specs: &[&[u64]]) -> Vec<ShingleSet> {
        specs
            .iter()
            .map(|s| ShingleSet::from_tokens(s.to_vec(), 2))
            .collect()
    }

    fn tables_for(specs: &[&[u64]], k: usize, l: usize, seed: u64) -> LshTables {
        let params = LshParams::new(k, l).unwrap();
        let sigs = signatures_for(&sets(specs), seed, params, Backend::Densified).unwrap();
        build_tables(&sigs, params, seed).unwrap()
    }

    #[test]
    fn single_record_builds_one_bucket_per_table() {
        let t = tables_for(&[&[1, 2, 3]], 2, 4, 1);
        for table in 0..4 {
            assert_eq!(t.buckets(table).count(), 1);
        }
        assert!(t.sample_pairs(DEFAULT_BUCKET_CAP).is_empty());
    }

    #[test]
    fn identical_records_share_every_bucket() {
        let t = tables_for(&[&[1, 2, 3], &[1, 2, 3]], 2, 5, 9);
        for table in 0..5 {
            let buckets: Vec<_> = t.buckets(table).collect();
            assert_eq!(buckets.len(), 1);
            assert_eq!(buckets[0].1.len(), 2);
        }
        let s = t.sample_pairs(DEFAULT_BUCKET_CAP);
        assert_eq!(s.len(), 1);
        assert!(s.contains(RecordId(0), RecordId(1)));
    }

    #[test]
    fn membership_invariant_holds() {
        let t = tables_for(&[&[1, 2], &[3, 4], &[5, 6], &[1, 2]], 3, 6, 4);
        assert_eq!(t.total_bucket_memberships(), 4 * 6);
    }

    #[test]
    fn sentinels_are_skipped() {
        let params = LshParams::new(2, 3).unwrap();
        let input = sets(&[&[1, 2, 3], &[], &[4, 5]]);
        let sigs = signatures_for(&input, 2, params, Backend::Densified).unwrap();
        let t = build_tables(&sigs, params, 2).unwrap();
        assert_eq!(t.num_records(), 3);
        assert_eq!(t.total_bucket_memberships(), 2 * 3);
    }

    #[test]
    fn bucket_of_b_gives_choose_two_pairs() {
        // Four identical records in one bucket -> C(4,2) = 6 pairs.
        let specs: Vec<&[u64]> = vec![&[7, 8, 9]; 4];
        let t = tables_for(&specs, 1, 1, 5);
        let s = t.sample_pairs(DEFAULT_BUCKET_CAP);
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn mega_bucket_cap_limits_pairs_and_is_recorded() {
        let specs: Vec<&[u64]> = vec![&[7, 8, 9]; 12];
        let t = tables_for(&specs, 1, 1, 5);
        let full = t.sample_pairs(DEFAULT_BUCKET_CAP);
        assert_eq!(full.len(), 66);
        assert_eq!(full.capped_buckets, 0);
        let capped = t.sample_pairs(4);
        assert_eq!(capped.capped_buckets, 1);
        assert!(capped.len() < 66);
        assert!(capped.len() <= 12 * 4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let specs: Vec<&[u64]> = vec![
            &[1, 2, 3, 4],
            &[1, 2, 3, 5],
            &[9, 10, 11],
            &[9, 10, 12],
            &[20, 21, 22],
        ];
        let a = tables_for(&specs, 2, 6, 42).sample_pairs(DEFAULT_BUCKET_CAP);
        let b = tables_for(&specs, 2, 6, 42).sample_pairs(DEFAULT_BUCKET_CAP);
        assert_eq!(a.sorted_pairs(), b.sorted_pairs());
    }

    #[test]
    fn build_and_sample_never_touch_jaccard() {
        // The counter is process-global and other tests may exercise
        // jaccard concurrently; a genuine regression fails every attempt.
        for _ in 0..5 {
            let before = jaccard_calls();
            let specs: Vec<&[u64]> = vec![&[1, 2, 3], &[1, 2, 4], &[5, 6, 7], &[5, 6, 8]];
            let t = tables_for(&specs, 1, 4, 3);
            let _ = t.sample_pairs(DEFAULT_BUCKET_CAP);
            if jaccard_calls() == before {
                return;
            }
        }
        panic!("sampler path appears to evaluate pairwise similarities");
    }

    #[test]
    fn recall_and_reduction_ratio() {
        let specs: Vec<&[u64]> = vec![&[1, 2, 3], &[1, 2, 3], &[50, 60, 70], &[80, 90, 100]];
        let t = tables_for(&specs, 1, 8, 11);
        let s = t.sample_pairs(DEFAULT_BUCKET_CAP);
        let truth = LabeledPairs::from_rows([(0u32, 1u32, true)], 4).unwrap();
        assert_eq!(empirical_recall(&s, &truth).unwrap(), 1.0);

        let miss = LabeledPairs::from_rows([(2u32, 3u32, true)], 4).unwrap();
        assert_eq!(empirical_recall(&s, &miss).unwrap(), 0.0);

        let none = LabeledPairs::from_rows([(0u32, 2u32, false)], 4).unwrap();
        assert!(matches!(
            empirical_recall(&s, &none),
            Err(Error::RecallUndefined)
        ));

        assert_eq!(reduction_ratio(0, 10).unwrap(), 1.0);
        assert_eq!(reduction_ratio(45, 10).unwrap(), 0.0);
        assert!(reduction_ratio(1, 1).is_err());
    }

    #[test]
    fn export_is_sorted(){
        let specs: Vec<&[u64]> = vec![&[7, 8, 9]; 4];
        let t = tables_for(&specs, 1, 1, 5);
        let s = t.sample_pairs(DEFAULT_BUCKET_CAP);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        s.export(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert_eq!(lines[0], "0,1");
    }
}
