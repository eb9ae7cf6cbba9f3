//! K×L minwise signatures.
//!
//! Two backends produce the same signature layout:
//!
//! * [`classical_signature`] evaluates one seeded 64-bit mixing function per
//!   signature slot and keeps the minimum over the token set — the textbook
//!   construction, O(|set| · K · L).
//! * [`densified_signature`] hashes every token exactly once, routes it to
//!   one of K·L bins by the hash's high bits, keeps per-bin minima, and fills
//!   empty bins by borrowing from an occupied bin chosen by a data-independent
//!   probe sequence, mixing the borrow position into the filled value. One
//!   pass regardless of K·L.
//!
//! Permutations are approximated by seeded mixing functions: the token
//! universe is 2^64, so explicit permutations are infeasible, and the
//! collision-fidelity tests bound the approximation error.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{derive_key, keyed_hash, mix64, range_reduce};
use crate::record::ShingleSet;

const DENSIFY_SALT: u64 = 0x6c62_272e_07bb_0142;
const ROUTE_SALT: u64 = 0x27d4_eb2f_1656_67c5;

/// Sampler shape: `k` minhash rows per table, `l` tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshParams {
    pub k: usize,
    pub l: usize,
}

impl LshParams {
    pub fn new(k: usize, l: usize) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(Error::InvalidParameter("k and l must be >= 1".into()));
        }
        Ok(LshParams { k, l })
    }

    /// Total signature slots K·L.
    pub fn slots(&self) -> usize {
        self.k * self.l
    }
}

/// Which signature backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Classical,
    Densified,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Backend::Classical),
            "densified" | "doph" => Ok(Backend::Densified),
            other => Err(Error::InvalidParameter(format!(
                "unknown backend {:?} (expected classical|densified)",
                other
            ))),
        }
    }
}

/// Reproducible family of 64-bit-to-64-bit mixing functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamilySpec {
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct HashFamily {
    seed: u64,
    keys: Vec<u64>,
}

impl HashFamily {
    pub fn new(spec: HashFamilySpec) -> Result<Self> {
        if spec.count == 0 {
            return Err(Error::InvalidParameter(
                "hash family count must be >= 1".into(),
            ));
        }
        let keys = (0..spec.count as u64)
            .map(|f| derive_key(spec.seed, f))
            .collect();
        Ok(HashFamily {
            seed: spec.seed,
            keys,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Apply the f-th function to a token.
    #[inline]
    pub fn hash(&self, f: usize, token: u64) -> u64 {
        keyed_hash(self.keys[f], token)
    }
}

/// K·L minhash values, laid out table-major: slot (table i, row j) lives at
/// `i*k + j`. Empty records carry a reserved sentinel that never collides
/// with a real signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    values: Vec<u64>,
    params: LshParams,
    sentinel: bool,
}

impl MinHashSignature {
    /// The reserved signature for records with an empty shingle set. Such
    /// records are skipped at table-insert time and stay singletons.
    pub fn sentinel(params: LshParams) -> Self {
        MinHashSignature {
            values: vec![u64::MAX; params.slots()],
            params,
            sentinel: true,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.sentinel
    }

    pub fn params(&self) -> LshParams {
        self.params
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// Value at (table, row).
    #[inline]
    pub fn value(&self, table: usize, row: usize) -> u64 {
        self.values[table * self.params.k + row]
    }

    /// The K contiguous row values of one table.
    #[inline]
    pub fn table_rows(&self, table: usize) -> &[u64] {
        let k = self.params.k;
        &self.values[table * k..(table + 1) * k]
    }
}

/// Probability that a pair at Jaccard similarity `j` lands in the sample:
/// `1 - (1 - j^K)^L`.
pub fn retrieval_probability(j: f64, params: LshParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&j));
    1.0 - (1.0 - j.powi(params.k as i32)).powi(params.l as i32)
}

/// Classical minwise signature: slot f keeps `min over tokens of h_f(token)`.
pub fn classical_signature(
    set: &ShingleSet,
    family: &HashFamily,
    params: LshParams,
) -> Result<MinHashSignature> {
    if set.is_empty() {
        return Err(Error::EmptyShingleSet);
    }
    if family.len() != params.slots() {
        return Err(Error::SignatureLengthMismatch {
            expected: params.slots(),
            got: family.len(),
        });
    }
    let values = (0..params.slots())
        .map(|f| {
            set.tokens()
                .iter()
                .map(|&t| family.hash(f, t))
                .min()
                .expect("non-empty set")
        })
        .collect();
    Ok(MinHashSignature {
        values,
        params,
        sentinel: false,
    })
}

/// Per-call instrumentation for the one-pass backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct DensifiedStats {
    /// Token hash evaluations: exactly one per token, independent of K·L.
    pub hash_evals: usize,
    /// Bins that had to be filled by borrowing.
    pub filled_bins: usize,
}

/// One-pass densified signature. Statistically interchangeable with the
/// classical backend at the bucket level; densification fills empty bins by
/// probing a seeded, data-independent bin sequence and mixing the probe
/// offset and destination bin into the borrowed value, so two sets that
/// borrow the same source collide exactly when the source values collide.
pub fn densified_signature(
    set: &ShingleSet,
    seed: u64,
    params: LshParams,
) -> Result<MinHashSignature> {
    densified_signature_with_stats(set, seed, params).map(|(sig, _)| sig)
}

pub fn densified_signature_with_stats(
    set: &ShingleSet,
    seed: u64,
    params: LshParams,
) -> Result<(MinHashSignature, DensifiedStats)> {
    if set.is_empty() {
        return Err(Error::EmptyShingleSet);
    }
    let bins = params.slots();
    let route_key = mix64(seed ^ ROUTE_SALT);
    let mut values = vec![u64::MAX; bins];
    let mut occupied = vec![false; bins];
    let mut stats = DensifiedStats::default();

    for &token in set.tokens() {
        let h = keyed_hash(route_key, token);
        stats.hash_evals += 1;
        let bin = range_reduce(h, bins);
        if h < values[bin] || !occupied[bin] {
            values[bin] = h;
        }
        occupied[bin] = true;
    }

    let densify_key = mix64(seed ^ DENSIFY_SALT);
    for bin in 0..bins {
        if occupied[bin] {
            continue;
        }
        stats.filled_bins += 1;
        let mut filled = None;
        for attempt in 1u64..=(8 * bins as u64).max(64) {
            let probe = mix64(densify_key ^ (bin as u64) ^ attempt.rotate_left(32));
            let source = range_reduce(probe, bins);
            if occupied[source] {
                let salt = mix64(densify_key ^ ((bin as u64) << 20) ^ attempt);
                filled = Some(mix64(values[source] ^ salt));
                break;
            }
        }
        // The probe sequence missing every occupied bin is astronomically
        // unlikely; fall back to a deterministic scan so the pass always
        // terminates.
        values[bin] = filled.unwrap_or_else(|| {
            let source = (bin + 1..bin + bins)
                .map(|i| i % bins)
                .find(|&i| occupied[i])
                .expect("non-empty set occupies at least one bin");
            mix64(values[source] ^ mix64(densify_key ^ (bin as u64)))
        });
    }

    Ok((
        MinHashSignature {
            values,
            params,
            sentinel: false,
        },
        stats,
    ))
}

/// Compute a signature with the chosen backend, substituting the sentinel
/// for empty sets.
pub fn signature_or_sentinel(
    set: &ShingleSet,
    family: Option<&HashFamily>,
    seed: u64,
    params: LshParams,
    backend: Backend,
) -> Result<MinHashSignature> {
    if set.is_empty() {
        return Ok(MinHashSignature::sentinel(params));
    }
    match backend {
        Backend::Classical => {
            let family = family.expect("classical backend requires a hash family");
            classical_signature(set, family, params)
        }
        Backend::Densified => densified_signature(set, seed, params),
    }
}

/// Signatures for a whole dataset's shingle sets, in record order.
pub fn signatures_for(
    sets: &[ShingleSet],
    seed: u64,
    params: LshParams,
    backend: Backend,
) -> Result<Vec<MinHashSignature>> {
    use rayon::prelude::*;
    let family = match backend {
        Backend::Classical => Some(HashFamily::new(HashFamilySpec {
            seed,
            count: params.slots(),
        })?),
        Backend::Densified => None,
    };
    sets.par_iter()
        .map(|set| signature_or_sentinel(set, family.as_ref(), seed, params, backend))
        .collect()
}

const CACHE_MAGIC: &[u8; 8] = b"ECMHSIG\0";
const CACHE_VERSION: u32 = 1;

/// Write signatures to the binary cache format: header (magic, version, M,
/// K, L, seed) then M·K·L little-endian u64 values, record-major in
/// (table, row) order.
pub fn write_signature_cache(
    path: &Path,
    signatures: &[MinHashSignature],
    seed: u64,
) -> Result<()> {
    let params = signatures
        .first()
        .map(|s| s.params())
        .ok_or_else(|| Error::InvalidParameter("no signatures to cache".into()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(signatures.len() as u64).to_le_bytes())?;
    w.write_all(&(params.k as u32).to_le_bytes())?;
    w.write_all(&(params.l as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    for sig in signatures {
        if sig.params() != params {
            return Err(Error::SignatureLengthMismatch {
                expected: params.slots(),
                got: sig.params().slots(),
            });
        }
        for v in sig.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a signature cache. Records whose slots are all `u64::MAX` are
/// restored as sentinels (a real signature hits that pattern with
/// probability ~0).
pub fn read_signature_cache(path: &Path) -> Result<(Vec<MinHashSignature>, u64)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::BadFileFormat("signature cache magic mismatch".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CACHE_VERSION {
        return Err(Error::BadFileFormat(format!(
            "unsupported signature cache version {}",
            version
        )));
    }
    r.read_exact(&mut u64buf)?;
    let m = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf)?;
    let k = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let l = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    let params = LshParams::new(k, l)?;
    let mut signatures = Vec::with_capacity(m);
    for _ in 0..m {
        let mut values = Vec::with_capacity(params.slots());
        for _ in 0..params.slots() {
            r.read_exact(&mut u64buf)?;
            values.push(u64::from_le_bytes(u64buf));
        }
        let sentinel = values.iter().all(|&v| v == u64::MAX);
        signatures.push(MinHashSignature {
            values,
            params,
            sentinel,
        });
    }
    Ok((signatures, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ShingleSet;

    fn set_of(tokens: impl IntoIterator<Item = u64>) -> ShingleSet {
        ShingleSet::from_tokens(tokens.into_iter().collect(), 2)
    }

    /// Two sets of size `s` sharing `c` tokens: Jaccard = c / (2s - c).
    fn pair_at(s: usize, c: usize, salt: u64) -> (ShingleSet, ShingleSet, f64) {
        let shared: Vec<u64> = (0..c as u64).map(|i| mix64(salt ^ (i << 1))).collect();
        let only_a: Vec<u64> = (0..(s - c) as u64)
            .map(|i| mix64(salt ^ 0xa000_0000 ^ i))
            .collect();
        let only_b: Vec<u64> = (0..(s - c) as u64)
            .map(|i| mix64(salt ^ 0xb000_0000 ^ i))
            .collect();
        let a = set_of(shared.iter().chain(&only_a).copied());
        let b = set_of(shared.iter().chain(&only_b).copied());
        let j = c as f64 / (2 * s - c) as f64;
        (a, b, j)
    }

    #[test]
    fn family_is_reproducible_and_seed_separated() {
        let f1 = HashFamily::new(HashFamilySpec { seed: 1, count: 2 }).unwrap();
        let f2 = HashFamily::new(HashFamilySpec { seed: 1, count: 2 }).unwrap();
        let f3 = HashFamily::new(HashFamilySpec { seed: 2, count: 2 }).unwrap();
        assert_eq!(f1.keys, f2.keys);
        assert_ne!(f1.keys, f3.keys);
        assert!(HashFamily::new(HashFamilySpec { seed: 1, count: 0 }).is_err());
        let f = HashFamily::new(HashFamilySpec { seed: 3, count: 150 }).unwrap();
        assert_eq!(f.len(), 150); // K=15, L=10
    }

    #[test]
    fn classical_singleton_set_hashes_directly() {
        let params = LshParams::new(2, 3).unwrap();
        let family = HashFamily::new(HashFamilySpec { seed: 9, count: 6 }).unwrap();
        let set = set_of([42]);
        let sig = classical_signature(&set, &family, params).unwrap();
        for f in 0..6 {
            assert_eq!(sig.values()[f], family.hash(f, 42));
        }
    }

    #[test]
    fn signatures_deterministic_for_identical_sets() {
        let params = LshParams::new(3, 4).unwrap();
        let family = HashFamily::new(HashFamilySpec { seed: 5, count: 12 }).unwrap();
        let set = set_of([1, 2, 3, 4, 5]);
        let a = classical_signature(&set, &family, params).unwrap();
        let b = classical_signature(&set, &family, params).unwrap();
        assert_eq!(a, b);
        let c = densified_signature(&set, 5, params).unwrap();
        let d = densified_signature(&set, 5, params).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn empty_set_is_an_error_and_sentinel_substitutes() {
        let params = LshParams::new(2, 2).unwrap();
        let family = HashFamily::new(HashFamilySpec { seed: 0, count: 4 }).unwrap();
        let empty = set_of([]);
        assert!(matches!(
            classical_signature(&empty, &family, params),
            Err(Error::EmptyShingleSet)
        ));
        assert!(matches!(
            densified_signature(&empty, 0, params),
            Err(Error::EmptyShingleSet)
        ));
        let s = signature_or_sentinel(&empty, Some(&family), 0, params, Backend::Classical).unwrap();
        assert!(s.is_sentinel());
    }

    #[test]
    fn classical_per_slot_collision_tracks_jaccard() {
        // 10,000 independent functions; agreement rate within 3-sigma of J.
        let params = LshParams::new(1, 10_000).unwrap();
        let family = HashFamily::new(HashFamilySpec {
            seed: 0xfeed,
            count: 10_000,
        })
        .unwrap();
        for (s, c, salt) in [(30, 20, 11u64), (40, 8, 17), (25, 22, 23)] {
            let (a, b, j) = pair_at(s, c, salt);
            let sa = classical_signature(&a, &family, params).unwrap();
            let sb = classical_signature(&b, &family, params).unwrap();
            let agree = sa
                .values()
                .iter()
                .zip(sb.values())
                .filter(|(x, y)| x == y)
                .count();
            let rate = agree as f64 / 10_000.0;
            let sigma = (j * (1.0 - j) / 10_000.0).sqrt();
            assert!(
                (rate - j).abs() <= 3.0 * sigma,
                "rate {rate} vs J {j} (3s = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn densified_hashes_each_token_once() {
        for (k, l) in [(2, 8), (15, 10), (1, 100)] {
            let params = LshParams::new(k, l).unwrap();
            let set = set_of((0..37).map(mix64));
            let (_, stats) = densified_signature_with_stats(&set, 7, params).unwrap();
            assert_eq!(stats.hash_evals, set.len());
        }
    }

    #[test]
    fn densified_dense_set_needs_no_fill() {
        let params = LshParams::new(2, 8).unwrap(); // 16 bins
        let set = set_of((0..16u64 * 16).map(|i| mix64(0x51 ^ (i * 3))));
        assert!(set.len() >= 16 * params.slots());
        let (sig, stats) = densified_signature_with_stats(&set, 3, params).unwrap();
        assert_eq!(stats.filled_bins, 0);

        // With no densification the result must equal per-bin minima.
        let route_key = mix64(3 ^ ROUTE_SALT);
        let mut expect = vec![u64::MAX; params.slots()];
        for &t in set.tokens() {
            let h = keyed_hash(route_key, t);
            let bin = range_reduce(h, params.slots());
            expect[bin] = expect[bin].min(h);
        }
        assert_eq!(sig.values(), expect.as_slice());
    }

    #[test]
    fn densified_per_slot_collision_matches_classical() {
        // J = 0.5 pair; per-slot collision frequency averaged over 2,000
        // seeds must sit within ±0.03 of the classical backend's frequency.
        let params = LshParams::new(2, 8).unwrap();
        let (a, b, j) = pair_at(30, 20, 77);
        assert!((j - 0.5).abs() < 1e-12);
        let slots = params.slots() as f64;
        let (mut agree_c, mut agree_d) = (0.0, 0.0);
        for seed in 0..2000u64 {
            let family = HashFamily::new(HashFamilySpec {
                seed,
                count: params.slots(),
            })
            .unwrap();
            let ca = classical_signature(&a, &family, params).unwrap();
            let cb = classical_signature(&b, &family, params).unwrap();
            agree_c += ca
                .values()
                .iter()
                .zip(cb.values())
                .filter(|(x, y)| x == y)
                .count() as f64
                / slots;
            let da = densified_signature(&a, seed, params).unwrap();
            let db = densified_signature(&b, seed, params).unwrap();
            agree_d += da
                .values()
                .iter()
                .zip(db.values())
                .filter(|(x, y)| x == y)
                .count() as f64
                / slots;
        }
        let (rate_c, rate_d) = (agree_c / 2000.0, agree_d / 2000.0);
        assert!(
            (rate_c - rate_d).abs() <= 0.03,
            "classical {rate_c} vs densified {rate_d}"
        );
    }

    #[test]
    fn retrieval_probability_values() {
        let p = |j, k, l| retrieval_probability(j, LshParams::new(k, l).unwrap());
        assert_eq!(p(1.0, 3, 7), 1.0);
        assert_eq!(p(0.37, 1, 1), 0.37);
        assert!((p(0.5, 2, 4) - 0.68359375).abs() < 1e-12);
    }

    #[test]
    fn retrieval_probability_monotonicity_grid() {
        // Increasing in J and L, decreasing in K.
        for k in 1..=6 {
            for l in 1..=6 {
                let params = LshParams::new(k, l).unwrap();
                let mut prev = -1.0;
                for step in 0..=20 {
                    let j = step as f64 / 20.0;
                    let v = retrieval_probability(j, params);
                    assert!(v >= prev);
                    prev = v;
                }
            }
        }
        for j in [0.2, 0.5, 0.8] {
            for k in 1..=6 {
                for l in 1..6 {
                    let lo = retrieval_probability(j, LshParams::new(k, l).unwrap());
                    let hi = retrieval_probability(j, LshParams::new(k, l + 1).unwrap());
                    assert!(hi >= lo);
                }
            }
            for l in 1..=6 {
                for k in 1..6 {
                    let hi = retrieval_probability(j, LshParams::new(k, l).unwrap());
                    let lo = retrieval_probability(j, LshParams::new(k + 1, l).unwrap());
                    assert!(lo <= hi);
                }
            }
        }
    }

    #[test]
    fn signature_cache_roundtrip() {
        let params = LshParams::new(3, 5).unwrap();
        let sets = [set_of([1, 2, 3]), set_of([]), set_of([9, 10])];
        let sigs: Vec<_> = sets
            .iter()
            .map(|s| signature_or_sentinel(s, None, 42, params, Backend::Densified).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sigs.bin");
        write_signature_cache(&path, &sigs, 42).unwrap();
        let (loaded, seed) = read_signature_cache(&path).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(loaded, sigs);
        assert!(loaded[1].is_sentinel());
    }

    #[test]
    fn signature_cache_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a signature cache").unwrap();
        assert!(matches!(
            read_signature_cache(&path),
            Err(Error::BadFileFormat(_))
        ));
    }
}
