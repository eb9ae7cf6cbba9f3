//! The component-count estimator.
//!
//! Labeled sample pairs form an observed graph G'. True entities are cliques
//! in the unobserved graph G*, and every true edge reaches G' independently
//! with probability p (the sampler's empirically measured recall). Counting
//! the observed components by size and inverting the sampling moments gives
//! an unbiased estimate of the true component count.
//!
//! With n'_i the number of observed components of size i:
//!
//! ```text
//! estimate = n'_1 + n'_2 (2p-1)/p + n'_3 (1 - 6(1-p)^2 p)/(p^2 (3-2p)) + sum_{i>=4} n'_i
//! ```
//!
//! Components of size >= 4 pass through unchanged: true cliques that large
//! almost surely stay connected at the sampling rates this pipeline runs at,
//! and exact treatment of their break-up is combinatorially intractable.
//! The estimator's variance has the closed form implemented by
//! [`lshe_variance`], zero at p = 1 and monotonically decreasing in p.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::{build_tables, empirical_recall, SamplePairSet};
use crate::minhash::{signatures_for, Backend, LshParams};
use crate::oracle::PairOracle;
use crate::record::{Dataset, LabeledPairs, RecordId};
use crate::union_find::UnionFind;

/// The match-labeled subgraph observed after querying sampled pairs.
#[derive(Debug, Clone)]
pub struct ObservedGraph {
    pub num_vertices: usize,
    pub edges: Vec<(RecordId, RecordId)>,
}

/// Census of observed connected components by size: `counts[i] = n'_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentProfile {
    counts: BTreeMap<usize, usize>,
    num_vertices: usize,
}

impl ComponentProfile {
    pub fn from_counts(counts: BTreeMap<usize, usize>, num_vertices: usize) -> Self {
        debug_assert_eq!(
            counts.iter().map(|(size, n)| size * n).sum::<usize>(),
            num_vertices
        );
        ComponentProfile {
            counts,
            num_vertices,
        }
    }

    /// n'_i — number of observed components of size i.
    pub fn count(&self, size: usize) -> usize {
        self.counts.get(&size).copied().unwrap_or(0)
    }

    /// Number of observed components of size >= 4.
    pub fn four_plus(&self) -> usize {
        self.counts
            .iter()
            .filter(|(size, _)| **size >= 4)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn total_components(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }
}

/// Exact component-size census of an observed graph, via union-find.
pub fn component_profile(
    num_vertices: usize,
    edges: impl IntoIterator<Item = (RecordId, RecordId)>,
) -> Result<ComponentProfile> {
    let mut uf = UnionFind::new(num_vertices);
    for (a, b) in edges {
        if a.0 as usize >= num_vertices || b.0 as usize >= num_vertices {
            return Err(Error::EndpointOutOfRange(a.0, b.0));
        }
        uf.union(a.0, b.0);
    }
    let mut counts = BTreeMap::new();
    for size in uf.component_sizes() {
        *counts.entry(size as usize).or_insert(0) += 1;
    }
    Ok(ComponentProfile {
        counts,
        num_vertices,
    })
}

fn check_recall(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::RecallOutOfRange(p));
    }
    Ok(())
}

/// Solved true clique counts (n1*, n2*, n3*) for sizes <= 3. Estimates may be
/// negative on noisy input; they are reported as-is to preserve
/// unbiasedness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CliqueCounts {
    #[serde(rename = "1")]
    pub n1: f64,
    #[serde(rename = "2")]
    pub n2: f64,
    #[serde(rename = "3")]
    pub n3: f64,
}

/// Invert the sampling moment equations for components of size <= 3:
///
/// ```text
/// n3* = n'_3 / (p^2 (3-2p))
/// n2* = (n'_2 - n3* · 3(1-p)^2 p) / p
/// n1* = n'_1 - n2* · 2(1-p) - n3* · 3(1-p)^2
/// ```
pub fn solve_clique_counts(profile: &ComponentProfile, p: f64) -> Result<CliqueCounts> {
    check_recall(p)?;
    let (n1p, n2p, n3p) = (
        profile.count(1) as f64,
        profile.count(2) as f64,
        profile.count(3) as f64,
    );
    let q = 1.0 - p;
    let n3 = n3p / (p * p * (3.0 - 2.0 * p));
    let n2 = (n2p - n3 * 3.0 * q * q * p) / p;
    let n1 = n1p - n2 * 2.0 * q - n3 * 3.0 * q * q;
    Ok(CliqueCounts { n1, n2, n3 })
}

/// Point estimate of the true component count from an observed profile and
/// the sampling probability p.
pub fn lshe(profile: &ComponentProfile, p: f64) -> Result<f64> {
    check_recall(p)?;
    let q = 1.0 - p;
    let c2 = (2.0 * p - 1.0) / p;
    let c3 = (1.0 - 6.0 * q * q * p) / (p * p * (3.0 - 2.0 * p));
    Ok(profile.count(1) as f64
        + profile.count(2) as f64 * c2
        + profile.count(3) as f64 * c3
        + profile.four_plus() as f64)
}

/// The (n3*, n2*) coefficients of the estimator variance at recall p.
pub fn lshe_variance_coefficients(p: f64) -> Result<(f64, f64)> {
    check_recall(p)?;
    let q = p - 1.0;
    let c3 = q * q * (3.0 * p * p - p + 1.0) / (p * p * (3.0 - 2.0 * p));
    let c2 = (1.0 - p) / p;
    Ok((c3, c2))
}

/// Estimator variance:
///
/// ```text
/// V = n3* · (p-1)^2 (3p^2 - p + 1) / (p^2 (3-2p)) + n2* · (1-p)/p
/// ```
///
/// Negative plug-in counts are clamped to zero (a variance must be
/// non-negative); the point estimate is never clamped.
pub fn lshe_variance(n2_star: f64, n3_star: f64, p: f64) -> Result<f64> {
    let (c3, c2) = lshe_variance_coefficients(p)?;
    if n2_star < 0.0 || n3_star < 0.0 {
        log::warn!(
            "negative plug-in clique counts (n2*={n2_star:.3}, n3*={n3_star:.3}) clamped to 0 in the variance"
        );
    }
    Ok(n3_star.max(0.0) * c3 + n2_star.max(0.0) * c2)
}

/// Observed component counts broken out for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSummary {
    #[serde(rename = "1")]
    pub n1: usize,
    #[serde(rename = "2")]
    pub n2: usize,
    #[serde(rename = "3")]
    pub n3: usize,
    #[serde(rename = "4plus")]
    pub four_plus: usize,
}

impl From<&ComponentProfile> for ProfileSummary {
    fn from(p: &ComponentProfile) -> Self {
        ProfileSummary {
            n1: p.count(1),
            n2: p.count(2),
            n3: p.count(3),
            four_plus: p.four_plus(),
        }
    }
}

/// Point estimate with its plug-in standard error and run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub p: f64,
    /// Distinct pairs labeled (the budget actually spent).
    pub m: usize,
    pub n_prime: ProfileSummary,
    pub n_star: CliqueCounts,
    pub method: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub method_aliases: Vec<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub degenerate: bool,
    pub seed: u64,
    pub elapsed_ms: u64,
}

impl EstimateReport {
    pub fn from_profile(
        profile: &ComponentProfile,
        p: f64,
        m: usize,
        method: &str,
        seed: u64,
    ) -> Result<Self> {
        let estimate = lshe(profile, p)?;
        let stars = solve_clique_counts(profile, p)?;
        let std_error = lshe_variance(stars.n2, stars.n3, p)?.sqrt();
        Ok(EstimateReport {
            estimate,
            std_error,
            p,
            m,
            n_prime: profile.into(),
            n_star: stars,
            method: method.to_string(),
            method_aliases: Vec::new(),
            degenerate: false,
            seed,
            elapsed_ms: 0,
        })
    }
}

/// How the reported standard error is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StdErrMode {
    /// Closed-form variance with solved clique counts plugged in (default).
    Plugin,
    /// Empirical std of the point estimate across this many extra hash seeds.
    Reseed(usize),
}

impl std::str::FromStr for StdErrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "plugin" {
            return Ok(StdErrMode::Plugin);
        }
        if let Some(rest) = s.strip_prefix("reseed,") {
            let r: usize = rest
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad reseed count {:?}", rest)))?;
            if r < 2 {
                return Err(Error::InvalidParameter(
                    "reseed standard error needs at least 2 replicates".into(),
                ));
            }
            return Ok(StdErrMode::Reseed(r));
        }
        Err(Error::InvalidParameter(format!(
            "unknown stderr mode {:?} (expected plugin|reseed,R)",
            s
        )))
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub shingle_k: usize,
    pub lsh: LshParams,
    pub seed: u64,
    pub backend: Backend,
    pub bucket_cap: usize,
    pub stderr: StdErrMode,
}

impl PipelineConfig {
    pub fn new(shingle_k: usize, lsh: LshParams, seed: u64) -> Self {
        PipelineConfig {
            shingle_k,
            lsh,
            seed,
            backend: Backend::Densified,
            bucket_cap: crate::lsh::DEFAULT_BUCKET_CAP,
            stderr: StdErrMode::Plugin,
        }
    }
}

/// End-to-end estimate: sample candidate pairs, measure recall against the
/// labeled set, label the sample with the oracle, census the observed graph
/// and apply the estimator.
pub fn estimate_unique_entities(
    dataset: &Dataset,
    config: &PipelineConfig,
    truth: &LabeledPairs,
    oracle: &dyn PairOracle,
) -> Result<EstimateReport> {
    let start = Instant::now();
    let shingles = dataset.shingle_all(config.shingle_k);
    let mut report = estimate_from_shingles(&shingles, config, config.seed, truth, oracle)?;
    if let StdErrMode::Reseed(replicates) = config.stderr {
        let mut estimates = vec![report.estimate];
        for i in 1..replicates as u64 {
            let r = estimate_from_shingles(&shingles, config, config.seed ^ i, truth, oracle)?;
            estimates.push(r.estimate);
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (estimates.len() - 1) as f64;
        report.std_error = var.sqrt();
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

/// One estimate pass over pre-shingled records. Useful when sweeping many
/// sampler settings over a fixed dataset; `seed` overrides the config seed.
pub fn estimate_from_shingles(
    shingles: &[crate::record::ShingleSet],
    config: &PipelineConfig,
    seed: u64,
    truth: &LabeledPairs,
    oracle: &dyn PairOracle,
) -> Result<EstimateReport> {
    let signatures = signatures_for(shingles, seed, config.lsh, config.backend)?;
    let tables = build_tables(&signatures, config.lsh, seed)?;
    let sample = tables.sample_pairs(config.bucket_cap);
    estimate_from_sample(shingles.len(), &sample, truth, oracle, seed)
}

/// Estimate from an already-materialized sample pair set.
pub fn estimate_from_sample(
    num_records: usize,
    sample: &SamplePairSet,
    truth: &LabeledPairs,
    oracle: &dyn PairOracle,
    seed: u64,
) -> Result<EstimateReport> {
    let p = empirical_recall(sample, truth)?;
    if p == 0.0 {
        return Err(Error::EstimatorUndefinedAtZero);
    }
    let mut edges = Vec::new();
    for (a, b) in sample.iter() {
        if oracle.is_match(a, b)? {
            edges.push((a, b));
        }
    }
    let profile = component_profile(num_records, edges)?;
    EstimateReport::from_profile(&profile, p, sample.len(), "lshe", seed)
}
