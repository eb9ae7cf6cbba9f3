//! Competing estimators under a shared edge-query budget.
//!
//! All three sample pairs non-adaptively, so their accuracy at a matched
//! budget is the reference point for the adaptive sampler:
//!
//! * [`prse`] — uniform pair sampling, then the same component-count
//!   estimator with the known inclusion rate `p = 2m / (M(M-1))`.
//! * [`bfse_vertex_bfs`] — BFS component discovery from uniformly drawn
//!   vertices; `M * mean(1/|C(v)|)` over completed explorations.
//! * [`rsge_induced_subgraph`] — label every pair of a random vertex subset
//!   and invert the induced-subgraph moment system.
//!
//! Each distinct labeled pair is charged to an [`EdgeQueryBudget`]; cached
//! re-queries are free. The conventional acronym labels for the latter two
//! procedures are attached inconsistently across the literature, so methods
//! here are tagged by mechanism and both acronyms ride along as aliases.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{component_profile, ComponentProfile, EstimateReport};
use crate::lsh::pack_pair;
use crate::oracle::PairOracle;
use crate::record::RecordId;

/// Budgeted, memoized access to an oracle: `used` counts distinct pairs.
pub struct EdgeQueryBudget {
    limit: usize,
    cache: HashMap<u64, bool>,
}

impl EdgeQueryBudget {
    pub fn new(limit: usize) -> Self {
        EdgeQueryBudget {
            limit,
            cache: HashMap::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Distinct pairs labeled so far.
    pub fn used(&self) -> usize {
        self.cache.len()
    }

    /// Label a pair, charging the budget only for new pairs. `None` means
    /// the budget is exhausted.
    pub fn query(
        &mut self,
        oracle: &dyn PairOracle,
        a: RecordId,
        b: RecordId,
    ) -> Result<Option<bool>> {
        let key = pack_pair(a.0, b.0);
        if let Some(&answer) = self.cache.get(&key) {
            return Ok(Some(answer));
        }
        if self.cache.len() >= self.limit {
            return Ok(None);
        }
        let answer = oracle.is_match(a, b)?;
        self.cache.insert(key, answer);
        Ok(Some(answer))
    }
}

/// Uniform pair sampling estimator: draw `m` distinct pairs without
/// replacement, label them, and run the component-count estimator with the
/// exact random-sampling rate. A sample with zero observed matches still
/// reports (estimate = number of singletons observed over M vertices) but is
/// flagged degenerate.
pub fn prse(
    num_records: usize,
    m: usize,
    oracle: &dyn PairOracle,
    seed: u64,
) -> Result<EstimateReport> {
    let total_pairs = num_records * (num_records - 1) / 2;
    if m < 1 || m > total_pairs {
        return Err(Error::InvalidParameter(format!(
            "budget {m} outside [1, {total_pairs}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample_distinct_pairs(num_records, m, &mut rng);

    let mut budget = EdgeQueryBudget::new(m);
    let mut edges = Vec::new();
    for &(a, b) in &picked {
        let (a, b) = (RecordId(a), RecordId(b));
        if budget.query(oracle, a, b)?.expect("within budget") {
            edges.push((a, b));
        }
    }
    let degenerate = edges.is_empty();
    let p = 2.0 * m as f64 / (num_records as f64 * (num_records as f64 - 1.0));
    let profile = component_profile(num_records, edges)?;
    let mut report = EstimateReport::from_profile(&profile, p, budget.used(), "prse", seed)?;
    report.degenerate = degenerate;
    Ok(report)
}

fn sample_distinct_pairs(
    num_records: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(u32, u32)> {
    let total_pairs = num_records * (num_records - 1) / 2;
    if total_pairs <= 2 * m && total_pairs <= 1 << 22 {
        // Dense draw: enumerate and partially shuffle.
        let mut all: Vec<(u32, u32)> = (0..num_records as u32)
            .flat_map(|a| (a + 1..num_records as u32).map(move |b| (a, b)))
            .collect();
        for i in 0..m {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(m);
        return all;
    }
    let mut seen = std::collections::HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let a = rng.random_range(0..num_records as u32);
        let b = rng.random_range(0..num_records as u32);
        if a == b {
            continue;
        }
        if seen.insert(pack_pair(a, b)) {
            out.push((a.min(b), a.max(b)));
        }
    }
    out
}

/// Vertex-BFS estimator: draw uniform vertices, discover each vertex's full
/// component by querying frontier members against all undiscovered vertices,
/// and average `1/|C(v)|` over completed explorations. An exploration cut
/// off by the budget is discarded.
pub fn bfse_vertex_bfs(
    num_records: usize,
    m: usize,
    oracle: &dyn PairOracle,
    vertex_samples: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if m < 1 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = EdgeQueryBudget::new(m);
    // Component size per vertex, filled in as explorations complete.
    let mut known_component: HashMap<u32, usize> = HashMap::new();
    let mut completed_sizes: Vec<usize> = Vec::new();
    let mut profile_counts: std::collections::BTreeMap<usize, usize> =
        std::collections::BTreeMap::new();

    'sampling: for _ in 0..vertex_samples {
        let v = rng.random_range(0..num_records as u32);
        if let Some(&size) = known_component.get(&v) {
            // All of this component's queries are cached; re-running the
            // BFS would complete at zero cost.
            completed_sizes.push(size);
            continue;
        }
        let mut members: Vec<u32> = vec![v];
        let mut in_component = vec![false; num_records];
        in_component[v as usize] = true;
        let mut frontier = 0usize;
        while frontier < members.len() {
            let u = members[frontier];
            frontier += 1;
            for w in 0..num_records as u32 {
                if in_component[w as usize] {
                    continue;
                }
                match budget.query(oracle, RecordId(u), RecordId(w))? {
                    None => break 'sampling, // incomplete exploration discarded
                    Some(true) => {
                        in_component[w as usize] = true;
                        members.push(w);
                    }
                    Some(false) => {}
                }
            }
        }
        let size = members.len();
        completed_sizes.push(size);
        *profile_counts.entry(size).or_insert(0) += 1;
        for u in members {
            known_component.insert(u, size);
        }
    }

    if completed_sizes.is_empty() {
        return Err(Error::NoCompletedExploration);
    }
    let inv: Vec<f64> = completed_sizes.iter().map(|&s| 1.0 / s as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    let estimate = num_records as f64 * mean;
    let std_error = if inv.len() > 1 {
        let var =
            inv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (inv.len() - 1) as f64;
        num_records as f64 * (var / inv.len() as f64).sqrt()
    } else {
        0.0
    };
    let discovered: usize = profile_counts.iter().map(|(s, n)| s * n).sum();
    let profile = ComponentProfile::from_counts(profile_counts, discovered);
    Ok(EstimateReport {
        estimate,
        std_error,
        p: completed_sizes.len() as f64 / num_records as f64,
        m: budget.used(),
        n_prime: (&profile).into(),
        n_star: crate::estimator::CliqueCounts {
            n1: 0.0,
            n2: 0.0,
            n3: 0.0,
        },
        method: "bfs-vertex".to_string(),
        method_aliases: vec!["bfse".to_string(), "rsge".to_string()],
        degenerate: false,
        seed,
        elapsed_ms: 0,
    })
}

/// Induced-subgraph estimator: observe the complete subgraph on
/// `s = floor(sqrt(2m))` vertices drawn without replacement and invert the
/// vertex-inclusion moment system for component sizes <= 3 (exact
/// without-replacement inclusion probabilities, with `q = s/M` as their
/// large-M limit). Observed components of size >= 4 scale by `1/q`.
pub fn rsge_induced_subgraph(
    num_records: usize,
    m: usize,
    oracle: &dyn PairOracle,
    seed: u64,
) -> Result<EstimateReport> {
    if m < 1 {
        return Err(Error::InvalidParameter("budget must be >= 1".into()));
    }
    let s = (((2 * m) as f64).sqrt().floor() as usize).min(num_records);
    if s < 2 {
        return Err(Error::BudgetTooSmall);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices: Vec<u32> = (0..num_records as u32).collect();
    for i in 0..s {
        let j = rng.random_range(i..vertices.len());
        vertices.swap(i, j);
    }
    vertices.truncate(s);

    let mut budget = EdgeQueryBudget::new(m);
    let mut edges = Vec::new();
    for i in 0..s {
        for j in i + 1..s {
            let (a, b) = (RecordId(vertices[i]), RecordId(vertices[j]));
            if budget.query(oracle, a, b)?.expect("C(s,2) <= m by construction") {
                // Re-label into the induced vertex range.
                edges.push((RecordId(i as u32), RecordId(j as u32)));
            }
        }
    }
    let profile = component_profile(s, edges)?;

    let mf = num_records as f64;
    let sf = s as f64;
    let q = sf / mf;
    // Exact inclusion probabilities for 1, 2 and 3 specific vertices under
    // without-replacement sampling of s from M.
    let p1 = sf / mf;
    let p2 = sf * (sf - 1.0) / (mf * (mf - 1.0));
    let p21 = 2.0 * sf * (mf - sf) / (mf * (mf - 1.0));
    let denom3 = mf * (mf - 1.0) * (mf - 2.0);
    let p3 = sf * (sf - 1.0) * (sf - 2.0) / denom3;
    let p32 = 3.0 * sf * (sf - 1.0) * (mf - sf) / denom3;
    let p31 = 3.0 * sf * (mf - sf) * (mf - sf - 1.0) / denom3;

    let (n1p, n2p, n3p) = (
        profile.count(1) as f64,
        profile.count(2) as f64,
        profile.count(3) as f64,
    );
    let n3 = if p3 > 0.0 { n3p / p3 } else { 0.0 };
    let n2 = (n2p - n3 * p32) / p2;
    let n1 = (n1p - n2 * p21 - n3 * p31) / p1;
    let estimate = n1 + n2 + n3 + profile.four_plus() as f64 / q;

    Ok(EstimateReport {
        estimate,
        std_error: 0.0,
        p: q,
        m: budget.used(),
        n_prime: (&profile).into(),
        n_star: crate::estimator::CliqueCounts { n1, n2, n3 },
        method: "induced-subgraph".to_string(),
        method_aliases: vec!["rsge".to_string(), "bfse".to_string()],
        degenerate: false,
        seed,
        elapsed_ms: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GroundTruthOracle;

    fn entity_oracle(ids: &[&str]) -> GroundTruthOracle {
        let owned: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        GroundTruthOracle::from_entity_ids(&owned)
    }

    #[test]
    fn budget_charges_distinct_pairs_once() {
        let oracle = entity_oracle(&["a", "a", "b"]);
        let mut budget = EdgeQueryBudget::new(2);
        assert_eq!(
            budget.query(&oracle, RecordId(0), RecordId(1)).unwrap(),
            Some(true)
        );
        assert_eq!(budget.used(), 1);
        // Same pair in either order is cached.
        assert_eq!(
            budget.query(&oracle, RecordId(1), RecordId(0)).unwrap(),
            Some(true)
        );
        assert_eq!(budget.used(), 1);
        assert_eq!(
            budget.query(&oracle, RecordId(0), RecordId(2)).unwrap(),
            Some(false)
        );
        assert_eq!(budget.used(), 2);
        // Exhausted for new pairs, still answers cached ones.
        assert_eq!(budget.query(&oracle, RecordId(1), RecordId(2)).unwrap(), None);
        assert_eq!(
            budget.query(&oracle, RecordId(0), RecordId(2)).unwrap(),
            Some(false)
        );
        assert!(budget.used() <= budget.limit());
    }

    #[test]
    fn prse_exhaustive_budget_is_exact() {
        // 6 records: entities {0,1}, {2,3,4}, {5}; n = 3.
        let oracle = entity_oracle(&["x", "x", "y", "y", "y", "z"]);
        let report = prse(6, 15, &oracle, 9).unwrap();
        assert_eq!(report.p, 1.0);
        assert!((report.estimate - 3.0).abs() < 1e-12);
        assert_eq!(report.m, 15);
        assert!(!report.degenerate);
    }

    #[test]
    fn prse_tiny_budget_enumeration() {
        // M=3 with one true edge (0,1): p = 1/3. The three equally likely
        // single-pair samples give estimates 0, 3, 3 -> E = 2 = true count.
        let oracle = entity_oracle(&["a", "a", "b"]);
        let mut total = 0.0;
        let (mut saw_zero, mut saw_three) = (false, false);
        for seed in 0..300 {
            let r = prse(3, 1, &oracle, seed).unwrap();
            saw_zero |= r.estimate.abs() < 1e-9;
            saw_three |= (r.estimate - 3.0).abs() < 1e-9;
            total += r.estimate;
        }
        let mean = total / 300.0;
        assert!(saw_zero && saw_three);
        assert!((mean - 2.0).abs() < 0.3, "mean {mean}");
    }

    #[test]
    fn prse_flags_matchless_samples_as_degenerate() {
        let oracle = entity_oracle(&["a", "b", "c", "d"]);
        let r = prse(4, 3, &oracle, 1).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.estimate, 4.0);
    }

    #[test]
    fn bfs_vertex_edgeless_graph_estimates_m() {
        let oracle = entity_oracle(&["a", "b", "c", "d", "e"]);
        let r = bfse_vertex_bfs(5, 100, &oracle, 3, 7).unwrap();
        assert_eq!(r.estimate, 5.0);
    }

    #[test]
    fn bfs_vertex_single_clique_estimates_one() {
        let oracle = entity_oracle(&["a", "a", "a", "a"]);
        let r = bfse_vertex_bfs(4, 100, &oracle, 1, 3).unwrap();
        assert!((r.estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bfs_vertex_expectation_matches_exhaustive_enumeration() {
        // Components {a}, {b,c,d}: E[estimate] = 4*(1/4 + 3/4 * 1/3) = 2.
        let ids = ["a", "b", "b", "b"];
        let sizes = [1.0, 3.0, 3.0, 3.0];
        let exhaustive: f64 =
            sizes.iter().map(|s| 4.0 * (1.0 / s)).sum::<f64>() / 4.0;
        assert!((exhaustive - 2.0).abs() < 1e-12);

        let oracle = entity_oracle(&ids);
        let mut total = 0.0;
        let runs = 2000;
        for seed in 0..runs {
            total += bfse_vertex_bfs(4, 1000, &oracle, 1, seed).unwrap().estimate;
        }
        let mean = total / runs as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn inverse_component_size_identity_on_all_small_partitions() {
        // E[1/|C(v)|] over a uniform vertex = n/M: exhaustively over every
        // partition of up to 8 vertices into components.
        fn partitions(m: usize) -> Vec<Vec<usize>> {
            if m == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for first in 1..=m {
                for rest in partitions(m - first) {
                    if rest.first().map_or(true, |&r| first <= r) {
                        let mut p = vec![first];
                        p.extend(rest);
                        out.push(p);
                    }
                }
            }
            out
        }
        for m in 1..=8 {
            for partition in partitions(m) {
                let n = partition.len() as f64;
                let expectation: f64 = partition
                    .iter()
                    .map(|&size| size as f64 * (1.0 / size as f64))
                    .sum::<f64>()
                    / m as f64;
                assert!((m as f64 * expectation - n).abs() < 1e-12, "{partition:?}");
            }
        }
    }

    #[test]
    fn induced_subgraph_is_unbiased_on_planted_counts() {
        // 80 singletons, 10 pairs, 5 triples: n = 95, M = 115. Budget 1682
        // gives s = 58 vertices (inclusion rate ~0.5); the mean over 20,000
        // replicates must sit within 3 standard errors of 95.
        let mut ids: Vec<String> = Vec::new();
        for i in 0..80 {
            ids.push(format!("s{i}"));
        }
        for i in 0..10 {
            ids.push(format!("p{i}"));
            ids.push(format!("p{i}"));
        }
        for i in 0..5 {
            for _ in 0..3 {
                ids.push(format!("t{i}"));
            }
        }
        assert_eq!(ids.len(), 115);
        let oracle = GroundTruthOracle::from_entity_ids(&ids);
        let replicates = 20_000;
        let estimates: Vec<f64> = (0..replicates)
            .map(|seed| {
                rsge_induced_subgraph(115, 1682, &oracle, 0x9000 + seed as u64)
                    .unwrap()
                    .estimate
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / replicates as f64;
        let var = estimates
            .iter()
            .map(|e| (e - mean).powi(2))
            .sum::<f64>()
            / (replicates - 1) as f64;
        let se = (var / replicates as f64).sqrt();
        assert!(
            (mean - 95.0).abs() <= 3.0 * se,
            "mean {mean:.4} vs 95 (3 SE = {:.4})",
            3.0 * se
        );
    }

    #[test]
    fn bfs_vertex_errors_when_nothing_completes() {
        let oracle = entity_oracle(&["a", "b", "c", "d", "e"]);
        // First exploration needs 4 queries; budget of 2 cannot finish it.
        assert!(matches!(
            bfse_vertex_bfs(5, 2, &oracle, 3, 1),
            Err(Error::NoCompletedExploration)
        ));
    }

    #[test]
    fn induced_subgraph_full_observation_is_exact() {
        let oracle = entity_oracle(&["x", "x", "y", "z", "z", "z"]);
        // s = floor(sqrt(2m)) = 6 = M when m = 18.
        let r = rsge_induced_subgraph(6, 18, &oracle, 11).unwrap();
        assert_eq!(r.p, 1.0);
        assert!((r.estimate - 3.0).abs() < 1e-9);
    }

    #[test]
    fn induced_subgraph_edgeless_scales_singletons() {
        let oracle = entity_oracle(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        // m = 8 -> s = 4, q = 0.5; n1' = 4 -> estimate = 8.
        let r = rsge_induced_subgraph(8, 8, &oracle, 5).unwrap();
        assert!((r.estimate - 8.0).abs() < 1e-9);
    }

    #[test]
    fn induced_subgraph_rejects_tiny_budgets() {
        let oracle = entity_oracle(&["a", "b"]);
        assert!(matches!(
            rsge_induced_subgraph(2, 1, &oracle, 1),
            Err(Error::BudgetTooSmall)
        ));
    }

    #[test]
    fn baseline_reports_never_exceed_budget() {
        let ids: Vec<&str> = (0..40).map(|i| if i < 10 { "dup" } else { "x" }).collect();
        // Many duplicate ids would blow past a naive budget.
        let unique: Vec<String> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| if *s == "dup" { "dup".into() } else { format!("u{i}") })
            .collect();
        let oracle = GroundTruthOracle::from_entity_ids(&unique);
        for seed in 0..5 {
            let r = prse(40, 50, &oracle, seed).unwrap();
            assert!(r.m <= 50);
            if let Ok(r) = bfse_vertex_bfs(40, 50, &oracle, 10, seed) {
                assert!(r.m <= 50);
            }
            let r = rsge_induced_subgraph(40, 50, &oracle, seed).unwrap();
            assert!(r.m <= 50);
        }
    }
}
