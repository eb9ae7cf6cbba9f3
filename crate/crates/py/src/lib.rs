//! Python bindings: the estimator formulas, the (K,L) sampler and the
//! end-to-end pipeline, exposed as `entity_census_py`.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use entity_census::estimator::{self, ComponentProfile, EstimateReport, PipelineConfig};
use entity_census::minhash::{Backend, LshParams};
use entity_census::oracle::{ClassifierOracle, GroundTruthOracle, PairOracle};
use entity_census::record::{self, LabeledPairs, NormalizationPolicy};
use entity_census::synth;

fn err(e: entity_census::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn profile_from_counts(n1: usize, n2: usize, n3: usize, four_plus: usize) -> ComponentProfile {
    // Treat four_plus as components of size exactly 4; the estimator only
    // uses their total count.
    let mut counts = std::collections::BTreeMap::new();
    for (size, n) in [(1usize, n1), (2, n2), (3, n3), (4, four_plus)] {
        if n > 0 {
            counts.insert(size, n);
        }
    }
    let vertices = n1 + 2 * n2 + 3 * n3 + 4 * four_plus;
    ComponentProfile::from_counts(counts, vertices)
}

/// Probability that a pair at Jaccard similarity `j` enters the sample.
#[pyfunction]
fn retrieval_probability(j: f64, k: usize, l: usize) -> PyResult<f64> {
    let params = LshParams::new(k, l).map_err(err)?;
    Ok(entity_census::minhash::retrieval_probability(j, params))
}

/// Point estimate from observed component counts and sampling rate p.
#[pyfunction]
fn estimate_components(n1: usize, n2: usize, n3: usize, four_plus: usize, p: f64) -> PyResult<f64> {
    estimator::lshe(&profile_from_counts(n1, n2, n3, four_plus), p).map_err(err)
}

/// Solved true clique counts (n1*, n2*, n3*).
#[pyfunction]
fn solve_clique_counts(n1: usize, n2: usize, n3: usize, p: f64) -> PyResult<(f64, f64, f64)> {
    let c = estimator::solve_clique_counts(&profile_from_counts(n1, n2, n3, 0), p).map_err(err)?;
    Ok((c.n1, c.n2, c.n3))
}

/// Estimator variance for plug-in clique counts.
#[pyfunction]
fn estimate_variance(n2_star: f64, n3_star: f64, p: f64) -> PyResult<f64> {
    estimator::lshe_variance(n2_star, n3_star, p).map_err(err)
}

/// Token ids of the k-gram shingles of a normalized string.
#[pyfunction]
fn shingle_tokens(text: &str, k: usize) -> Vec<u64> {
    record::shingle(text, k).tokens().to_vec()
}

/// Exact Jaccard similarity of two strings' k-gram shingle sets.
#[pyfunction]
fn jaccard(a: &str, b: &str, k: usize) -> f64 {
    record::jaccard(&record::shingle(a, k), &record::shingle(b, k))
}

fn report_to_dict<'py>(py: Python<'py>, report: &EstimateReport) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("estimate", report.estimate)?;
    dict.set_item("std_error", report.std_error)?;
    dict.set_item("p", report.p)?;
    dict.set_item("m", report.m)?;
    let n_prime = PyDict::new(py);
    n_prime.set_item("1", report.n_prime.n1)?;
    n_prime.set_item("2", report.n_prime.n2)?;
    n_prime.set_item("3", report.n_prime.n3)?;
    n_prime.set_item("4plus", report.n_prime.four_plus)?;
    dict.set_item("n_prime", n_prime)?;
    let n_star = PyDict::new(py);
    n_star.set_item("1", report.n_star.n1)?;
    n_star.set_item("2", report.n_star.n2)?;
    n_star.set_item("3", report.n_star.n3)?;
    dict.set_item("n_star", n_star)?;
    dict.set_item("method", &report.method)?;
    dict.set_item("seed", report.seed)?;
    dict.set_item("elapsed_ms", report.elapsed_ms)?;
    Ok(dict)
}

/// A loaded record collection, optionally with per-record entity ids.
#[pyclass]
struct Dataset {
    inner: entity_census::Dataset,
    entities: Option<Vec<String>>,
}

#[pymethods]
impl Dataset {
    /// Load records from a delimited file with a header row.
    #[staticmethod]
    #[pyo3(signature = (path, columns, delimiter=",", entity_col=None))]
    fn from_csv(
        path: &str,
        columns: Vec<String>,
        delimiter: &str,
        entity_col: Option<&str>,
    ) -> PyResult<Self> {
        let delim = *delimiter
            .as_bytes()
            .first()
            .ok_or_else(|| PyValueError::new_err("empty delimiter"))?;
        let inner = record::load_records(Path::new(path), &columns, delim).map_err(err)?;
        let entities = match entity_col {
            Some(col) => Some(record::load_column(Path::new(path), col, delim).map_err(err)?),
            None => None,
        };
        Ok(Dataset { inner, entities })
    }

    /// Bundled 864-record synthetic benchmark (752 entities, 112 duplicates).
    #[staticmethod]
    fn restaurant_surrogate(seed: u64) -> Self {
        let s = synth::restaurant_surrogate(seed);
        Dataset {
            inner: s.dataset,
            entities: Some(s.entity_ids),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn num_entities(&self) -> Option<usize> {
        self.entities.as_ref().map(|e| {
            let mut ids: Vec<&str> = e.iter().map(|s| s.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
    }

    /// Normalized single-string rendering of one record.
    fn record_string(&self, index: usize) -> PyResult<String> {
        let record = self
            .inner
            .records
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("record {index} out of range")))?;
        Ok(record::record_string(record, &NormalizationPolicy::default()))
    }

    /// Candidate pairs emitted by the (K,L) sampler, sorted.
    #[pyo3(signature = (k, l, shingle, seed, backend="densified", bucket_cap=2000))]
    fn sample_pairs(
        &self,
        k: usize,
        l: usize,
        shingle: usize,
        seed: u64,
        backend: &str,
        bucket_cap: usize,
    ) -> PyResult<Vec<(u32, u32)>> {
        let params = LshParams::new(k, l).map_err(err)?;
        let backend: Backend = backend.parse().map_err(err)?;
        let shingles = self.inner.shingle_all(shingle);
        let signatures =
            entity_census::minhash::signatures_for(&shingles, seed, params, backend)
                .map_err(err)?;
        let tables = entity_census::lsh::build_tables(&signatures, params, seed).map_err(err)?;
        Ok(tables.sample_pairs(bucket_cap).sorted_pairs())
    }

    /// End-to-end estimate. Ground truth comes from the entity-id column;
    /// pass `model_path` to label pairs with a trained classifier instead.
    #[pyo3(signature = (k, l, shingle, seed, backend="densified", bucket_cap=2000, model_path=None))]
    #[allow(clippy::too_many_arguments)]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        k: usize,
        l: usize,
        shingle: usize,
        seed: u64,
        backend: &str,
        bucket_cap: usize,
        model_path: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let entities = self
            .entities
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("dataset has no entity ids"))?;
        let truth = truth_from_entities(entities).map_err(err)?;
        let oracle: Box<dyn PairOracle> = match model_path {
            Some(path) => {
                let model = entity_census::oracle::read_model(Path::new(path)).map_err(err)?;
                Box::new(ClassifierOracle::new(model, &self.inner))
            }
            None => Box::new(GroundTruthOracle::from_entity_ids(entities)),
        };
        let mut config = PipelineConfig::new(shingle, LshParams::new(k, l).map_err(err)?, seed);
        config.backend = backend.parse().map_err(err)?;
        config.bucket_cap = bucket_cap;
        let report =
            estimator::estimate_unique_entities(&self.inner, &config, &truth, oracle.as_ref())
                .map_err(err)?;
        report_to_dict(py, &report)
    }
}

fn truth_from_entities(entities: &[String]) -> entity_census::Result<LabeledPairs> {
    let mut by_entity: std::collections::BTreeMap<&str, Vec<u32>> = Default::default();
    for (i, e) in entities.iter().enumerate() {
        by_entity.entry(e.as_str()).or_default().push(i as u32);
    }
    let mut rows = Vec::new();
    for members in by_entity.values() {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                rows.push((members[i], members[j], true));
            }
        }
    }
    LabeledPairs::from_rows(rows, entities.len())
}

#[pymodule]
fn entity_census_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(retrieval_probability, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_components, m)?)?;
    m.add_function(wrap_pyfunction!(solve_clique_counts, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_variance, m)?)?;
    m.add_function(wrap_pyfunction!(shingle_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    Ok(())
}
