//! Estimate the number of unique entities in a duplicated record collection
//! without comparing all record pairs.
//!
//! The pipeline: records are normalized and shingled into k-gram token sets,
//! hashed into K×L minwise signatures (either classical per-function minhash
//! or a one-pass densified variant), and inserted into L hash tables keyed by
//! K-row meta-hashes. Pairs co-resident in a bucket form an adaptive sample
//! whose inclusion probability for a pair at Jaccard similarity J is
//! `1 - (1 - J^K)^L`. Labeling the sample (ground truth or a trained linear
//! classifier) yields an observed graph; counting its connected components by
//! size and correcting for the sampling rate `p` gives an unbiased estimate
//! of the true component count, with a closed-form plug-in variance.
//!
//! Random-sampling baselines (uniform pair sampling, vertex BFS, induced
//! subgraph) are provided under a shared edge-query budget so accuracy can be
//! compared at equal labeling cost.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod eval;
mod hashing;
pub mod lsh;
pub mod minhash;
pub mod oracle;
pub mod record;
pub mod synth;
mod union_find;

pub use error::{Error, Result};
pub use estimator::{
    component_profile, estimate_unique_entities, lshe, lshe_variance, solve_clique_counts,
    ComponentProfile, EstimateReport, ObservedGraph, PipelineConfig,
};
pub use lsh::{build_tables, empirical_recall, reduction_ratio, LshTables, SamplePairSet};
pub use minhash::{
    classical_signature, densified_signature, retrieval_probability, Backend, HashFamily,
    HashFamilySpec, LshParams, MinHashSignature,
};
pub use oracle::{ClassifierOracle, GroundTruthOracle, LinearModel, PairOracle};
pub use record::{jaccard, shingle, Dataset, LabeledPairs, Record, RecordId, ShingleSet};
