//! Match/non-match oracles for record pairs.
//!
//! Estimators never look at labels directly; they query a [`PairOracle`].
//! Two implementations: exact ground truth (a labeled pair list, or an
//! entity-id column giving complete coverage), and a hinge-loss linear
//! classifier over hashed symmetric-difference k-gram features, trained with
//! seeded subgradient descent and 5-fold cross-validated hyperparameters.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsh::pack_pair;
use crate::record::{Dataset, LabeledPairs, MatchLabel, RecordId, ShingleSet};

/// Answers whether two records refer to the same entity. Implementations
/// must be pure: repeated queries of the same pair agree.
pub trait PairOracle {
    fn is_match(&self, a: RecordId, b: RecordId) -> Result<bool>;
}

/// Ground truth from a labeled pair list (errors on uncovered pairs) or an
/// entity-id column (complete coverage).
#[derive(Debug, Clone)]
pub enum GroundTruthOracle {
    Pairs(HashMap<u64, bool>),
    Entities(Vec<u64>),
}

impl GroundTruthOracle {
    pub fn from_pairs(truth: &LabeledPairs) -> Self {
        let map = truth
            .iter()
            .map(|&(a, b, label)| (pack_pair(a.0, b.0), label == MatchLabel::Match))
            .collect();
        GroundTruthOracle::Pairs(map)
    }

    /// Entity ids per record, in record order. Records match iff their ids
    /// are equal.
    pub fn from_entity_ids(ids: &[String]) -> Self {
        let mut intern: HashMap<&str, u64> = HashMap::new();
        let dense = ids
            .iter()
            .map(|s| {
                let next = intern.len() as u64;
                *intern.entry(s.as_str()).or_insert(next)
            })
            .collect();
        GroundTruthOracle::Entities(dense)
    }
}

impl PairOracle for GroundTruthOracle {
    fn is_match(&self, a: RecordId, b: RecordId) -> Result<bool> {
        match self {
            GroundTruthOracle::Pairs(map) => map
                .get(&pack_pair(a.0, b.0))
                .copied()
                .ok_or(Error::UncoveredPair(a.0.min(b.0), a.0.max(b.0))),
            GroundTruthOracle::Entities(ids) => {
                for id in [a, b] {
                    if id.0 as usize >= ids.len() {
                        return Err(Error::IdOutOfRange {
                            id: id.0,
                            size: ids.len(),
                        });
                    }
                }
                Ok(ids[a.0 as usize] == ids[b.0 as usize])
            }
        }
    }
}

/// Sparse binary feature vector for a record pair: the active positions are
/// `{token mod dim}` over the symmetric difference of the two shingle sets.
/// Symmetric in argument order by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairFeatureVector {
    indices: Vec<u32>,
    pub dim: usize,
}

impl PairFeatureVector {
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn pair_features(a: &ShingleSet, b: &ShingleSet, dim: usize) -> PairFeatureVector {
    assert!(dim >= 2, "feature dimension must be >= 2");
    let mut indices: Vec<u32> = a
        .symmetric_difference(b)
        .into_iter()
        .map(|t| (t % dim as u64) as u32)
        .collect();
    indices.sort_unstable();
    indices.dedup();
    PairFeatureVector { indices, dim }
}

/// Held-out evaluation of a trained model.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub holdout_size: usize,
}

/// Dense linear model over pair features; prediction is sign(w·x + b).
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub shingle_k: usize,
    pub seed: u64,
    pub lambda: f64,
    pub epochs: usize,
    pub metrics: OracleMetrics,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, features: &PairFeatureVector) -> f64 {
        debug_assert_eq!(features.dim, self.weights.len());
        self.bias
            + features
                .indices()
                .iter()
                .map(|&i| self.weights[i as usize])
                .sum::<f64>()
    }

    pub fn predict(&self, features: &PairFeatureVector) -> bool {
        self.score(features) > 0.0
    }
}

/// Training configuration. Hyperparameters (regularization strength and
/// epoch count) are selected by 5-fold cross-validation over the grids.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub shingle_k: usize,
    pub dim: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub epochs_grid: Vec<usize>,
    pub holdout_frac: f64,
    pub learning_rate: f64,
}

impl TrainConfig {
    pub fn new(shingle_k: usize, dim: usize, seed: u64) -> Self {
        TrainConfig {
            shingle_k,
            dim,
            seed,
            lambda_grid: vec![1e-4, 1e-3, 1e-2],
            epochs_grid: vec![10, 30],
            holdout_frac: 0.3,
            learning_rate: 0.5,
        }
    }
}

struct TrainSample {
    features: PairFeatureVector,
    y: f64, // +1 match, -1 non-match
}

fn sgd_fit(samples: &[&TrainSample], dim: usize, lambda: f64, epochs: usize, eta0: f64, seed: u64) -> (Vec<f64>, f64) {
    // True weights are `scale * weights`; the L2 shrink folds into the
    // scalar so each step costs O(active features), not O(dim).
    let mut weights = vec![0.0f64; dim];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            t += 1;
            let eta = eta0 / (1.0 + eta0 * lambda * t as f64);
            let s = &samples[idx];
            let dot: f64 = s
                .features
                .indices()
                .iter()
                .map(|&i| weights[i as usize])
                .sum();
            let margin = s.y * (bias + scale * dot);
            scale *= (1.0 - eta * lambda).max(1e-12);
            if scale < 1e-9 {
                for w in weights.iter_mut() {
                    *w *= scale;
                }
                scale = 1.0;
            }
            if margin < 1.0 {
                for &i in s.features.indices() {
                    weights[i as usize] += eta * s.y / scale;
                }
                bias += eta * s.y;
            }
        }
    }
    for w in weights.iter_mut() {
        *w *= scale;
    }
    (weights, bias)
}

fn evaluate(weights: &[f64], bias: f64, samples: &[&TrainSample]) -> OracleMetrics {
    let (mut correct, mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let score = bias
            + s.features
                .indices()
                .iter()
                .map(|&i| weights[i as usize])
                .sum::<f64>();
        let predicted = score > 0.0;
        let actual = s.y > 0.0;
        if predicted == actual {
            correct += 1;
        }
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    OracleMetrics {
        accuracy: correct as f64 / samples.len().max(1) as f64,
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        },
        holdout_size: samples.len(),
    }
}

/// Fit a hinge-loss linear model on labeled pairs. Deterministic for a fixed
/// seed; errors if the training set contains a single class.
pub fn train_linear(
    dataset: &Dataset,
    pairs: &LabeledPairs,
    config: &TrainConfig,
) -> Result<LinearModel> {
    let shingles = dataset.shingle_all(config.shingle_k);
    let samples: Vec<TrainSample> = pairs
        .iter()
        .map(|&(a, b, label)| TrainSample {
            features: pair_features(&shingles[a.0 as usize], &shingles[b.0 as usize], config.dim),
            y: if label == MatchLabel::Match { 1.0 } else { -1.0 },
        })
        .collect();
    let classes: std::collections::HashSet<bool> = samples.iter().map(|s| s.y > 0.0).collect();
    if classes.len() < 2 {
        return Err(Error::SingleClassTraining);
    }

    // Holdout split, then 5-fold CV on the training part.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0068_6f6c_646f_7574);
    order.shuffle(&mut rng);
    let holdout_len = ((samples.len() as f64 * config.holdout_frac) as usize)
        .min(samples.len().saturating_sub(2));
    let (holdout_idx, train_idx) = order.split_at(holdout_len);
    let train: Vec<&TrainSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let holdout: Vec<&TrainSample> = holdout_idx.iter().map(|&i| &samples[i]).collect();

    let folds = 5.min(train.len());
    let mut best: Option<(f64, f64, usize)> = None; // (cv accuracy, lambda, epochs)
    for &lambda in &config.lambda_grid {
        for &epochs in &config.epochs_grid {
            let mut correct = 0.0;
            let mut total = 0.0;
            for fold in 0..folds {
                let (fit_set, val_set): (Vec<&TrainSample>, Vec<&TrainSample>) = train
                    .iter()
                    .enumerate()
                    .fold((Vec::new(), Vec::new()), |(mut f, mut v), (i, s)| {
                        if i % folds == fold {
                            v.push(*s);
                        } else {
                            f.push(*s);
                        }
                        (f, v)
                    });
                if fit_set.is_empty() || val_set.is_empty() {
                    continue;
                }
                let (w, b) = sgd_fit(
                    &fit_set,
                    config.dim,
                    lambda,
                    epochs,
                    config.learning_rate,
                    config.seed ^ (fold as u64 + 1),
                );
                let m = evaluate(&w, b, &val_set);
                correct += m.accuracy * val_set.len() as f64;
                total += val_set.len() as f64;
            }
            let cv_accuracy = if total > 0.0 { correct / total } else { 0.0 };
            let better = match best {
                None => true,
                Some((acc, _, _)) => cv_accuracy > acc,
            };
            if better {
                best = Some((cv_accuracy, lambda, epochs));
            }
        }
    }
    let (_, lambda, epochs) = best.expect("non-empty hyperparameter grid");

    let (weights, bias) = sgd_fit(
        &train,
        config.dim,
        lambda,
        epochs,
        config.learning_rate,
        config.seed,
    );
    let metrics = if holdout.is_empty() {
        evaluate(&weights, bias, &train)
    } else {
        evaluate(&weights, bias, &holdout)
    };
    log::info!(
        "trained linear oracle: lambda={lambda}, epochs={epochs}, holdout accuracy={:.4}, precision={:.4}",
        metrics.accuracy,
        metrics.precision
    );
    Ok(LinearModel {
        weights,
        bias,
        shingle_k: config.shingle_k,
        seed: config.seed,
        lambda,
        epochs,
        metrics,
    })
}

/// Labels pairs with a trained model over the dataset's shingle sets.
pub struct ClassifierOracle {
    model: LinearModel,
    shingles: Vec<ShingleSet>,
}

impl ClassifierOracle {
    pub fn new(model: LinearModel, dataset: &Dataset) -> Self {
        let shingles = dataset.shingle_all(model.shingle_k);
        ClassifierOracle { model, shingles }
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl PairOracle for ClassifierOracle {
    fn is_match(&self, a: RecordId, b: RecordId) -> Result<bool> {
        for id in [a, b] {
            if id.0 as usize >= self.shingles.len() {
                return Err(Error::IdOutOfRange {
                    id: id.0,
                    size: self.shingles.len(),
                });
            }
        }
        let f = pair_features(
            &self.shingles[a.0 as usize],
            &self.shingles[b.0 as usize],
            self.model.dim(),
        );
        Ok(self.model.predict(&f))
    }
}

/// Draw a balanced labeled training set from complete entity-id truth: half
/// known matches, half uniform non-matches.
pub fn balanced_training_pairs(
    entity_ids: &[String],
    n_pairs: usize,
    seed: u64,
) -> Result<LabeledPairs> {
    let m = entity_ids.len();
    let mut by_entity: HashMap<&str, Vec<u32>> = HashMap::new();
    for (i, e) in entity_ids.iter().enumerate() {
        by_entity.entry(e.as_str()).or_default().push(i as u32);
    }
    let mut match_pairs: Vec<(u32, u32)> = Vec::new();
    for members in by_entity.values() {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                match_pairs.push((members[i], members[j]));
            }
        }
    }
    match_pairs.sort_unstable();
    if match_pairs.is_empty() {
        return Err(Error::RecallUndefined);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match_pairs.shuffle(&mut rng);
    let want_matches = (n_pairs / 2).min(match_pairs.len()).max(1);
    let mut rows: Vec<(u32, u32, bool)> = match_pairs[..want_matches]
        .iter()
        .map(|&(a, b)| (a, b, true))
        .collect();
    let mut non_matches = 0usize;
    let mut guard = 0usize;
    while non_matches < n_pairs - want_matches {
        guard += 1;
        if guard > 100 * n_pairs + 1000 {
            break; // nearly-complete duplication; accept what we have
        }
        let a = rng.random_range(0..m as u32);
        let b = rng.random_range(0..m as u32);
        if a == b || entity_ids[a as usize] == entity_ids[b as usize] {
            continue;
        }
        rows.push((a, b, false));
        non_matches += 1;
    }
    LabeledPairs::from_rows(rows, m)
}

const MODEL_MAGIC: &[u8; 8] = b"ECLINMDL";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    k: usize,
    d_f: usize,
    bias: f64,
    seed: u64,
    lambda: f64,
    epochs: usize,
    metrics: OracleMetrics,
}

/// Model file: magic, little-endian u32 JSON header length, JSON header
/// (k, D_f, bias, seed, metrics), then D_f little-endian f64 weights.
pub fn write_model(path: &Path, model: &LinearModel) -> Result<()> {
    let header = ModelHeader {
        k: model.shingle_k,
        d_f: model.dim(),
        bias: model.bias,
        seed: model.seed,
        lambda: model.lambda,
        epochs: model.epochs,
        metrics: model.metrics,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::BadFileFormat(format!("model header: {e}")))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in &model.weights {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<LinearModel> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadFileFormat("model magic mismatch".into()));
    }
    let mut lenbuf = [0u8; 4];
    r.read_exact(&mut lenbuf)?;
    let mut json = vec![0u8; u32::from_le_bytes(lenbuf) as usize];
    r.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::BadFileFormat(format!("model header: {e}")))?;
    let mut weights = Vec::with_capacity(header.d_f);
    let mut buf = [0u8; 8];
    for _ in 0..header.d_f {
        r.read_exact(&mut buf)?;
        weights.push(f64::from_le_bytes(buf));
    }
    Ok(LinearModel {
        weights,
        bias: header.bias,
        shingle_k: header.k,
        seed: header.seed,
        lambda: header.lambda,
        epochs: header.epochs,
        metrics: header.metrics,
    })
}
