use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use entity_census::error::{Error, Result};
use entity_census::estimator::{
    estimate_from_sample, estimate_from_shingles, lshe, lshe_variance, solve_clique_counts,
    PipelineConfig, StdErrMode,
};
use entity_census::eval::{
    compare, relative_error, sweep, write_compare_csv, write_sweep_csv, CompareConfig, SweepConfig,
};
use entity_census::lsh::{build_tables, DEFAULT_BUCKET_CAP};
use entity_census::minhash::{
    read_signature_cache, signatures_for, write_signature_cache, Backend, LshParams,
};
use entity_census::oracle::{
    balanced_training_pairs, read_model, train_linear, write_model, ClassifierOracle,
    GroundTruthOracle, PairOracle, TrainConfig,
};
use entity_census::record::{load_column, load_labeled_pairs, load_records, Dataset, LabeledPairs};
use entity_census::synth::{
    restaurant_surrogate, simulate_profile, synth_graph, voter_scale_surrogate,
};

#[derive(Parser)]
#[command(
    name = "entity-census",
    about = "Estimate the number of unique entities in a duplicated record collection in sub-quadratic time",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: sample candidate pairs, measure recall, label,
    /// and estimate the unique entity count with a standard error.
    Estimate(EstimateArgs),
    /// Grid over (K, L, shingle): sample size, recall and reduction ratio per cell.
    Sweep(SweepArgs),
    /// Adaptive estimator vs. the three random-sampling baselines at matched budgets.
    Compare(CompareArgs),
    /// Synthetic clique graphs under exact edge sampling: estimator calibration.
    Simulate(SimulateArgs),
    /// Train the linear match classifier used as a label oracle.
    TrainOracle(TrainOracleArgs),
    /// Emit a bundled synthetic dataset (records + ground-truth pairs).
    Gen(GenArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Delimited records file with a header row.
    #[arg(long)]
    records: PathBuf,
    /// Comma-separated attribute column names.
    #[arg(long)]
    schema: String,
    /// Field delimiter.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Labeled pairs file (id_a,id_b,label with label in {0,1}).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Column holding an entity id per record (complete ground truth).
    #[arg(long)]
    entity_col: Option<String>,
}

impl DataArgs {
    fn delimiter_byte(&self) -> Result<u8> {
        let bytes = self.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "delimiter must be a single byte, got {:?}",
                self.delimiter
            )));
        }
        Ok(bytes[0])
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let columns: Vec<String> = self
            .schema
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if columns.is_empty() {
            return Err(Error::InvalidParameter("empty --schema".into()));
        }
        load_records(&self.records, &columns, self.delimiter_byte()?)
    }

    fn load_entities(&self) -> Result<Option<Vec<String>>> {
        match &self.entity_col {
            Some(col) => Ok(Some(load_column(&self.records, col, self.delimiter_byte()?)?)),
            None => Ok(None),
        }
    }

    /// Labeled pairs for recall estimation: an explicit file wins, otherwise
    /// all within-entity pairs derived from the entity column.
    fn load_truth(&self, dataset_len: usize, entities: Option<&[String]>) -> Result<LabeledPairs> {
        if let Some(path) = &self.truth {
            return load_labeled_pairs(path, dataset_len);
        }
        if let Some(entities) = entities {
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
            return LabeledPairs::from_rows(rows, dataset_len);
        }
        Err(Error::InvalidParameter(
            "need --truth or --entity-col to estimate recall".into(),
        ))
    }
}

#[derive(Args)]
struct SamplerArgs {
    /// Minhash rows per table.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Number of tables.
    #[arg(long, default_value_t = 20)]
    l: usize,
    /// Shingle length in characters.
    #[arg(long, default_value_t = 3)]
    shingle: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Signature backend: classical | densified.
    #[arg(long, default_value = "densified")]
    backend: String,
    /// Mega-bucket guard: buckets beyond this size are subsampled.
    #[arg(long, default_value_t = DEFAULT_BUCKET_CAP)]
    bucket_cap: usize,
}

impl SamplerArgs {
    fn backend(&self) -> Result<Backend> {
        self.backend.parse()
    }

    fn params(&self) -> Result<LshParams> {
        LshParams::new(self.k, self.l)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Label oracle: `truth` or `model:PATH`.
    #[arg(long, default_value = "truth")]
    oracle: String,
    /// Estimate recall on only this fraction of the labeled pairs (seeded
    /// split); `train-oracle --truth-split` with the same value and seed
    /// trains on the disjoint remainder.
    #[arg(long)]
    truth_split: Option<f64>,
    /// Standard error method: `plugin` or `reseed,R`.
    #[arg(long, default_value = "plugin")]
    stderr: String,
    /// Write the sampled pairs (id_a,id_b per line, sorted).
    #[arg(long)]
    export_pairs: Option<PathBuf>,
    /// Binary signature cache: reused when compatible, created otherwise.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Report JSON destination (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_oracle(
    spec: &str,
    dataset: &Dataset,
    entities: Option<&[String]>,
    truth: &LabeledPairs,
) -> Result<Box<dyn PairOracle>> {
    if spec == "truth" {
        return Ok(match entities {
            Some(e) => Box::new(GroundTruthOracle::from_entity_ids(e)),
            None => Box::new(GroundTruthOracle::from_pairs(truth)),
        });
    }
    if let Some(path) = spec.strip_prefix("model:") {
        let model = read_model(Path::new(path))?;
        return Ok(Box::new(ClassifierOracle::new(model, dataset)));
    }
    Err(Error::InvalidParameter(format!(
        "unknown oracle {:?} (expected truth|model:PATH)",
        spec
    )))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidParameter(format!("serialize: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let start = Instant::now();
    let dataset = args.data.load_dataset()?;
    let entities = args.data.load_entities()?;
    let mut truth = args.data.load_truth(dataset.len(), entities.as_deref())?;
    let oracle = build_oracle(&args.oracle, &dataset, entities.as_deref(), &truth)?;
    if let Some(fraction) = args.truth_split {
        truth = truth.split(fraction, args.sampler.seed).0;
    }
    let params = args.sampler.params()?;
    let backend = args.sampler.backend()?;
    let stderr_mode: StdErrMode = args.stderr.parse()?;

    let shingles = dataset.shingle_all(args.sampler.shingle);
    let signatures = match &args.cache {
        Some(path) if path.exists() => {
            let (cached, cached_seed) = read_signature_cache(path)?;
            if cached.len() == dataset.len()
                && cached_seed == args.sampler.seed
                && cached.first().map(|s| s.params()) == Some(params)
            {
                log::info!("reusing signature cache {}", path.display());
                cached
            } else {
                log::warn!("signature cache {} is incompatible; recomputing", path.display());
                signatures_for(&shingles, args.sampler.seed, params, backend)?
            }
        }
        _ => signatures_for(&shingles, args.sampler.seed, params, backend)?,
    };
    if let Some(path) = &args.cache {
        if !path.exists() {
            write_signature_cache(path, &signatures, args.sampler.seed)?;
        }
    }

    let tables = build_tables(&signatures, params, args.sampler.seed)?;
    let sample = tables.sample_pairs(args.sampler.bucket_cap);
    if let Some(path) = &args.export_pairs {
        sample.export(path)?;
    }
    let mut report = estimate_from_sample(
        dataset.len(),
        &sample,
        &truth,
        oracle.as_ref(),
        args.sampler.seed,
    )?;
    if let StdErrMode::Reseed(replicates) = stderr_mode {
        let mut config = PipelineConfig::new(args.sampler.shingle, params, args.sampler.seed);
        config.backend = backend;
        config.bucket_cap = args.sampler.bucket_cap;
        let mut estimates = vec![report.estimate];
        for i in 1..replicates as u64 {
            let r = estimate_from_shingles(
                &shingles,
                &config,
                args.sampler.seed ^ i,
                &truth,
                oracle.as_ref(),
            )?;
            estimates.push(r.estimate);
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        report.std_error = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (estimates.len() - 1) as f64)
            .sqrt();
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    emit_json(
        &serde_json::to_value(&report).map_err(|e| Error::InvalidParameter(e.to_string()))?,
        args.out.as_deref(),
    )
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// K values: comma list or start:end:step.
    #[arg(long, default_value = "1")]
    k_values: String,
    /// L values: comma list or start:end:step.
    #[arg(long, default_value = "5:100:5")]
    l_values: String,
    /// Shingle lengths: comma list or start:end:step.
    #[arg(long, default_value = "2,3,4,5")]
    shingle_values: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "densified")]
    backend: String,
    #[arg(long, default_value_t = DEFAULT_BUCKET_CAP)]
    bucket_cap: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_usize_list(spec: &str) -> Result<Vec<usize>> {
    let parse_one = |s: &str| -> Result<usize> {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::InvalidParameter(format!("bad integer {:?}: {e}", s)))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "range must be start:end:step, got {:?}",
                spec
            )));
        }
        let (start, end, step) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
        if step == 0 {
            return Err(Error::InvalidParameter("range step must be > 0".into()));
        }
        return Ok((start..=end).step_by(step).collect());
    }
    let values: Result<Vec<usize>> = spec.split(',').map(parse_one).collect();
    let values = values?;
    if values.is_empty() {
        return Err(Error::InvalidParameter("empty value list".into()));
    }
    Ok(values)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let dataset = args.data.load_dataset()?;
    let entities = args.data.load_entities()?;
    let truth = args.data.load_truth(dataset.len(), entities.as_deref())?;
    let config = SweepConfig {
        k_values: parse_usize_list(&args.k_values)?,
        l_values: parse_usize_list(&args.l_values)?,
        shingle_values: parse_usize_list(&args.shingle_values)?,
        seed: args.seed,
        backend: args.backend.parse()?,
        bucket_cap: args.bucket_cap,
    };
    let rows = sweep(&dataset, &truth, &config);
    write_sweep_csv(&args.out, &rows)?;
    eprintln!("wrote {} sweep rows to {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// L values to anchor the matched budgets, comma list or range.
    #[arg(long, default_value = "5,10,20")]
    l_values: String,
    #[arg(long, default_value_t = 3)]
    shingle: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "densified")]
    backend: String,
    #[arg(long, default_value_t = DEFAULT_BUCKET_CAP)]
    bucket_cap: usize,
    #[arg(long, default_value = "truth")]
    oracle: String,
    /// Extra fixed edge-query budgets for the baselines (comma list);
    /// reported with l = 0.
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let dataset = args.data.load_dataset()?;
    let entities = args.data.load_entities()?;
    let truth = args.data.load_truth(dataset.len(), entities.as_deref())?;
    let oracle = build_oracle(&args.oracle, &dataset, entities.as_deref(), &truth)?;
    let true_n = entities.as_ref().map(|e| {
        let mut ids: Vec<&str> = e.iter().map(|s| s.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len() as f64
    });
    let config = CompareConfig {
        shingle_k: args.shingle,
        k: args.k,
        l_values: parse_usize_list(&args.l_values)?,
        extra_budgets: match &args.budget {
            Some(spec) => parse_usize_list(spec)?,
            None => Vec::new(),
        },
        seed: args.seed,
        backend: args.backend.parse()?,
        bucket_cap: args.bucket_cap,
    };
    let rows = compare(&dataset, &truth, oracle.as_ref(), true_n, &config)?;
    write_compare_csv(&args.out, &rows)?;
    eprintln!("wrote {} compare rows to {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct SimulateArgs {
    /// Clique counts as size=count pairs, e.g. 1=700,2=100,3=50.
    #[arg(long, default_value = "1=700,2=100,3=50")]
    counts: String,
    /// Edge sampling probability.
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 10_000)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_counts(spec: &str) -> Result<std::collections::BTreeMap<usize, usize>> {
    let mut counts = std::collections::BTreeMap::new();
    for part in spec.split(',') {
        let (size, count) = part.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("counts must be size=count pairs, got {:?}", part))
        })?;
        let size: usize = size
            .trim()
            .parse()
            .map_err(|e| Error::InvalidParameter(format!("bad size {:?}: {e}", size)))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|e| Error::InvalidParameter(format!("bad count {:?}: {e}", count)))?;
        counts.insert(size, count);
    }
    Ok(counts)
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    if !(0.0 < args.p && args.p <= 1.0) {
        return Err(Error::RecallOutOfRange(args.p));
    }
    if args.replicates < 2 {
        return Err(Error::InvalidParameter("need at least 2 replicates".into()));
    }
    let graph = synth_graph(&parse_counts(&args.counts)?, args.seed)?;
    let true_n = graph.true_component_count() as f64;
    let mut estimates = Vec::with_capacity(args.replicates);
    let mut n2_star_sum = 0.0;
    let mut n3_star_sum = 0.0;
    for i in 0..args.replicates as u64 {
        let profile = simulate_profile(&graph, args.p, args.seed.wrapping_add(i * 2 + 1));
        estimates.push(lshe(&profile, args.p)?);
        let stars = solve_clique_counts(&profile, args.p)?;
        n2_star_sum += stars.n2;
        n3_star_sum += stars.n3;
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let emp_var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let formula_var = lshe_variance(n2_star_sum / n, n3_star_sum / n, args.p)?;
    let report = serde_json::json!({
        "true_n": true_n,
        "num_vertices": graph.num_vertices(),
        "p": args.p,
        "replicates": args.replicates,
        "mean_estimate": mean,
        "mean_bias": mean - true_n,
        "standard_error_of_mean": (emp_var / n).sqrt(),
        "empirical_variance": emp_var,
        "formula_variance": formula_var,
        "relative_error_of_mean": relative_error(mean, true_n)?,
        "seed": args.seed,
    });
    emit_json(&report, args.out.as_deref())
}

#[derive(Args)]
struct TrainOracleArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Training pairs drawn when only an entity column is given
    /// (half matches, half uniform non-matches).
    #[arg(long, default_value_t = 200)]
    train_pairs: usize,
    /// Train on the complement of the recall split: with the same value and
    /// seed as `estimate --truth-split`, the two sets are disjoint.
    #[arg(long)]
    truth_split: Option<f64>,
    #[arg(long, default_value_t = 3)]
    shingle: usize,
    /// Feature dimensionality for hashed symmetric-difference indicators.
    #[arg(long, default_value_t = 1 << 18)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Model file destination.
    #[arg(long)]
    out: PathBuf,
}

fn run_train_oracle(args: TrainOracleArgs) -> Result<()> {
    let dataset = args.data.load_dataset()?;
    let entities = args.data.load_entities()?;
    let mut pairs = if let Some(path) = &args.data.truth {
        load_labeled_pairs(path, dataset.len())?
    } else if let Some(entities) = &entities {
        balanced_training_pairs(entities, args.train_pairs, args.seed)?
    } else {
        return Err(Error::InvalidParameter(
            "need --truth or --entity-col for training labels".into(),
        ));
    };
    if let Some(fraction) = args.truth_split {
        pairs = pairs.split(fraction, args.seed).1;
    }
    let config = TrainConfig::new(args.shingle, args.dim, args.seed);
    let model = train_linear(&dataset, &pairs, &config)?;
    write_model(&args.out, &model)?;
    let summary = serde_json::json!({
        "model": args.out.display().to_string(),
        "training_pairs": pairs.len(),
        "lambda": model.lambda,
        "epochs": model.epochs,
        "holdout_accuracy": model.metrics.accuracy,
        "holdout_precision": model.metrics.precision,
        "holdout_recall": model.metrics.recall,
        "holdout_size": model.metrics.holdout_size,
    });
    emit_json(&summary, None)
}

#[derive(Args)]
struct GenArgs {
    /// Dataset preset: restaurant | voter-scale.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    records_out: PathBuf,
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

fn run_gen(args: GenArgs) -> Result<()> {
    let surrogate = match args.preset.as_str() {
        "restaurant" => restaurant_surrogate(args.seed),
        "voter-scale" => voter_scale_surrogate(args.seed),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset {:?} (expected restaurant|voter-scale)",
                other
            )))
        }
    };
    surrogate.write_records_csv(&args.records_out)?;
    if let Some(path) = &args.truth_out {
        surrogate.write_truth_csv(path)?;
    }
    eprintln!(
        "wrote {} records over {} entities to {}",
        surrogate.dataset.len(),
        surrogate.num_entities(),
        args.records_out.display()
    );
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Compare(args) => run_compare(args),
        Command::Simulate(args) => run_simulate(args),
        Command::TrainOracle(args) => run_train_oracle(args),
        Command::Gen(args) => run_gen(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
