//! One function per subcommand, plus the small shared I/O helpers.
//!
//! Commands validate and load every input before writing any output file, so
//! a failed run never leaves a half-written artifact behind.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use tripletforge::batch::{
    plan_homogeneous_ordered, plan_mixed, load_steps, DEFAULT_MIXED_MAX_STEPS,
};
use tripletforge::data::{load_dataset, save_dataset, Query};
use tripletforge::embed::{
    quantize_store, EmbeddingStore, ProviderClient, ProviderConfig, SubsetSource, VectorSource,
};
use tripletforge::evaluation::{
    build_light_corpus, compare_reports, evaluate_with_encoder, evaluate_with_store,
    sample_queries, EvalReport, LightSet, Qrels,
};
use tripletforge::fixture::{self, FixtureSpec};
use tripletforge::rank::rank_all;
use tripletforge::refine::{recipe_for, refine_pipeline, RefineConfig};
use tripletforge::train::{
    train, EncoderParams, LossParams, OptimizerKind, TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM,
};

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes =
        fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One stdout line: the summary as pretty JSON under `--json`, else `human`.
pub(crate) fn emit(json: bool, summary: serde_json::Value, human: String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("JSON value serializes")
        );
    } else {
        println!("{human}");
    }
}

// ---------------------------------------------------------------------------
// fixture
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FixtureArgs {
    /// Directory to write the corpus into (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Seed behind every generated cluster, document, and vector.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Generate the miniature variant (fast, for smoke tests).
    #[arg(long)]
    pub small: bool,
}

pub fn fixture(args: &FixtureArgs, json: bool) -> Result<()> {
    let spec = if args.small {
        FixtureSpec::small(args.seed)
    } else {
        FixtureSpec::standard(args.seed)
    };
    let fx = fixture::generate(&spec)?;
    fx.write_to_dir(&args.out_dir)?;
    let config_path = args.out_dir.join("pipeline.json");
    write_json(&config_path, &crate::pipeline::starter_config(&fx))?;
    eprintln!(
        "fixture: {} task datasets, {} teacher vectors, {} eval queries",
        fx.tasks.len(),
        fx.teacher.len(),
        fx.manifest.eval_queries
    );
    emit(
        json,
        json!({
            "out_dir": args.out_dir,
            "seed": args.seed,
            "tasks": fx.manifest.tasks.keys().collect::<Vec<_>>(),
            "eval_queries": fx.manifest.eval_queries,
            "holdout_queries": fx.manifest.holdout_queries,
            "config": config_path,
        }),
        format!(
            "wrote fixture ({} tasks) and pipeline.json to {}",
            fx.tasks.len(),
            args.out_dir.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EmbedArgs {
    /// Triplet dataset(s) whose query and document texts get embedded.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Output vector store, keyed by query and document ids.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding cache store, reused and extended across runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Provider endpoint, e.g. http://127.0.0.1:8080/v1/embeddings
    #[arg(long)]
    pub base_url: String,
    /// Model name sent with every request.
    #[arg(long)]
    pub model: String,
    /// Texts per HTTP request.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4)]
    pub max_concurrent: usize,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_s: f64,
    /// Extra attempts after the first, for throttles and server errors.
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Sleep before retry k is backoff-s times 2^k.
    #[arg(long, default_value_t = 0.5)]
    pub backoff_s: f64,
}

pub fn embed(args: &EmbedArgs, json: bool) -> Result<()> {
    let mut texts: BTreeMap<String, String> = BTreeMap::new();
    for path in &args.data {
        let ds = load_dataset(path)?;
        for q in ds.unique_queries() {
            note_text(&mut texts, &q.id, q.embedding_text())?;
        }
        for d in &ds.corpus {
            note_text(&mut texts, &d.id, d.text.clone())?;
        }
    }
    if texts.is_empty() {
        bail!("no texts to embed");
    }
    let client = ProviderClient::new(ProviderConfig {
        base_url: args.base_url.clone(),
        model: args.model.clone(),
        batch_size: args.batch_size,
        max_concurrent: args.max_concurrent,
        timeout_s: args.timeout_s,
        max_retries: args.max_retries,
        backoff_base_s: args.backoff_s,
    })?;
    let ids: Vec<&String> = texts.keys().collect();
    let bodies: Vec<&String> = texts.values().collect();
    eprintln!("embedding {} unique texts", bodies.len());
    let embeddings = client.embed_texts(&bodies, args.cache.as_deref())?;
    let mut store = EmbeddingStore::new(embeddings[0].dim())?;
    for (id, emb) in ids.iter().zip(&embeddings) {
        store.append(id.as_str(), emb)?;
    }
    store.save(&args.out)?;
    emit(
        json,
        json!({
            "embedded": embeddings.len(),
            "requests": client.requests_issued(),
            "dim": embeddings[0].dim(),
            "out": args.out,
        }),
        format!(
            "embedded {} texts ({} requests) -> {}",
            embeddings.len(),
            client.requests_issued(),
            args.out.display()
        ),
    );
    Ok(())
}

fn note_text(map: &mut BTreeMap<String, String>, id: &str, text: String) -> Result<()> {
    match map.get(id) {
        None => {
            map.insert(id.to_string(), text);
        }
        Some(prev) if *prev == text => {}
        Some(_) => bail!("id {id:?} maps to two different texts across the inputs"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RankArgs {
    /// Vector store holding query and document embeddings.
    #[arg(long)]
    pub store: PathBuf,
    /// Dataset supplying the queries and the corpus to rank.
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to specific query ids (repeatable); default is every query.
    #[arg(long = "query-id")]
    pub query_ids: Vec<String>,
    /// Entries kept per ranked list.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Output JSONL, one ranked list per line.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn rank(args: &RankArgs, json: bool) -> Result<()> {
    let store = EmbeddingStore::open(&args.store)?;
    let ds = load_dataset(&args.data)?;
    let source = SubsetSource::new(&store, ds.corpus_ids())?;
    let queries = ds.unique_queries();
    let selected: Vec<&Query> = if args.query_ids.is_empty() {
        queries
    } else {
        let by_id: BTreeMap<&str, &Query> =
            queries.iter().map(|q| (q.id.as_str(), *q)).collect();
        let mut picked = Vec::new();
        for id in &args.query_ids {
            match by_id.get(id.as_str()) {
                Some(q) => picked.push(*q),
                None => bail!("query id {id:?} not present in {}", args.data.display()),
            }
        }
        picked
    };
    let mut lines = String::new();
    for q in &selected {
        let emb = store
            .lookup(&q.id)
            .with_context(|| format!("query {} has no stored vector", q.id))?;
        let ranked = rank_all(&q.id, &emb, &source)?.top_k(args.top_k);
        lines.push_str(&serde_json::to_string(&ranked)?);
        lines.push('\n');
    }
    fs::write(&args.out, lines).with_context(|| format!("writing {}", args.out.display()))?;
    emit(
        json,
        json!({"queries": selected.len(), "top_k": args.top_k, "out": args.out}),
        format!(
            "ranked {} queries (top {}) -> {}",
            selected.len(),
            args.top_k,
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RefineArgs {
    /// Dataset to refine.
    #[arg(long)]
    pub data: PathBuf,
    /// Teacher vector store; required when the config has ranking passes.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Refinement config (JSON); defaults to the task-family recipe.
    #[arg(long, conflicts_with = "recipe")]
    pub config: Option<PathBuf>,
    /// Use the built-in recipe for the dataset's task family.
    #[arg(long)]
    pub recipe: bool,
    /// Override the config's sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refined dataset output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON report of per-pass keep/drop/re-mine counts.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn refine(args: &RefineArgs, json: bool) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let mut cfg: RefineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => recipe_for(&ds.task.family),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let store = match &args.store {
        Some(path) => Some(EmbeddingStore::open(path)?),
        None => None,
    };
    let needed = cfg.passes_needing_store();
    if !needed.is_empty() && store.is_none() {
        bail!("passes {needed:?} rank against teacher vectors; pass --store");
    }
    let (refined, report) = refine_pipeline(&ds, &cfg, store.as_ref())?;
    save_dataset(&refined, &args.out)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    for pass in &report.passes {
        eprintln!(
            "  {}: {} in, {} kept, {} dropped, {} re-mined",
            pass.pass, pass.examples_in, pass.kept, pass.dropped, pass.remined
        );
    }
    emit(
        json,
        json!({
            "dataset": refined.name,
            "examples_in": report.examples_in,
            "examples_out": report.examples_out,
            "out": args.out,
        }),
        format!(
            "refined {}: {} -> {} examples -> {}",
            refined.name,
            report.examples_in,
            report.examples_out,
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// batch-plan
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PhaseArg {
    /// Task-pure steps grouped into shuffled per-task blocks.
    Homogeneous,
    /// Every step mixes distinct tasks across devices.
    Mixed,
}

#[derive(Args)]
pub struct BatchPlanArgs {
    /// Dataset(s) to draw examples from, in index order.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    /// Examples per optimizer step, split evenly across devices.
    #[arg(long)]
    pub batch_size: usize,
    #[arg(long)]
    pub devices: usize,
    /// Homogeneous phase: number of task-shuffled blocks.
    #[arg(long, default_value_t = 1)]
    pub n_blocks: usize,
    /// Mixed phase: step budget.
    #[arg(long, default_value_t = DEFAULT_MIXED_MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output plan (JSONL, one step per line).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn batch_plan(args: &BatchPlanArgs, json: bool) -> Result<()> {
    let datasets = args
        .data
        .iter()
        .map(|p| load_dataset(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let plan = match args.phase {
        PhaseArg::Homogeneous => plan_homogeneous_ordered(
            &datasets,
            args.batch_size,
            args.devices,
            args.n_blocks,
            args.seed,
        )?,
        PhaseArg::Mixed => plan_mixed(
            &datasets,
            args.batch_size,
            args.devices,
            args.max_steps,
            args.seed,
        )?,
    };
    plan.save(&args.out)?;
    emit(
        json,
        json!({
            "steps": plan.total_steps(),
            "dropped": plan.dropped.len(),
            "out": args.out,
        }),
        format!(
            "planned {} steps ({} examples dropped) -> {}",
            plan.total_steps(),
            plan.dropped.len(),
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args)]
pub struct TrainToyArgs {
    /// Dataset(s), in the same index order the plans were built from.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Saved batch plan(s), replayed in the order given.
    #[arg(long = "plan", required = true)]
    pub plans: Vec<PathBuf>,
    /// Trained encoder parameters output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSONL per-step loss log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Hash buckets in the bag-of-buckets encoder.
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    pub buckets: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Fraction of total steps spent warming the learning rate up.
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long, default_value_t = 0.2)]
    pub temperature: f64,
    /// Score each query against its own negatives only.
    #[arg(long)]
    pub no_in_batch: bool,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Seed for parameter initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn train_toy(args: &TrainToyArgs, json: bool) -> Result<()> {
    let datasets = args
        .data
        .iter()
        .map(|p| load_dataset(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let mut steps = Vec::new();
    for path in &args.plans {
        steps.extend(load_steps(path)?);
    }
    let params = EncoderParams::init(args.buckets, args.dim, args.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        },
        lr: args.lr,
        warmup_fraction: args.warmup,
    };
    let loss_params = LossParams {
        temperature: args.temperature,
        use_in_batch_negatives: !args.no_in_batch,
    };
    eprintln!(
        "training: {} planned steps x {} epoch(s), {} dataset(s)",
        steps.len(),
        args.epochs,
        datasets.len()
    );
    let (params, log) = train(&datasets, &steps, params, &cfg, &loss_params)?;
    params.save(&args.out)?;
    if let Some(path) = &args.log {
        log.save(path)?;
    }
    emit(
        json,
        json!({
            "steps": log.records.len(),
            "initial_mean_loss": log.initial_mean(10),
            "final_mean_loss": log.final_mean(10),
            "out": args.out,
        }),
        format!(
            "trained {} steps, mean loss {:?} -> {:?}, params -> {}",
            log.records.len(),
            log.initial_mean(10),
            log.final_mean(10),
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// light-set
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct LightSetArgs {
    /// Evaluation dataset supplying queries and the full corpus.
    #[arg(long)]
    pub data: PathBuf,
    /// Relevance judgments (TSV).
    #[arg(long)]
    pub qrels: PathBuf,
    /// Teacher vector store used to pick each query's neighbourhood.
    #[arg(long)]
    pub store: PathBuf,
    /// Fraction of queries to keep, stratified by label.
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    /// The union of top-k neighbour lists forms the light corpus.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave judged-relevant docs out unless retrieved.
    #[arg(long)]
    pub no_gold: bool,
    /// Output light-set JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn light_set(args: &LightSetArgs, json: bool) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let qrels = Qrels::load(&args.qrels)?;
    let store = EmbeddingStore::open(&args.store)?;
    let queries: Vec<Query> = ds.unique_queries().into_iter().cloned().collect();
    let sampled_ids = sample_queries(&queries, args.fraction, args.seed)?;
    let keep: HashSet<&str> = sampled_ids.iter().map(String::as_str).collect();
    let sampled: Vec<Query> = queries
        .iter()
        .filter(|q| keep.contains(q.id.as_str()))
        .cloned()
        .collect();
    let light = build_light_corpus(
        &sampled,
        &ds.corpus_ids(),
        &store,
        args.k,
        &qrels,
        !args.no_gold,
    )?;
    light.save(&args.out)?;
    emit(
        json,
        json!({
            "queries": light.query_ids.len(),
            "corpus_docs": light.corpus_ids.len(),
            "out": args.out,
        }),
        format!(
            "light set: {} queries over {} docs -> {}",
            light.query_ids.len(),
            light.corpus_ids.len(),
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    /// Evaluation dataset supplying queries and the corpus.
    #[arg(long)]
    pub data: PathBuf,
    /// Relevance judgments (TSV).
    #[arg(long)]
    pub qrels: PathBuf,
    /// Rank with precomputed vectors from this store...
    #[arg(long, required_unless_present = "params", conflicts_with = "params")]
    pub store: Option<PathBuf>,
    /// ...or encode everything on the fly with trained parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Restrict queries and corpus to a saved light subset.
    #[arg(long)]
    pub light: Option<PathBuf>,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub ks: Vec<usize>,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval(args: &EvalArgs, json: bool) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let qrels = Qrels::load(&args.qrels)?;
    let mut queries: Vec<Query> = ds.unique_queries().into_iter().cloned().collect();
    let light = match &args.light {
        Some(path) => {
            let light = LightSet::load(path)?;
            light.validate(&ds.corpus_ids(), &qrels)?;
            Some(light)
        }
        None => None,
    };
    if let Some(light) = &light {
        let keep: HashSet<&str> = light.query_ids.iter().map(String::as_str).collect();
        queries.retain(|q| keep.contains(q.id.as_str()));
        if queries.is_empty() {
            bail!(
                "light set shares no query ids with {}",
                args.data.display()
            );
        }
    }
    let report = match &args.store {
        Some(store_path) => {
            let store = EmbeddingStore::open(store_path)?;
            let corpus_ids = match &light {
                Some(light) => light.corpus_ids.clone(),
                None => ds.corpus_ids(),
            };
            evaluate_with_store(&queries, &corpus_ids, &store, &qrels, &args.ks)?
        }
        None => {
            let params =
                EncoderParams::open(args.params.as_ref().expect("clap requires one source"))?;
            let corpus = match &light {
                Some(light) => {
                    let keep: HashSet<&str> =
                        light.corpus_ids.iter().map(String::as_str).collect();
                    ds.corpus
                        .iter()
                        .filter(|d| keep.contains(d.id.as_str()))
                        .cloned()
                        .collect()
                }
                None => ds.corpus.clone(),
            };
            evaluate_with_encoder(&params, &queries, &corpus, &qrels, &args.ks)?
        }
    };
    report.save(&args.out)?;
    let means = report.means.clone();
    emit(
        json,
        json!({
            "evaluated_queries": report.evaluated_queries,
            "skipped_queries": report.skipped_queries,
            "corpus_size": report.corpus_size,
            "means": means,
            "out": args.out,
        }),
        format!(
            "evaluated {} queries over {} docs: {} -> {}",
            report.evaluated_queries,
            report.corpus_size,
            fmt_means(&report.means),
            args.out.display()
        ),
    );
    Ok(())
}

fn fmt_means(means: &BTreeMap<String, f64>) -> String {
    means
        .iter()
        .map(|(k, v)| format!("{k} {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

// ---------------------------------------------------------------------------
// quantize
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct QuantizeArgs {
    /// Float vector store to quantize.
    #[arg(long)]
    pub store: PathBuf,
    /// Output int8 store.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn quantize(args: &QuantizeArgs, json: bool) -> Result<()> {
    let store = EmbeddingStore::open(&args.store)?;
    let quantized = quantize_store(&store)?;
    quantized.save(&args.out)?;
    emit(
        json,
        json!({"rows": quantized.len(), "dim": quantized.dim(), "out": args.out}),
        format!(
            "quantized {} vectors (dim {}) -> {}",
            quantized.len(),
            quantized.dim(),
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct PipelineArgs {
    /// Pipeline config (JSON); relative paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Where artifacts land; overrides the config's out_dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn pipeline(args: &PipelineArgs, json: bool) -> Result<()> {
    crate::pipeline::run(&args.config, args.out_dir.as_deref(), args.seed, json)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct CompareArgs {
    /// Baseline evaluation report.
    #[arg(long)]
    pub full: PathBuf,
    /// Report to diff against the baseline, e.g. from a light subset.
    #[arg(long)]
    pub light: PathBuf,
    /// Optional JSON output of per-metric deltas.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn compare(args: &CompareArgs, json: bool) -> Result<()> {
    let full = EvalReport::load(&args.full)?;
    let light = EvalReport::load(&args.light)?;
    let deltas = compare_reports(&full, &light);
    if let Some(path) = &args.out {
        write_json(path, &deltas)?;
    }
    let human = deltas
        .iter()
        .map(|(metric, d)| {
            format!(
                "{metric}: full {:.4}, light {:.4}, mean |delta| {:.4}, max |delta| {:.4}",
                d.mean_full, d.mean_light, d.mean_abs_delta, d.max_query_abs_delta
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    emit(
        json,
        serde_json::to_value(&deltas).context("serializing deltas")?,
        human,
    );
    Ok(())
}
