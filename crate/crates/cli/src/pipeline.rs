//! End-to-end driver: one JSON config in, a directory of artifacts and a
//! master `report.json` out.
//!
//! Every input is loaded and validated before the first output file is
//! written.  The master seed flows into refinement, batch planning, encoder
//! initialization, and light-set sampling through labeled derived seeds, so
//! one seed pins the whole run: two single-threaded runs with the same config
//! and seed produce byte-identical artifacts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tripletforge::batch::{
    plan_homogeneous_ordered, plan_mixed, Step, DEFAULT_MIXED_MAX_STEPS,
};
use tripletforge::data::{load_dataset, save_dataset, Dataset, Query};
use tripletforge::derive_seed;
use tripletforge::embed::{quantize_store, EmbeddingStore, VectorSource};
use tripletforge::evaluation::{
    build_light_corpus, compare_reports, evaluate_with_encoder, evaluate_with_store,
    sample_queries, MetricDelta, Qrels,
};
use tripletforge::fixture::{self, Fixture};
use tripletforge::refine::{recipe_for, refine_pipeline, RefineConfig, RefineReport};
use tripletforge::train::{
    train, EncoderParams, LossParams, OptimizerKind, TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM,
};

use crate::commands::{emit, read_json, write_json};

/// Everything `pipeline` needs, in one JSON file.  Relative paths resolve
/// against the directory holding the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed behind every seeded stage.
    pub seed: u64,
    /// Where artifacts land; `--out-dir` overrides.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Vector store covering every task query and document id.
    pub teacher_store: PathBuf,
    /// Training datasets, refined and planned in the order listed.
    pub tasks: Vec<TaskEntry>,
    pub batch: BatchSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Teacher retrieval eval plus light-subset construction; optional.
    #[serde(default)]
    pub eval: Option<EvalSection>,
    /// Trained-encoder eval on held-out data; optional.
    #[serde(default)]
    pub holdout: Option<HoldoutSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub data: PathBuf,
    /// `null` means the built-in recipe for the dataset's task family.
    #[serde(default)]
    pub refine: Option<RefineConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    pub batch_size: usize,
    pub devices: usize,
    /// Task-shuffled blocks in the homogeneous phase.
    pub n_blocks: usize,
    #[serde(default = "default_mixed_max_steps")]
    pub mixed_max_steps: usize,
}

fn default_mixed_max_steps() -> usize {
    DEFAULT_MIXED_MAX_STEPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub buckets: usize,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub temperature: f64,
    pub use_in_batch_negatives: bool,
    pub optimizer: OptimizerKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            buckets: DEFAULT_BUCKETS,
            dim: DEFAULT_DIM,
            lr: 0.05,
            epochs: 1,
            warmup_fraction: 0.1,
            temperature: 0.2,
            use_in_batch_negatives: true,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub data: PathBuf,
    pub qrels: PathBuf,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
    #[serde(default = "default_light_fraction")]
    pub light_fraction: f64,
    /// Top-k neighbourhood size behind the light corpus.
    #[serde(default = "default_light_k")]
    pub light_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutSection {
    pub data: PathBuf,
    pub qrels: PathBuf,
    #[serde(default = "default_recall_ks")]
    pub recall_ks: Vec<usize>,
}

fn default_recall_ks() -> Vec<usize> {
    vec![1, 10]
}

fn default_light_fraction() -> f64 {
    0.2
}

fn default_light_k() -> usize {
    50
}

/// A ready-to-run config for a freshly written fixture directory, with every
/// path relative so the directory can be moved wholesale.
pub fn starter_config(fx: &Fixture) -> PipelineConfig {
    PipelineConfig {
        seed: fx.manifest.seed,
        out_dir: Some(PathBuf::from("out")),
        teacher_store: PathBuf::from(fixture::TEACHER_FILE),
        tasks: fx
            .tasks
            .iter()
            .map(|ds| TaskEntry {
                data: PathBuf::from(format!("{}.jsonl", ds.name)),
                refine: None,
            })
            .collect(),
        batch: BatchSection {
            batch_size: 8,
            devices: 2,
            n_blocks: 2,
            mixed_max_steps: DEFAULT_MIXED_MAX_STEPS,
        },
        train: TrainSection::default(),
        eval: Some(EvalSection {
            data: PathBuf::from(fixture::EVAL_FILE),
            qrels: PathBuf::from(fixture::EVAL_QRELS_FILE),
            recall_ks: default_recall_ks(),
            light_fraction: default_light_fraction(),
            light_k: default_light_k(),
        }),
        holdout: Some(HoldoutSection {
            data: PathBuf::from(fixture::HOLDOUT_FILE),
            qrels: PathBuf::from(fixture::HOLDOUT_QRELS_FILE),
            recall_ks: default_recall_ks(),
        }),
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PipelineReport {
    seed: u64,
    tasks: Vec<String>,
    refine: BTreeMap<String, RefineReport>,
    plan: PlanBlock,
    train: TrainBlock,
    quantize: QuantizeBlock,
    eval: Option<EvalBlock>,
    holdout: Option<HoldoutBlock>,
    /// Relative paths of every artifact written, in write order.
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct PlanBlock {
    homogeneous: PlanStats,
    mixed: PlanStats,
}

#[derive(Serialize)]
struct PlanStats {
    steps: usize,
    dropped: usize,
}

#[derive(Serialize)]
struct TrainBlock {
    steps: usize,
    initial_mean_loss: Option<f64>,
    final_mean_loss: Option<f64>,
}

#[derive(Serialize)]
struct QuantizeBlock {
    rows: usize,
    dim: usize,
}

#[derive(Serialize)]
struct EvalBlock {
    full_means: BTreeMap<String, f64>,
    light_means: BTreeMap<String, f64>,
    light_queries: usize,
    light_corpus_docs: usize,
    deltas: BTreeMap<String, MetricDelta>,
}

#[derive(Serialize)]
struct HoldoutBlock {
    evaluated_queries: usize,
    means: BTreeMap<String, f64>,
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn owned_queries(ds: &Dataset) -> Vec<Query> {
    ds.unique_queries().into_iter().cloned().collect()
}

pub fn run(
    config_path: &Path,
    out_dir_flag: Option<&Path>,
    seed_flag: Option<u64>,
    json: bool,
) -> Result<()> {
    let cfg: PipelineConfig = read_json(config_path)?;
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = seed_flag.unwrap_or(cfg.seed);
    let out_dir = match (out_dir_flag, &cfg.out_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => resolve(&base, dir),
        (None, None) => bail!("no output directory: set out_dir in the config or pass --out-dir"),
    };

    // ---- load and validate every input before writing anything ----
    if cfg.tasks.is_empty() {
        bail!("config lists no tasks");
    }
    let teacher_path = resolve(&base, &cfg.teacher_store);
    let teacher = EmbeddingStore::open(&teacher_path)
        .with_context(|| format!("opening teacher store {}", teacher_path.display()))?;

    let mut tasks: Vec<(Dataset, RefineConfig)> = Vec::new();
    let mut names = BTreeSet::new();
    for entry in &cfg.tasks {
        let path = resolve(&base, &entry.data);
        let ds = load_dataset(&path).with_context(|| format!("loading {}", path.display()))?;
        if !names.insert(ds.name.clone()) {
            bail!("two task datasets share the name {:?}", ds.name);
        }
        let mut refine_cfg = entry
            .refine
            .clone()
            .unwrap_or_else(|| recipe_for(&ds.task.family));
        if refine_cfg.seed == 0 {
            refine_cfg.seed = derive_seed(seed, &format!("refine:{}", ds.name));
        }
        refine_cfg
            .validate()
            .with_context(|| format!("refine config for {}", ds.name))?;
        require_vectors(&teacher, &ds)?;
        tasks.push((ds, refine_cfg));
    }

    let eval_in = match &cfg.eval {
        Some(section) => {
            let ds = load_dataset(resolve(&base, &section.data))?;
            let qrels = Qrels::load(resolve(&base, &section.qrels))?;
            require_vectors(&teacher, &ds)?;
            Some((section.clone(), ds, qrels))
        }
        None => None,
    };
    let holdout_in = match &cfg.holdout {
        Some(section) => {
            let ds = load_dataset(resolve(&base, &section.data))?;
            let qrels = Qrels::load(resolve(&base, &section.qrels))?;
            Some((section.clone(), ds, qrels))
        }
        None => None,
    };

    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    fs::create_dir_all(out_dir.join("refined"))
        .with_context(|| format!("creating {}", out_dir.join("refined").display()))?;
    let mut artifacts: Vec<String> = Vec::new();

    // ---- stage 1: refine each task ----
    eprintln!("[1/6] refining {} task dataset(s)", tasks.len());
    let mut refined_sets: Vec<Dataset> = Vec::new();
    let mut refine_reports: BTreeMap<String, RefineReport> = BTreeMap::new();
    for (ds, refine_cfg) in &tasks {
        let (refined, report) = refine_pipeline(ds, refine_cfg, Some(&teacher))
            .with_context(|| format!("refining {}", ds.name))?;
        eprintln!(
            "  {}: {} -> {} examples",
            refined.name, report.examples_in, report.examples_out
        );
        let rel = format!("refined/{}.jsonl", refined.name);
        save_dataset(&refined, out_dir.join(&rel))?;
        artifacts.push(rel);
        refine_reports.insert(refined.name.clone(), report);
        refined_sets.push(refined);
    }

    // ---- stage 2: batch plans over the refined datasets ----
    eprintln!("[2/6] planning batches");
    let plan_h = plan_homogeneous_ordered(
        &refined_sets,
        cfg.batch.batch_size,
        cfg.batch.devices,
        cfg.batch.n_blocks,
        derive_seed(seed, "plan-homogeneous"),
    )?;
    plan_h.save(out_dir.join("plan_homogeneous.jsonl"))?;
    artifacts.push("plan_homogeneous.jsonl".into());
    let plan_m = plan_mixed(
        &refined_sets,
        cfg.batch.batch_size,
        cfg.batch.devices,
        cfg.batch.mixed_max_steps,
        derive_seed(seed, "plan-mixed"),
    )?;
    plan_m.save(out_dir.join("plan_mixed.jsonl"))?;
    artifacts.push("plan_mixed.jsonl".into());

    // ---- stage 3: train the toy encoder, homogeneous then mixed ----
    let steps: Vec<Step> = plan_h.steps().cloned().chain(plan_m.steps().cloned()).collect();
    eprintln!("[3/6] training toy encoder over {} step(s)", steps.len());
    let initial = EncoderParams::init(
        cfg.train.buckets,
        cfg.train.dim,
        derive_seed(seed, "encoder-init"),
    )?;
    let train_cfg = TrainConfig {
        epochs: cfg.train.epochs,
        optimizer: cfg.train.optimizer,
        lr: cfg.train.lr,
        warmup_fraction: cfg.train.warmup_fraction,
    };
    let loss_params = LossParams {
        temperature: cfg.train.temperature,
        use_in_batch_negatives: cfg.train.use_in_batch_negatives,
    };
    let (params, train_log) = train(&refined_sets, &steps, initial, &train_cfg, &loss_params)?;
    params.save(out_dir.join("params.tfep"))?;
    artifacts.push("params.tfep".into());
    train_log.save(out_dir.join("train_log.jsonl"))?;
    artifacts.push("train_log.jsonl".into());
    eprintln!(
        "  mean loss {:?} -> {:?}",
        train_log.initial_mean(10),
        train_log.final_mean(10)
    );

    // ---- stage 4: quantize the teacher store ----
    eprintln!("[4/6] quantizing teacher store");
    let quantized = quantize_store(&teacher)?;
    quantized.save(out_dir.join("teacher_q8.tfq8"))?;
    artifacts.push("teacher_q8.tfq8".into());
    let quantize_block = QuantizeBlock {
        rows: quantized.len(),
        dim: quantized.dim(),
    };

    // ---- stage 5: teacher retrieval eval, full vs light subset ----
    let eval_block = match &eval_in {
        Some((section, ds, qrels)) => {
            eprintln!("[5/6] evaluating teacher retrieval");
            let queries = owned_queries(ds);
            let corpus_ids = ds.corpus_ids();
            let full = evaluate_with_store(&queries, &corpus_ids, &teacher, qrels, &section.recall_ks)?;
            full.save(out_dir.join("eval_full.json"))?;
            artifacts.push("eval_full.json".into());

            let sampled_ids = sample_queries(
                &queries,
                section.light_fraction,
                derive_seed(seed, "light-sample"),
            )?;
            let keep: HashSet<&str> = sampled_ids.iter().map(String::as_str).collect();
            let sampled: Vec<Query> = queries
                .iter()
                .filter(|q| keep.contains(q.id.as_str()))
                .cloned()
                .collect();
            let light = build_light_corpus(
                &sampled,
                &corpus_ids,
                &teacher,
                section.light_k,
                qrels,
                true,
            )?;
            light.save(out_dir.join("light_set.json"))?;
            artifacts.push("light_set.json".into());
            let light_report =
                evaluate_with_store(&sampled, &light.corpus_ids, &teacher, qrels, &section.recall_ks)?;
            light_report.save(out_dir.join("eval_light.json"))?;
            artifacts.push("eval_light.json".into());
            eprintln!(
                "  {} queries full, {} light over {} docs",
                full.evaluated_queries,
                light_report.evaluated_queries,
                light.corpus_ids.len()
            );
            Some(EvalBlock {
                full_means: full.means.clone(),
                light_means: light_report.means.clone(),
                light_queries: light.query_ids.len(),
                light_corpus_docs: light.corpus_ids.len(),
                deltas: compare_reports(&full, &light_report),
            })
        }
        None => {
            eprintln!("[5/6] no eval section; skipping");
            None
        }
    };

    // ---- stage 6: trained-encoder eval on the holdout ----
    let holdout_block = match &holdout_in {
        Some((section, ds, qrels)) => {
            eprintln!("[6/6] evaluating trained encoder on holdout");
            let queries = owned_queries(ds);
            let report =
                evaluate_with_encoder(&params, &queries, &ds.corpus, qrels, &section.recall_ks)?;
            report.save(out_dir.join("eval_holdout.json"))?;
            artifacts.push("eval_holdout.json".into());
            Some(HoldoutBlock {
                evaluated_queries: report.evaluated_queries,
                means: report.means.clone(),
            })
        }
        None => {
            eprintln!("[6/6] no holdout section; skipping");
            None
        }
    };

    // ---- master report, written last ----
    let report = PipelineReport {
        seed,
        tasks: refined_sets.iter().map(|d| d.name.clone()).collect(),
        refine: refine_reports,
        plan: PlanBlock {
            homogeneous: PlanStats {
                steps: plan_h.total_steps(),
                dropped: plan_h.dropped.len(),
            },
            mixed: PlanStats {
                steps: plan_m.total_steps(),
                dropped: plan_m.dropped.len(),
            },
        },
        train: TrainBlock {
            steps: train_log.records.len(),
            initial_mean_loss: train_log.initial_mean(10),
            final_mean_loss: train_log.final_mean(10),
        },
        quantize: quantize_block,
        eval: eval_block,
        holdout: holdout_block,
        artifacts,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    emit(
        json,
        serde_json::to_value(&report).context("serializing report")?,
        format!(
            "pipeline complete: {} artifacts + report.json in {}",
            report.artifacts.len(),
            out_dir.display()
        ),
    );
    Ok(())
}

/// Fail fast when the teacher store is missing any id the run will look up.
fn require_vectors(store: &EmbeddingStore, ds: &Dataset) -> Result<()> {
    for q in ds.unique_queries() {
        if !store.contains(&q.id) {
            bail!(
                "teacher store lacks a vector for query {} (dataset {})",
                q.id,
                ds.name
            );
        }
    }
    for doc in &ds.corpus {
        if !store.contains(&doc.id) {
            bail!(
                "teacher store lacks a vector for document {} (dataset {})",
                doc.id,
                ds.name
            );
        }
    }
    Ok(())
}
