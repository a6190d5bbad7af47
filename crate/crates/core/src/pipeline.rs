//! Stage orchestration over an output directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json                 resolved run configuration
//! seed-<s>/<M>.rvhd             head checkpoint
//! seed-<s>/<M>_train.csv        epoch,train_loss,valid_macro_f1
//! seed-<s>/<M>_clusters.csv     cluster report of the kept epoch
//! seed-<s>/weights.json         tuned vote weights
//! seed-<s>/reward_trace.csv     step,reward,baseline
//! weights.csv                   per-seed weights
//! eval.csv, eval.txt            test-split report
//! ablation.csv, ablation.txt    ablation table
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{ablation_for_seed, aggregate, AblationConfig, EvalReport, PanelSplit, VariantScore};
use crate::ingestion::{featurize, Dataset, EmbeddingMatrix, Split};
use crate::tagging::{augment_train_set, AugmentStats, Gazetteer};
use crate::trainer::{train_module, LabeledRows, ModuleHead, ModuleId, TrainOutcome, TrainingInputs};
use crate::voting::{
    optimize_weights, write_trace_csv, write_weight_report, TraceRow, WeightReportRow, WeightVector,
};

pub const THREADS_ENV: &str = "RV_HATE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Vote,
    Eval,
    Ablate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Vote => "vote",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Worker count from `jobs`, capped by `RV_HATE_THREADS` when set.
pub fn resolve_threads(jobs: Option<usize>) -> Result<Option<usize>> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if jobs == Some(0) {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    Ok(match (jobs, env) {
        (Some(j), Some(e)) => Some(j.min(e)),
        (j, e) => j.or(e),
    })
}

/// Runs `f` on a dedicated pool sized by [`resolve_threads`]. Results do not
/// depend on the worker count.
pub fn with_thread_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_threads(jobs)? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// The target-tagged dataset and its embeddings.
#[derive(Debug, Clone)]
pub struct AugmentedData {
    pub dataset: Dataset,
    pub embeddings: EmbeddingMatrix,
    pub stats: AugmentStats,
}

/// A dataset with aligned embeddings, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub dataset: Dataset,
    pub embeddings: EmbeddingMatrix,
    pub augmented: Option<AugmentedData>,
}

fn check_aligned(what: &str, dataset: &Dataset, emb: &EmbeddingMatrix) -> Result<()> {
    if dataset.len() != emb.count() {
        return Err(Error::InvalidConfig(format!(
            "{what} has {} rows but the dataset has {} examples",
            emb.count(),
            dataset.len()
        )));
    }
    Ok(())
}

impl PreparedData {
    pub fn new(
        name: impl Into<String>,
        dataset: Dataset,
        embeddings: EmbeddingMatrix,
        augmented: Option<AugmentedData>,
    ) -> Result<Self> {
        dataset.ensure_trainable()?;
        check_aligned("embeddings", &dataset, &embeddings)?;
        if let Some(a) = &augmented {
            check_aligned("augmented embeddings", &a.dataset, &a.embeddings)?;
            if a.embeddings.dim() != embeddings.dim() {
                return Err(Error::InvalidConfig(format!(
                    "augmented embeddings have dim {} but embeddings have dim {}",
                    a.embeddings.dim(),
                    embeddings.dim()
                )));
            }
        }
        Ok(PreparedData {
            name: name.into(),
            dataset,
            embeddings,
            augmented,
        })
    }

    /// Loads the dataset, tags targets when augmentation is needed, and
    /// reads or computes embeddings.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = cfg
            .dataset
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("dataset path is required".into()))?;
        let dataset = Dataset::load(path)?;
        let augmented_set = if cfg.needs_augmentation() {
            let gaz = match &cfg.gazetteer {
                Some(p) => Gazetteer::load(p)?,
                None => Gazetteer::builtin(),
            };
            Some(augment_train_set(&dataset, &gaz)?)
        } else {
            None
        };
        let (embeddings, augmented) = match &cfg.embeddings {
            Some(p) => {
                let emb = EmbeddingMatrix::read(p)?;
                let aug = match (augmented_set, &cfg.augmented_embeddings) {
                    (Some((d, stats)), Some(ap)) => Some(AugmentedData {
                        embeddings: EmbeddingMatrix::read(ap)?,
                        dataset: d,
                        stats,
                    }),
                    (Some(_), None) => {
                        return Err(Error::InvalidConfig(
                            "augmented_embeddings is required when embeddings are imported and M1 is trained"
                                .into(),
                        ))
                    }
                    (None, _) => None,
                };
                (emb, aug)
            }
            None => {
                let emb = featurize(&dataset, &cfg.featurizer)?;
                let aug = augmented_set
                    .map(|(d, stats)| {
                        Ok::<_, Error>(AugmentedData {
                            embeddings: featurize(&d, &cfg.featurizer)?,
                            dataset: d,
                            stats,
                        })
                    })
                    .transpose()?;
                (emb, aug)
            }
        };
        Self::new(cfg.dataset_name(), dataset, embeddings, augmented)
    }

    pub fn rows(&self, split: Split) -> LabeledRows {
        let idx = self.dataset.indices(split);
        LabeledRows {
            rows: self.embeddings.gather(&idx),
            labels: idx.iter().map(|&i| self.dataset.examples()[i].label).collect(),
        }
    }

    pub fn training_inputs(&self) -> TrainingInputs {
        let train_augmented = self.augmented.as_ref().map(|a| {
            let idx = a.dataset.indices(Split::Train);
            LabeledRows {
                rows: a.embeddings.gather(&idx),
                labels: idx.iter().map(|&i| a.dataset.examples()[i].label).collect(),
            }
        });
        TrainingInputs {
            train: self.rows(Split::Train),
            train_augmented,
            valid: self.rows(Split::Valid),
        }
    }

    /// Example ids of the rows a module trains on, in training-row order.
    pub fn train_ids(&self, module: ModuleId) -> Vec<String> {
        let d = match (&self.augmented, module.mechanisms().augment) {
            (Some(a), true) => &a.dataset,
            _ => &self.dataset,
        };
        d.indices(Split::Train)
            .into_iter()
            .map(|i| d.examples()[i].id.clone())
            .collect()
    }
}

/// Tuned weights for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedWeights {
    pub seed: u64,
    pub modules: Vec<ModuleId>,
    pub weights: WeightVector,
    pub valid_macro_f1: f64,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn head_path(out: &Path, seed: u64, module: ModuleId) -> PathBuf {
    seed_dir(out, seed).join(format!("{}.rvhd", module.name()))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

pub fn write_manifest(cfg: &RunConfig) -> Result<()> {
    let out = cfg.output_dir()?;
    create_dir(out)?;
    write_file(&out.join("manifest.json"), cfg.to_json().as_bytes())
}

/// Trains every configured module for every seed and writes checkpoints,
/// training reports and cluster reports.
pub fn stage_train(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<(u64, ModuleId, TrainOutcome)>> {
    let out = cfg.output_dir()?;
    let inputs = data.training_inputs();
    let jobs: Vec<(u64, ModuleId)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.modules.iter().map(move |&m| (s, m)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(seed, m)| Ok((seed, m, train_module(m, &inputs, &cfg.train_config(seed))?)))
        .collect::<Result<Vec<_>>>()?;
    for (seed, m, o) in &outcomes {
        let dir = seed_dir(out, *seed);
        create_dir(&dir)?;
        o.head.save(head_path(out, *seed, *m))?;
        let mut buf = Vec::new();
        o.report.write_csv(&mut buf)?;
        write_file(&dir.join(format!("{}_train.csv", m.name())), &buf)?;
        let ids = data.train_ids(*m);
        let mut buf = Vec::new();
        o.clusters.write_report(&mut buf, |i| ids[i].clone())?;
        write_file(&dir.join(format!("{}_clusters.csv", m.name())), &buf)?;
    }
    Ok(outcomes)
}

/// Loads the configured heads for `seed` from the output directory.
pub fn load_heads(cfg: &RunConfig, seed: u64) -> Result<Vec<ModuleHead>> {
    let out = cfg.output_dir()?;
    cfg.modules
        .iter()
        .map(|&m| {
            let head = ModuleHead::load(head_path(out, seed, m))?;
            if head.module_id != m {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint for {m} holds module {}",
                    head.module_id
                )));
            }
            Ok(head)
        })
        .collect()
}

fn weight_columns(modules: &[ModuleId]) -> Vec<String> {
    modules.iter().map(|m| format!("w{}", m.byte())).collect()
}

/// Tunes vote weights per seed on the validation split. With one module
/// the search is skipped and its weight is 1.
pub fn stage_vote(cfg: &RunConfig, data: &PreparedData) -> Result<Vec<SeedWeights>> {
    let out = cfg.output_dir()?;
    let valid = data.rows(Split::Valid);
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let heads = load_heads(cfg, seed)?;
            let refs: Vec<&ModuleHead> = heads.iter().collect();
            let panel = PanelSplit::from_heads(&refs, &valid)?;
            if heads.len() == 1 {
                let w = WeightVector::uniform(1)?;
                let f1 = panel.score(w.as_slice())?.macro_f1();
                return Ok((seed, w, f1, Vec::<TraceRow>::new()));
            }
            let r = optimize_weights(&panel.panel, &panel.labels, &cfg.optimize_config(seed))?;
            Ok((seed, r.weights, r.valid_macro_f1, r.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report_rows = Vec::new();
    let mut all = Vec::new();
    for (seed, weights, f1, trace) in results {
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        if !trace.is_empty() {
            let mut buf = Vec::new();
            write_trace_csv(&trace, &mut buf)?;
            write_file(&dir.join("reward_trace.csv"), &buf)?;
        }
        let sw = SeedWeights {
            seed,
            modules: cfg.modules.clone(),
            weights: weights.clone(),
            valid_macro_f1: f1,
        };
        let json = serde_json::to_string_pretty(&sw).map_err(|e| Error::Invariant(e.to_string()))? + "\n";
        write_file(&dir.join("weights.json"), json.as_bytes())?;
        report_rows.push(WeightReportRow {
            dataset: data.name.clone(),
            seed,
            weights,
            valid_macro_f1: f1,
        });
        all.push(sw);
    }
    let mut buf = Vec::new();
    write_weight_report(&report_rows, &weight_columns(&cfg.modules), &mut buf)?;
    write_file(&out.join("weights.csv"), &buf)?;
    Ok(all)
}

pub fn load_weights(cfg: &RunConfig, seed: u64) -> Result<SeedWeights> {
    let p = seed_dir(cfg.output_dir()?, seed).join("weights.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let w: SeedWeights = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", p.display()),
    })?;
    if w.modules != cfg.modules || w.seed != seed {
        return Err(Error::InvalidConfig(format!(
            "{} was produced for a different module set or seed",
            p.display()
        )));
    }
    Ok(w)
}

fn write_report(out: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&out.join(format!("{stem}.csv")), &buf)?;
    let mut buf = Vec::new();
    report.write_text(&mut buf)?;
    write_file(&out.join(format!("{stem}.txt")), &buf)
}

/// Scores each head and the tuned vote on the test split.
pub fn stage_eval(cfg: &RunConfig, data: &PreparedData) -> Result<EvalReport> {
    let out = cfg.output_dir()?;
    let test = data.rows(Split::Test);
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let heads = load_heads(cfg, seed)?;
            let refs: Vec<&ModuleHead> = heads.iter().collect();
            let panel = PanelSplit::from_heads(&refs, &test)?;
            let mut rows = Vec::new();
            for (k, m) in cfg.modules.iter().enumerate() {
                let mut w = vec![0.0; heads.len()];
                w[k] = 1.0;
                rows.push(VariantScore {
                    variant: m.name().into(),
                    confusion: panel.score(&w)?,
                    weights: None,
                });
            }
            if heads.len() > 1 {
                let w = load_weights(cfg, seed)?;
                rows.push(VariantScore {
                    variant: crate::evaluation::ablation::RV.into(),
                    confusion: panel.score(w.weights.as_slice())?,
                    weights: Some(w.weights),
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(&data.name, &per_seed)?;
    write_report(out, "eval", &report)?;
    Ok(report)
}

/// Full ablation table over all seeds. With `reuse_heads`, the checkpoints
/// from [`stage_train`] stand in for the cosine voters when the run trained
/// all four with the cosine metric.
pub fn stage_ablate(cfg: &RunConfig, data: &PreparedData, reuse_heads: bool) -> Result<EvalReport> {
    let out = cfg.output_dir()?;
    let inputs = data.training_inputs();
    let test = data.rows(Split::Test);
    let acfg = AblationConfig {
        train: cfg.train,
        optimize: cfg.optimize_config(0),
        seeds: cfg.seeds.clone(),
    };
    let reuse = reuse_heads
        && cfg.modules == ModuleId::VOTERS && cfg.train.metric == crate::clustering::Metric::Cosine;
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let trained = if reuse { Some(load_heads(cfg, seed)?) } else { None };
            ablation_for_seed(&inputs, &test, &acfg, seed, trained)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(&data.name, &per_seed)?;
    write_report(out, "ablation", &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub weights: Vec<SeedWeights>,
    pub eval: EvalReport,
    pub ablation: Option<EvalReport>,
}

/// Validates the config, then runs train, vote, eval and (optionally)
/// ablate, writing everything under the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<PipelineSummary, StageError> {
    cfg.validate().at(Stage::Config)?;
    write_manifest(cfg).at(Stage::Config)?;
    let data = PreparedData::load(cfg).at(Stage::Ingest)?;
    stage_train(cfg, &data).at(Stage::Train)?;
    let weights = stage_vote(cfg, &data).at(Stage::Vote)?;
    let eval = stage_eval(cfg, &data).at(Stage::Eval)?;
    let ablation = if cfg.ablate {
        Some(stage_ablate(cfg, &data, true).at(Stage::Ablate)?)
    } else {
        None
    };
    Ok(PipelineSummary {
        weights,
        eval,
        ablation,
    })
}
