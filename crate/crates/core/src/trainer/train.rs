use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterConfig, ClusterModel, Metric};
use crate::error::{Error, Result};
use crate::evaluation::metrics;
use crate::ingestion::Label;

use super::head::{Forward, Mechanisms, ModuleHead, ModuleId};
use super::loss::{batch_objective, Batch, QueueSource};
use super::optim::Adam;
use super::queue::{HardNegativeQueue, QueueEntry, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub k_per_class: usize,
    pub metric: Metric,
    pub seed: u64,
    pub hard_k: usize,
    pub rho: f64,
    pub hidden: usize,
    pub queue_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 6,
            batch_size: 64,
            learning_rate: 1e-3,
            temperature: 0.3,
            lambda: 0.5,
            k_per_class: 20,
            metric: Metric::Cosine,
            seed: 13,
            hard_k: 8,
            rho: 0.9,
            hidden: 128,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.k_per_class == 0 {
            return bad("k_per_class must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Feature rows with one label each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledRows {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl LabeledRows {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        Ok(LabeledRows { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingInputs {
    pub train: LabeledRows,
    /// Train rows followed by the target-tagged copies; needed when the
    /// augmentation mechanism is on.
    pub train_augmented: Option<LabeledRows>,
    pub valid: LabeledRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_macro_f1: f64,
    pub anchors: usize,
    pub outliers_removed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub module_id: ModuleId,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose head was kept.
    pub best_epoch: usize,
    pub best_valid_macro_f1: f64,
}

impl TrainReport {
    /// CSV with columns `epoch,train_loss,valid_macro_f1`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Invariant(format!("training report: {e}"));
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "train_loss", "valid_macro_f1"]).map_err(err)?;
        for r in &self.epochs {
            csv.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.valid_macro_f1.to_string(),
            ])
            .map_err(err)?;
        }
        csv.flush()
            .map_err(|e| Error::Invariant(format!("training report: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ModuleHead,
    pub report: TrainReport,
    /// Clusters from the kept epoch, indexed over the rows that epoch trained on.
    pub clusters: ClusterModel,
}

/// Trains `module_id` with its designated mechanisms.
pub fn train_module(module_id: ModuleId, inputs: &TrainingInputs, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_mechanisms(module_id, module_id.mechanisms(), inputs, cfg)
}

fn forward_all(head: &ModuleHead, rows: &[Vec<f64>]) -> Result<Vec<Forward>> {
    rows.par_iter().map(|x| head.forward(x)).collect()
}

pub fn evaluate_head(head: &ModuleHead, data: &LabeledRows) -> Result<f64> {
    let preds: Vec<Label> = forward_all(head, &data.rows)?
        .iter()
        .map(Forward::prediction)
        .collect();
    metrics::macro_f1(&preds, &data.labels)
}

/// Trains one head with an explicit mechanism set. The random streams
/// depend only on `cfg`, so switching every mechanism off reproduces the
/// base module parameter for parameter.
pub fn train_with_mechanisms(
    module_id: ModuleId,
    mechanisms: Mechanisms,
    inputs: &TrainingInputs,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = if mechanisms.augment {
        inputs
            .train_augmented
            .as_ref()
            .ok_or_else(|| Error::MissingInput("train_augmented".into(), "augmentation is enabled"))?
    } else {
        &inputs.train
    };
    if data.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if inputs.valid.is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    if data.rows.len() != data.labels.len() || inputs.valid.rows.len() != inputs.valid.labels.len() {
        return Err(Error::LengthMismatch {
            left: data.rows.len(),
            right: data.labels.len(),
        });
    }
    let dim = data.dim().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = ModuleHead::init(module_id, dim, cfg.hidden, cfg.temperature, cfg.lambda, &mut rng);
    let sizes: Vec<usize> = head.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &sizes);
    let mut queue = HardNegativeQueue::new(if mechanisms.queue { cfg.queue_capacity } else { 0 });

    let mut best: Option<(ModuleHead, ClusterModel, f64, usize)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let fwd = forward_all(&head, &data.rows)?;
        let space: Vec<Vec<f64>> = fwd
            .into_iter()
            .map(|f| match cfg.metric {
                Metric::Cosine => f.projected,
                Metric::L2 => f.activation,
            })
            .collect();
        let clusters = ClusterModel::build(
            &space,
            &data.labels,
            &ClusterConfig {
                metric: cfg.metric,
                k_per_class: cfg.k_per_class,
                seed: cfg.seed.wrapping_add(epoch as u64),
                remove_outliers: mechanisms.iqr,
            },
        )?;
        let anchors = clusters.anchors();
        let anchor_xs: Vec<&[f64]> = anchors.iter().map(|&(i, _)| data.rows[i].as_slice()).collect();
        let anchor_labels: Vec<Label> = anchors.iter().map(|&(_, l)| l).collect();

        let mut order: Vec<usize> = (0..data.len()).filter(|&i| !clusters.outlier[i]).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.rows[i].as_slice()).collect();
            let labels: Vec<Label> = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch = Batch {
                xs: &xs,
                labels: &labels,
                anchor_xs: &anchor_xs,
                anchor_labels: &anchor_labels,
                queue: mechanisms.queue.then_some(QueueSource {
                    queue: &queue,
                    hard_k: cfg.hard_k,
                    rho: cfg.rho,
                }),
            };
            let (loss, grads) = batch_objective(&head, &batch, true)?;
            let grads = grads.ok_or_else(|| Error::Invariant("missing gradients".into()))?;
            adam.step(&mut head.params_mut(), &grads.as_slices());
            if !head.is_finite() {
                return Err(Error::NonFinite("head parameters"));
            }
            loss_sum += loss.total * chunk.len() as f64;
            if mechanisms.queue {
                for (x, &label) in xs.iter().zip(&labels) {
                    let f = head.forward_unchecked(x);
                    queue.push(QueueEntry {
                        confidence: f.hate_probability(),
                        projected: f.projected,
                        label,
                    });
                }
            }
        }

        let valid_f1 = evaluate_head(&head, &inputs.valid)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len().max(1) as f64,
            valid_macro_f1: valid_f1,
            anchors: anchors.len(),
            outliers_removed: clusters.removed_count(),
        });
        if best.as_ref().is_none_or(|b| valid_f1 > b.2) {
            best = Some((head.clone(), clusters, valid_f1, epoch));
        }
    }

    let (mut head, clusters, best_f1, best_epoch) =
        best.ok_or_else(|| Error::Invariant("no epoch completed".into()))?;
    head.round_to_f32();
    Ok(TrainOutcome {
        head,
        report: TrainReport {
            module_id,
            epochs: records,
            best_epoch,
            best_valid_macro_f1: best_f1,
        },
        clusters,
    })
}
