//! Variant tables: solo modules, the tuned vote, leave-one-out votes, the
//! equal-weight vote, the l2-metric ensemble and a single combined head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Metric;
use crate::error::{Error, Result};
use crate::ingestion::Label;
use crate::trainer::{train_module, LabeledRows, ModuleHead, ModuleId, TrainConfig, TrainingInputs};
use crate::voting::{optimize_weights, soft_vote, LogitPanel, OptimizeConfig, WeightVector};

use super::metrics::{confusion, Confusion};
use super::report::{EvalReport, EvalRow};

pub const RV: &str = "RV";
pub const RV_EQUAL: &str = "RV-equal";
pub const RV_L2: &str = "RV-l2";
pub const COMBINED: &str = "combined";

pub fn leave_one_out_name(module: &str) -> String {
    format!("RV-no{module}")
}

/// A logit panel with the gold labels of the same examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSplit {
    pub panel: LogitPanel,
    pub labels: Vec<Label>,
}

impl PanelSplit {
    pub fn new(panel: LogitPanel, labels: Vec<Label>) -> Result<Self> {
        if panel.example_count() != labels.len() {
            return Err(Error::LengthMismatch {
                left: panel.example_count(),
                right: labels.len(),
            });
        }
        Ok(PanelSplit { panel, labels })
    }

    /// Runs every head over `rows`.
    pub fn from_heads(heads: &[&ModuleHead], rows: &LabeledRows) -> Result<Self> {
        let modules = heads
            .par_iter()
            .map(|h| rows.rows.iter().map(|x| h.logits(x)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(LogitPanel::new(modules)?, rows.labels.clone())
    }

    pub fn select(&self, modules: &[usize]) -> Result<Self> {
        Ok(PanelSplit {
            panel: self.panel.select(modules)?,
            labels: self.labels.clone(),
        })
    }

    /// Confusion counts of the weighted vote.
    pub fn score(&self, weights: &[f64]) -> Result<Confusion> {
        confusion(&soft_vote(&self.panel, weights)?.predictions, &self.labels)
    }
}

/// One variant's test-split outcome for a single seed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantScore {
    pub variant: String,
    pub confusion: Confusion,
    /// Weights of the vote, in module order; `None` for single heads.
    pub weights: Option<WeightVector>,
}

impl VariantScore {
    pub fn macro_f1(&self) -> f64 {
        self.confusion.macro_f1()
    }
}

/// Tunes weights on `valid` and scores on `test`; one module needs no search.
pub fn tuned_vote(valid: &PanelSplit, test: &PanelSplit, opt: &OptimizeConfig) -> Result<(WeightVector, Confusion)> {
    let weights = if valid.panel.module_count() == 1 {
        WeightVector::uniform(1)?
    } else {
        optimize_weights(&valid.panel, &valid.labels, opt)?.weights
    };
    let c = test.score(weights.as_slice())?;
    Ok((weights, c))
}

/// Solo, tuned, leave-one-out and equal-weight variants of one panel pair.
pub fn panel_ablation(
    valid: &PanelSplit,
    test: &PanelSplit,
    names: &[&str],
    opt: &OptimizeConfig,
) -> Result<Vec<VariantScore>> {
    let k = valid.panel.module_count();
    if names.len() != k || test.panel.module_count() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} names, {k} valid modules, {} test modules",
            names.len(),
            test.panel.module_count()
        )));
    }
    let mut out = Vec::new();
    for (m, name) in names.iter().enumerate() {
        let mut w = vec![0.0; k];
        w[m] = 1.0;
        out.push(VariantScore {
            variant: name.to_string(),
            confusion: test.score(&w)?,
            weights: None,
        });
    }
    let (weights, c) = tuned_vote(valid, test, opt)?;
    out.push(VariantScore {
        variant: RV.into(),
        confusion: c,
        weights: Some(weights),
    });
    if k > 1 {
        let loo = (0..k)
            .into_par_iter()
            .map(|drop| {
                let keep: Vec<usize> = (0..k).filter(|&i| i != drop).collect();
                let (w, c) = tuned_vote(&valid.select(&keep)?, &test.select(&keep)?, opt)?;
                Ok(VariantScore {
                    variant: leave_one_out_name(names[drop]),
                    confusion: c,
                    weights: Some(w),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(loo);
    }
    let equal = WeightVector::uniform(k)?;
    out.push(VariantScore {
        variant: RV_EQUAL.into(),
        confusion: test.score(equal.as_slice())?,
        weights: Some(equal),
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub optimize: OptimizeConfig,
    pub seeds: Vec<u64>,
}

/// Trains the four voters (and the extra variants) for each seed and
/// aggregates test macro-F1 over seeds.
pub fn run_ablation(
    dataset: &str,
    inputs: &TrainingInputs,
    test: &LabeledRows,
    cfg: &AblationConfig,
) -> Result<EvalReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&seed| ablation_for_seed(inputs, test, cfg, seed, None))
        .collect::<Result<Vec<_>>>()?;
    aggregate(dataset, &per_seed)
}

/// Folds per-seed variant scores into report rows, keeping the variant
/// order of the first seed.
pub fn aggregate(dataset: &str, per_seed: &[Vec<VariantScore>]) -> Result<EvalReport> {
    let first = per_seed.first().ok_or(Error::EmptyInput)?;
    let mut report = EvalReport::new(dataset);
    for v in first {
        let scores = per_seed
            .iter()
            .map(|s| {
                s.iter()
                    .find(|x| x.variant == v.variant)
                    .map(VariantScore::macro_f1)
                    .ok_or_else(|| Error::Invariant(format!("variant {} missing for a seed", v.variant)))
            })
            .collect::<Result<Vec<_>>>()?;
        report.rows.push(EvalRow::new(v.variant.clone(), scores, v.confusion)?);
    }
    Ok(report)
}

fn train_voters(inputs: &TrainingInputs, cfg: &TrainConfig) -> Result<Vec<ModuleHead>> {
    ModuleId::VOTERS
        .par_iter()
        .map(|&m| Ok(train_module(m, inputs, cfg)?.head))
        .collect()
}

/// Every ablation variant for one seed. The main ensemble always uses the
/// cosine metric. `trained` may supply the four cosine voters (in `ModuleId::VOTERS` order) trained with this seed.
pub fn ablation_for_seed(
    inputs: &TrainingInputs,
    test: &LabeledRows,
    cfg: &AblationConfig,
    seed: u64,
    trained: Option<Vec<ModuleHead>>,
) -> Result<Vec<VariantScore>> {
    let train_cfg = TrainConfig {
        seed,
        metric: Metric::Cosine,
        ..cfg.train
    };
    let opt = OptimizeConfig { seed, ..cfg.optimize };
    let l2_cfg = TrainConfig {
        metric: Metric::L2,
        ..train_cfg
    };
    let ((heads, l2_heads), combined) = rayon::join(
        || {
            rayon::join(
                || match trained {
                    Some(h) if h.len() == ModuleId::VOTERS.len() => Ok(h),
                    Some(h) => Err(Error::ShapeMismatch(format!("{} pre-trained voters", h.len()))),
                    None => train_voters(inputs, &train_cfg),
                },
                || train_voters(inputs, &l2_cfg),
            )
        },
        || train_module(ModuleId::Combined, inputs, &train_cfg),
    );
    let heads = heads?;
    let refs: Vec<&ModuleHead> = heads.iter().collect();
    let valid_panel = PanelSplit::from_heads(&refs, &inputs.valid)?;
    let test_panel = PanelSplit::from_heads(&refs, test)?;
    let names: Vec<&str> = ModuleId::VOTERS.iter().map(|m| m.name()).collect();
    let mut out = panel_ablation(&valid_panel, &test_panel, &names, &opt)?;

    let l2_heads = l2_heads?;
    let refs: Vec<&ModuleHead> = l2_heads.iter().collect();
    let (w, c) = tuned_vote(
        &PanelSplit::from_heads(&refs, &inputs.valid)?,
        &PanelSplit::from_heads(&refs, test)?,
        &opt,
    )?;
    out.push(VariantScore {
        variant: RV_L2.into(),
        confusion: c,
        weights: Some(w),
    });

    let combined = combined?.head;
    let c = PanelSplit::from_heads(&[&combined], test)?.score(&[1.0])?;
    out.push(VariantScore {
        variant: COMBINED.into(),
        confusion: c,
        weights: None,
    });
    Ok(out)
}
