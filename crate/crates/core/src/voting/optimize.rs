use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Label;

use super::policy::{Episode, WeightPolicy, DEFAULT_POLICY_LR};
use super::soft_vote::{vote_macro_f1, LogitPanel, WeightVector};

pub const DEFAULT_RL_STEPS: usize = 10_000;
pub const DEFAULT_EPISODES_PER_UPDATE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Total sampled weight vectors.
    pub steps: usize,
    pub episodes_per_update: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            steps: DEFAULT_RL_STEPS,
            episodes_per_update: DEFAULT_EPISODES_PER_UPDATE,
            learning_rate: DEFAULT_POLICY_LR,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub reward: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub weights: WeightVector,
    /// Validation macro-F1 of the vote under `weights`.
    pub valid_macro_f1: f64,
    pub trace: Vec<TraceRow>,
    pub policy: WeightPolicy,
}

/// Searches the weight simplex for the vote with the best validation
/// macro-F1. The panel is read only; each reward is one pass over it.
pub fn optimize_weights(panel: &LogitPanel, labels: &[Label], cfg: &OptimizeConfig) -> Result<OptimizeResult> {
    if cfg.episodes_per_update == 0 {
        return Err(Error::InvalidConfig("episodes_per_update must be at least 1".into()));
    }
    if labels.len() != panel.example_count() {
        return Err(Error::LengthMismatch {
            left: panel.example_count(),
            right: labels.len(),
        });
    }
    let mut policy = WeightPolicy::with_learning_rate(panel.module_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut done = 0;
    while done < cfg.steps {
        let batch = cfg.episodes_per_update.min(cfg.steps - done);
        let samples = (0..batch)
            .map(|_| policy.sample_weights(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let rewards = samples
            .par_iter()
            .map(|s| vote_macro_f1(panel, s.weights.as_slice(), labels))
            .collect::<Result<Vec<f64>>>()?;
        let episodes: Vec<Episode> = samples
            .into_iter()
            .zip(&rewards)
            .map(|(s, &reward)| Episode {
                u: s.u,
                old_log_prob: s.log_prob,
                reward,
            })
            .collect();
        let stats = policy.ppo_update(&episodes)?;
        for r in rewards {
            done += 1;
            trace.push(TraceRow {
                step: done,
                reward: r,
                baseline: stats.baseline,
            });
        }
    }
    let weights = policy.mean_weights()?;
    let valid_macro_f1 = vote_macro_f1(panel, weights.as_slice(), labels)?;
    Ok(OptimizeResult {
        weights,
        valid_macro_f1,
        trace,
        policy,
    })
}

/// CSV with columns `step,reward,baseline`.
pub fn write_trace_csv(trace: &[TraceRow], w: impl Write) -> Result<()> {
    let err = |e: csv::Error| Error::Invariant(format!("reward trace: {e}"));
    let mut csv = csv::Writer::from_writer(w);
    for row in trace {
        csv.serialize(row).map_err(err)?;
    }
    csv.flush().map_err(|e| Error::Invariant(format!("reward trace: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightReportRow {
    pub dataset: String,
    pub seed: u64,
    pub weights: WeightVector,
    pub valid_macro_f1: f64,
}

/// CSV with columns `dataset,seed,<columns...>,valid_macro_f1`, one weight
/// column per voting module (`w0..w3` for the full ensemble).
pub fn write_weight_report(rows: &[WeightReportRow], columns: &[String], w: impl Write) -> Result<()> {
    let err = |e: csv::Error| Error::Invariant(format!("weight report: {e}"));
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["dataset".to_string(), "seed".to_string()];
    header.extend(columns.iter().cloned());
    header.push("valid_macro_f1".into());
    csv.write_record(&header).map_err(err)?;
    for r in rows {
        if r.weights.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} columns",
                r.weights.len(),
                columns.len()
            )));
        }
        let mut rec = vec![r.dataset.clone(), r.seed.to_string()];
        rec.extend(r.weights.as_slice().iter().map(|w| w.to_string()));
        rec.push(r.valid_macro_f1.to_string());
        csv.write_record(&rec).map_err(err)?;
    }
    csv.flush().map_err(|e| Error::Invariant(format!("weight report: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_panel() -> (LogitPanel, Vec<Label>) {
        let logits: Vec<[f64; 2]> = (0..20).map(|i| if i % 3 == 0 { [0.1, 0.9] } else { [0.7, 0.3] }).collect();
        let labels = (0..20).map(|i| Label::new((i % 2) as u8).unwrap()).collect();
        (LogitPanel::new(vec![logits; 4]).unwrap(), labels)
    }

    #[test]
    fn flat_landscape_stays_uniform() {
        let (panel, labels) = flat_panel();
        let cfg = OptimizeConfig {
            steps: 2000,
            ..OptimizeConfig::default()
        };
        let out = optimize_weights(&panel, &labels, &cfg).unwrap();
        let tv: f64 = out.weights.as_slice().iter().map(|w| (w - 0.25).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.1, "{:?}", out.weights);
        assert_eq!(out.trace.len(), 2000);
    }

    #[test]
    fn trace_is_reproducible() {
        let (panel, labels) = flat_panel();
        let cfg = OptimizeConfig {
            steps: 100,
            episodes_per_update: 7,
            ..OptimizeConfig::default()
        };
        let a = optimize_weights(&panel, &labels, &cfg).unwrap();
        let b = optimize_weights(&panel, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 100);
        assert_eq!(a.trace.last().unwrap().step, 100);
    }

    #[test]
    fn csv_shapes() {
        let mut buf = Vec::new();
        write_trace_csv(
            &[TraceRow {
                step: 1,
                reward: 0.5,
                baseline: 0.5,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,reward,baseline\n1,0.5,0.5\n");
        let mut buf = Vec::new();
        write_weight_report(
            &[WeightReportRow {
                dataset: "d".into(),
                seed: 13,
                weights: WeightVector::uniform(4).unwrap(),
                valid_macro_f1: 0.75,
            }],
            &["w0", "w1", "w2", "w3"].map(String::from),
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "dataset,seed,w0,w1,w2,w3,valid_macro_f1\nd,13,0.25,0.25,0.25,0.25,0.75\n"
        );
    }
}
