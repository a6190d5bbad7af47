//! Gaussian policy over pre-softmax ensemble weights with a clipped
//! surrogate update.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::math;
use crate::trainer::Adam;

use super::soft_vote::WeightVector;

pub const DEFAULT_CLIP_EPS: f64 = 0.2;
pub const DEFAULT_POLICY_LR: f64 = 3e-3;
pub const DEFAULT_PASSES: usize = 4;
pub const DEFAULT_BASELINE_DECAY: f64 = 0.99;
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 2.0);

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One sampled action.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    /// Raw Gaussian draw in logit space.
    pub u: Vec<f64>,
    pub weights: WeightVector,
    pub log_prob: f64,
}

/// A sampled action together with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub u: Vec<f64>,
    pub old_log_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    /// Baseline the advantages were measured against.
    pub baseline: f64,
    /// Surrogate value before the first pass.
    pub surrogate: f64,
    /// Fraction of (episode, pass) pairs whose ratio was clipped out.
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightPolicy {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Moving average of batch-mean reward; unset before the first update.
    pub baseline: Option<f64>,
    pub baseline_decay: f64,
    pub clip_eps: f64,
    pub passes: usize,
    pub updates: u64,
    optimizer: Adam,
}

/// Gaussian log-density of `u` under `N(mu, diag(exp(log_std)^2))`.
pub fn gaussian_log_prob(mu: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    u.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((u, m), s)| {
            let z = (u - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// `min(r * a, clip(r, 1 - eps, 1 + eps) * a)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Mean clipped surrogate over `episodes` at parameters `(mu, log_std)`.
pub fn surrogate(mu: &[f64], log_std: &[f64], episodes: &[Episode], baseline: f64, eps: f64) -> f64 {
    episodes
        .iter()
        .map(|e| {
            let r = (gaussian_log_prob(mu, log_std, &e.u) - e.old_log_prob).exp();
            clipped_objective(r, e.reward - baseline, eps)
        })
        .sum::<f64>()
        / episodes.len() as f64
}

/// Analytic gradient of [`surrogate`] with respect to `mu` and `log_std`,
/// plus the number of episodes whose clipped branch was active.
pub fn surrogate_gradient(
    mu: &[f64],
    log_std: &[f64],
    episodes: &[Episode],
    baseline: f64,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, usize) {
    let k = mu.len();
    let n = episodes.len() as f64;
    let mut g_mu = vec![0.0; k];
    let mut g_ls = vec![0.0; k];
    let mut clipped = 0;
    for e in episodes {
        let adv = e.reward - baseline;
        let r = (gaussian_log_prob(mu, log_std, &e.u) - e.old_log_prob).exp();
        let unclipped = r * adv;
        if unclipped > r.clamp(1.0 - eps, 1.0 + eps) * adv {
            clipped += 1;
            continue;
        }
        let scale = adv * r / n;
        for j in 0..k {
            let inv_var = (-2.0 * log_std[j]).exp();
            let d = e.u[j] - mu[j];
            g_mu[j] += scale * d * inv_var;
            g_ls[j] += scale * (d * d * inv_var - 1.0);
        }
    }
    (g_mu, g_ls, clipped)
}

impl WeightPolicy {
    /// Zero means (uniform weights) and `log_std = ln 0.5`.
    pub fn new(k: usize) -> Self {
        Self::with_learning_rate(k, DEFAULT_POLICY_LR)
    }

    pub fn with_learning_rate(k: usize, learning_rate: f64) -> Self {
        WeightPolicy {
            mu: vec![0.0; k],
            log_std: vec![0.5f64.ln(); k],
            baseline: None,
            baseline_decay: DEFAULT_BASELINE_DECAY,
            clip_eps: DEFAULT_CLIP_EPS,
            passes: DEFAULT_PASSES,
            updates: 0,
            optimizer: Adam::new(learning_rate, &[k, k]),
        }
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Deterministic weights `softmax(mu)`.
    pub fn mean_weights(&self) -> Result<WeightVector> {
        WeightVector::from_logits(&self.mu)
    }

    pub fn log_prob(&self, u: &[f64]) -> f64 {
        gaussian_log_prob(&self.mu, &self.log_std, u)
    }

    pub fn sample_weights(&self, rng: &mut impl Rng) -> Result<WeightSample> {
        let u: Vec<f64> = self
            .mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weights = WeightVector::from_logits(&u)?;
        let log_prob = self.log_prob(&u);
        Ok(WeightSample { u, weights, log_prob })
    }

    /// Advantages use the baseline from before this batch (the batch mean
    /// on the very first update); the baseline then moves toward the batch
    /// mean reward.
    pub fn ppo_update(&mut self, episodes: &[Episode]) -> Result<UpdateStats> {
        if episodes.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let k = self.k();
        if let Some(e) = episodes.iter().find(|e| e.u.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: e.u.len(),
            });
        }
        if episodes.iter().any(|e| !(e.reward.is_finite() && e.old_log_prob.is_finite())) {
            return Err(Error::NonFinite("episode"));
        }
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        let batch_mean = math::stable_mean(&rewards);
        let baseline = self.baseline.unwrap_or(batch_mean);
        let eps = self.clip_eps;
        let before = surrogate(&self.mu, &self.log_std, episodes, baseline, eps);
        let mut clipped = 0;
        for _ in 0..self.passes {
            let (g_mu, g_ls, c) = surrogate_gradient(&self.mu, &self.log_std, episodes, baseline, eps);
            clipped += c;
            // ascend: hand the optimizer the negated gradient
            let n_mu: Vec<f64> = g_mu.iter().map(|g| -g).collect();
            let n_ls: Vec<f64> = g_ls.iter().map(|g| -g).collect();
            self.optimizer
                .step(&mut [&mut self.mu, &mut self.log_std], &[&n_mu, &n_ls]);
            for s in &mut self.log_std {
                *s = s.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
            }
        }
        if self.mu.iter().chain(&self.log_std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        self.baseline = Some(baseline + (1.0 - self.baseline_decay) * (batch_mean - baseline));
        self.updates += 1;
        Ok(UpdateStats {
            baseline,
            surrogate: before,
            clip_fraction: clipped as f64 / (self.passes.max(1) * episodes.len()) as f64,
        })
    }
}
