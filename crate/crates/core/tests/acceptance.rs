//! Acceptance gate. Each criterion runs against an oracle written here,
//! independently of the library code it checks, and prints one line:
//!
//! ```text
//! PASS <criterion> (<elapsed> / budget <budget>) <detail>
//! ```
//!
//! A criterion fails when its checks fail or when it runs past its time
//! budget. The process exits nonzero if any criterion failed.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvhate::clustering::{iqr_filter, select_anchor, Metric};
use rvhate::config::RunConfig;
use rvhate::evaluation::ablation::{leave_one_out_name, RV};
use rvhate::evaluation::panel_ablation;
use rvhate::ingestion::Label;
use rvhate::pipeline::{run_pipeline, with_thread_pool};
use rvhate::synthetic::{planted_oracle_panel, separable_rows, toy_corpus, FavoringSpec};
use rvhate::trainer::{
    batch_objective, contrastive_loss, evaluate_head, select_hard_negatives, train_module, Batch, HardNegativeQueue,
    LabeledRows, ModuleHead, ModuleId, QueueEntry, QueueSource, TrainConfig, TrainingInputs,
};
use rvhate::voting::{
    clipped_objective, gaussian_log_prob, optimize_weights, soft_vote, surrogate, surrogate_gradient, vote_macro_f1,
    Episode, LogitPanel, OptimizeConfig, WeightPolicy, WeightVector,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn label(i: usize) -> Label {
    Label::new((i % 2) as u8).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn oracle_macro_f1(preds: &[Label], gold: &[Label]) -> f64 {
    let mut f = 0.0;
    for class in [Label::NON_HATE, Label::HATE] {
        let tp = preds.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count() as f64;
        let fp = preds.iter().zip(gold).filter(|(p, g)| **p == class && **g != class).count() as f64;
        let fn_ = preds.iter().zip(gold).filter(|(p, g)| **p != class && **g == class).count() as f64;
        if tp + fp + fn_ > 0.0 {
            f += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
    }
    f / 2.0
}

fn simplex_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=6);
        let mut policy = WeightPolicy::new(k);
        policy.mu = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        policy.log_std = (0..k).map(|_| rng.random_range(-5.0..2.0)).collect();
        let s = policy.sample_weights(&mut rng).map_err(|e| e.to_string())?;
        let w = s.weights.as_slice();
        ensure!(w.len() == k, "sample has {} weights for k={k}", w.len());
        ensure!(w.iter().all(|&x| x > 0.0), "nonpositive weight in {w:?}");
        let sum: f64 = w.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        ensure!((sum - 1.0).abs() <= 1e-9, "weights {w:?} sum to {sum}");
    }
    let init = WeightPolicy::new(4).mean_weights().map_err(|e| e.to_string())?;
    ensure!(init.as_slice() == [0.25; 4], "initial weights {:?}", init.as_slice());
    let zero = WeightVector::from_logits(&[0.0; 4]).map_err(|e| e.to_string())?;
    ensure!(zero.as_slice() == [0.25; 4], "softmax(0) = {:?}", zero.as_slice());
    ensure!(WeightVector::new(vec![0.5, 0.6]).is_err(), "accepted weights summing to 1.1");
    ensure!(WeightVector::new(vec![1.0, 0.0]).is_err(), "accepted a zero weight");
    Ok(format!("10000 samples, max |sum-1| = {worst:.1e}"))
}

fn oracle_vote(modules: &[Vec<[f64; 2]>], w: &[f64], i: usize) -> (f64, Label) {
    let mut z0 = 0.0;
    let mut z1 = 0.0;
    for (m, wm) in modules.iter().zip(w) {
        z0 += wm * m[i][0];
        z1 += wm * m[i][1];
    }
    (z1 - z0, if z1 > z0 { Label::HATE } else { Label::NON_HATE })
}

fn soft_vote_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut examples = 0;
    for trial in 0..1000 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(1..=50);
        let modules: Vec<Vec<[f64; 2]>> = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
                    .collect()
            })
            .collect();
        let panel = LogitPanel::new(modules.clone()).map_err(|e| e.to_string())?;
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let vote = soft_vote(&panel, &w).map_err(|e| e.to_string())?;
        for i in 0..n {
            let (_, want) = oracle_vote(&modules, &w, i);
            ensure!(vote.predictions[i] == want, "trial {trial} example {i}: vote disagrees with oracle");
        }

        let pow2 = 2f64.powi(rng.random_range(-8..=8));
        let scaled: Vec<f64> = w.iter().map(|x| x * pow2).collect();
        let svote = soft_vote(&panel, &scaled).map_err(|e| e.to_string())?;
        ensure!(svote.predictions == vote.predictions, "trial {trial}: scaling by {pow2} changed the vote");
        let c = rng.random_range(0.001..1000.0);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let cvote = soft_vote(&panel, &scaled).map_err(|e| e.to_string())?;
        for i in 0..n {
            let (margin, _) = oracle_vote(&modules, &w, i);
            if margin.abs() > 1e-9 {
                ensure!(
                    cvote.predictions[i] == vote.predictions[i],
                    "trial {trial} example {i}: scaling by {c} changed the vote"
                );
            }
        }

        let equal = WeightVector::uniform(k).map_err(|e| e.to_string())?;
        let evote = soft_vote(&panel, equal.as_slice()).map_err(|e| e.to_string())?;
        for i in 0..n {
            let mean0 = modules.iter().map(|m| m[i][0]).sum::<f64>() / k as f64;
            let mean1 = modules.iter().map(|m| m[i][1]).sum::<f64>() / k as f64;
            if (mean1 - mean0).abs() > 1e-12 {
                let want = if mean1 > mean0 { Label::HATE } else { Label::NON_HATE };
                ensure!(evote.predictions[i] == want, "trial {trial} example {i}: equal weights differ from mean");
            }
        }
        examples += n;
    }
    Ok(format!("1000 panels, {examples} examples"))
}

fn finite_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn relative_ok(analytic: f64, numeric: f64, tol: f64) -> bool {
    (analytic - numeric).abs() <= tol * analytic.abs().max(numeric.abs()) + 1e-8
}

fn ppo_mechanics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let eps = 0.2;

    for _ in 0..100 {
        let mut policy = WeightPolicy::new(4);
        policy.mu = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let episodes: Vec<Episode> = (0..32)
            .map(|_| {
                let s = policy.sample_weights(&mut rng).unwrap();
                Episode {
                    u: s.u,
                    old_log_prob: s.log_prob,
                    reward: rng.random(),
                }
            })
            .collect();
        for e in &episodes {
            let r = (policy.log_prob(&e.u) - e.old_log_prob).exp();
            ensure!(r == 1.0, "ratio {r} at theta = theta_old");
        }
        let b = 0.4;
        let mean_adv = episodes.iter().map(|e| e.reward - b).sum::<f64>() / 32.0;
        let s = surrogate(&policy.mu, &policy.log_std, &episodes, b, eps);
        ensure!((s - mean_adv).abs() <= 1e-12, "surrogate {s} vs mean advantage {mean_adv}");
    }

    for (r, a, want) in [(1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (1.5, -1.0, -1.5), (0.5, 1.0, 0.5), (1.0, 0.7, 0.7)] {
        let got = clipped_objective(r, a, eps);
        ensure!((got - want).abs() <= 1e-12, "clip({r}, {a}) = {got}, want {want}");
    }

    let mut checked = 0;
    let mut clipped_seen = 0;
    let mut trial = 0;
    while checked < 50 {
        trial += 1;
        let k = rng.random_range(2..=5);
        let old_mu: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let old_ls: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..0.0)).collect();
        let mu: Vec<f64> = old_mu.iter().map(|m| m + rng.random_range(-0.15..0.15)).collect();
        let ls: Vec<f64> = old_ls.iter().map(|s| s + rng.random_range(-0.1..0.1)).collect();
        let episodes: Vec<Episode> = (0..16)
            .map(|_| {
                let u: Vec<f64> = old_mu
                    .iter()
                    .zip(&old_ls)
                    .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                Episode {
                    old_log_prob: gaussian_log_prob(&old_mu, &old_ls, &u),
                    u,
                    reward: rng.random(),
                }
            })
            .collect();
        let near_kink = episodes.iter().any(|e| {
            let r = (gaussian_log_prob(&mu, &ls, &e.u) - e.old_log_prob).exp();
            (r - (1.0 - eps)).abs() < 1e-3 || (r - (1.0 + eps)).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let b = 0.5;
        let (g_mu, g_ls, clipped) = surrogate_gradient(&mu, &ls, &episodes, b, eps);
        clipped_seen += clipped;
        for j in 0..k {
            let num = finite_difference(
                |x| {
                    let mut m = mu.clone();
                    m[j] = x;
                    surrogate(&m, &ls, &episodes, b, eps)
                },
                mu[j],
                1e-6,
            );
            ensure!(relative_ok(g_mu[j], num, 1e-4), "trial {trial}: d/dmu[{j}] {} vs {num}", g_mu[j]);
            let num = finite_difference(
                |x| {
                    let mut s = ls.clone();
                    s[j] = x;
                    surrogate(&mu, &s, &episodes, b, eps)
                },
                ls[j],
                1e-6,
            );
            ensure!(relative_ok(g_ls[j], num, 1e-4), "trial {trial}: d/dlog_std[{j}] {} vs {num}", g_ls[j]);
        }
        checked += 1;
    }
    ensure!(clipped_seen > 0, "no clipped episode was exercised");
    Ok(format!("ratios 1 on 100 batches, 5 hand cases, 50 gradient checks ({clipped_seen} clipped episodes)"))
}

fn planted_oracle() -> Outcome {
    let valid = planted_oracle_panel(1000, 4, 0, 11).map_err(|e| e.to_string())?;
    let test = planted_oracle_panel(1000, 4, 0, 12).map_err(|e| e.to_string())?;

    let corner = vote_macro_f1(&valid.panel, &[1.0, 0.0, 0.0, 0.0], &valid.labels).map_err(|e| e.to_string())?;
    let mut grid_best = 0.0f64;
    let steps = 10;
    for a in 0..=steps {
        for b in 0..=steps - a {
            for c in 0..=steps - a - b {
                let d = steps - a - b - c;
                let w = [a, b, c, d].map(|x| x as f64 / steps as f64);
                grid_best = grid_best.max(vote_macro_f1(&valid.panel, &w, &valid.labels).map_err(|e| e.to_string())?);
            }
        }
    }
    ensure!(corner >= grid_best, "oracle corner {corner} below grid best {grid_best}");

    let cfg = OptimizeConfig::default();
    ensure!(cfg.steps <= 10_000, "{} steps", cfg.steps);
    let out = optimize_weights(&valid.panel, &valid.labels, &cfg).map_err(|e| e.to_string())?;
    let w = out.weights.as_slice();
    ensure!(w[0] >= 0.5, "oracle weight {:.4} in {w:?}", w[0]);
    let equal = [0.25; 4];
    let mut lines = Vec::new();
    for (name, split) in [("valid", &valid), ("test", &test)] {
        let learned = vote_macro_f1(&split.panel, w, &split.labels).map_err(|e| e.to_string())?;
        let eq = vote_macro_f1(&split.panel, &equal, &split.labels).map_err(|e| e.to_string())?;
        ensure!(learned >= eq, "{name}: learned F1 {learned:.4} < equal F1 {eq:.4}");
        lines.push(format!("{name} F1 {learned:.4} vs equal {eq:.4}"));
    }
    Ok(format!("w = {:.3?}, {}", w, lines.join(", ")))
}

/// Quantile at `p = num/4` of integer values, in units of 1/4.
fn quarter_quantile(sorted: &[i64], num: usize) -> i64 {
    let h4 = (sorted.len() - 1) * num;
    let lo = h4 / 4;
    let frac = (h4 % 4) as i64;
    let hi = (lo + 1).min(sorted.len() - 1);
    4 * sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn iqr_oracle_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut removed_total = 0;
    let mut degenerate = 0;
    for trial in 0..500 {
        let n = rng.random_range(1..=40);
        let values: Vec<i64> = match trial % 5 {
            0 => vec![rng.random_range(0..1000); n],
            1 => (0..n).map(|_| rng.random_range(0..4)).collect(),
            _ => (0..n)
                .map(|_| {
                    let v = rng.random_range(0..1 << 16);
                    if rng.random_bool(0.1) {
                        v * 50
                    } else {
                        v
                    }
                })
                .collect(),
        };
        // distances are multiples of 1/64, so every step of the fence is exact in f64
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v as f64 / 64.0]).collect();
        let members: Vec<usize> = (0..n).collect();
        let got = iqr_filter(&rows, &members, &[0.0], Metric::L2).map_err(|e| e.to_string())?;

        let mut sorted = values.clone();
        sorted.sort_unstable();
        let q1 = quarter_quantile(&sorted, 1);
        let q3 = quarter_quantile(&sorted, 3);
        let upper8 = 2 * q3 + 3 * (q3 - q1);
        let mut kept: Vec<usize> = members.iter().copied().filter(|&i| 8 * values[i] < upper8).collect();
        let mut removed: Vec<usize> = members.iter().copied().filter(|&i| 8 * values[i] >= upper8).collect();
        let all_removed = kept.is_empty();
        if all_removed {
            kept = members.clone();
            removed.clear();
            degenerate += 1;
        }
        ensure!(got.q1 == q1 as f64 / 256.0, "trial {trial}: q1 {} vs {}", got.q1, q1 as f64 / 256.0);
        ensure!(got.q3 == q3 as f64 / 256.0, "trial {trial}: q3 {} vs {}", got.q3, q3 as f64 / 256.0);
        ensure!(
            got.upper_bound == upper8 as f64 / 512.0,
            "trial {trial}: upper {} vs {}",
            got.upper_bound,
            upper8 as f64 / 512.0
        );
        ensure!(got.kept == kept, "trial {trial}: kept {:?} vs {kept:?}", got.kept);
        ensure!(got.removed == removed, "trial {trial}: removed {:?} vs {removed:?}", got.removed);
        ensure!(got.degenerate == all_removed, "trial {trial}: degenerate flag");
        removed_total += removed.len();
    }

    let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 100.0].iter().map(|&d| vec![d]).collect();
    let got = iqr_filter(&rows, &[0, 1, 2, 3, 4], &[0.0], Metric::L2).map_err(|e| e.to_string())?;
    ensure!(
        got.q1 == 2.0 && got.q3 == 4.0 && got.upper_bound == 7.0,
        "hand case bounds {} {} {}",
        got.q1,
        got.q3,
        got.upper_bound
    );
    ensure!(got.removed == vec![4], "hand case removed {:?}", got.removed);
    Ok(format!("500 lists ({removed_total} removals, {degenerate} degenerate), hand case removes index 4"))
}

fn anchor_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for trial in 0..200 {
        let dim = rng.random_range(2..=8);
        let n = rng.random_range(1..=30);
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        if trial % 4 == 0 && n > 2 {
            rows[n - 1] = rows[1].clone();
        }
        let mut members: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        if members.is_empty() {
            members.push(0);
        }
        let centroid: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for metric in [Metric::Cosine, Metric::L2] {
            let got = select_anchor(&rows, &members, &centroid, metric).map_err(|e| e.to_string())?;
            let mut best = members[0];
            for &i in &members {
                let better = match metric {
                    Metric::Cosine => cosine(&rows[i], &centroid) > cosine(&rows[best], &centroid),
                    Metric::L2 => {
                        let d = |r: &[f64]| r.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                        d(&rows[i]) < d(&rows[best])
                    }
                };
                let tie_lower = match metric {
                    Metric::Cosine => cosine(&rows[i], &centroid) == cosine(&rows[best], &centroid),
                    Metric::L2 => rows[i] == rows[best],
                } && i < best;
                if better || tie_lower {
                    best = i;
                }
            }
            ensure!(got == best, "trial {trial} {metric}: anchor {got} vs exhaustive {best}");
        }
    }

    let s = 1.0 / 0.82f64.sqrt();
    let rows = vec![vec![1.0, 0.0], vec![0.9 * s, 0.1 * s], vec![0.0, 1.0]];
    let mut mean = [0.0; 2];
    for r in &rows {
        mean[0] += r[0] / 3.0;
        mean[1] += r[1] / 3.0;
    }
    let norm = dot(&mean, &mean).sqrt();
    let centroid = [mean[0] / norm, mean[1] / norm];
    let cos_pick = select_anchor(&rows, &[0, 1, 2], &centroid, Metric::Cosine).map_err(|e| e.to_string())?;
    let cos_want = (0..3)
        .max_by(|&a, &b| cosine(&rows[a], &centroid).total_cmp(&cosine(&rows[b], &centroid)))
        .unwrap();
    ensure!(cos_pick == cos_want, "hand cluster cosine anchor {cos_pick} vs {cos_want}");
    Ok(format!("200 clusters x 2 metrics, hand cluster anchor {cos_pick}"))
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn contrastive_trainer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for trial in 0..1000 {
        let dim = rng.random_range(2..=6);
        let n = rng.random_range(1..=6);
        let batch: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, dim)).collect();
        let labels: Vec<Label> = (0..n).map(|_| label(rng.random_range(0..2))).collect();
        let anchors: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, dim)).collect();
        let anchor_labels: Vec<Label> = (0..4).map(label).collect();
        let negatives: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..rng.random_range(0..3)).map(|_| random_unit(&mut rng, dim)).collect())
            .collect();
        let tau = rng.random_range(0.05..1.0);
        let loss = contrastive_loss(&batch, &labels, &anchors, &anchor_labels, &negatives, tau)
            .map_err(|e| e.to_string())?;
        ensure!(loss >= 0.0 && loss.is_finite(), "trial {trial}: loss {loss}");
    }

    let closed = contrastive_loss(
        &[vec![1.0, 0.0]],
        &[Label::HATE],
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[Label::HATE, Label::NON_HATE],
        &[],
        0.3,
    )
    .map_err(|e| e.to_string())?;
    let e = (1.0f64 / 0.3).exp();
    let formula = -(e / (e + 1.0)).ln();
    ensure!((closed - formula).abs() <= 1e-6, "closed form {closed} vs {formula}");

    let mut grads_checked = 0;
    for trial in 0..3 {
        let (dim, hidden) = (5, 6);
        let lambda = [0.5, 1.0, 0.3][trial];
        let head = ModuleHead::init(ModuleId::M3, dim, hidden, 0.3, lambda, &mut rng);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, dim)).collect();
        let ys: Vec<Label> = (0..6).map(label).collect();
        let anchor_rows: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, dim)).collect();
        let anchor_labels: Vec<Label> = (0..4).map(label).collect();
        let mut queue = HardNegativeQueue::new(16);
        for i in 0..12 {
            queue.push(QueueEntry {
                projected: random_unit(&mut rng, hidden),
                label: label(i),
                confidence: rng.random(),
            });
        }
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let arefs: Vec<&[f64]> = anchor_rows.iter().map(Vec::as_slice).collect();
        let batch = Batch {
            xs: &refs,
            labels: &ys,
            anchor_xs: &arefs,
            anchor_labels: &anchor_labels,
            queue: Some(QueueSource {
                queue: &queue,
                hard_k: 3,
                rho: 0.5,
            }),
        };
        let (_, grads) = batch_objective(&head, &batch, true).map_err(|e| e.to_string())?;
        let grads = grads.ok_or("no gradients returned")?;
        let analytic = grads.as_slices();
        for block in 0..4 {
            for j in 0..analytic[block].len() {
                let loss_at = |v: f64| {
                    let mut h = head.clone();
                    h.params_mut()[block][j] = v;
                    batch_objective(&h, &batch, false).unwrap().0.total
                };
                let num = finite_difference(loss_at, head.params()[block][j], 1e-4);
                ensure!(
                    relative_ok(analytic[block][j], num, 1e-4),
                    "trial {trial} block {block} index {j}: analytic {} vs numeric {num}",
                    analytic[block][j]
                );
                grads_checked += 1;
            }
        }
    }

    let train = separable_rows(400, 16, 2.0, 0.4, 71);
    let valid = separable_rows(100, 16, 2.0, 0.4, 72);
    let oracle: Vec<Label> = train
        .rows
        .iter()
        .map(|r| if r[0] > 0.0 { Label::HATE } else { Label::NON_HATE })
        .collect();
    ensure!(oracle_macro_f1(&oracle, &train.labels) == 1.0, "synthetic set is not separable");
    let mut aug_rows = train.rows.clone();
    let mut aug_labels = train.labels.clone();
    for (r, y) in train.rows.iter().zip(&train.labels) {
        if y.is_hate() {
            aug_rows.push(r.clone());
            aug_labels.push(*y);
        }
    }
    let inputs = TrainingInputs {
        train: train.clone(),
        train_augmented: Some(LabeledRows::new(aug_rows, aug_labels).map_err(|e| e.to_string())?),
        valid,
    };
    let cfg = TrainConfig::default();
    ensure!(cfg.epochs <= 6, "{} epochs", cfg.epochs);
    let mut scores = Vec::new();
    for m in ModuleId::VOTERS {
        let out = train_module(m, &inputs, &cfg).map_err(|e| e.to_string())?;
        let f1 = evaluate_head(&out.head, &train).map_err(|e| e.to_string())?;
        ensure!(f1 >= 0.99, "{m:?} train macro-F1 {f1}");
        scores.push(format!("{}={f1:.3}", m.name()));
    }
    Ok(format!(
        "closed form {closed:.7} (= ln(1+e^(-1/0.3)); the 0.0344 approximation is off by {:.1e}), {grads_checked} gradients, train F1 {}",
        (closed - 0.0344).abs(),
        scores.join(" ")
    ))
}

fn hard_negative_queue() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for trial in 0..500 {
        let capacity = rng.random_range(0..=24);
        let pushes: usize = rng.random_range(0..=40);
        let dim = rng.random_range(2..=5);
        let mut queue = HardNegativeQueue::new(capacity);
        let mut history = Vec::new();
        for _ in 0..pushes {
            let e = QueueEntry {
                projected: random_unit(&mut rng, dim),
                label: label(rng.random_range(0..2)),
                confidence: rng.random(),
            };
            history.push(e.clone());
            queue.push(e);
        }
        let expect: Vec<&QueueEntry> = history.iter().skip(pushes.saturating_sub(capacity)).collect();
        ensure!(queue.len() == expect.len(), "trial {trial}: len {} vs {}", queue.len(), expect.len());
        ensure!(
            queue.iter().zip(&expect).all(|(a, b)| a == *b),
            "trial {trial}: queue contents are not the newest entries in order"
        );

        let z = random_unit(&mut rng, dim);
        let y = label(rng.random_range(0..2));
        let hard_k = rng.random_range(0..=6);
        let rho = rng.random_range(0.0..1.0);
        let got = select_hard_negatives(&queue, &z, y, hard_k, rho);
        let mut ranked: Vec<(usize, f64)> = expect
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label != y || (!e.label.is_hate() && e.confidence >= rho))
            .map(|(i, e)| (i, cosine(&z, &e.projected)))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = ranked.into_iter().take(hard_k).map(|(i, _)| i).collect();
        ensure!(got == want, "trial {trial}: selected {got:?} vs {want:?}");
    }
    Ok("500 trials".into())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("toy.jsonl");
    let mut file = std::fs::File::create(&data).map_err(|e| e.to_string())?;
    toy_corpus(200, 3).write_jsonl(&mut file).map_err(|e| e.to_string())?;
    let out = tmp.path().join("run");
    let cfg = RunConfig {
        dataset: Some(data),
        output_dir: Some(out.clone()),
        ..RunConfig::default()
    };
    let first_start = Instant::now();
    let first = with_thread_pool(Some(1), || run_pipeline(&cfg)).map_err(|e| e.to_string())?;
    let first = first.map_err(|e| e.to_string())?;
    let first_elapsed = first_start.elapsed();
    let a = snapshot(&out);
    std::fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    let second = with_thread_pool(Some(2), || run_pipeline(&cfg)).map_err(|e| e.to_string())?;
    second.map_err(|e| e.to_string())?;
    let b = snapshot(&out);
    ensure!(
        a.keys().collect::<Vec<_>>() == b.keys().collect::<Vec<_>>(),
        "file sets differ: {:?} vs {:?}",
        a.keys(),
        b.keys()
    );
    for (name, bytes) in &a {
        ensure!(b[name] == *bytes, "{name} differs between runs");
    }
    ensure!(a.keys().any(|k| k.ends_with(".rvhd")), "no checkpoints written");
    ensure!(a.contains_key("eval.csv") && a.contains_key("weights.csv"), "reports missing");
    let rv = first.eval.row(RV).map(|r| r.macro_f1_mean).unwrap_or(f64::NAN);
    Ok(format!(
        "{} files identical, one run {:.1}s, RV test F1 {rv:.3}",
        a.len(),
        first_elapsed.as_secs_f64()
    ))
}

fn ensemble_dominance() -> Outcome {
    let names = ["M0", "M1", "M2", "M3"];
    let mut lines = Vec::new();
    for dominant in 1..=3 {
        let spec = FavoringSpec::with_dominant(dominant);
        let valid = spec.sample(1000, 900 + dominant as u64).map_err(|e| e.to_string())?;
        let test = spec.sample(2000, 950 + dominant as u64).map_err(|e| e.to_string())?;
        let rows =
            panel_ablation(&valid, &test, &names, &OptimizeConfig::default()).map_err(|e| e.to_string())?;
        let f1 = |v: &str| rows.iter().find(|r| r.variant == v).map(|r| r.macro_f1());
        let rv = f1(RV).ok_or("no RV row")?;
        let best_solo = names.iter().filter_map(|n| f1(n)).fold(0.0, f64::max);
        ensure!(
            rv >= best_solo - 0.005,
            "dataset {dominant}: RV {rv:.4} below best solo {best_solo:.4} - 0.005"
        );
        let drops: Vec<f64> = names
            .iter()
            .map(|n| f1(&leave_one_out_name(n)).map(|x| rv - x).ok_or("missing LOO row"))
            .collect::<Result<_, _>>()?;
        let largest = (0..4).max_by(|&a, &b| drops[a].total_cmp(&drops[b])).unwrap();
        ensure!(
            largest == dominant,
            "dataset {dominant}: largest drop from M{largest}, drops {drops:.4?}"
        );
        lines.push(format!("d={dominant}: RV {rv:.3} solo {best_solo:.3} drop {:.3}", drops[dominant]));
    }
    Ok(lines.join("; "))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "simplex-invariants",
            budget: Duration::from_secs(1),
            run: simplex_invariants,
        },
        Criterion {
            name: "soft-vote-algebra",
            budget: Duration::from_secs(5),
            run: soft_vote_algebra,
        },
        Criterion {
            name: "ppo-mechanics",
            budget: Duration::from_secs(10),
            run: ppo_mechanics,
        },
        Criterion {
            name: "planted-oracle-convergence",
            budget: Duration::from_secs(60),
            run: planted_oracle,
        },
        Criterion {
            name: "iqr-oracle-suite",
            budget: Duration::from_secs(1),
            run: iqr_oracle_suite,
        },
        Criterion {
            name: "anchor-correctness",
            budget: Duration::from_secs(1),
            run: anchor_correctness,
        },
        Criterion {
            name: "contrastive-trainer",
            budget: Duration::from_secs(30),
            run: contrastive_trainer,
        },
        Criterion {
            name: "hard-negative-queue",
            budget: Duration::from_secs(2),
            run: hard_negative_queue,
        },
        Criterion {
            name: "end-to-end-determinism",
            budget: Duration::from_secs(240),
            run: end_to_end_determinism,
        },
        Criterion {
            name: "ensemble-dominance",
            budget: Duration::from_secs(300),
            run: ensemble_dominance,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("over budget; {detail}")),
            other => other,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{status} {} ({:.2}s / budget {}s) {detail}",
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
        if result.is_err() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
