//! Cross-entropy + anchor-based contrastive objective with hand-derived
//! gradients.
//!
//! For a batch sample `i` with label `y`, positives `P(i)` are the anchors
//! labeled `y` and candidates `C(i)` are all anchors plus the hard negatives
//! drawn for `i`:
//!
//! ```text
//! loss_i = logsumexp_{c in C(i)} (z_i . z_c / tau) - mean_{a in P(i)} (z_i . z_a / tau)
//! ```
//!
//! which is the mean over positives of `-log softmax` evaluated with a
//! stabilized log-sum-exp. The combined batch objective is
//! `(1 - lambda) * CE + lambda * contrastive`.

use crate::error::{Error, Result};
use crate::ingestion::Label;
use crate::math;

use super::head::{Forward, ModuleHead};
use super::queue::{select_hard_negatives, HardNegativeQueue};

pub(crate) struct ContrastiveTerm {
    pub loss: f64,
    pub d_batch: Vec<Vec<f64>>,
    pub d_anchor: Vec<Vec<f64>>,
}

/// Contrastive loss over vectors that are already unit length (or zero).
/// Queue negatives are constants and receive no gradient.
pub(crate) fn contrastive_unit(
    batch: &[&[f64]],
    batch_labels: &[Label],
    anchors: &[&[f64]],
    anchor_labels: &[Label],
    negatives: &[Vec<&[f64]>],
    tau: f64,
    want_grad: bool,
) -> Result<ContrastiveTerm> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = batch[0].len();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_batch = Vec::new();
    let mut d_anchor = if want_grad {
        vec![vec![0.0; dim]; anchors.len()]
    } else {
        Vec::new()
    };
    let mut scores = Vec::with_capacity(anchors.len() + 8);
    for (i, (z, &y)) in batch.iter().zip(batch_labels).enumerate() {
        let n_pos = anchor_labels.iter().filter(|&&l| l == y).count();
        if n_pos == 0 {
            return Err(Error::MissingAnchorClass(y.value()));
        }
        let negs: &[&[f64]] = negatives.get(i).map(Vec::as_slice).unwrap_or(&[]);
        scores.clear();
        scores.extend(anchors.iter().map(|a| math::dot(z, a) / tau));
        scores.extend(negs.iter().map(|q| math::dot(z, q) / tau));
        let lse = math::log_sum_exp(&scores);
        let pos_mean = anchor_labels
            .iter()
            .zip(&scores)
            .filter(|(&l, _)| l == y)
            .map(|(_, s)| s)
            .sum::<f64>()
            / n_pos as f64;
        loss += lse - pos_mean;

        if want_grad {
            let mut dz = vec![0.0; dim];
            for (c, s) in scores.iter().enumerate() {
                let mut g = (s - lse).exp();
                let other: &[f64] = if c < anchors.len() {
                    if anchor_labels[c] == y {
                        g -= 1.0 / n_pos as f64;
                    }
                    anchors[c]
                } else {
                    negs[c - anchors.len()]
                };
                let g = g / (tau * n);
                for (d, o) in dz.iter_mut().zip(other) {
                    *d += g * o;
                }
                if c < anchors.len() {
                    for (d, zi) in d_anchor[c].iter_mut().zip(z.iter()) {
                        *d += g * zi;
                    }
                }
            }
            d_batch.push(dz);
        }
    }
    Ok(ContrastiveTerm {
        loss: loss / n,
        d_batch,
        d_anchor,
    })
}

/// Anchor-based contrastive loss under cosine similarity.
///
/// `negatives[i]` holds the extra negatives for batch sample `i` (it may be
/// shorter than the batch). Returns the batch mean.
pub fn contrastive_loss(
    batch: &[Vec<f64>],
    batch_labels: &[Label],
    anchors: &[Vec<f64>],
    anchor_labels: &[Label],
    negatives: &[Vec<Vec<f64>>],
    tau: f64,
) -> Result<f64> {
    if batch.len() != batch_labels.len() {
        return Err(Error::LengthMismatch {
            left: batch.len(),
            right: batch_labels.len(),
        });
    }
    if anchors.len() != anchor_labels.len() {
        return Err(Error::LengthMismatch {
            left: anchors.len(),
            right: anchor_labels.len(),
        });
    }
    let unit = |v: &Vec<f64>| -> Result<Vec<f64>> {
        let mut u = v.clone();
        if !math::normalize_in_place(&mut u) {
            return Err(Error::ZeroNormVector);
        }
        Ok(u)
    };
    let b: Vec<Vec<f64>> = batch.iter().map(unit).collect::<Result<_>>()?;
    let a: Vec<Vec<f64>> = anchors.iter().map(unit).collect::<Result<_>>()?;
    let q: Vec<Vec<Vec<f64>>> = negatives
        .iter()
        .map(|row| row.iter().map(unit).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let dim = b.first().map(Vec::len).unwrap_or(0);
    for v in a.iter().chain(q.iter().flatten()) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    let b_ref: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
    let a_ref: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
    let q_ref: Vec<Vec<&[f64]>> = q.iter().map(|r| r.iter().map(Vec::as_slice).collect()).collect();
    Ok(contrastive_unit(&b_ref, batch_labels, &a_ref, anchor_labels, &q_ref, tau, false)?.loss)
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_proj: Vec<f64>,
    pub b_proj: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(head: &ModuleHead) -> Self {
        Gradients {
            w_proj: vec![0.0; head.w_proj.len()],
            b_proj: vec![0.0; head.b_proj.len()],
            w_cls: vec![0.0; head.w_cls.len()],
            b_cls: vec![0.0; 2],
        }
    }

    pub fn as_slices(&self) -> [&[f64]; 4] {
        [&self.w_proj, &self.b_proj, &self.w_cls, &self.b_cls]
    }
}

/// Backpropagates `d_logits` and `d_projected` through one forward pass.
fn accumulate(
    head: &ModuleHead,
    x: &[f64],
    fwd: &Forward,
    d_logits: [f64; 2],
    d_projected: Option<&[f64]>,
    grads: &mut Gradients,
) {
    let h = head.hidden;
    let mut d_act: Vec<f64> = (0..h)
        .map(|j| head.w_cls[j * 2] * d_logits[0] + head.w_cls[j * 2 + 1] * d_logits[1])
        .collect();
    if let Some(dz) = d_projected {
        if !fwd.is_degenerate() {
            let zdz = math::dot(&fwd.projected, dz);
            for ((d, z), g) in d_act.iter_mut().zip(&fwd.projected).zip(dz) {
                *d += (g - z * zdz) / fwd.activation_norm;
            }
        }
    }
    for (j, a) in fwd.activation.iter().enumerate() {
        grads.w_cls[j * 2] += a * d_logits[0];
        grads.w_cls[j * 2 + 1] += a * d_logits[1];
    }
    grads.b_cls[0] += d_logits[0];
    grads.b_cls[1] += d_logits[1];
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&fwd.activation)
        .map(|(d, a)| d * (1.0 - a * a))
        .collect();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut grads.w_proj[i * h..(i + 1) * h];
        for (g, d) in row.iter_mut().zip(&d_pre) {
            *g += xi * d;
        }
    }
    for (g, d) in grads.b_proj.iter_mut().zip(&d_pre) {
        *g += d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub cross_entropy: f64,
    pub contrastive: f64,
}

/// Hard-negative source for the contrastive term.
#[derive(Debug, Clone, Copy)]
pub struct QueueSource<'a> {
    pub queue: &'a HardNegativeQueue,
    pub hard_k: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub xs: &'a [&'a [f64]],
    pub labels: &'a [Label],
    pub anchor_xs: &'a [&'a [f64]],
    pub anchor_labels: &'a [Label],
    pub queue: Option<QueueSource<'a>>,
}

/// `(1 - lambda) * mean CE + lambda * contrastive`, optionally with
/// gradients. With `lambda == 0` the contrastive term is never evaluated.
pub fn batch_objective(
    head: &ModuleHead,
    batch: &Batch<'_>,
    want_grad: bool,
) -> Result<(BatchLoss, Option<Gradients>)> {
    if batch.xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if batch.xs.len() != batch.labels.len() {
        return Err(Error::LengthMismatch {
            left: batch.xs.len(),
            right: batch.labels.len(),
        });
    }
    let lambda = head.lambda;
    let n = batch.xs.len() as f64;
    let fwd: Vec<Forward> = batch
        .xs
        .iter()
        .map(|x| head.forward(x))
        .collect::<Result<_>>()?;

    let mut ce = 0.0;
    let mut d_logits = Vec::with_capacity(fwd.len());
    for (f, y) in fwd.iter().zip(batch.labels) {
        let lse = math::log_sum_exp(&f.logits);
        ce += lse - f.logits[y.index()];
        let mut g = [(f.logits[0] - lse).exp(), (f.logits[1] - lse).exp()];
        g[y.index()] -= 1.0;
        d_logits.push([g[0] * (1.0 - lambda) / n, g[1] * (1.0 - lambda) / n]);
    }
    ce /= n;

    let mut contrastive = 0.0;
    let mut term = None;
    let mut anchor_fwd = Vec::new();
    if lambda > 0.0 {
        anchor_fwd = batch
            .anchor_xs
            .iter()
            .map(|x| head.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let z: Vec<&[f64]> = fwd.iter().map(|f| f.projected.as_slice()).collect();
        let za: Vec<&[f64]> = anchor_fwd.iter().map(|f| f.projected.as_slice()).collect();
        let negatives: Vec<Vec<&[f64]>> = match batch.queue {
            Some(src) => z
                .iter()
                .zip(batch.labels)
                .map(|(zi, &y)| {
                    select_hard_negatives(src.queue, zi, y, src.hard_k, src.rho)
                        .into_iter()
                        .map(|q| src.queue.get(q).unwrap().projected.as_slice())
                        .collect()
                })
                .collect(),
            None => Vec::new(),
        };
        let t = contrastive_unit(
            &z,
            batch.labels,
            &za,
            batch.anchor_labels,
            &negatives,
            head.temperature,
            want_grad,
        )?;
        contrastive = t.loss;
        term = Some(t);
    }

    let total = (1.0 - lambda) * ce + lambda * contrastive;
    if !total.is_finite() {
        return Err(Error::NonFinite("batch loss"));
    }
    let loss = BatchLoss {
        total,
        cross_entropy: ce,
        contrastive,
    };
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grads = Gradients::zeros_like(head);
    for (k, (x, f)) in batch.xs.iter().zip(&fwd).enumerate() {
        let dz: Option<Vec<f64>> = term
            .as_ref()
            .map(|t| t.d_batch[k].iter().map(|g| g * lambda).collect());
        accumulate(head, x, f, d_logits[k], dz.as_deref(), &mut grads);
    }
    if let Some(t) = &term {
        for ((x, f), d) in batch.anchor_xs.iter().zip(&anchor_fwd).zip(&t.d_anchor) {
            let dz: Vec<f64> = d.iter().map(|g| g * lambda).collect();
            accumulate(head, x, f, [0.0, 0.0], Some(&dz), &mut grads);
        }
    }
    Ok((loss, Some(grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::head::ModuleId;
    use crate::trainer::queue::QueueEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L0: Label = Label::NON_HATE;
    const L1: Label = Label::HATE;

    #[test]
    fn closed_form_case() {
        // z_i equals its same-label anchor and is orthogonal to the other
        let loss = contrastive_loss(
            &[vec![1.0, 0.0]],
            &[L1],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[L1, L0],
            &[],
            0.3,
        )
        .unwrap();
        let expected = (1.0 + (-1.0f64 / 0.3).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.035052).abs() < 1e-6);
    }

    #[test]
    fn candidates_equal_positives_gives_zero() {
        let loss = contrastive_loss(&[vec![0.3, 0.7]], &[L0], &[vec![1.0, 0.2]], &[L0], &[], 0.3).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            contrastive_loss(&[vec![1.0]], &[L1], &[vec![1.0]], &[L0], &[], 0.3),
            Err(Error::MissingAnchorClass(1))
        ));
        assert!(matches!(
            contrastive_loss(&[vec![1.0]], &[L1], &[vec![1.0]], &[L1], &[], 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn queue_negative_raises_loss() {
        let base = contrastive_loss(&[vec![1.0, 0.0]], &[L1], &[vec![1.0, 0.0]], &[L1], &[], 0.3).unwrap();
        let with_neg = contrastive_loss(
            &[vec![1.0, 0.0]],
            &[L1],
            &[vec![1.0, 0.0]],
            &[L1],
            &[vec![vec![0.9, 0.1]]],
            0.3,
        )
        .unwrap();
        assert!(with_neg > base);
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        math::normalize_in_place(&mut v);
        v
    }

    #[test]
    fn lambda_zero_equals_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ModuleHead::init(ModuleId::M0, 4, 5, 0.3, 0.0, &mut rng);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 4)).collect();
        let ys: Vec<Label> = (0..6).map(|i| Label::new((i % 2) as u8).unwrap()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        // no anchors at all: the contrastive term must not be touched
        let batch = Batch {
            xs: &refs,
            labels: &ys,
            anchor_xs: &[],
            anchor_labels: &[],
            queue: None,
        };
        let (loss, _) = batch_objective(&head, &batch, true).unwrap();
        let ce: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let l = head.logits(x).unwrap();
                math::log_sum_exp(&l) - l[y.index()]
            })
            .sum::<f64>()
            / 6.0;
        assert_eq!(loss.total, ce);
        assert_eq!(loss.contrastive, 0.0);
    }

    #[test]
    fn queue_source_feeds_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let head = ModuleHead::init(ModuleId::M3, 4, 6, 0.3, 1.0, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, 4)).collect();
        let ys = [L0, L1, L0, L1];
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut q = HardNegativeQueue::new(8);
        for &y in &ys {
            q.push(QueueEntry {
                projected: random_unit(&mut rng, 6),
                label: y,
                confidence: 0.5,
            });
        }
        let mut batch = Batch {
            xs: &refs,
            labels: &ys,
            anchor_xs: &refs[..2],
            anchor_labels: &ys[..2],
            queue: None,
        };
        let (plain, _) = batch_objective(&head, &batch, false).unwrap();
        batch.queue = Some(QueueSource {
            queue: &q,
            hard_k: 2,
            rho: 0.9,
        });
        let (queued, _) = batch_objective(&head, &batch, false).unwrap();
        assert!(queued.contrastive > plain.contrastive);
    }
}
