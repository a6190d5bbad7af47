//! Cross-batch FIFO of projected vectors used as hard negatives.

use std::collections::VecDeque;

use crate::ingestion::Label;
use crate::math;

pub const DEFAULT_QUEUE_CAPACITY: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub projected: Vec<f64>,
    pub label: Label,
    /// Hate-class probability when the entry was pushed.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl HardNegativeQueue {
    pub fn new(capacity: usize) -> Self {
        HardNegativeQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, evicting the oldest ones beyond capacity.
    pub fn push(&mut self, entry: QueueEntry) {
        if self.capacity == 0 {
            return;
        }
        while self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Entry `i`, oldest first.
    pub fn get(&self, i: usize) -> Option<&QueueEntry> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }
}

/// An entry is a hard-negative candidate for a sample labeled `label` when
/// its own label differs, or when it is a non-hate entry the model scored
/// as hate with probability at least `rho`.
pub fn is_eligible(entry: &QueueEntry, label: Label, rho: f64) -> bool {
    entry.label != label || (entry.label == Label::NON_HATE && entry.confidence >= rho)
}

/// Queue indices of the `hard_k` eligible entries most cosine-similar to
/// `z`, most similar first. Ties go to the older entry.
pub fn select_hard_negatives(
    queue: &HardNegativeQueue,
    z: &[f64],
    label: Label,
    hard_k: usize,
    rho: f64,
) -> Vec<usize> {
    if hard_k == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> = queue
        .iter()
        .enumerate()
        .filter(|(_, e)| is_eligible(e, label, rho))
        .map(|(i, e)| {
            let s = math::cosine_similarity(z, &e.projected).unwrap_or(f64::NEG_INFINITY);
            (i, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(hard_k);
    scored.into_iter().map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: &[f64], label: u8, confidence: f64) -> QueueEntry {
        QueueEntry {
            projected: v.to_vec(),
            label: Label::new(label).unwrap(),
            confidence,
        }
    }

    #[test]
    fn fifo_bound() {
        let mut q = HardNegativeQueue::new(3);
        for i in 0..5 {
            q.push(entry(&[i as f64], 0, 0.0));
            assert!(q.len() <= 3);
        }
        let kept: Vec<f64> = q.iter().map(|e| e.projected[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn only_other_label_eligible() {
        let mut q = HardNegativeQueue::new(8);
        q.push(entry(&[1.0, 0.0], 1, 0.9));
        q.push(entry(&[1.0, 0.1], 1, 0.9));
        q.push(entry(&[0.0, 1.0], 0, 0.1));
        assert_eq!(select_hard_negatives(&q, &[1.0, 0.0], Label::HATE, 8, 0.9), vec![2]);
    }

    #[test]
    fn confident_false_positive_is_eligible_for_non_hate() {
        let mut q = HardNegativeQueue::new(8);
        q.push(entry(&[1.0, 0.0], 0, 0.95));
        q.push(entry(&[1.0, 0.0], 0, 0.5));
        q.push(entry(&[0.0, 1.0], 1, 0.5));
        let got = select_hard_negatives(&q, &[1.0, 0.0], Label::NON_HATE, 8, 0.9);
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn empty_queue_yields_nothing() {
        let q = HardNegativeQueue::new(4);
        assert!(select_hard_negatives(&q, &[1.0], Label::HATE, 4, 0.9).is_empty());
    }

    #[test]
    fn ties_prefer_older() {
        let mut q = HardNegativeQueue::new(4);
        q.push(entry(&[0.0, 1.0], 0, 0.0));
        q.push(entry(&[1.0, 0.0], 0, 0.0));
        q.push(entry(&[2.0, 0.0], 0, 0.0));
        assert_eq!(select_hard_negatives(&q, &[1.0, 0.0], Label::HATE, 2, 0.9), vec![1, 2]);
    }
}
