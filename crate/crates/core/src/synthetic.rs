//! Seeded synthetic data: separable embedding sets, planted-oracle logit
//! panels, module-favoring panels, and small labelled text corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::evaluation::PanelSplit;
use crate::ingestion::{Dataset, Label, LabeledExample, Split};
use crate::trainer::LabeledRows;
use crate::voting::LogitPanel;

fn label_of(i: usize) -> Label {
    if i.is_multiple_of(2) {
        Label::NON_HATE
    } else {
        Label::HATE
    }
}

fn sign(y: Label) -> f64 {
    if y.is_hate() {
        1.0
    } else {
        -1.0
    }
}

/// Two isotropic Gaussian classes centred at `±margin * e_0`, alternating
/// labels. With `noise` well below `margin` the classes are linearly
/// separable by the sign of the first coordinate.
pub fn separable_rows(n: usize, dim: usize, margin: f64, noise: f64, seed: u64) -> LabeledRows {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise must be finite and nonnegative");
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = label_of(i);
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        v[0] += sign(y) * margin;
        rows.push(v);
        labels.push(y);
    }
    LabeledRows { rows, labels }
}

/// `k` modules over `n` alternating-label examples. Module `oracle` always
/// puts a positive margin on the true class; the others emit
/// label-independent standard-normal logits.
pub fn planted_oracle_panel(n: usize, k: usize, oracle: usize, seed: u64) -> Result<PanelSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..n).map(label_of).collect();
    let mut modules = vec![Vec::with_capacity(n); k];
    for &y in &labels {
        for (m, logits) in modules.iter_mut().enumerate() {
            if m == oracle {
                let s = sign(y) * rng.random_range(0.5..1.5);
                logits.push([-s / 2.0, s / 2.0]);
            } else {
                let a: f64 = rng.sample(rand_distr::StandardNormal);
                let b: f64 = rng.sample(rand_distr::StandardNormal);
                logits.push([a, b]);
            }
        }
    }
    PanelSplit::new(LogitPanel::new(modules)?, labels)
}

/// Per-module signal strength on each example group.
#[derive(Debug, Clone, PartialEq)]
pub struct FavoringSpec {
    /// Fraction of examples in each group; sums to 1.
    pub group_shares: Vec<f64>,
    /// `strength[m][g]`: mean signed margin of module `m` on group `g`.
    pub strength: Vec<Vec<f64>>,
    /// Standard deviation of each module's independent margin noise.
    pub noise: f64,
}

impl FavoringSpec {
    /// Four modules and three groups. Module `dominant` is reliable on every
    /// group; each other module is reliable on one minority group only.
    pub fn with_dominant(dominant: usize) -> Self {
        let mut strength = Vec::new();
        let mut minority = 1;
        for m in 0..4 {
            if m == dominant {
                strength.push(vec![1.8, 1.4, 1.4]);
            } else {
                let mut s = vec![0.4, 0.2, 0.2];
                if minority < 3 {
                    s[minority] = 1.2;
                }
                minority += 1;
                strength.push(s);
            }
        }
        FavoringSpec {
            group_shares: vec![0.6, 0.2, 0.2],
            strength,
            noise: 1.0,
        }
    }

    pub fn module_count(&self) -> usize {
        self.strength.len()
    }

    /// Draws `n` alternating-label examples; module `m` on an example of
    /// group `g` emits margin `sign(y) * strength[m][g] + noise`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PanelSplit> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.noise).expect("noise must be finite and nonnegative");
        let labels: Vec<Label> = (0..n).map(label_of).collect();
        let mut modules = vec![Vec::with_capacity(n); self.module_count()];
        for &y in &labels {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut group = self.group_shares.len() - 1;
            for (g, share) in self.group_shares.iter().enumerate() {
                acc += share;
                if u < acc {
                    group = g;
                    break;
                }
            }
            for (m, logits) in modules.iter_mut().enumerate() {
                let s = sign(y) * self.strength[m][group] + normal.sample(&mut rng);
                logits.push([-s / 2.0, s / 2.0]);
            }
        }
        PanelSplit::new(LogitPanel::new(modules)?, labels)
    }
}

const HATE_TEMPLATES: &[&str] = &[
    "all {t} should go back where they came from",
    "{t} are ruining this country",
    "i can't stand {t} anymore",
    "{t} are nothing but criminals",
    "keep {t} out of our neighborhood",
];

const NEUTRAL_TEMPLATES: &[&str] = &[
    "the festival featured food from {t}",
    "i met some people from {t} at the conference",
    "a new report about {t} came out today",
    "the museum has an exhibit on {t}",
    "we talked about the history of {t}",
];

const TARGETS: &[&str] = &[
    "immigrants",
    "muslims",
    "refugees",
    "mexicans",
    "jews",
    "china",
    "the united nations",
    "africans",
];

/// A small text corpus with a 60/20/20 train/valid/test split. Labels are
/// decided by template family, so the built-in featurizer separates them.
pub fn toy_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let y = label_of(i);
            let templates = if y.is_hate() { HATE_TEMPLATES } else { NEUTRAL_TEMPLATES };
            let t = templates[rng.random_range(0..templates.len())];
            let target = TARGETS[rng.random_range(0..TARGETS.len())];
            let split = match i % 10 {
                0..=5 => Split::Train,
                6 | 7 => Split::Valid,
                _ => Split::Test,
            };
            LabeledExample {
                id: format!("ex{i:05}"),
                text: t.replace("{t}", target),
                label: y,
                split,
            }
        })
        .collect();
    Dataset::new("toy", examples).expect("generated ids are unique")
}
