use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Label;
use crate::math;

/// Simplex tolerance for [`WeightVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Strictly positive weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some(w) = values.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {w} is not positive")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(WeightVector(values))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// `softmax(logits)`.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(math::softmax(logits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Two-class logits of `K` modules on the same `N` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPanel {
    modules: Vec<Vec<[f64; 2]>>,
}

impl LogitPanel {
    pub fn new(modules: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let n = modules
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::ShapeMismatch("panel has no modules".into()))?;
        if n == 0 {
            return Err(Error::ShapeMismatch("panel has no examples".into()));
        }
        for (k, m) in modules.iter().enumerate() {
            if m.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "module {k} has {} examples, expected {n}",
                    m.len()
                )));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("panel logits"));
            }
        }
        Ok(LogitPanel { modules })
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    pub fn example_count(&self) -> usize {
        self.modules[0].len()
    }

    pub fn module(&self, k: usize) -> &[[f64; 2]] {
        &self.modules[k]
    }

    /// Panel restricted to the listed modules, in that order.
    pub fn select(&self, modules: &[usize]) -> Result<Self> {
        let picked = modules
            .iter()
            .map(|&k| {
                self.modules
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::ShapeMismatch(format!("no module {k}")))
            })
            .collect::<Result<_>>()?;
        Self::new(picked)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub logits: Vec<[f64; 2]>,
    pub predictions: Vec<Label>,
}

fn check_weights(panel: &LogitPanel, weights: &[f64]) -> Result<()> {
    if weights.len() != panel.module_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} modules",
            weights.len(),
            panel.module_count()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidWeights(format!("{weights:?}")));
    }
    Ok(())
}

fn argmax(z: [f64; 2]) -> Label {
    if z[1] > z[0] {
        Label::HATE
    } else {
        Label::NON_HATE
    }
}

/// Weighted sum of module logits and its argmax; a tie votes non-hate.
///
/// `weights` may contain zeros (a degenerate vote), but must be finite,
/// nonnegative, and not all zero.
pub fn soft_vote(panel: &LogitPanel, weights: &[f64]) -> Result<Vote> {
    check_weights(panel, weights)?;
    let n = panel.example_count();
    let mut logits = vec![[0.0; 2]; n];
    for (m, &w) in panel.modules.iter().zip(weights) {
        for (z, l) in logits.iter_mut().zip(m) {
            z[0] += w * l[0];
            z[1] += w * l[1];
        }
    }
    let predictions = logits.iter().map(|&z| argmax(z)).collect();
    Ok(Vote { logits, predictions })
}

/// Macro-F1 of the weighted vote against `labels`, without materialising
/// the vote.
pub fn vote_macro_f1(panel: &LogitPanel, weights: &[f64], labels: &[Label]) -> Result<f64> {
    check_weights(panel, weights)?;
    if labels.len() != panel.example_count() {
        return Err(Error::LengthMismatch {
            left: panel.example_count(),
            right: labels.len(),
        });
    }
    let mut c = crate::evaluation::Confusion::default();
    for (i, y) in labels.iter().enumerate() {
        let mut z = [0.0; 2];
        for (m, &w) in panel.modules.iter().zip(weights) {
            z[0] += w * m[i][0];
            z[1] += w * m[i][1];
        }
        match (y.is_hate(), argmax(z).is_hate()) {
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (true, true) => c.tp += 1,
        }
    }
    Ok(c.macro_f1())
}
