//! Trainable projection + classifier head and its `RVHD` checkpoint format.
//!
//! Checkpoint layout (little-endian): magic `"RVHD"`, `u32` version,
//! module id byte, `u32` dim, `u32` hidden, then `f32` values in declared
//! order: projection weights (`dim x hidden`, row-major), projection bias
//! (`hidden`), classifier weights (`hidden x 2`, row-major), classifier bias
//! (`2`), temperature, lambda.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Label;
use crate::math;

pub const RVHD_MAGIC: &[u8; 4] = b"RVHD";
pub const RVHD_VERSION: u32 = 1;
pub const RVHD_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleId {
    M0,
    M1,
    M2,
    M3,
    /// A single head trained with every mechanism switched on.
    Combined,
}

/// The mechanisms layered on top of the base clustering-contrastive head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanisms {
    /// Train on the target-tagged augmented train set.
    pub augment: bool,
    /// IQR outlier removal inside clusters before anchor selection.
    pub iqr: bool,
    /// Hard negatives from a cross-batch queue.
    pub queue: bool,
}

impl ModuleId {
    pub const VOTERS: [ModuleId; 4] = [ModuleId::M0, ModuleId::M1, ModuleId::M2, ModuleId::M3];

    pub fn mechanisms(self) -> Mechanisms {
        let none = Mechanisms::default();
        match self {
            ModuleId::M0 => none,
            ModuleId::M1 => Mechanisms { augment: true, ..none },
            ModuleId::M2 => Mechanisms { iqr: true, ..none },
            ModuleId::M3 => Mechanisms { queue: true, ..none },
            ModuleId::Combined => Mechanisms {
                augment: true,
                iqr: true,
                queue: true,
            },
        }
    }

    pub fn byte(self) -> u8 {
        match self {
            ModuleId::M0 => 0,
            ModuleId::M1 => 1,
            ModuleId::M2 => 2,
            ModuleId::M3 => 3,
            ModuleId::Combined => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => ModuleId::M0,
            1 => ModuleId::M1,
            2 => ModuleId::M2,
            3 => ModuleId::M3,
            4 => ModuleId::Combined,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleId::M0 => "M0",
            ModuleId::M1 => "M1",
            ModuleId::M2 => "M2",
            ModuleId::M3 => "M3",
            ModuleId::Combined => "combined",
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "M0" | "m0" => Ok(ModuleId::M0),
            "M1" | "m1" => Ok(ModuleId::M1),
            "M2" | "m2" => Ok(ModuleId::M2),
            "M3" | "m3" => Ok(ModuleId::M3),
            "combined" => Ok(ModuleId::Combined),
            other => Err(format!("unknown module {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleHead {
    pub module_id: ModuleId,
    pub dim: usize,
    pub hidden: usize,
    /// `dim x hidden`, row-major: `w_proj[i * hidden + j]`.
    pub w_proj: Vec<f64>,
    pub b_proj: Vec<f64>,
    /// `hidden x 2`, row-major: `w_cls[j * 2 + c]`.
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
    pub temperature: f64,
    pub lambda: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// `tanh(W_p x + b_p)`.
    pub activation: Vec<f64>,
    /// Unit-norm activation; the zero vector when the activation is zero.
    pub projected: Vec<f64>,
    pub activation_norm: f64,
    pub logits: [f64; 2],
}

impl Forward {
    pub fn is_degenerate(&self) -> bool {
        self.activation_norm == 0.0
    }

    /// Softmax probability of the hate class.
    pub fn hate_probability(&self) -> f64 {
        let d = self.logits[0] - self.logits[1];
        1.0 / (1.0 + d.exp())
    }

    /// Argmax of the logits; a tie resolves to non-hate.
    pub fn prediction(&self) -> Label {
        if self.logits[1] > self.logits[0] {
            Label::HATE
        } else {
            Label::NON_HATE
        }
    }
}

impl ModuleHead {
    pub fn zeros(module_id: ModuleId, dim: usize, hidden: usize, temperature: f64, lambda: f64) -> Self {
        ModuleHead {
            module_id,
            dim,
            hidden,
            w_proj: vec![0.0; dim * hidden],
            b_proj: vec![0.0; hidden],
            w_cls: vec![0.0; hidden * 2],
            b_cls: vec![0.0; 2],
            temperature,
            lambda,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        module_id: ModuleId,
        dim: usize,
        hidden: usize,
        temperature: f64,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut head = Self::zeros(module_id, dim, hidden, temperature, lambda);
        let limit_p = (6.0 / (dim + hidden) as f64).sqrt();
        head.w_proj
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-limit_p..limit_p));
        let limit_c = (6.0 / (hidden + 2) as f64).sqrt();
        head.w_cls
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-limit_c..limit_c));
        head
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Forward {
        let h = self.hidden;
        let mut pre = self.b_proj.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w_proj[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
        let activation: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
        let mut logits = [self.b_cls[0], self.b_cls[1]];
        for (j, a) in activation.iter().enumerate() {
            logits[0] += a * self.w_cls[j * 2];
            logits[1] += a * self.w_cls[j * 2 + 1];
        }
        let activation_norm = math::norm(&activation);
        let projected = if activation_norm == 0.0 {
            vec![0.0; h]
        } else {
            activation.iter().map(|a| a / activation_norm).collect()
        };
        Forward {
            activation,
            projected,
            activation_norm,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(self.forward(x)?.prediction())
    }

    pub fn param_count(&self) -> usize {
        self.w_proj.len() + self.b_proj.len() + self.w_cls.len() + self.b_cls.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.temperature.is_finite()
            && self.lambda.is_finite()
    }

    pub fn params(&self) -> [&[f64]; 4] {
        [&self.w_proj, &self.b_proj, &self.w_cls, &self.b_cls]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w_proj, &mut self.b_proj, &mut self.w_cls, &mut self.b_cls]
    }

    /// Rounds every value to `f32` precision so a checkpoint round trip
    /// reproduces the head exactly.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self.temperature = self.temperature as f32 as f64;
        self.lambda = self.lambda as f32 as f64;
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RVHD_HEADER_LEN + (self.param_count() + 2) * 4);
        out.extend_from_slice(RVHD_MAGIC);
        out.extend_from_slice(&RVHD_VERSION.to_le_bytes());
        out.push(self.module_id.byte());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for p in self.params() {
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.temperature as f32).to_le_bytes());
        out.extend_from_slice(&(self.lambda as f32).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let truncated = |needed| Error::TruncatedFile {
            needed,
            available: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(RVHD_HEADER_LEN));
        }
        if &bytes[..4] != RVHD_MAGIC {
            return Err(Error::BadMagic { expected: "RVHD" });
        }
        if bytes.len() < RVHD_HEADER_LEN {
            return Err(truncated(RVHD_HEADER_LEN));
        }
        let u32_at = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        let version = u32_at(4);
        if version != RVHD_VERSION {
            return Err(Error::VersionMismatch {
                expected: RVHD_VERSION,
                found: version,
            });
        }
        let bad = |message: String| Error::Parse { line: 0, message };
        let module_id =
            ModuleId::from_byte(bytes[8]).ok_or_else(|| bad(format!("unknown module id byte {}", bytes[8])))?;
        let dim = u32_at(9) as usize;
        let hidden = u32_at(13) as usize;
        if dim == 0 || hidden == 0 {
            return Err(bad("zero dim or hidden size".into()));
        }
        let values = dim
            .checked_mul(hidden)
            .and_then(|n| n.checked_add(hidden))
            .and_then(|n| n.checked_add(hidden * 2 + 2 + 2));
        let needed = values
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(RVHD_HEADER_LEN))
            .ok_or_else(|| truncated(usize::MAX))?;
        if bytes.len() < needed {
            return Err(truncated(needed));
        }
        if bytes.len() > needed {
            return Err(Error::TrailingBytes(bytes.len() - needed));
        }
        let mut floats = bytes[RVHD_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
        let head = ModuleHead {
            module_id,
            dim,
            hidden,
            w_proj: take(dim * hidden),
            b_proj: take(hidden),
            w_cls: take(hidden * 2),
            b_cls: take(2),
            temperature: take(1)[0],
            lambda: take(1)[0],
        };
        if !head.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        if head.temperature <= 0.0 {
            return Err(bad(format!("non-positive temperature {}", head.temperature)));
        }
        if !(0.0..=1.0).contains(&head.lambda) {
            return Err(bad(format!("lambda {} outside [0, 1]", head.lambda)));
        }
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
