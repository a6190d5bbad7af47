use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class label: 0 = non-hate, 1 = hate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Label(u8);

impl Label {
    pub const NON_HATE: Label = Label(0);
    pub const HATE: Label = Label(1);

    pub fn new(value: u8) -> Option<Self> {
        (value <= 1).then_some(Label(value))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_hate(self) -> bool {
        self.0 == 1
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::new(v).ok_or_else(|| format!("invalid label {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub split: Split,
}

/// Ordered collection of examples. Row `k` of any embedding matrix built for
/// this dataset corresponds to `examples[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    examples: Vec<LabeledExample>,
}

// Raw line shape; fields are validated by hand so errors carry line numbers.
#[derive(Deserialize)]
struct RawLine {
    id: serde_json::Value,
    text: serde_json::Value,
    label: serde_json::Value,
    split: serde_json::Value,
}

impl Dataset {
    /// Builds a dataset, rejecting empty or duplicate ids.
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.id.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty id".into(),
                });
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: ex.id.clone(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            examples,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self::from_reader(name, std::io::BufReader::new(file))
    }

    /// Parses JSON Lines. Blank lines are skipped but still counted for
    /// line numbers.
    pub fn from_reader(name: impl Into<String>, reader: impl BufRead) -> Result<Self> {
        let mut examples = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = parse_line(&line, lineno)?;
            if !seen.insert(ex.id.clone()) {
                return Err(Error::DuplicateId {
                    line: lineno,
                    id: ex.id,
                });
            }
            examples.push(ex);
        }
        Ok(Dataset {
            name: name.into(),
            examples,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Row indices of the given split, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    /// Fails unless every split has at least one example.
    pub fn ensure_trainable(&self) -> Result<()> {
        for split in Split::ALL {
            if self.split_count(split) == 0 {
                return Err(Error::EmptySplit(split.name()));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<LabeledExample> {
    let err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let raw: RawLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let id = match raw.id {
        serde_json::Value::String(s) if !s.is_empty() => s,
        serde_json::Value::String(_) => return Err(err("empty id".into())),
        other => return Err(err(format!("id must be a string, got {other}"))),
    };
    let text = match raw.text {
        serde_json::Value::String(s) => s,
        other => return Err(err(format!("text must be a string, got {other}"))),
    };
    let label = raw
        .label
        .as_u64()
        .and_then(|v| u8::try_from(v).ok())
        .and_then(Label::new)
        .ok_or_else(|| Error::InvalidLabel {
            line: lineno,
            value: raw.label.to_string(),
        })?;
    let split = raw
        .split
        .as_str()
        .ok_or_else(|| err(format!("split must be a string, got {}", raw.split)))?
        .parse()
        .map_err(err)?;
    Ok(LabeledExample {
        id,
        text,
        label,
        split,
    })
}
