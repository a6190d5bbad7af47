use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

use super::metrics::{mean_std, Confusion};

pub const REPORT_COLUMNS: [&str; 8] = [
    "variant",
    "seed_count",
    "macro_f1_mean",
    "macro_f1_std",
    "tn",
    "fp",
    "fn",
    "tp",
];

pub const ZERO_DIVISION_NOTE: &str =
    "F1 of a class with no true positives is taken as 0 (zero-division convention).";

/// One variant's scores over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: String,
    pub per_seed: Vec<f64>,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    /// Counts from the first seed.
    pub confusion: Confusion,
}

impl EvalRow {
    pub fn new(variant: impl Into<String>, per_seed: Vec<f64>, confusion: Confusion) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (mean, std) = mean_std(&per_seed);
        Ok(EvalRow {
            variant: variant.into(),
            per_seed,
            macro_f1_mean: mean,
            macro_f1_std: std,
            confusion,
        })
    }

    fn fields(&self) -> [String; 8] {
        [
            self.variant.clone(),
            self.per_seed.len().to_string(),
            format!("{:.6}", self.macro_f1_mean),
            format!("{:.6}", self.macro_f1_std),
            self.confusion.tn.to_string(),
            self.confusion.fp.to_string(),
            self.confusion.fn_.to_string(),
            self.confusion.tp.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>) -> Self {
        EvalReport {
            dataset: dataset.into(),
            rows: Vec::new(),
        }
    }

    pub fn row(&self, variant: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Invariant(format!("eval report: {e}"));
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(REPORT_COLUMNS).map_err(err)?;
        for r in &self.rows {
            csv.write_record(r.fields()).map_err(err)?;
        }
        csv.flush().map_err(|e| Error::Invariant(format!("eval report: {e}")))?;
        Ok(())
    }

    /// Column-aligned table followed by the zero-division note.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let cells: Vec<[String; 8]> = self.rows.iter().map(EvalRow::fields).collect();
        let mut widths = REPORT_COLUMNS.map(str::len);
        for row in &cells {
            for (wd, c) in widths.iter_mut().zip(row) {
                *wd = (*wd).max(c.len());
            }
        }
        let io = |e| Error::io("<report>", e);
        let line = |cols: &[String]| -> String {
            cols.iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, wd))| if i == 0 { format!("{c:<wd$}") } else { format!("{c:>wd$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        if !self.dataset.is_empty() {
            writeln!(w, "dataset: {}", self.dataset).map_err(io)?;
        }
        let header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
        writeln!(w, "{}", line(&header)).map_err(io)?;
        for row in &cells {
            writeln!(w, "{}", line(row)).map_err(io)?;
        }
        writeln!(w, "\n{ZERO_DIVISION_NOTE}").map_err(io)?;
        Ok(())
    }
}
