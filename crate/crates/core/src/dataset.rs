//! Line-delimited JSON persistence for QA input, MCQ output and audit logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Candidate, McqItem, QaRecord};

/// Streams JSON records from a line-delimited file. Blank lines are skipped;
/// line numbers are 1-based.
pub struct JsonLines<T> {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> JsonLines<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonLines {
            path,
            lines: BufReader::new(file).lines(),
            line_no: 0,
            _marker: std::marker::PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonLines<T> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&line)
                    .map(|value| (self.line_no, value))
                    .map_err(|e| Error::MalformedLine {
                        line: self.line_no,
                        detail: e.to_string(),
                    }),
            );
        }
    }
}

/// Reads QA records in file order, validating each one.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<QaRecord>>> {
    let lines = JsonLines::<QaRecord>::open(path)?;
    Ok(lines.map(|entry| {
        let (line, record) = entry?;
        record.validate().map_err(|e| match e {
            Error::InvariantViolation { detail, .. } => Error::MalformedLine { line, detail },
            other => other,
        })?;
        Ok(record)
    }))
}

pub fn read_mcq_dataset(path: impl AsRef<Path>) -> Result<Vec<McqItem>> {
    JsonLines::<McqItem>::open(path)?
        .map(|entry| {
            let (_, item) = entry?;
            item.validate()?;
            Ok(item)
        })
        .collect()
}

/// Writes items one per line after validating each. Nothing is written
/// if any item is invalid.
pub fn write_mcq_dataset<'a>(items: impl IntoIterator<Item = &'a McqItem>, path: impl AsRef<Path>) -> Result<usize> {
    let items: Vec<&McqItem> = items.into_iter().collect();
    for item in &items {
        item.validate()?;
    }
    write_json_lines(items, path)
}

pub fn write_json_lines<T: Serialize>(values: impl IntoIterator<Item = T>, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    for value in values {
        serde_json::to_writer(&mut out, &value).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        count += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

/// One line of the candidate audit log.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub surface: String,
    /// `None` on absent-marker entries.
    pub provenance: Option<crate::model::Provenance>,
    pub generator_score: Option<f64>,
    pub kg_score: Option<f64>,
    pub context_score: Option<f64>,
    pub fused_score: Option<f64>,
    pub rejections: Vec<crate::model::FilterVerdict>,
}

impl AuditEntry {
    pub fn new(id: &str, cand: &Candidate) -> Self {
        AuditEntry {
            id: id.to_string(),
            surface: cand.surface.clone(),
            provenance: Some(cand.provenance.clone()),
            generator_score: Some(cand.generator_score),
            kg_score: cand.kg_score,
            context_score: cand.context_score,
            fused_score: cand.fused_score,
            rejections: cand.rejections.clone(),
        }
    }

    /// Placeholder for a distractor slot the pipeline could not fill.
    pub fn absent(id: &str) -> Self {
        AuditEntry {
            id: id.to_string(),
            surface: ABSENT_MARKER.to_string(),
            provenance: None,
            generator_score: None,
            kg_score: None,
            context_score: None,
            fused_score: None,
            rejections: Vec::new(),
        }
    }
}

/// Surface of absent-marker audit entries.
pub const ABSENT_MARKER: &str = "<absent>";
