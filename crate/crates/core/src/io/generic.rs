//! Line-delimited JSON sequences: `{"id": .., "labels": [..], "frames": [[..], ..]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::open_text;
use crate::dataset::{Dataset, LabelAlphabet, LabeledSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericRecord {
    pub id: String,
    /// Absent for unlabeled input to `predict`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub frames: Vec<Vec<f64>>,
}

/// Parses and shape-checks every record. Labels, when present, must match
/// the frame count; all frames across the file share one width.
pub fn read_generic_records(path: impl AsRef<Path>) -> Result<Vec<GenericRecord>> {
    let path = path.as_ref();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    let mut width = None;
    for (i, line) in open_text(path)?.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GenericRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
        if rec.frames.is_empty() {
            return Err(err(n, format!("record {:?} has no frames", rec.id)));
        }
        if let Some(labels) = &rec.labels {
            if labels.len() != rec.frames.len() {
                return Err(err(
                    n,
                    format!("{} labels but {} frames", labels.len(), rec.frames.len()),
                ));
            }
        }
        let w = *width.get_or_insert(rec.frames[0].len());
        if let Some(bad) = rec.frames.iter().position(|f| f.len() != w) {
            return Err(err(n, format!("frame {bad} has width {}, expected {w}", rec.frames[bad].len())));
        }
        if w == 0 {
            return Err(err(n, "frames have zero width".into()));
        }
        if rec.frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(err(n, "non-finite frame value".into()));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(err(0, "file contains no records".into()));
    }
    Ok(records)
}

pub fn frames_matrix(frames: &[Vec<f64>]) -> Array2<f64> {
    let w = frames.first().map_or(0, Vec::len);
    Array2::from_shape_fn((frames.len(), w), |(t, j)| frames[t][j])
}

/// Labeled dataset with the alphabet in first-seen label order.
pub fn load_generic(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let records = read_generic_records(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut sequences = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let labels = rec
            .labels
            .ok_or_else(|| err(i + 1, format!("record {:?} has no labels", rec.id)))?;
        let ids = labels
            .into_iter()
            .map(|name| {
                *index.entry(name.clone()).or_insert_with(|| {
                    names.push(name);
                    names.len() - 1
                })
            })
            .collect();
        let frames = frames_matrix(&rec.frames);
        sequences.push(LabeledSequence::new(rec.id, frames, ids).map_err(|e| err(i + 1, e.to_string()))?);
    }
    let dim = sequences[0].dim();
    let alphabet = LabelAlphabet::new(names).map_err(|e| err(0, e.to_string()))?;
    Dataset::new(sequences, alphabet, dim).map_err(|e| err(0, e.to_string()))
}

pub fn write_generic(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in &dataset.sequences {
        let rec = GenericRecord {
            id: s.id.clone(),
            labels: Some(
                s.labels
                    .iter()
                    .map(|&y| dataset.alphabet.name(y).expect("label in alphabet").to_string())
                    .collect(),
            ),
            frames: s.frames.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
