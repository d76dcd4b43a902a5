//! Sequences, label alphabets, datasets and cross-validation folds.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of label names. Index `k` is the k-th slot of the 1-of-K code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelAlphabet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for LabelAlphabet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<LabelAlphabet> for Vec<String> {
    fn from(a: LabelAlphabet) -> Self {
        a.labels
    }
}

impl LabelAlphabet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::arg(format!(
                "label alphabet needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, name) in labels.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate label {name:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    /// The 26 lowercase letters used by the OCR corpus.
    pub fn letters() -> Self {
        Self::new((b'a'..=b'z').map(|c| (c as char).to_string()).collect())
            .expect("26 distinct letters")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// 1-of-K code for a label index.
pub fn encode_onehot(label: usize, k: usize) -> Result<Array1<f64>> {
    if label >= k {
        return Err(Error::arg(format!("label index {label} out of range for K={k}")));
    }
    let mut v = Array1::zeros(k);
    v[label] = 1.0;
    Ok(v)
}

/// One observed time series with its per-frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    /// `T x d`, row `t` is the observation at step `t`.
    pub frames: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(id: impl Into<String>, frames: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if frames.nrows() == 0 {
            return Err(Error::arg(format!("sequence {id:?} is empty")));
        }
        if frames.nrows() != labels.len() {
            return Err(Error::arg(format!(
                "sequence {id:?}: {} frames but {} labels",
                frames.nrows(),
                labels.len()
            )));
        }
        Ok(Self { id, frames, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<LabeledSequence>,
    pub alphabet: LabelAlphabet,
    dim: usize,
    /// Fold column shipped with the source file, if it had one.
    source_folds: Option<Vec<usize>>,
}

impl Dataset {
    /// `dim` is only consulted when `sequences` is empty.
    pub fn new(sequences: Vec<LabeledSequence>, alphabet: LabelAlphabet, dim: usize) -> Result<Self> {
        let dim = sequences.first().map_or(dim, LabeledSequence::dim);
        let k = alphabet.len();
        let mut seen = HashSet::with_capacity(sequences.len());
        for s in &sequences {
            if s.dim() != dim {
                return Err(Error::arg(format!(
                    "sequence {:?} has frame dimension {}, expected {dim}",
                    s.id,
                    s.dim()
                )));
            }
            if let Some(&bad) = s.labels.iter().find(|&&y| y >= k) {
                return Err(Error::arg(format!(
                    "sequence {:?} uses label index {bad} outside alphabet of size {k}",
                    s.id
                )));
            }
            if !s.frames.iter().all(|v| v.is_finite()) {
                return Err(Error::arg(format!("sequence {:?} has non-finite frames", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::arg(format!("duplicate sequence id {:?}", s.id)));
            }
        }
        Ok(Self {
            sequences,
            alphabet,
            dim,
            source_folds: None,
        })
    }

    pub fn with_source_folds(mut self, folds: Vec<usize>) -> Result<Self> {
        if folds.len() != self.sequences.len() {
            return Err(Error::arg("fold column length differs from sequence count"));
        }
        self.source_folds = Some(folds);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.alphabet.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.sequences.iter().map(LabeledSequence::len).sum()
    }

    /// Every frame of every sequence stacked into one `M x d` matrix.
    pub fn stacked_frames(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_frames(), self.dim));
        let mut row = 0;
        for s in &self.sequences {
            for frame in s.frames.rows() {
                out.row_mut(row).assign(&frame);
                row += 1;
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            alphabet: self.alphabet.clone(),
            dim: self.dim,
            source_folds: self
                .source_folds
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Re-index labels onto `target`. Labels unknown to `target` are an error.
    pub fn relabel(&self, target: &LabelAlphabet) -> Result<Dataset> {
        let map: Vec<usize> = self
            .alphabet
            .labels()
            .iter()
            .map(|name| {
                target.index_of(name).ok_or_else(|| {
                    Error::Mismatch(format!("label {name:?} is not in the model alphabet"))
                })
            })
            .collect::<Result<_>>()?;
        let sequences = self
            .sequences
            .iter()
            .map(|s| LabeledSequence {
                id: s.id.clone(),
                frames: s.frames.clone(),
                labels: s.labels.iter().map(|&y| map[y]).collect(),
            })
            .collect();
        Ok(Dataset {
            sequences,
            alphabet: target.clone(),
            dim: self.dim,
            source_folds: self.source_folds.clone(),
        })
    }

    /// The source file's own folds, renumbered densely from 0.
    pub fn source_fold_assignment(&self) -> Option<FoldAssignment> {
        let folds = self.source_folds.as_ref()?;
        let mut dense = BTreeMap::new();
        for &f in folds {
            let next = dense.len();
            dense.entry(f).or_insert(next);
        }
        // BTreeMap iteration is ordered, so renumber by source fold value
        for (i, v) in dense.values_mut().enumerate() {
            *v = i;
        }
        Some(FoldAssignment {
            k: dense.len(),
            ids: self.sequences.iter().map(|s| s.id.clone()).collect(),
            folds: folds.iter().map(|f| dense[f]).collect(),
            seed: None,
        })
    }
}

/// Partition of a dataset's sequences into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Sequence ids in dataset order.
    pub ids: Vec<String>,
    /// `folds[i]` is the fold of `ids[i]`.
    pub folds: Vec<usize>,
    /// `None` for folds taken from the data file.
    pub seed: Option<u64>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|i| self.folds[i])
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }

    /// Dataset indices in `fold` (test) and outside it (train).
    pub fn train_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] != fold)
    }
}

/// Seeded split of whole sequences into `k` folds whose sizes differ by at most one.
pub fn split_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.len();
    if k < 2 {
        return Err(Error::arg(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::arg(format!("cannot split {n} sequences into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(FoldAssignment {
        k,
        ids: dataset.sequences.iter().map(|s| s.id.clone()).collect(),
        folds,
        seed: Some(seed),
    })
}
