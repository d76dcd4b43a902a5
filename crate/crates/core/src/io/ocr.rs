//! Reader for the tab-separated OCR letter format: one character per line,
//! `id, letter, next_id, word_id, position, fold, p_0 .. p_127`, with words
//! chained through `next_id` (`-1` ends a word).

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use ndarray::Array2;

use super::open_text;
use crate::dataset::{Dataset, LabelAlphabet, LabeledSequence};
use crate::error::{Error, Result};

pub const PIXELS: usize = 128;

struct Letter {
    line: usize,
    id: i64,
    label: usize,
    next: i64,
    word: i64,
    fold: usize,
    pixels: Vec<f64>,
}

fn parse_line(text: &str, line: usize, path: &Path) -> Result<Letter> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let fields: Vec<&str> = text.trim_end().split('\t').collect();
    if fields.len() != 6 + PIXELS {
        return Err(err(format!("expected {} tab-separated fields, found {}", 6 + PIXELS, fields.len())));
    }
    let int = |i: usize, name: &str| -> Result<i64> {
        fields[i]
            .trim()
            .parse::<i64>()
            .map_err(|_| err(format!("{name} {:?} is not an integer", fields[i])))
    };
    let letter = fields[1].trim();
    let label = match letter.as_bytes() {
        [c @ b'a'..=b'z'] => (c - b'a') as usize,
        _ => return Err(err(format!("letter {letter:?} is not in a-z"))),
    };
    let fold = int(5, "fold")?;
    if fold < 0 {
        return Err(err(format!("negative fold {fold}")));
    }
    let pixels = fields[6..]
        .iter()
        .enumerate()
        .map(|(j, p)| match p.trim() {
            "0" => Ok(0.0),
            "1" => Ok(1.0),
            other => Err(err(format!("pixel {j} has value {other:?}, expected 0 or 1"))),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Letter {
        line,
        id: int(0, "id")?,
        label,
        next: int(2, "next_id")?,
        word: int(3, "word_id")?,
        fold: fold as usize,
        pixels,
    })
}

/// Loads the OCR letter file, assembling words by following `next_id`
/// links. Words appear in the order of their first letter in the file.
pub fn load_ocr(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = open_text(path)?;
    let mut letters = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        letters.push(parse_line(&line, i + 1, path)?);
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if letters.is_empty() {
        return Err(parse_err(0, "file contains no letters".into()));
    }

    let mut by_id = HashMap::with_capacity(letters.len());
    for (i, l) in letters.iter().enumerate() {
        if by_id.insert(l.id, i).is_some() {
            return Err(parse_err(l.line, format!("duplicate letter id {}", l.id)));
        }
    }
    let mut has_pred = vec![false; letters.len()];
    for l in &letters {
        if l.next != -1 {
            let &j = by_id
                .get(&l.next)
                .ok_or_else(|| parse_err(l.line, format!("next_id {} does not exist", l.next)))?;
            if has_pred[j] {
                return Err(parse_err(l.line, format!("letter {} is linked from two letters", l.next)));
            }
            has_pred[j] = true;
        }
    }

    let alphabet = LabelAlphabet::letters();
    let mut visited = vec![false; letters.len()];
    let mut sequences = Vec::new();
    let mut folds = Vec::new();
    for head in (0..letters.len()).filter(|&i| !has_pred[i]) {
        let mut chain = Vec::new();
        let mut cur = head;
        loop {
            visited[cur] = true;
            chain.push(cur);
            match letters[cur].next {
                -1 => break,
                next => cur = by_id[&next],
            }
        }
        let mut frames = Array2::zeros((chain.len(), PIXELS));
        for (t, &i) in chain.iter().enumerate() {
            for (j, &p) in letters[i].pixels.iter().enumerate() {
                frames[[t, j]] = p;
            }
        }
        let first = &letters[head];
        let labels = chain.iter().map(|&i| letters[i].label).collect();
        sequences.push(
            LabeledSequence::new(first.word.to_string(), frames, labels)
                .map_err(|e| parse_err(first.line, e.to_string()))?,
        );
        folds.push(first.fold);
    }
    if let Some(i) = visited.iter().position(|v| !v) {
        return Err(parse_err(letters[i].line, "letter is part of a cycle".into()));
    }
    Dataset::new(sequences, alphabet, PIXELS)
        .and_then(|d| d.with_source_folds(folds))
        .map_err(|e| parse_err(0, e.to_string()))
}
