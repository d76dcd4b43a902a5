//! Binary model files.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "DSEQ1"  u32 version
//! u32 label count, then each label as u32 byte length + UTF-8
//! u32 layer count L+1, then each layer size as u64
//! arrays, each as u64 element count + f64 values (row-major):
//!     encoder layers 1..L, W, c, A, b, start, end
//! u32 byte length + UTF-8 JSON of the training config
//! u64 checksum: first 8 bytes of SHA-256 over everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::crf::CrfParams;
use crate::dataset::LabelAlphabet;
use crate::error::{Error, Result};
use crate::nn::{EncoderWeights, TopLayer};
use crate::trainer::{ModelState, TrainConfig};

pub const MAGIC: &[u8; 5] = b"DSEQ1";
pub const FORMAT_VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn reals<'a>(&mut self, values: impl ExactSizeIterator<Item = &'a f64>) {
        self.u64(values.len() as u64);
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serializes a model to the byte layout above.
pub fn write_model(model: &ModelState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(model.alphabet.len() as u32);
    for label in model.alphabet.labels() {
        w.str(label);
    }
    let sizes = model.encoder.layer_sizes();
    w.u32(sizes.len() as u32);
    for &s in sizes {
        w.u64(s as u64);
    }
    // iter() on standard-layout arrays is row-major
    for layer in model.encoder.layers() {
        w.reals(layer.as_standard_layout().iter());
    }
    w.reals(model.top.w.as_standard_layout().iter());
    w.reals(model.top.c.iter());
    w.reals(model.crf.transitions.as_standard_layout().iter());
    w.reals(model.crf.bias.iter());
    w.reals(model.crf.start.iter());
    w.reals(model.crf.end.iter());
    w.str(&serde_json::to_string(&model.config).expect("config serializes"));
    let sum = checksum(&w.0);
    w.u64(sum);
    w.0
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn save_model(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_model(model);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format_err("unexpected end of model payload"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format_err("string is not UTF-8"))
    }

    fn reals(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected as u64 {
            return Err(format_err(format!("{what} has {n} values, expected {expected}")));
        }
        let bytes = self.take(expected.checked_mul(8).ok_or_else(|| format_err("array too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let values = self.reals(rows * cols, what)?;
        Array2::from_shape_vec((rows, cols), values).map_err(|e| format_err(e.to_string()))
    }

    fn vector(&mut self, len: usize, what: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.reals(len, what)?))
    }
}

/// Parses and validates a complete model file image.
pub fn read_model(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("not a model file (bad magic)"));
    }
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(format_err("model file is truncated"));
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported format version {version}")));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != checksum(payload) {
        return Err(format_err("checksum mismatch"));
    }

    let mut r = Reader { buf: payload, pos: 9 };
    let k = r.u32()? as usize;
    let labels = (0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let alphabet = LabelAlphabet::new(labels).map_err(|e| format_err(e.to_string()))?;
    let n_sizes = r.u32()? as usize;
    if n_sizes < 2 {
        return Err(format_err("encoder needs at least one layer"));
    }
    let sizes = (0..n_sizes)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n_sizes - 1);
    for (l, pair) in sizes.windows(2).enumerate() {
        layers.push(r.matrix(pair[0] + 1, pair[1], &format!("encoder layer {l}"))?);
    }
    let h = sizes[n_sizes - 1];
    let w = r.matrix(h, k, "W")?;
    let c = r.vector(k, "c")?;
    let transitions = r.matrix(k, k, "A")?;
    let bias = r.vector(k, "b")?;
    let start = r.vector(k, "start")?;
    let end = r.vector(k, "end")?;
    let config: TrainConfig = serde_json::from_str(&r.str()?).map_err(|e| format_err(format!("config: {e}")))?;
    if r.pos != payload.len() {
        return Err(format_err("trailing bytes after config"));
    }

    let as_format = |e: Error| format_err(e.to_string());
    let encoder = EncoderWeights::new(layers).map_err(as_format)?;
    let top = TopLayer::new(w, c).map_err(as_format)?;
    let crf = CrfParams::new(transitions, bias, start, end).map_err(as_format)?;
    ModelState::new(encoder, top, crf, alphabet, config).map_err(as_format)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    read_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelState {
        let cfg = TrainConfig {
            layers: vec![4, 3],
            seed: 5,
            ..TrainConfig::default()
        };
        let alphabet = LabelAlphabet::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let mut m = ModelState::init(alphabet, 6, &cfg).unwrap();
        m.crf.transitions[[0, 2]] = -1.25;
        m.crf.start[1] = 0.5;
        m.crf.end[2] = f64::MIN_POSITIVE;
        m.top.c[0] = 3.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = read_model(&write_model(&m)).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.encoder.layers().iter().zip(back.encoder.layers()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(write_model(&back), write_model(&m));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = write_model(&model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        match read_model(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = write_model(&model());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_model(&bytes), Err(Error::Format(_))));
        let mut bytes = write_model(&model());
        bytes[5] = 9;
        match read_model(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
        assert!(matches!(read_model(b"DSEQ1"), Err(Error::Format(_))));
    }

    #[test]
    fn inconsistent_shapes_are_rejected_even_with_valid_checksum() {
        let bytes = write_model(&model());
        // bump the declared width of the first hidden layer and re-sign
        let mut payload = bytes[..bytes.len() - 8].to_vec();
        let sizes_at = 9 + 4 + 3 * (4 + 1) + 4 + 8;
        payload[sizes_at] += 1;
        let sum = checksum(&payload);
        payload.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(read_model(&payload), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dseq");
        save_model(&model(), &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model());
    }
}
