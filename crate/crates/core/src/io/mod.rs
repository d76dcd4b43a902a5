//! Dataset loaders, the synthetic chain generator and model persistence.

mod generic;
mod model_file;
mod ocr;
mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

pub use generic::{frames_matrix, load_generic, read_generic_records, write_generic, GenericRecord};
pub use model_file::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use ocr::load_ocr;
pub use synth::{gen_synthetic, SyntheticHmmParams, SyntheticTruth};

/// Buffered reader over `path`, transparently gunzipping `*.gz` files.
pub(crate) fn open_text(path: &Path) -> std::io::Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}
