//! Dataset ingestion and model persistence.

mod archive;
mod csv;
mod idx;
mod tfidf;

pub use self::archive::{
    load_model, read_model, save_model, write_model, ARCHIVE_MAGIC, ARCHIVE_VERSION,
};
pub use self::csv::{load_csv, load_csv_with, load_text_csv, CsvOptions, LabelColumn};
pub use self::idx::{
    load_idx, load_idx_images, read_idx_images, read_idx_labels, write_idx_images,
    write_idx_labels, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use self::tfidf::{build_tfidf, tokenize, Vocabulary, DEFAULT_VOCAB_SIZE};

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

/// Reads a whole file, transparently inflating gzip content.
pub(crate) fn read_maybe_gzip(path: &Path) -> std::io::Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}
