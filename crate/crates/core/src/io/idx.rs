//! IDX tensors as distributed with MNIST: a big-endian magic number and
//! dimension sizes followed by an unsigned-byte payload. Gzip-compressed
//! files are accepted as-is.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use ndarray::Array2;

use super::read_maybe_gzip;
use crate::data::{Dataset, FeatureMatrix, LabelVector};
use crate::error::{DslError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major, each image row-major.
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(DslError::Format(format!(
            "{what} file is truncated in its header"
        )));
    }
    let found = BigEndian::read_u32(&bytes[..4]);
    if found != magic {
        return Err(DslError::Format(format!(
            "{what} file has magic 0x{found:08x}, expected 0x{magic:08x}"
        )));
    }
    Ok((0..dims)
        .map(|d| BigEndian::read_u32(&bytes[4 + 4 * d..8 + 4 * d]) as usize)
        .collect())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let bytes = read_maybe_gzip(path.as_ref())?;
    let dims = header(&bytes, IDX_IMAGES_MAGIC, 3, "image")?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DslError::Format("image dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(DslError::Format(format!(
            "image payload truncated: {} of {expected} bytes",
            payload.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..expected].to_vec(),
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = read_maybe_gzip(path.as_ref())?;
    let count = header(&bytes, IDX_LABELS_MAGIC, 1, "label")?[0];
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(DslError::Format(format!(
            "label payload truncated: {} of {count} bytes",
            payload.len()
        )));
    }
    Ok(payload[..count].to_vec())
}

fn images_to_features(images: &IdxImages) -> Result<FeatureMatrix> {
    let l = images.rows * images.cols;
    let values: Vec<f64> = images
        .pixels
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    FeatureMatrix::new(
        Array2::from_shape_vec((images.count, l), values)
            .map_err(|e| DslError::Dimension(e.to_string()))?,
    )
}

/// Images flattened row-major and scaled to `[0, 1]`, with integer labels.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(DslError::Format(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let features = images_to_features(&images)?;
    let labels = LabelVector::from_labels(labels.into_iter().map(usize::from).collect())?;
    Dataset::labeled(features, labels)
}

pub fn load_idx_images(images_path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    images_to_features(&read_idx_images(images_path)?)
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(DslError::Dimension(
            "pixel count does not match dimensions".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    for d in [images.count, images.rows, images.cols] {
        w.write_u32::<BigEndian>(d as u32)?;
    }
    w.write_all(&images.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}
