//! IDX files (MNIST, Fashion-MNIST): a big-endian magic word whose low byte
//! is the number of dimensions, one big-endian `u32` per dimension, then raw
//! unsigned bytes.

use std::path::Path;

use super::{read_maybe_gzip, resolve_maybe_gz, LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsigned-byte, 3-dimensional.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 1-dimensional.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            what: what.to_string(),
            offset: bytes.len(),
            needed: offset + 4 - bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = read_u32_be(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::Truncated {
        what: what.to_string(),
        offset: bytes.len(),
        needed: offset + len - bytes.len(),
    })
}

/// Parses an IDX image file into `[1, rows, cols]` tensors scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Vec<Tensor>> {
    check_magic(bytes, IDX_IMAGES_MAGIC, what)?;
    let count = read_u32_be(bytes, 4, what)? as usize;
    let rows = read_u32_be(bytes, 8, what)? as usize;
    let cols = read_u32_be(bytes, 12, what)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            what: what.to_string(),
            offset: 8,
            detail: format!("degenerate image size {rows}x{cols}"),
        });
    }
    let pixels = payload(bytes, 16, count * rows * cols, what)?;
    pixels
        .chunks(rows * cols)
        .map(|px| Tensor::new(vec![1, rows, cols], px.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, what)?;
    let count = read_u32_be(bytes, 4, what)? as usize;
    Ok(payload(bytes, 8, count, what)?
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

/// Loads an image/label file pair. Gzip-compressed files (or a `.gz` sibling
/// of a missing path) are accepted. The class count is `max label + 1`.
pub fn load_idx(image_path: &Path, label_path: &Path, split: Split, source: &str) -> Result<LabeledImageSet> {
    let image_path = resolve_maybe_gz(image_path);
    let label_path = resolve_maybe_gz(label_path);
    let images = parse_idx_images(&read_maybe_gzip(&image_path)?, &image_path.display().to_string())?;
    let labels = parse_idx_labels(&read_maybe_gzip(&label_path)?, &label_path.display().to_string())?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledImageSet::new(images, labels, split, source, num_classes)
}

/// Serialises `[1, rows, cols]` images (pixels rounded to bytes) as an IDX image file.
pub fn encode_idx_images(images: &[Tensor]) -> Result<Vec<u8>> {
    let (rows, cols) = match images.first().map(Tensor::shape) {
        Some(&[1, r, c]) => (r, c),
        Some(s) => return Err(Error::Shape(format!("IDX images must be [1, H, W], got {s:?}"))),
        None => (1, 1),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for dim in [images.len(), rows, cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for img in images {
        if img.shape() != [1, rows, cols] {
            return Err(Error::Shape(format!("mixed image shapes: {:?}", img.shape())));
        }
        out.extend(img.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Contract(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}
