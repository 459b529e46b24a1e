//! IDX (MNIST family) image and label files.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "truncated header"))
}

/// Parses IDX images and labels already in memory. Pixels are scaled to
/// `[0, 1]` and each image is flattened row-major into one feature row.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "images.magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = read_u32(images, 4, "images.count")? as usize;
    let rows = read_u32(images, 8, "images.rows")? as usize;
    let cols = read_u32(images, 12, "images.cols")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::format("images.rows", "zero-sized images"));
    }
    let pixels = &images[16..];
    if pixels.len() != count * dim {
        return Err(Error::format(
            "images.data",
            format!(
                "expected {} pixel bytes, found {}",
                count * dim,
                pixels.len()
            ),
        ));
    }

    let magic = read_u32(labels, 0, "labels.magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let label_count = read_u32(labels, 4, "labels.count")? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != label_count {
        return Err(Error::format(
            "labels.data",
            format!(
                "expected {label_count} label bytes, found {}",
                label_bytes.len()
            ),
        ));
    }
    if label_count != count {
        return Err(Error::format(
            "labels.count",
            format!("{label_count} labels for {count} images"),
        ));
    }

    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Tensor::new(vec![count, dim], data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

/// Encodes `[count × rows·cols]` features in `[0, 1]` back to IDX image bytes.
pub fn encode_idx_images(features: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    let (count, dim) = features.dims2()?;
    if dim != rows * cols {
        return Err(Error::shape(format!(
            "{dim} features cannot be {rows}x{cols} images"
        )));
    }
    let mut out = Vec::with_capacity(16 + count * dim);
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(
        features
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        out.push(
            u8::try_from(y)
                .map_err(|_| Error::format("labels.data", format!("label {y} exceeds 255")))?,
        );
    }
    Ok(out)
}
