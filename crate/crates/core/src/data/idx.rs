//! IDX (MNIST-style) binary files: big-endian u32 header fields followed by
//! unsigned bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, ImageShape};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(source: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        source_name: source.to_string(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, source: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(source, bytes.len(), "truncated header"))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images<'a>(bytes: &'a [u8], source: &str) -> Result<(usize, usize, usize, &'a [u8])> {
    let magic = read_u32(bytes, 0, source)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            source,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        ));
    }
    let n = read_u32(bytes, 4, source)? as usize;
    let rows = read_u32(bytes, 8, source)? as usize;
    let cols = read_u32(bytes, 12, source)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(format_err(
            source,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, have {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(format_err(source, 16 + need, "trailing bytes after pixel data"));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels<'a>(bytes: &'a [u8], source: &str) -> Result<&'a [u8]> {
    let magic = read_u32(bytes, 0, source)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            source,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        ));
    }
    let n = read_u32(bytes, 4, source)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(format_err(
            source,
            bytes.len(),
            format!("truncated labels: need {n}, have {}", body.len()),
        ));
    }
    if body.len() > n {
        return Err(format_err(source, 8 + n, "trailing bytes after labels"));
    }
    Ok(body)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_limit(images_path, labels_path, None)
}

/// Loads an IDX pair, keeping only the first `limit` examples when given.
/// Pixels are scaled to `[0, 1]`.
pub fn load_idx_limit(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img_bytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbl_bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (isrc, lsrc) = (ip.display().to_string(), lp.display().to_string());
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes, &isrc)?;
    let labels = parse_idx_labels(&lbl_bytes, &lsrc)?;
    if labels.len() != n {
        return Err(format_err(&lsrc, 4, format!("{} labels for {n} images", labels.len())));
    }
    if n == 0 {
        return Err(format_err(&isrc, 4, "no images"));
    }
    let keep = limit.map_or(n, |l| l.min(n));
    let d = rows * cols;
    let inputs = Array2::from_shape_fn((keep, d), |(i, j)| pixels[i * d + j] as f32 / 255.0);
    let labels: Vec<usize> = labels[..keep].iter().map(|&y| y as usize).collect();
    // digit sets: keep 10 classes even when a small subset misses some
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1).max(10);
    Dataset::new(
        inputs,
        labels,
        num_classes,
        Some(ImageShape {
            channels: 1,
            height: rows,
            width: cols,
        }),
    )
}
