use std::path::Path;

use super::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

fn checked_payload(bytes: &[u8], header: usize, dims: &[u32]) -> Result<usize> {
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format(format!("IDX dimensions {dims:?} overflow")))?;
    let expected = header
        .checked_add(count)
        .ok_or_else(|| Error::Format("IDX size overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX declares {} payload bytes but file has {}",
            count,
            bytes.len().saturating_sub(header)
        )));
    }
    Ok(count)
}

/// Parses an unsigned-byte IDX image file (magic `0x00000803`) into an
/// `(n, 1, rows, cols)` tensor mapped from `[0, 255]` to `[-1, 1]`.
/// With `pad_to`, images are centered on a `pad_to × pad_to` canvas filled
/// with the value of a zero pixel.
pub fn parse_idx_images(bytes: &[u8], pad_to: Option<usize>) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let dims = [
        read_u32_be(bytes, 4)?,
        read_u32_be(bytes, 8)?,
        read_u32_be(bytes, 12)?,
    ];
    checked_payload(bytes, 16, &dims)?;
    let (n, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let (out_h, out_w) = match pad_to {
        Some(p) if p < rows || p < cols => {
            return Err(Error::invalid(format!(
                "cannot pad {rows}x{cols} images to {p}"
            )))
        }
        Some(p) => (p, p),
        None => (rows, cols),
    };
    let (top, left) = ((out_h - rows) / 2, (out_w - cols) / 2);
    let mut data = vec![-1.0; n * out_h * out_w];
    let payload = &bytes[16..];
    for i in 0..n {
        for r in 0..rows {
            for c in 0..cols {
                let px = payload[(i * rows + r) * cols + c];
                data[(i * out_h + r + top) * out_w + c + left] = pixel_to_unit(px);
            }
        }
    }
    Tensor::new([n, 1, out_h, out_w], data)
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4)?;
    checked_payload(bytes, 8, &[n])?;
    Ok(bytes[8..].to_vec())
}

pub(crate) fn pixel_to_unit(px: u8) -> f64 {
    px as f64 / 127.5 - 1.0
}

/// Loads an IDX image file and optional label file.
pub fn load_idx(
    images_path: &Path,
    labels_path: Option<&Path>,
    pad_to: Option<usize>,
) -> Result<ImageDataset> {
    let images = parse_idx_images(&std::fs::read(images_path)?, pad_to)?;
    let ds = ImageDataset::new(images, format!("idx:{}", images_path.display()))?;
    match labels_path {
        Some(p) => ds.with_labels(parse_idx_labels(&std::fs::read(p)?)?),
        None => Ok(ds),
    }
}
