//! Reader for IDX containers with unsigned-byte payloads (MNIST layout).
//! Gzip-compressed files are detected by their magic and inflated first.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{CliError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// One row-major image per entry, pixel values scaled to [0, 1].
    pub images: Vec<Vec<f64>>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Subtracts the dataset mean image from every image.
    pub fn center(&mut self) {
        if self.images.is_empty() {
            return;
        }
        let mut mean = vec![0.0; self.rows * self.cols];
        for img in &self.images {
            for (m, v) in mean.iter_mut().zip(img) {
                *m += v;
            }
        }
        let count = self.images.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        for img in &mut self.images {
            for (v, m) in img.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }
}

fn magic_name(magic: u32) -> &'static str {
    match magic {
        IMAGES_MAGIC => "images",
        LABELS_MAGIC => "labels",
        _ => "unknown",
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CliError::parse(offset.min(bytes.len()), format!("truncated header: missing {what}")))
}

/// Checks the magic and returns the dimension sizes and payload offset.
fn header(bytes: &[u8], expected: u32, dims: usize) -> Result<(Vec<usize>, usize)> {
    if bytes.is_empty() {
        return Err(CliError::parse(0, "empty file"));
    }
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(CliError::parse(
            0,
            format!(
                "magic mismatch: expected {expected:#010x} ({}), found {magic:#010x} ({})",
                magic_name(expected),
                magic_name(magic)
            ),
        ));
    }
    let sizes = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d, "dimension size").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok((sizes, 4 + 4 * dims))
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize) -> Result<&'a [u8]> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| CliError::parse(start, "payload size overflows"))?;
    if bytes.len() < end {
        return Err(CliError::parse(
            bytes.len(),
            format!("truncated payload: expected {len} bytes after offset {start}, found {}", bytes.len() - start),
        ));
    }
    if bytes.len() > end {
        return Err(CliError::parse(end, format!("{} trailing bytes", bytes.len() - end)));
    }
    Ok(&bytes[start..end])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (sizes, start) = header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (sizes[0], sizes[1], sizes[2]);
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| CliError::parse(8, "image size overflows"))?;
    let data = payload(bytes, start, count.saturating_mul(pixels))?;
    let images = if pixels == 0 {
        vec![Vec::new(); count]
    } else {
        data.chunks(pixels)
            .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
            .collect()
    };
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (sizes, start) = header(bytes, LABELS_MAGIC, 1)?;
    Ok(payload(bytes, start, sizes[0])?.to_vec())
}

/// File contents, inflated when they carry the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| CliError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_images(path: &Path, center: bool) -> Result<IdxImages> {
    let mut images = parse_images(&read_maybe_gz(path)?)?;
    if center {
        images.center();
    }
    Ok(images)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read_maybe_gz(path)?)
}

/// Serializes images as an IDX image file (pixels are rounded to bytes).
pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_images_parse_exactly() {
        let a: Vec<u8> = (0..16).collect();
        let b: Vec<u8> = (0..16).map(|v| 255 - v).collect();
        let parsed = parse_images(&encode_images(4, 4, &[a.clone(), b.clone()])).unwrap();
        assert_eq!((parsed.rows, parsed.cols, parsed.len()), (4, 4, 2));
        for (img, raw) in parsed.images.iter().zip([&a, &b]) {
            for (v, &p) in img.iter().zip(raw) {
                assert_eq!(*v, p as f64 / 255.0);
            }
        }
    }

    #[test]
    fn centering_zeroes_the_mean() {
        let mut parsed = parse_images(&encode_images(1, 2, &[vec![0, 10], vec![20, 40]])).unwrap();
        parsed.center();
        assert_eq!(parsed.images[0], vec![-10.0 / 255.0, -15.0 / 255.0]);
        assert_eq!(parsed.images[1], vec![10.0 / 255.0, 15.0 / 255.0]);
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(parse_images(&[]), Err(CliError::Parse { offset: 0, .. })));
        let labels = [0, 0, 8, 1, 0, 0, 0, 2, 3, 7];
        assert!(matches!(parse_images(&labels), Err(CliError::Parse { offset: 0, .. })));
        assert_eq!(parse_labels(&labels).unwrap(), vec![3, 7]);
        let full = encode_images(2, 2, &[vec![1, 2, 3, 4]]);
        match parse_images(&full[..full.len() - 1]) {
            Err(CliError::Parse { offset, .. }) => assert_eq!(offset, full.len() - 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_images(&full[..10]), Err(CliError::Parse { offset: 8, .. })));
    }
}
