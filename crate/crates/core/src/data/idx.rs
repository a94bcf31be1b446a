//! Reader for the IDX format used by MNIST-style datasets.
//!
//! Header: two zero bytes, a type byte (only `0x08`, unsigned byte, is
//! accepted), a dimension-count byte, then one big-endian `u32` per
//! dimension. Raw data follows. Images must have at least two dimensions
//! (count plus pixel axes, flattened); labels exactly one.

use std::path::Path;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

/// Magic number of a 3-dimensional unsigned-byte IDX file (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number of a 1-dimensional unsigned-byte IDX file (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxArray<'a> {
    dims: Vec<usize>,
    data: &'a [u8],
}

fn parse<'a>(bytes: &'a [u8], role: &str, ndims_ok: impl Fn(usize) -> bool) -> Result<IdxArray<'a>> {
    let field = |f: &str| format!("{role}.{f}");
    if bytes.len() < 4 {
        return Err(Error::format(
            field("magic"),
            Some(bytes.len()),
            "file shorter than the 4-byte magic",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::format(
            field("magic"),
            Some(0),
            format!(
                "expected 00 00 08 xx, found {:02x} {:02x} {:02x} {:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        ));
    }
    let ndims = bytes[3] as usize;
    if !ndims_ok(ndims) {
        return Err(Error::format(
            field("magic"),
            Some(3),
            format!("unexpected dimension count {ndims}"),
        ));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::format(
            field("dims"),
            Some(bytes.len()),
            "truncated dimension header",
        ));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(field("dims"), Some(4), "dimension product overflows"))?;
    let data = &bytes[header_len..];
    if data.len() < expected {
        return Err(Error::format(
            field("data"),
            Some(bytes.len()),
            format!("truncated: header promises {expected} bytes, {} present", data.len()),
        ));
    }
    if data.len() > expected {
        return Err(Error::format(
            field("data"),
            Some(header_len + expected),
            format!("{} trailing bytes after the data", data.len() - expected),
        ));
    }
    Ok(IdxArray { dims, data })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]`; the class
/// count is one more than the largest label present.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let image_bytes = read(images_path.as_ref())?;
    let label_bytes = read(labels_path.as_ref())?;
    let images = parse(&image_bytes, "images", |n| n >= 2)?;
    let labels = parse(&label_bytes, "labels", |n| n == 1)?;

    let count = images.dims[0];
    if labels.dims[0] != count {
        return Err(Error::format(
            "labels.count",
            Some(4),
            format!("{} labels for {count} images", labels.dims[0]),
        ));
    }
    if count == 0 {
        return Err(Error::format("images.count", Some(4), "no images"));
    }
    let pixels: usize = images.dims[1..].iter().product();
    if pixels == 0 {
        return Err(Error::format("images.dims", Some(8), "images have zero pixels"));
    }
    let class_count = labels.data.iter().copied().max().map_or(1, |m| m as usize + 1);
    let samples = images
        .data
        .chunks_exact(pixels)
        .zip(labels.data)
        .map(|(px, &y)| Sample {
            x: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            y: y as usize,
        })
        .collect();
    Dataset::new(samples, class_count)
}
