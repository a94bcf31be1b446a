//! Binary checkpoint format. All integers are little-endian `u32`, all
//! parameters little-endian IEEE-754 `f64`.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "HBCK"
//! 4       4      version (1)
//! 8       4      class count C
//! 12      4      input dimension
//! 16      4      extractor layer count L
//! 20      1      extractor frozen flag (0 or 1)
//! 21      8·L    per layer: rows (out), cols (in)
//! ..      8      head rows (= C), head cols (= d)
//! ..      4      forgotten-label count K (0 when unknown)
//! ..      4·K    forgotten labels, ascending
//! ..      8·P    parameters in Classifier::flat_params order:
//!                each layer's weights (row-major) then bias,
//!                head weights (row-major), head bias
//! ```
//!
//! The file ends exactly after the last parameter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClassificationHead, Classifier, FeatureExtractor, Layer};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model plus the forgotten-class labels it was produced for, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Classifier,
    pub forgotten: Vec<usize>,
}

/// Only the classification head of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHead {
    pub head: ClassificationHead,
    pub forgotten: Vec<usize>,
}

struct Header {
    class_count: usize,
    input_dim: usize,
    frozen: bool,
    layer_shapes: Vec<(usize, usize)>,
    head_shape: (usize, usize),
    forgotten: Vec<usize>,
    params_offset: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                Some(self.pos),
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(n * 8, field)?;
        raw.chunks_exact(8)
            .enumerate()
            .map(|(i, c)| {
                let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::format(field, Some(start + 8 * i), "non-finite parameter"))
                }
            })
            .collect()
    }
}

fn read_header(bytes: &[u8]) -> Result<(Header, Reader<'_>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            "magic",
            Some(0),
            format!("expected \"HBCK\", found {magic:02x?}"),
        ));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(
            "version",
            Some(version_at),
            format!("unsupported version {version}"),
        ));
    }
    let class_count = r.u32("class_count")?;
    let input_dim = r.u32("input_dim")?;
    let layer_count_at = r.pos;
    let layer_count = r.u32("layer_count")?;
    if layer_count > 1024 {
        return Err(Error::format(
            "layer_count",
            Some(layer_count_at),
            format!("implausible layer count {layer_count}"),
        ));
    }
    let frozen_at = r.pos;
    let frozen = match r.take(1, "frozen")?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                "frozen",
                Some(frozen_at),
                format!("flag must be 0 or 1, got {other}"),
            ))
        }
    };
    if class_count == 0 || input_dim == 0 {
        return Err(Error::format(
            "class_count",
            Some(8),
            "class count and input dimension must be positive",
        ));
    }

    let mut width = input_dim;
    let mut layer_shapes = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let at = r.pos;
        let rows = r.u32("layer.rows")?;
        let cols = r.u32("layer.cols")?;
        if rows == 0 || cols != width {
            return Err(Error::format(
                "layer.shape",
                Some(at),
                format!("layer {i} is {rows}x{cols}, expected {width} inputs"),
            ));
        }
        layer_shapes.push((rows, cols));
        width = rows;
    }
    let head_at = r.pos;
    let head_rows = r.u32("head.rows")?;
    let head_cols = r.u32("head.cols")?;
    if head_rows != class_count || head_cols != width {
        return Err(Error::format(
            "head.shape",
            Some(head_at),
            format!("head is {head_rows}x{head_cols}, expected {class_count}x{width}"),
        ));
    }
    let k_at = r.pos;
    let k = r.u32("forgotten.count")?;
    if k >= class_count && k > 0 {
        return Err(Error::format(
            "forgotten.count",
            Some(k_at),
            format!("{k} forgotten labels for {class_count} classes"),
        ));
    }
    let mut forgotten = Vec::with_capacity(k);
    for _ in 0..k {
        let at = r.pos;
        let c = r.u32("forgotten.label")?;
        if c >= class_count || forgotten.last().is_some_and(|&p| p >= c) {
            return Err(Error::format(
                "forgotten.label",
                Some(at),
                format!("label {c} out of range or out of order"),
            ));
        }
        forgotten.push(c);
    }
    let params_offset = r.pos;
    Ok((
        Header {
            class_count,
            input_dim,
            frozen,
            layer_shapes,
            head_shape: (head_rows, head_cols),
            forgotten,
            params_offset,
        },
        r,
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    pub fn new(model: Classifier, forgotten: impl IntoIterator<Item = usize>) -> Self {
        let mut forgotten: Vec<usize> = forgotten.into_iter().collect();
        forgotten.sort_unstable();
        forgotten.dedup();
        Self { model, forgotten }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        fn put(out: &mut Vec<u8>, v: usize) {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let m = &self.model;
        let layers = m.extractor.layers();
        let mut out = Vec::with_capacity(64 + 8 * m.param_count());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put(&mut out, CHECKPOINT_VERSION as usize);
        put(&mut out, m.class_count());
        put(&mut out, m.input_dim());
        put(&mut out, layers.len());
        out.push(u8::from(m.extractor.frozen));
        for l in layers {
            put(&mut out, l.weights.rows());
            put(&mut out, l.weights.cols());
        }
        put(&mut out, m.head.weights.rows());
        put(&mut out, m.head.weights.cols());
        put(&mut out, self.forgotten.len());
        for &c in &self.forgotten {
            put(&mut out, c);
        }
        for v in m.flat_params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut r) = read_header(bytes)?;
        let mut layers = Vec::with_capacity(h.layer_shapes.len());
        for &(rows, cols) in &h.layer_shapes {
            let w = r.f64s(rows * cols, "layer.weights")?;
            let b = r.f64s(rows, "layer.bias")?;
            layers.push(Layer {
                weights: Matrix::new(rows, cols, w)?,
                bias: b,
            });
        }
        let (rows, cols) = h.head_shape;
        let w = r.f64s(rows * cols, "head.weights")?;
        let b = r.f64s(rows, "head.bias")?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                "trailer",
                Some(r.pos),
                format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            ));
        }
        let mut extractor = FeatureExtractor::new(h.input_dim, layers)?;
        extractor.frozen = h.frozen;
        let model = Classifier::new(extractor, ClassificationHead::new(Matrix::new(rows, cols, w)?, b)?)?;
        debug_assert_eq!(model.class_count(), h.class_count);
        Ok(Self {
            model,
            forgotten: h.forgotten,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

impl CheckpointHead {
    /// Decodes only the header and the head parameters, skipping over the
    /// extractor weights. The total length is still validated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut r) = read_header(bytes)?;
        let extractor_params: usize = h.layer_shapes.iter().map(|&(rows, cols)| rows * cols + rows).sum();
        r.take(8 * extractor_params, "layer.weights")?;
        let (rows, cols) = h.head_shape;
        let w = r.f64s(rows * cols, "head.weights")?;
        let b = r.f64s(rows, "head.bias")?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                "trailer",
                Some(r.pos),
                format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            ));
        }
        debug_assert!(h.params_offset <= r.pos);
        Ok(Self {
            head: ClassificationHead::new(Matrix::new(rows, cols, w)?, b)?,
            forgotten: h.forgotten,
        })
    }
}

/// Reads just the classification head (and stored forgotten labels) from a
/// checkpoint file.
pub fn read_head(path: impl AsRef<Path>) -> Result<CheckpointHead> {
    CheckpointHead::from_bytes(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::numerics::SeededRng;

    fn model() -> Classifier {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4, 2],
            class_count: 5,
        };
        let mut m = Classifier::init(&arch, &mut SeededRng::new(11)).unwrap();
        m.head.bias = vec![0.5, -1.25, 3.0, 0.0, -7.5];
        m
    }

    #[test]
    fn round_trips_bit_exactly() {
        let mut m = model();
        m.extractor.frozen = true;
        let ck = Checkpoint::new(m, [4, 1]);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.forgotten, vec![1, 4]);
        let a: Vec<u64> = ck.model.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.model.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.model, ck.model);
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = Checkpoint::new(model(), [2]).to_bytes();
        assert_eq!(&bytes[0..4], b"HBCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(bytes[20], 0);
        // 21 + 2 layers * 8 + head 8 + count 4 + 1 label * 4
        let params_at = 21 + 16 + 8 + 4 + 4;
        let n_params = (4 * 3 + 4) + (2 * 4 + 2) + (5 * 2 + 5);
        assert_eq!(bytes.len(), params_at + 8 * n_params);
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last, -7.5);
    }

    #[test]
    fn head_only_read_matches_full_read() {
        let ck = Checkpoint::new(model(), [3]);
        let head = CheckpointHead::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(head.head, ck.model.head);
        assert_eq!(head.forgotten, vec![3]);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = Checkpoint::new(model(), []).to_bytes();
        let cut = &bytes[..bytes.len() - 5];
        match Checkpoint::from_bytes(cut) {
            Err(Error::Format { field, offset, .. }) => {
                assert_eq!(field, "head.bias");
                assert!(offset.is_some());
            }
            other => panic!("expected format error, got {other:?}"),
        }
        match CheckpointHead::from_bytes(&bytes[..10]) {
            Err(Error::Format { offset: Some(8), .. }) => {}
            other => panic!("expected format error at byte 8, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_fields_are_rejected() {
        let mut bytes = Checkpoint::new(model(), []).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format { offset: Some(0), .. })
        ));

        let mut bytes = Checkpoint::new(model(), []).to_bytes();
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { .. })));

        let mut bytes = Checkpoint::new(model(), []).to_bytes();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_head("/no/such/dir/model.ckpt").unwrap_err();
        assert!(err.to_string().contains("/no/such/dir/model.ckpt"));
    }
}
