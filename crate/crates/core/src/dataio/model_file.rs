//! The `P16N` model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "P16N"  version:u32  tag:u8  layers:u32  input_rank:u32  input_extents:[u32]
//! per layer:   kind:u8  attributes:[u32]  params:u32
//!   per param: rank:u32  extents:[u32]
//! payload: every parameter scalar in layer order, 2 bytes (binary16) for
//!          Pure16 and 4 bytes (binary32) for Pure32 and Mixed
//! ```
//!
//! The attribute count is fixed by the kind id.

use std::io::Write;
use std::path::Path;

use crate::b16::Half;
use crate::error::{Error, Result};
use crate::nn::{infer_shapes, Layer, LayerKind, Model, Param};
use crate::tensor::Precision;

pub const MAGIC: [u8; 4] = *b"P16N";
pub const FORMAT_VERSION: u32 = 1;

/// Bytes per stored scalar: binary16 for Pure16, binary32 masters otherwise.
fn payload_width(p: Precision) -> usize {
    if p == Precision::Pure16 {
        2
    } else {
        4
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn header_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.precision().tag_byte());
    put_u32(&mut out, model.layers().len());
    put_u32(&mut out, model.input_shape().len());
    model.input_shape().iter().for_each(|&d| put_u32(&mut out, d));
    for layer in model.layers() {
        let kind = layer.kind();
        out.push(kind.id());
        kind.attributes().into_iter().for_each(|a| out.extend_from_slice(&a.to_le_bytes()));
        put_u32(&mut out, layer.params().len());
        for p in layer.params() {
            put_u32(&mut out, p.shape().len());
            p.shape().iter().for_each(|&d| put_u32(&mut out, d));
        }
    }
    out
}

/// Serialize a model. Every parameter must be finite.
pub fn write_model(model: &Model) -> Result<Vec<u8>> {
    let values = model.layers().iter().flat_map(|l| l.params()).flat_map(|p| p.values());
    if values.clone().any(|v| !v.is_finite()) {
        return Err(Error::contract("cannot save a model with non-finite parameters"));
    }
    let mut out = header_bytes(model);
    let width = payload_width(model.precision());
    out.reserve(model.param_count() * width);
    for &v in values {
        if width == 2 {
            out.extend_from_slice(&Half::from_f32(v).to_bits().to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Bytes `write_model` produces for this model.
pub fn model_file_size(model: &Model) -> usize {
    header_bytes(model).len() + model.param_count() * payload_width(model.precision())
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let bytes = write_model(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(f.sync_all()?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::PayloadLength(format!("{what}: need {n} bytes at offset {}, file has {}", self.at, self.bytes.len()))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn extents(&mut self, what: &str) -> Result<Vec<usize>> {
        let rank = self.u32(what)? as usize;
        if rank > 8 {
            return Err(Error::PayloadLength(format!("{what}: rank {rank}")));
        }
        (0..rank).map(|_| self.u32(what).map(|d| d as usize)).collect()
    }
}

/// Parse a model file image, validating every declared length.
pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, at: 0 };
    let magic: [u8; 4] = bytes.get(..4).and_then(|m| m.try_into().ok()).ok_or_else(|| {
        let mut m = [0u8; 4];
        m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
        Error::BadMagic(m)
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    r.at = 4;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let tag = r.u8("precision tag")?;
    let precision =
        Precision::from_tag_byte(tag).ok_or_else(|| Error::contract(format!("unknown precision tag byte {tag}")))?;
    let layer_count = r.u32("layer count")? as usize;
    let input_shape = r.extents("input shape")?;
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::PayloadLength(format!("input shape {input_shape:?}")));
    }

    let mut kinds = Vec::new();
    let mut shapes = Vec::new();
    for i in 0..layer_count {
        let id = r.u8("layer kind")?;
        let n_attrs = LayerKind::attribute_count(id)
            .ok_or_else(|| Error::contract(format!("layer {i}: unknown kind id {id}")))?;
        let attrs = (0..n_attrs).map(|_| r.u32("layer attributes")).collect::<Result<Vec<_>>>()?;
        let kind = LayerKind::from_id(id, &attrs)
            .ok_or_else(|| Error::contract(format!("layer {i}: invalid attributes {attrs:?}")))?;
        let expected = kind.param_shapes();
        let n_params = r.u32("parameter count")? as usize;
        if n_params != expected.len() {
            return Err(Error::PayloadLength(format!(
                "layer {i} ({}): {n_params} parameters declared, kind has {}",
                kind.name(),
                expected.len()
            )));
        }
        for (j, want) in expected.into_iter().enumerate() {
            let got = r.extents("parameter shape")?;
            if got != want {
                return Err(Error::PayloadLength(format!(
                    "layer {i} param {j}: extents {got:?} do not match {}'s {want:?}",
                    kind.name()
                )));
            }
            shapes.push(got);
        }
        kinds.push(kind);
    }
    infer_shapes(&input_shape, &kinds).map_err(|e| Error::PayloadLength(e.to_string()))?;

    let width = payload_width(precision);
    let total = shapes
        .iter()
        .try_fold(0usize, |acc, s| s.iter().try_fold(1usize, |n, &d| n.checked_mul(d)).and_then(|n| acc.checked_add(n)))
        .and_then(|t| t.checked_mul(width).map(|b| (t, b)));
    let remaining = bytes.len() - r.at;
    let Some((total, payload_bytes)) = total.filter(|&(_, b)| b == remaining) else {
        let total = total.map_or_else(|| "overflowing".to_string(), |(t, _)| t.to_string());
        return Err(Error::PayloadLength(format!(
            "{remaining} payload bytes, declared {total} scalars x {width} bytes"
        )));
    };
    debug_assert_eq!(payload_bytes, total * width);
    let mut layers = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let template = Layer::new(kind);
        let mut params = Vec::with_capacity(template.params().len());
        for p in template.params() {
            let raw = r.take(p.len() * width, "payload")?;
            let values = if width == 2 {
                raw.chunks_exact(2).map(|c| Half::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f32()).collect()
            } else {
                raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
            };
            params.push(Param::new(p.shape().to_vec(), values, p.is_trainable()));
        }
        layers.push(Layer::with_params(kind, params));
    }
    Ok(Model::from_layers(input_shape, layers, precision, 0))
}
