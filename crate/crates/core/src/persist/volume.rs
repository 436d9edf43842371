//! `.dvol` / `.dmask` container: one LF-terminated header line
//!
//! ```text
//! DVOL1 shape=D,H,W spacing=SZ,SY,SX dtype=f32le
//! ```
//!
//! followed by exactly `D*H*W` little-endian values (`f32le`) or bytes (`u8`).

use std::path::Path;

use super::{read_file, write_file, PersistError};
use crate::dosimetry::{MaskVolume, Volume};

pub const VOLUME_MAGIC: &str = "DVOL1";
const MAX_HEADER: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32Le,
    U8,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::U8 => "u8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(tag: &str) -> Result<Self, PersistError> {
        match tag {
            "f32le" => Ok(Dtype::F32Le),
            "u8" => Ok(Dtype::U8),
            other => Err(PersistError::Header(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub shape: [usize; 3],
    pub spacing_mm: [f32; 3],
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn render(&self) -> String {
        let [d, h, w] = self.shape;
        let [sz, sy, sx] = self.spacing_mm;
        format!("{VOLUME_MAGIC} shape={d},{h},{w} spacing={sz},{sy},{sx} dtype={}\n", self.dtype.tag())
    }
}

fn parse_triple<T: std::str::FromStr>(field: &str, raw: &str) -> Result<[T; 3], PersistError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(PersistError::Header(format!("{field} needs 3 components, got `{raw}`")));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| PersistError::Header(format!("bad {field} component `{p}`")))?,
        );
    }
    out.try_into()
        .map_err(|_| PersistError::Header(format!("bad {field}")))
}

fn field_value<'a>(field: &str, raw: &'a str) -> Result<&'a str, PersistError> {
    raw.strip_prefix(field)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| PersistError::Header(format!("expected `{field}=` field")))
}

/// Split a container into its parsed header and raw body.
pub fn decode_header(bytes: &[u8]) -> Result<(VolumeHeader, &[u8]), PersistError> {
    if !bytes.starts_with(VOLUME_MAGIC.as_bytes()) {
        return Err(PersistError::BadMagic);
    }
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| PersistError::Header("header line is unterminated or too long".into()))?;
    let line = std::str::from_utf8(&bytes[..newline]).map_err(|_| PersistError::Header("header is not UTF-8".into()))?;
    let fields: Vec<&str> = line.split(' ').collect();
    let [magic, shape, spacing, dtype] = fields.as_slice() else {
        return Err(PersistError::Header(format!("expected 4 header fields, got {}", fields.len())));
    };
    if *magic != VOLUME_MAGIC {
        return Err(PersistError::BadMagic);
    }
    let shape_raw = field_value("shape", shape)?;
    let spacing_raw = field_value("spacing", spacing)?;
    let dtype_raw = field_value("dtype", dtype)?;
    let shape: [usize; 3] = parse_triple("shape", shape_raw)?;
    let spacing_mm: [f32; 3] = parse_triple("spacing", spacing_raw)?;
    let dtype = Dtype::parse(dtype_raw)?;
    Ok((
        VolumeHeader {
            shape,
            spacing_mm,
            dtype,
        },
        &bytes[newline + 1..],
    ))
}

fn check_body(header: &VolumeHeader, body: &[u8], want: Dtype) -> Result<usize, PersistError> {
    if header.dtype != want {
        return Err(PersistError::DtypeMismatch {
            expected: want.tag(),
            found: header.dtype.tag(),
        });
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .and_then(|n| n.checked_mul(want.width()))
        .ok_or_else(|| PersistError::Header(format!("shape {:?} overflows", header.shape)))?;
    if body.len() < count {
        return Err(PersistError::Truncated {
            expected: count,
            actual: body.len(),
        });
    }
    if body.len() > count {
        return Err(PersistError::TrailingBytes {
            extra: body.len() - count,
        });
    }
    Ok(count / want.width())
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let header = VolumeHeader {
        shape: v.shape(),
        spacing_mm: v.spacing_mm(),
        dtype: Dtype::F32Le,
    }
    .render();
    let mut out = Vec::with_capacity(header.len() + 4 * v.len());
    out.extend_from_slice(header.as_bytes());
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume, PersistError> {
    let (header, body) = decode_header(bytes)?;
    check_body(&header, body, Dtype::F32Le)?;
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume::new(header.shape, header.spacing_mm, values)?)
}

pub fn encode_mask(m: &MaskVolume) -> Vec<u8> {
    let header = VolumeHeader {
        shape: m.shape(),
        spacing_mm: m.spacing_mm(),
        dtype: Dtype::U8,
    }
    .render();
    let mut out = Vec::with_capacity(header.len() + m.values().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(m.values());
    out
}

pub fn decode_mask(bytes: &[u8], label: &str) -> Result<MaskVolume, PersistError> {
    let (header, body) = decode_header(bytes)?;
    check_body(&header, body, Dtype::U8)?;
    Ok(MaskVolume::new(header.shape, header.spacing_mm, body.to_vec(), label)?)
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<(), PersistError> {
    write_file(path.as_ref(), &encode_volume(v))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, PersistError> {
    decode_volume(&read_file(path.as_ref())?)
}

pub fn write_mask(path: impl AsRef<Path>, m: &MaskVolume) -> Result<(), PersistError> {
    write_file(path.as_ref(), &encode_mask(m))
}

/// Read a mask; its label is the file stem (`ptv.dmask` -> `ptv`).
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume, PersistError> {
    let path = path.as_ref();
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("mask")
        .to_string();
    decode_mask(&read_file(path)?, &label)
}
