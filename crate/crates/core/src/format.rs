//! The `HSHF` binary model format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HSHF"
//! 4       4     format version (u32 LE, currently 1)
//! 8       4     flags (bit 0: payload stored as IEEE half floats)
//! 12      28    levels, table_size, features_per_level, n_min, n_max, k,
//!               decoder hidden width (7 x u32 LE)
//! 40      ...   tables, level-major / entry-major / feature-minor
//!         ...   decoder w1, b1, w2, b2
//! ```
//!
//! Payload scalars are little-endian `f32` (or `f16` with the half flag).

use std::io::Write;

use half::f16;

use crate::error::{FormatError, Result};
use crate::grid::GridConfig;
use crate::model::{decoder_param_count, HashField, HashGrid, PixelDecoder};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"HSHF";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 40;
const FLAG_HALF: u32 = 1;

/// Payload precision of a model stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F16,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 => 2,
        }
    }
}

/// Stream length for a model of the given shape.
pub fn stream_len(config: &GridConfig, hidden: usize, precision: Precision) -> usize {
    HEADER_BYTES
        + (config.table_len() + decoder_param_count(config.input_dim(), hidden)) * precision.bytes()
}

pub fn serialize<T: Real>(field: &HashField<T>, precision: Precision) -> Vec<u8> {
    let cfg = field.grid.config();
    let mut out = Vec::with_capacity(stream_len(cfg, field.decoder.hidden(), precision));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if precision == Precision::F16 {
        FLAG_HALF
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in [
        cfg.levels,
        cfg.table_size,
        cfg.features_per_level,
        cfg.n_min as usize,
        cfg.n_max as usize,
        cfg.k,
        field.decoder.hidden(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let payload = field.grid.tables().iter().chain(field.decoder.params());
    match precision {
        Precision::F32 => payload.for_each(|v| out.extend_from_slice(&v.as_f32().to_le_bytes())),
        Precision::F16 => {
            payload.for_each(|v| out.extend_from_slice(&f16::from_f32(v.as_f32()).to_le_bytes()))
        }
    }
    out
}

pub fn write<T: Real, W: Write>(
    field: &HashField<T>,
    precision: Precision,
    mut w: W,
) -> Result<()> {
    w.write_all(&serialize(field, precision))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a stream produced by [`serialize`]. Never returns a partial model.
pub fn deserialize<T: Real>(bytes: &[u8]) -> std::result::Result<HashField<T>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let flags = r.u32()?;
    if flags & !FLAG_HALF != 0 {
        return Err(FormatError::InvalidHeader(format!(
            "unknown flags {flags:#x}"
        )));
    }
    let precision = if flags & FLAG_HALF != 0 {
        Precision::F16
    } else {
        Precision::F32
    };
    let mut h = [0usize; 7];
    for v in &mut h {
        *v = r.u32()? as usize;
    }
    let config = GridConfig {
        levels: h[0],
        table_size: h[1],
        features_per_level: h[2],
        n_min: h[3] as u32,
        n_max: h[4] as u32,
        k: h[5],
    };
    let hidden = h[6];
    config
        .validate()
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    if hidden == 0 || hidden > 1 << 16 {
        return Err(FormatError::InvalidHeader(format!(
            "hidden width {hidden} out of range"
        )));
    }
    let expected = stream_len(&config, hidden, precision);
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            needed: expected,
            available: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes(bytes.len() - expected));
    }

    let count = config.table_len() + decoder_param_count(config.input_dim(), hidden);
    let raw = r.take(count * precision.bytes())?;
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(precision.bytes()).enumerate() {
        let v = match precision {
            Precision::F32 => f32::from_le_bytes(chunk.try_into().unwrap()),
            Precision::F16 => f16::from_le_bytes(chunk.try_into().unwrap()).to_f32(),
        };
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        values.push(T::lit(f64::from(v)));
    }
    let params = values.split_off(config.table_len());
    let grid = HashGrid::from_tables(config, values)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    let decoder = PixelDecoder::from_params(config.input_dim(), hidden, params)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    HashField::new(grid, decoder).map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

pub fn read<T: Real>(path: impl AsRef<std::path::Path>) -> Result<HashField<T>> {
    let bytes = std::fs::read(path)?;
    Ok(deserialize(&bytes)?)
}

/// Size summary printed by `model-info`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PayloadSizes {
    pub table_values: usize,
    pub decoder_params: usize,
    pub table_bytes_f32: usize,
    pub table_bytes_f16: usize,
    pub stream_bytes_f32: usize,
    pub stream_bytes_f16: usize,
}

pub fn payload_sizes(config: &GridConfig, hidden: usize) -> PayloadSizes {
    let table_values = config.table_len();
    PayloadSizes {
        table_values,
        decoder_params: decoder_param_count(config.input_dim(), hidden),
        table_bytes_f32: table_values * 4,
        table_bytes_f16: table_values * 2,
        stream_bytes_f32: stream_len(config, hidden, Precision::F32),
        stream_bytes_f16: stream_len(config, hidden, Precision::F16),
    }
}
