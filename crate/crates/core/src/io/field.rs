//! Semantic fields: `NRGF`, version, granularity, N, D, then features,
//! variances and weight masses as float32 and one validity byte per row.

use std::path::Path;

use crate::model::{Granularity, SemanticField};

use super::binary::{Builder, Reader};
use super::{read_bytes, write_atomic, FormatResult};

pub const FIELD_MAGIC: &[u8; 4] = b"NRGF";
pub const FIELD_VERSION: u32 = 1;

pub fn encode_field(f: &SemanticField) -> Vec<u8> {
    let mut b = Builder::default();
    b.raw(FIELD_MAGIC)
        .u32(FIELD_VERSION)
        .u32(f.granularity.value())
        .len_u32(f.len())
        .len_u32(f.dim)
        .f32s(&f.features)
        .f32s(&f.variance)
        .f32s(&f.weight_mass);
    for &v in &f.valid {
        b.u8(v as u8);
    }
    b.bytes
}

pub fn decode_field(path: &Path, bytes: &[u8]) -> FormatResult<SemanticField> {
    let mut r = Reader::new(path, bytes);
    r.magic(FIELD_MAGIC)?;
    r.version(FIELD_VERSION)?;
    let g = r.u32()?;
    let granularity = Granularity::try_from(g).map_err(|_| r.malformed(format!("granularity {g}")))?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let nd = n as u64 * dim as u64;
    r.require(nd * 8 + n as u64 * 5)?;
    let features = r.f32s(n * dim, 0)?;
    let variance = r.f32s(n * dim, n * dim)?;
    let weight_mass = r.f32s(n, 2 * n * dim)?;
    if variance.iter().chain(&weight_mass).any(|&v| v < 0.0) {
        return Err(r.malformed("negative variance or weight mass"));
    }
    let valid = (0..n)
        .map(|_| match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(r.malformed(format!("validity byte {b}"))),
        })
        .collect::<FormatResult<Vec<bool>>>()?;
    r.finish()?;
    Ok(SemanticField {
        granularity,
        dim,
        features,
        variance,
        weight_mass,
        valid,
    })
}

pub fn write_field(path: &Path, f: &SemanticField) -> FormatResult<()> {
    write_atomic(path, &encode_field(f))
}

pub fn read_field(path: &Path) -> FormatResult<SemanticField> {
    decode_field(path, &read_bytes(path)?)
}
