//! Regularizer checkpoints: `NRGM`, version, network shape, normalization
//! stats, float32 parameters, then a CRC32 of everything before it.

use std::path::Path;

use crate::error::FormatError;
use crate::net::{MlpConfig, NormStats, RegularizerModel};
use crate::train::Regularizer;

use super::binary::{Builder, Reader};
use super::{read_bytes, write_atomic, FormatResult};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NRGM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(reg: &Regularizer) -> Vec<u8> {
    let models = reg.models();
    let c = models[0].config;
    let mut b = Builder::default();
    b.raw(CHECKPOINT_MAGIC)
        .u32(CHECKPOINT_VERSION)
        .len_u32(models.len())
        .len_u32(c.in_dim)
        .len_u32(c.hidden)
        .len_u32(c.blocks)
        .len_u32(c.out_dim)
        .u64(c.param_count() as u64);
    for m in &models {
        b.u64(m.seed);
        let stats: Vec<f32> = m.norm.to_pairs().iter().flat_map(|&(s, k)| [s as f32, k as f32]).collect();
        b.f32s(&stats);
        b.f32s(&m.params);
    }
    let crc = crc32fast::hash(&b.bytes);
    b.u32(crc);
    b.bytes
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> FormatResult<Regularizer> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let count = r.u32()? as usize;
    let in_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let blocks = r.u32()? as usize;
    let out_dim = r.u32()? as usize;
    let stored_params = r.u64()?;
    let config = MlpConfig {
        in_dim,
        hidden,
        blocks,
        out_dim,
    };
    if count != 1 && count != 3 {
        return Err(r.malformed(format!("model count {count}, expected 1 or 3")));
    }
    if config.validate().is_err() {
        return Err(r.malformed(format!("invalid network shape {config:?}")));
    }
    let expected_params = config.param_count() as u64;
    if stored_params != expected_params {
        return Err(FormatError::DimensionMismatch {
            path: path.to_path_buf(),
            expected: format!("{expected_params} parameters"),
            found: format!("{stored_params} parameters"),
        });
    }
    let per_model = 8 + 12 * 4 + expected_params * 4;
    r.require(count as u64 * per_model + 4)?;
    let body_end = r.position() as u64 + count as u64 * per_model;
    if (bytes.len() as u64) != body_end + 4 {
        return Err(r.malformed(format!("expected {} bytes, found {}", body_end + 4, bytes.len())));
    }
    let body_end = body_end as usize;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Crc {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut models = Vec::with_capacity(count);
    let mut index = 0;
    for _ in 0..count {
        let seed = r.u64()?;
        let stats = r.f32s(12, index)?;
        index += 12;
        let params = r.f32s(expected_params as usize, index)?;
        index += params.len();
        let mut pairs = [(0.0, 1.0); 6];
        for (k, p) in pairs.iter_mut().enumerate() {
            *p = (stats[2 * k] as f64, stats[2 * k + 1] as f64);
        }
        models.push(RegularizerModel {
            config,
            params,
            norm: NormStats::from_pairs(&pairs),
            seed,
        });
    }
    r.u32()?;
    r.finish()?;
    Ok(if count == 1 {
        Regularizer::Shared(models.pop().unwrap())
    } else {
        let arr: [RegularizerModel; 3] = models.try_into().expect("three models");
        Regularizer::Independent(Box::new(arr))
    })
}

pub fn write_checkpoint(path: &Path, reg: &Regularizer) -> FormatResult<()> {
    write_atomic(path, &encode_checkpoint(reg))
}

pub fn read_checkpoint(path: &Path) -> FormatResult<Regularizer> {
    decode_checkpoint(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Regularizer {
        let norm = NormStats {
            pos_shift: [0.5, -0.25, 0.0],
            ..NormStats::default()
        };
        Regularizer::Shared(RegularizerModel::init(MlpConfig::new(8, 2, 4), norm, 7))
    }

    #[test]
    fn round_trip_is_identity() {
        let reg = model();
        let bytes = encode_checkpoint(&reg);
        let back = decode_checkpoint(Path::new("m"), &bytes).unwrap();
        assert_eq!(back.models()[0], reg.models()[0]);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn payload_flip_is_crc_error() {
        let mut bytes = encode_checkpoint(&model());
        let k = bytes.len() - 20;
        bytes[k] ^= 0x40;
        let e = decode_checkpoint(Path::new("m"), &bytes).unwrap_err();
        assert_eq!(e.kind(), "crc");
    }
}
