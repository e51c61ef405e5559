//! Dense float32 tensors: `NRGT`, version, rank, dims, row-major payload.

use std::path::Path;

use crate::error::FormatError;
use crate::model::{FeatureMap, Granularity};

use super::binary::{Builder, Reader};
use super::{read_bytes, write_atomic, FormatResult};

pub const TENSOR_MAGIC: &[u8; 4] = b"NRGT";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor dims do not match data");
        Tensor { dims, data }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut b = Builder::default();
    b.raw(TENSOR_MAGIC).u32(TENSOR_VERSION).len_u32(t.dims.len());
    for &d in &t.dims {
        b.len_u32(d);
    }
    b.f32s(&t.data);
    b.bytes
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> FormatResult<Tensor> {
    let mut r = Reader::new(path, bytes);
    r.magic(TENSOR_MAGIC)?;
    r.version(TENSOR_VERSION)?;
    let rank = r.u32()? as usize;
    r.require(rank as u64 * 4)?;
    let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<FormatResult<_>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| r.malformed("tensor size overflows"))?;
    r.require(count * 4)?;
    let data = r.f32s(count as usize, 0)?;
    r.finish()?;
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> FormatResult<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> FormatResult<Tensor> {
    decode_tensor(path, &read_bytes(path)?)
}

/// Stores a feature map as an H×W×D tensor; view and granularity live in the
/// manifest.
pub fn write_feature_map(path: &Path, m: &FeatureMap) -> FormatResult<()> {
    let t = Tensor {
        dims: vec![m.height, m.width, m.dim],
        data: m.data.clone(),
    };
    write_tensor(path, &t)
}

pub fn read_feature_map(path: &Path, view_id: u32, granularity: Granularity) -> FormatResult<FeatureMap> {
    let t = read_tensor(path)?;
    if t.dims.len() != 3 {
        return Err(FormatError::DimensionMismatch {
            path: path.to_path_buf(),
            expected: "rank 3 (H×W×D)".into(),
            found: format!("rank {}", t.dims.len()),
        });
    }
    Ok(FeatureMap {
        view_id,
        granularity,
        height: t.dims[0],
        width: t.dims[1],
        dim: t.dims[2],
        data: t.data,
    })
}
