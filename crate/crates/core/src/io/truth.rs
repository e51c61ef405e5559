//! Ground truth: `NRGG`, version, N, D, class count per granularity, N×3
//! u32 labels, then each granularity's K×D float32 prototypes.

use std::path::Path;

use crate::model::Granularity;
use crate::synth::GroundTruth;

use super::binary::{Builder, Reader};
use super::{read_bytes, write_atomic, FormatResult};

pub const TRUTH_MAGIC: &[u8; 4] = b"NRGG";
pub const TRUTH_VERSION: u32 = 1;

pub fn encode_truth(t: &GroundTruth) -> Vec<u8> {
    let mut b = Builder::default();
    b.raw(TRUTH_MAGIC).u32(TRUTH_VERSION).len_u32(t.labels.len()).len_u32(t.dim);
    for g in Granularity::ALL {
        b.len_u32(t.class_count(g));
    }
    for l in &t.labels {
        for &v in l {
            b.u32(v);
        }
    }
    for p in &t.prototypes {
        b.f32s(p);
    }
    b.bytes
}

pub fn decode_truth(path: &Path, bytes: &[u8]) -> FormatResult<GroundTruth> {
    let mut r = Reader::new(path, bytes);
    r.magic(TRUTH_MAGIC)?;
    r.version(TRUTH_VERSION)?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let k = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    r.require(n as u64 * 12)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = [r.u32()?, r.u32()?, r.u32()?];
        if l.iter().zip(&k).any(|(&v, &kg)| v as usize >= kg) {
            return Err(r.malformed(format!("label {l:?} out of range {k:?}")));
        }
        labels.push(l);
    }
    r.require(k.iter().map(|&kg| kg as u64 * dim as u64 * 4).sum())?;
    let mut index = 0;
    let mut protos = Vec::with_capacity(3);
    for &kg in &k {
        let p = r.f32s(kg * dim, index)?;
        index += p.len();
        protos.push(p);
    }
    r.finish()?;
    let truth = GroundTruth {
        labels,
        prototypes: protos.try_into().expect("three granularities"),
        dim,
    };
    if !truth.tree_consistent() {
        return Err(r.malformed("labels do not form a whole/part/subpart tree"));
    }
    Ok(truth)
}

pub fn write_truth(path: &Path, t: &GroundTruth) -> FormatResult<()> {
    write_atomic(path, &encode_truth(t))
}

pub fn read_truth(path: &Path) -> FormatResult<GroundTruth> {
    decode_truth(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_label_range() {
        let t = GroundTruth {
            labels: vec![[0, 1, 3], [1, 2, 4]],
            prototypes: [vec![1.0, 0.0, 0.0, 1.0], vec![0.5; 8], vec![0.25; 16]],
            dim: 2,
        };
        let bytes = encode_truth(&t);
        assert_eq!(decode_truth(Path::new("g"), &bytes).unwrap(), t);
        let bad = GroundTruth {
            labels: vec![[0, 1, 9]],
            ..t
        };
        let e = decode_truth(Path::new("g"), &encode_truth(&bad)).unwrap_err();
        assert_eq!(e.kind(), "malformed");
    }
}
