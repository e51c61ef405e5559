//! Binary little-endian PLY scenes with one `vertex` element.
//!
//! Required float properties: `x y z opacity rot_0..rot_3 scale_0..scale_2
//! red green blue`, with opacity in [0, 1], scales as standard deviations
//! and colors in [0, 1]. Other scalar properties are skipped.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::FormatError;
use crate::model::{normalize_quat, Gaussian, GaussianScene};

use super::{read_bytes, write_atomic, FormatResult};

/// Properties written and required, in on-disk order.
pub const PLY_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "opacity", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "red", "green",
    "blue",
];

/// Smallest scale kept on load.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PlyScene {
    pub scene: GaussianScene,
    /// Convention-mismatch warnings, one per offending property.
    pub warnings: Vec<String>,
}

pub fn encode_ply(scene: &GaussianScene) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.len()
    );
    for p in PLY_PROPERTIES {
        out.push_str(&format!("property float {p}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(scene.len() * PLY_PROPERTIES.len() * 4);
    for g in &scene.gaussians {
        let row = [
            g.mu.x, g.mu.y, g.mu.z, g.opacity, g.quat[0], g.quat[1], g.quat[2], g.quat[3], g.scale.x, g.scale.y,
            g.scale.z, g.rgb.x, g.rgb.y, g.rgb.z,
        ];
        for v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

struct Header {
    count: usize,
    /// (name, type, byte offset within a vertex record)
    props: Vec<(String, Scalar, usize)>,
    stride: usize,
    body: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> FormatResult<Header> {
    let malformed = |reason: String| FormatError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected: 4,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != b"ply\n" {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            expected: *b"ply\n",
            found: bytes[..4].try_into().unwrap(),
        });
    }
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| FormatError::Truncated {
            path: path.to_path_buf(),
            expected: bytes.len() as u64 + 1,
            found: bytes.len() as u64,
        })?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not ASCII".into()))?;
    let mut count = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    let mut stride = 0;
    for line in text.lines().skip(1) {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", f, ..] => return Err(malformed(format!("unsupported format {f}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| malformed(format!("vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", name, "0"] => {
                in_vertex = false;
                log::debug!("ignoring empty element {name}");
            }
            ["element", name, ..] => return Err(malformed(format!("unsupported element {name}"))),
            ["property", "list", ..] => return Err(malformed("list properties are not supported".into())),
            ["property", ty, name] if in_vertex => {
                let ty = Scalar::parse(ty).ok_or_else(|| malformed(format!("unknown type {ty}")))?;
                props.push((name.to_string(), ty, stride));
                stride += ty.size();
            }
            ["property", ..] => {}
            _ => return Err(malformed(format!("unexpected header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| malformed("no vertex element".into()))?;
    for name in PLY_PROPERTIES {
        match props.iter().find(|p| p.0 == name) {
            None => return Err(malformed(format!("missing property {name}"))),
            Some((_, Scalar::F32 | Scalar::F64, _)) => {}
            Some(_) => return Err(malformed(format!("property {name} must be float or double"))),
        }
    }
    Ok(Header {
        count,
        props,
        stride,
        body: end + END.len(),
    })
}

pub fn decode_ply(path: &Path, bytes: &[u8]) -> FormatResult<PlyScene> {
    let h = parse_header(path, bytes)?;
    let expected = h.body as u64 + h.count as u64 * h.stride as u64;
    if (bytes.len() as u64) < expected {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(FormatError::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    let slots: Vec<(Scalar, usize)> = PLY_PROPERTIES
        .iter()
        .map(|name| {
            let p = h.props.iter().find(|p| p.0 == *name).expect("checked in header");
            (p.1, p.2)
        })
        .collect();

    let mut warned = [false; PLY_PROPERTIES.len()];
    let mut gaussians = Vec::with_capacity(h.count);
    for i in 0..h.count {
        let rec = &bytes[h.body + i * h.stride..h.body + (i + 1) * h.stride];
        let mut v = [0.0f64; 14];
        for (k, &(ty, off)) in slots.iter().enumerate() {
            v[k] = match ty {
                Scalar::F32 => f32::from_le_bytes(rec[off..off + 4].try_into().unwrap()) as f64,
                _ => f64::from_le_bytes(rec[off..off + 8].try_into().unwrap()),
            };
            if !v[k].is_finite() {
                return Err(FormatError::NonFinite {
                    path: path.to_path_buf(),
                    index: i * PLY_PROPERTIES.len() + k,
                });
            }
        }
        let mut flag = |k: usize, bad: bool| warned[k] |= bad;
        flag(3, !(0.0..=1.0).contains(&v[3]));
        for k in 8..11 {
            flag(k, v[k] <= 0.0);
        }
        for k in 11..14 {
            flag(k, !(0.0..=1.0).contains(&v[k]));
        }
        let quat = normalize_quat([v[4], v[5], v[6], v[7]]).ok_or_else(|| FormatError::Malformed {
            path: path.to_path_buf(),
            reason: format!("vertex {i} has a zero quaternion"),
        })?;
        gaussians.push(Gaussian {
            mu: Vector3::new(v[0], v[1], v[2]),
            quat,
            scale: Vector3::new(v[8], v[9], v[10]).map(|s| s.max(MIN_SCALE)),
            opacity: v[3].clamp(0.0, 1.0),
            rgb: Vector3::new(v[11], v[12], v[13]).map(|c| c.clamp(0.0, 1.0)),
        });
    }

    let mut warnings = Vec::new();
    for (k, &w) in warned.iter().enumerate() {
        if !w {
            continue;
        }
        let name = PLY_PROPERTIES[k];
        let hint = match k {
            3 => "outside [0, 1]; the file may store logit opacity",
            8..=10 => "not positive; the file may store log scales",
            _ => "outside [0, 1]; the file may store spherical-harmonic coefficients",
        };
        let msg = format!("{}: property {name} {hint}; values were clamped", path.display());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(PlyScene {
        scene: GaussianScene::new(gaussians),
        warnings,
    })
}

pub fn write_ply(path: &Path, scene: &GaussianScene) -> FormatResult<()> {
    write_atomic(path, &encode_ply(scene))
}

pub fn read_ply(path: &Path) -> FormatResult<PlyScene> {
    decode_ply(path, &read_bytes(path)?)
}
