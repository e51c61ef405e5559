//! JSON sidecars: camera lists and feature-map manifests.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::model::{Camera, FeatureMap, Granularity};

use super::tensor::read_feature_map;
use super::{read_bytes, write_atomic, FormatResult};

/// One feature map listed in a manifest. `path` is relative to the
/// manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub view_id: u32,
    pub granularity: Granularity,
    pub path: PathBuf,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> FormatResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> FormatResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_cameras(path: &Path, cams: &[Camera]) -> FormatResult<()> {
    write_json(path, cams)
}

pub fn read_cameras(path: &Path) -> FormatResult<Vec<Camera>> {
    let cams: Vec<Camera> = read_json(path)?;
    for c in &cams {
        c.validate().map_err(|e| FormatError::Malformed {
            path: path.to_path_buf(),
            reason: format!("camera {}: {e}", c.view_id),
        })?;
    }
    let ids: BTreeSet<u32> = cams.iter().map(|c| c.view_id).collect();
    if ids.len() != cams.len() {
        return Err(FormatError::Malformed {
            path: path.to_path_buf(),
            reason: "duplicate view_id".into(),
        });
    }
    Ok(cams)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> FormatResult<()> {
    write_json(path, entries)
}

pub fn read_manifest(path: &Path) -> FormatResult<Vec<ManifestEntry>> {
    read_json(path)
}

/// Loads every map a manifest lists and checks it against the cameras:
/// the view must exist, H×W must match the camera, and all maps must share
/// one feature dimension. Listed views lacking a map at some granularity are
/// logged; lifting fails later if it needs one.
pub fn ingest_external_features(manifest: &Path, cams: &[Camera]) -> FormatResult<Vec<FeatureMap>> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut maps: Vec<FeatureMap> = Vec::with_capacity(entries.len());
    let mut dim: Option<(usize, PathBuf)> = None;
    for e in &entries {
        let path = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
        let cam = cams
            .iter()
            .find(|c| c.view_id == e.view_id)
            .ok_or_else(|| FormatError::UnmatchedView {
                path: path.clone(),
                view_id: e.view_id,
            })?;
        let m = read_feature_map(&path, e.view_id, e.granularity)?;
        if (m.height, m.width) != (cam.height as usize, cam.width as usize) {
            return Err(FormatError::DimensionMismatch {
                path,
                expected: format!("{}×{} (camera {})", cam.height, cam.width, cam.view_id),
                found: format!("{}×{}", m.height, m.width),
            });
        }
        match &dim {
            None => dim = Some((m.dim, path.clone())),
            Some((d, first)) if *d != m.dim => {
                return Err(FormatError::DimensionMismatch {
                    path,
                    expected: format!("D={d} (as in {})", first.display()),
                    found: format!("D={}", m.dim),
                });
            }
            _ => {}
        }
        if maps.iter().any(|o| o.view_id == m.view_id && o.granularity == m.granularity) {
            return Err(FormatError::Malformed {
                path,
                reason: format!("duplicate entry for view {} granularity {}", m.view_id, m.granularity),
            });
        }
        maps.push(m);
    }
    let listed: BTreeSet<u32> = maps.iter().map(|m| m.view_id).collect();
    for v in listed {
        for g in Granularity::ALL {
            if !maps.iter().any(|m| m.view_id == v && m.granularity == g) {
                log::warn!("no feature map for view {v} at granularity {g}");
            }
        }
    }
    Ok(maps)
}
