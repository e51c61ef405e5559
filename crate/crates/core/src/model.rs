//! Shared domain types: Gaussians, scenes, cameras, feature maps and lifted fields.
//!
//! Everything here is plain data plus invariant checks. Geometry is kept in
//! `f64`; per-pixel and per-Gaussian features are `f32`, matching the on-disk
//! formats.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semantic granularity level; the numeric value is the conditioning scalar g.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Granularity {
    Whole = 1,
    Part = 2,
    Subpart = 3,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Whole, Granularity::Part, Granularity::Subpart];

    pub fn value(self) -> u32 {
        self as u32
    }

    /// Zero-based index into per-granularity arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Whole => "whole",
            Granularity::Part => "part",
            Granularity::Subpart => "subpart",
        }
    }
}

impl TryFrom<u32> for Granularity {
    type Error = Error;

    fn try_from(g: u32) -> Result<Self> {
        match g {
            1 => Ok(Granularity::Whole),
            2 => Ok(Granularity::Part),
            3 => Ok(Granularity::Subpart),
            other => Err(Error::InvalidGranularity(other)),
        }
    }
}

impl From<Granularity> for u32 {
    fn from(g: Granularity) -> u32 {
        g.value()
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// One anisotropic 3D Gaussian. Opacity is stored post-activation and color
/// is the DC RGB term only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mu: Vector3<f64>,
    /// Rotation as (w, x, y, z).
    pub quat: [f64; 4],
    /// Per-axis standard deviations.
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub rgb: Vector3<f64>,
}

impl Gaussian {
    /// Builds a Gaussian, renormalizing the quaternion and rejecting values
    /// that cannot be repaired.
    pub fn try_new(
        mu: Vector3<f64>,
        quat: [f64; 4],
        scale: Vector3<f64>,
        opacity: f64,
        rgb: Vector3<f64>,
    ) -> Result<Self> {
        let g = Gaussian {
            mu,
            quat: normalize_quat(quat).ok_or_else(|| Error::Config("zero quaternion".into()))?,
            scale,
            opacity,
            rgb,
        };
        if let Some(v) = g.violations().into_iter().next() {
            return Err(Error::Config(format!("invalid gaussian: {v}")));
        }
        Ok(g)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.quat;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// Σ = R·diag(scale²)·Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_of(self)
    }

    fn violations(&self) -> Vec<ViolationKind> {
        let mut out = Vec::new();
        let finite = self.mu.iter().all(|v| v.is_finite())
            && self.quat.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.rgb.iter().all(|v| v.is_finite());
        if !finite {
            out.push(ViolationKind::NonFinite);
            return out;
        }
        let qn = self.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            out.push(ViolationKind::QuaternionNorm);
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            out.push(ViolationKind::ScalePositive);
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            out.push(ViolationKind::OpacityRange);
        }
        if self.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
            out.push(ViolationKind::RgbRange);
        }
        out
    }
}

/// Returns the unit quaternion, or `None` for a (near) zero quaternion.
pub fn normalize_quat(q: [f64; 4]) -> Option<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    if (n - 1.0).abs() <= 1e-6 {
        return Some(q);
    }
    Some([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rotation();
    let s2 = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let cov = r * s2 * r.transpose();
    // Symmetrize away rounding asymmetry.
    (cov + cov.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn half_extent(&self) -> Vector3<f64> {
        (self.max - self.min) * 0.5
    }
}

/// Ordered set of Gaussians. The position in `gaussians` is the canonical
/// index every per-Gaussian array aligns to.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub bbox: Aabb,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        let bbox = bounds_of(&gaussians);
        GaussianScene { gaussians, bbox }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

fn bounds_of(gaussians: &[Gaussian]) -> Aabb {
    if gaussians.is_empty() {
        return Aabb {
            min: Vector3::zeros(),
            max: Vector3::zeros(),
        };
    }
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for g in gaussians {
        min = min.inf(&g.mu);
        max = max.sup(&g.mu);
    }
    Aabb { min, max }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    QuaternionNorm,
    ScalePositive,
    OpacityRange,
    RgbRange,
    NonFinite,
    BboxContainment,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::QuaternionNorm => "quaternion norm",
            ViolationKind::ScalePositive => "scale positive",
            ViolationKind::OpacityRange => "opacity range",
            ViolationKind::RgbRange => "rgb range",
            ViolationKind::NonFinite => "non-finite",
            ViolationKind::BboxContainment => "bbox containment",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gaussian {}: {}", self.index, self.kind)
    }
}

/// Lists every invariant violation in the scene; empty means valid.
pub fn validate_scene(scene: &GaussianScene) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        for kind in g.violations() {
            out.push(Violation { index, kind });
        }
        if g.mu.iter().all(|v| v.is_finite()) && !scene.bbox.contains(&g.mu) {
            out.push(Violation {
                index,
                kind: ViolationKind::BboxContainment,
            });
        }
    }
    out
}

/// Pinhole camera with a world-to-camera rigid transform. The camera looks
/// down +z with x to the right and y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub view_id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub znear: f64,
}

impl Camera {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Camera center in world coordinates, −Wᵀt.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    /// A camera at `eye` looking at `target`, with `up` roughly upward in the image.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        view_id: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = [
            [right.x, right.y, right.z],
            [down.x, down.y, down.z],
            [forward.x, forward.y, forward.z],
        ];
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Camera {
            view_id,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation: [t.x, t.y, t.z],
            znear: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("camera {}: {m}", self.view_id)));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("principal point outside the image");
        }
        if !(self.znear > 0.0) {
            return bad("znear must be positive");
        }
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return bad("world_to_cam is not a rotation");
        }
        Ok(())
    }
}

/// H×W×D row-major feature tensor for one view at one granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub view_id: u32,
    pub granularity: Granularity,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(view_id: u32, granularity: Granularity, height: usize, width: usize, dim: usize) -> Self {
        FeatureMap {
            view_id,
            granularity,
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let o = (y * self.width + x) * self.dim;
        &mut self.data[o..o + self.dim]
    }
}

/// Per-Gaussian lifted features for one granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticField {
    pub granularity: Granularity,
    pub dim: usize,
    /// N×D, row-major.
    pub features: Vec<f32>,
    /// N×D elementwise variance, never negative.
    pub variance: Vec<f32>,
    pub weight_mass: Vec<f32>,
    pub valid: Vec<bool>,
}

impl SemanticField {
    pub fn empty(granularity: Granularity, n: usize, dim: usize) -> Self {
        SemanticField {
            granularity,
            dim,
            features: vec![0.0; n * dim],
            variance: vec![0.0; n * dim],
            weight_mass: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance_row(&self, i: usize) -> &[f32] {
        &self.variance[i * self.dim..(i + 1) * self.dim]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}
