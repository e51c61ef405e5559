//! EWA projection of Gaussians and depth-ordered alpha compositing.
//!
//! A pixel `(x, y)` sits at integer coordinates. A Gaussian overlaps a pixel
//! when the pixel lies inside its 3σ projected footprint. Compositing walks
//! the overlap set front to back, `w = α·T`, `T ← T·(1 − α)`, and stops once
//! `T` drops below [`TRANSMITTANCE_CUTOFF`].

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::model::{Camera, FeatureMap, GaussianScene, Granularity, SemanticField};

/// Low-pass dilation added to every projected covariance, in px².
pub const LOW_PASS: f64 = 0.3;
/// Upper clamp on per-pixel alpha so transmittance never reaches zero.
pub const ALPHA_MAX: f64 = 0.99;
/// Front-to-back traversal stops once transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Marginal weights below this do not count as an observation (τ_w).
pub const VISIBILITY_THRESHOLD: f64 = 1e-4;
/// Squared Mahalanobis radius of the footprint (3σ).
pub const FOOTPRINT_MAHALANOBIS2: f64 = 9.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    /// Canonical Gaussian index in the scene.
    pub index: usize,
    /// Projected center in pixels.
    pub u: Vector2<f64>,
    pub depth: f64,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub opacity: f64,
}

impl ProjectedGaussian {
    pub fn mahalanobis2(&self, p: &Vector2<f64>) -> f64 {
        let d = p - self.u;
        (d.transpose() * self.conic * d)[0]
    }

    pub fn overlaps(&self, p: &Vector2<f64>) -> bool {
        self.mahalanobis2(p) <= FOOTPRINT_MAHALANOBIS2
    }

    /// α(p) = opacity·exp(−½ dᵀ Σ₂⁻¹ d), clamped to `[0, ALPHA_MAX]`.
    pub fn alpha_at(&self, p: &Vector2<f64>) -> f64 {
        let a = self.opacity * (-0.5 * self.mahalanobis2(p)).exp();
        a.clamp(0.0, ALPHA_MAX)
    }

    /// Nearest pixel to the projected center, clamped to the image.
    pub fn center_pixel(&self, width: usize, height: usize) -> (usize, usize) {
        center_pixel(&self.u, width, height)
    }

    /// Inclusive pixel bounds of the footprint, clipped to the image.
    fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let rx = FOOTPRINT_MAHALANOBIS2.sqrt() * self.cov2d[(0, 0)].sqrt();
        let ry = FOOTPRINT_MAHALANOBIS2.sqrt() * self.cov2d[(1, 1)].sqrt();
        let x0 = (self.u.x - rx).ceil().max(0.0);
        let y0 = (self.u.y - ry).ceil().max(0.0);
        let x1 = (self.u.x + rx).floor().min(width as f64 - 1.0);
        let y1 = (self.u.y + ry).floor().min(height as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            return None;
        }
        Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

pub fn center_pixel(u: &Vector2<f64>, width: usize, height: usize) -> (usize, usize) {
    let x = u.x.round().clamp(0.0, width as f64 - 1.0) as usize;
    let y = u.y.round().clamp(0.0, height as f64 - 1.0) as usize;
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRecord {
    pub gaussian_index: usize,
    pub view_id: u32,
    pub weight: f64,
}

/// Projects every Gaussian in front of the camera whose center lands inside
/// the image. The result is sorted by depth, ties by Gaussian index.
pub fn project(scene: &GaussianScene, cam: &Camera) -> Vec<ProjectedGaussian> {
    let w = cam.rotation_matrix();
    let t = cam.translation_vector();
    let (width, height) = (cam.width as f64, cam.height as f64);
    let mut out: Vec<ProjectedGaussian> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let pc: Vector3<f64> = w * g.mu + t;
            let z = pc.z;
            if !(z >= cam.znear) {
                return None;
            }
            let u = Vector2::new(cam.fx * pc.x / z + cam.cx, cam.fy * pc.y / z + cam.cy);
            if !(u.x >= 0.0 && u.x < width && u.y >= 0.0 && u.y < height) {
                return None;
            }
            let j = Matrix2x3::new(
                cam.fx / z,
                0.0,
                -cam.fx * pc.x / (z * z),
                0.0,
                cam.fy / z,
                -cam.fy * pc.y / (z * z),
            );
            let cov_cam = w * g.covariance() * w.transpose();
            let mut cov2d = j * cov_cam * j.transpose();
            cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
            cov2d[(1, 0)] = cov2d[(0, 1)];
            cov2d += Matrix2::identity() * LOW_PASS;
            let conic = cov2d.try_inverse()?;
            Some(ProjectedGaussian {
                index,
                u,
                depth: z,
                cov2d,
                conic,
                opacity: g.opacity,
            })
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Front-to-back compositing of an ordered alpha sequence. Returns one weight
/// per consumed alpha; traversal ends early once transmittance is below the
/// cutoff, so the output may be shorter than the input.
pub fn composite(alphas: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut t = 1.0;
    let mut out = Vec::new();
    for a in alphas {
        if t < TRANSMITTANCE_CUTOFF {
            break;
        }
        out.push(a * t);
        t *= 1.0 - a;
    }
    out
}

/// Compositing weights `(gaussian index, w)` at `pixel` for a depth-sorted list.
pub fn weights_at_pixel(projected: &[ProjectedGaussian], pixel: (usize, usize)) -> Vec<(usize, f64)> {
    let p = Vector2::new(pixel.0 as f64, pixel.1 as f64);
    let overlapping: Vec<&ProjectedGaussian> = projected.iter().filter(|pg| pg.overlaps(&p)).collect();
    let weights = composite(overlapping.iter().map(|pg| pg.alpha_at(&p)));
    overlapping.iter().zip(weights).map(|(pg, w)| (pg.index, w)).collect()
}

/// Projected Gaussians of one view binned into per-pixel, depth-ordered
/// overlap lists.
#[derive(Debug, Clone)]
pub struct Splats {
    pub projected: Vec<ProjectedGaussian>,
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    /// Positions into `projected`, grouped per pixel in depth order.
    entries: Vec<u32>,
}

impl Splats {
    pub fn build(scene: &GaussianScene, cam: &Camera) -> Self {
        let projected = project(scene, cam);
        let (width, height) = (cam.width as usize, cam.height as usize);
        let npix = width * height;
        let mut counts = vec![0usize; npix + 1];
        let visit = |pg: &ProjectedGaussian, f: &mut dyn FnMut(usize)| {
            if let Some((x0, y0, x1, y1)) = pg.pixel_bounds(width, height) {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if pg.overlaps(&Vector2::new(x as f64, y as f64)) {
                            f(y * width + x);
                        }
                    }
                }
            }
        };
        for pg in &projected {
            visit(pg, &mut |pix| counts[pix + 1] += 1);
        }
        for k in 0..npix {
            counts[k + 1] += counts[k];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut entries = vec![0u32; offsets[npix]];
        for (k, pg) in projected.iter().enumerate() {
            visit(pg, &mut |pix| {
                entries[cursor[pix]] = k as u32;
                cursor[pix] += 1;
            });
        }
        Splats {
            projected,
            width,
            height,
            offsets,
            entries,
        }
    }

    /// Depth-ordered overlap set at a pixel, as positions into `projected`.
    pub fn overlap(&self, x: usize, y: usize) -> &[u32] {
        let pix = y * self.width + x;
        &self.entries[self.offsets[pix]..self.offsets[pix + 1]]
    }

    /// Calls `f(gaussian_index, weight)` for each composited Gaussian at the
    /// pixel, in depth order. Returns the remaining transmittance.
    pub fn composite_pixel(&self, x: usize, y: usize, mut f: impl FnMut(usize, f64)) -> f64 {
        let p = Vector2::new(x as f64, y as f64);
        let mut t = 1.0;
        for &k in self.overlap(x, y) {
            if t < TRANSMITTANCE_CUTOFF {
                break;
            }
            let pg = &self.projected[k as usize];
            let a = pg.alpha_at(&p);
            f(pg.index, a * t);
            t *= 1.0 - a;
        }
        t
    }

    pub fn weights_at(&self, x: usize, y: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.composite_pixel(x, y, |i, w| out.push((i, w)));
        out
    }

    /// Marginal weight of every projected Gaussian at its own center pixel,
    /// unfiltered, in depth order: `(gaussian index, center pixel, weight)`.
    pub fn center_weights(&self) -> Vec<(usize, (usize, usize), f64)> {
        self.projected
            .iter()
            .map(|pg| {
                let (x, y) = pg.center_pixel(self.width, self.height);
                let mut w = 0.0;
                self.composite_pixel(x, y, |i, wi| {
                    if i == pg.index {
                        w = wi;
                    }
                });
                (pg.index, (x, y), w)
            })
            .collect()
    }
}

/// Per-Gaussian marginal rendering weights for one view, sorted by Gaussian
/// index. Records below [`VISIBILITY_THRESHOLD`] are dropped.
pub fn marginal_weights(scene: &GaussianScene, cam: &Camera) -> Vec<WeightRecord> {
    marginal_weights_from(&Splats::build(scene, cam), cam.view_id)
}

pub fn marginal_weights_from(splats: &Splats, view_id: u32) -> Vec<WeightRecord> {
    let mut out: Vec<WeightRecord> = splats
        .center_weights()
        .into_iter()
        .filter(|&(_, _, w)| w >= VISIBILITY_THRESHOLD)
        .map(|(gaussian_index, _, weight)| WeightRecord {
            gaussian_index,
            view_id,
            weight,
        })
        .collect();
    out.sort_by_key(|r| r.gaussian_index);
    out
}

/// Alpha-blends per-Gaussian features: pixel = Σ wᵢ·fᵢ over the overlap set.
/// Invalid rows still occlude but contribute no feature.
pub fn render_feature_map(scene: &GaussianScene, cam: &Camera, field: &SemanticField) -> FeatureMap {
    render_feature_map_from(&Splats::build(scene, cam), cam.view_id, field)
}

pub fn render_feature_map_from(splats: &Splats, view_id: u32, field: &SemanticField) -> FeatureMap {
    let dim = field.dim;
    render_with(splats, view_id, field.granularity, dim, |i, w, px| {
        if field.valid[i] {
            for (o, &f) in px.iter_mut().zip(field.feature(i)) {
                *o += w * f as f64;
            }
        }
    })
}

/// Generic per-pixel blending into an H×W×`dim` map. `blend(i, w, acc)` adds
/// the contribution of Gaussian `i` with weight `w` into the pixel accumulator.
/// Rows are processed in parallel; each pixel is independent.
pub fn render_with(
    splats: &Splats,
    view_id: u32,
    granularity: Granularity,
    dim: usize,
    blend: impl Fn(usize, f64, &mut [f64]) + Sync,
) -> FeatureMap {
    let (width, height) = (splats.width, splats.height);
    let mut map = FeatureMap::zeros(view_id, granularity, height, width, dim);
    if dim == 0 {
        return map;
    }
    map.data
        .par_chunks_mut(width * dim)
        .enumerate()
        .for_each(|(y, row)| {
            let mut acc = vec![0.0f64; dim];
            for x in 0..width {
                acc.iter_mut().for_each(|v| *v = 0.0);
                splats.composite_pixel(x, y, |i, w| blend(i, w, &mut acc));
                for (o, &v) in row[x * dim..(x + 1) * dim].iter_mut().zip(&acc) {
                    *o = v as f32;
                }
            }
        });
    map
}
