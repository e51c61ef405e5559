//! Independent reference implementations and random scene builders shared by
//! the integration and acceptance tests. Nothing here calls the projection,
//! compositing or lifting code under test.

#![allow(dead_code)]

use nalgebra::Vector3;
use nrgs_core::{Camera, FeatureMap, Gaussian, GaussianScene, Granularity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAU_W: f64 = 1e-4;

type M3 = [[f64; 3]; 3];

fn matmul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn transpose(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Rotation matrix of a (w, x, y, z) quaternion, normalized first.
fn quat_matrix(q: [f64; 4]) -> M3 {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// A Gaussian as the reference sees it in one view.
#[derive(Debug, Clone, Copy)]
pub struct RefSplat {
    pub index: usize,
    pub depth: f64,
    pub u: [f64; 2],
    /// Inverse of the dilated 2D covariance.
    pub conic: [f64; 3],
    pub opacity: f64,
}

/// Projects every Gaussian in front of the camera whose center lands inside
/// the image, with the EWA Jacobian and 0.3 px² dilation.
pub fn ref_project(scene: &GaussianScene, cam: &Camera) -> Vec<RefSplat> {
    let w = cam.rotation;
    let t = cam.translation;
    let mut out = Vec::new();
    for (index, g) in scene.gaussians.iter().enumerate() {
        let mu = [g.mu.x, g.mu.y, g.mu.z];
        let p: Vec<f64> = (0..3).map(|i| (0..3).map(|k| w[i][k] * mu[k]).sum::<f64>() + t[i]).collect();
        let (x, y, z) = (p[0], p[1], p[2]);
        if z < cam.znear {
            continue;
        }
        let u = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
        if u[0] < 0.0 || u[0] >= cam.width as f64 || u[1] < 0.0 || u[1] >= cam.height as f64 {
            continue;
        }
        let r = quat_matrix(g.quat);
        let s = [g.scale.x, g.scale.y, g.scale.z];
        let mut rs = r;
        for row in rs.iter_mut() {
            for k in 0..3 {
                row[k] *= s[k] * s[k];
            }
        }
        let sigma = matmul(&rs, &transpose(&r));
        let cam_sigma = matmul(&matmul(&w, &sigma), &transpose(&w));
        let j = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
        let mut c = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..3 {
                    for l in 0..3 {
                        c[a][b] += j[a][k] * cam_sigma[k][l] * j[b][l];
                    }
                }
            }
        }
        let (a, b, d) = (c[0][0] + 0.3, 0.5 * (c[0][1] + c[1][0]), c[1][1] + 0.3);
        let det = a * d - b * b;
        out.push(RefSplat {
            index,
            depth: z,
            u,
            conic: [d / det, -b / det, a / det],
            opacity: g.opacity,
        });
    }
    out
}

impl RefSplat {
    fn mahalanobis2(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (px - self.u[0], py - self.u[1]);
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Compositing weights at a pixel over every overlapping Gaussian, front to
/// back, with no early termination.
pub fn ref_pixel_weights(splats: &[RefSplat], px: usize, py: usize) -> Vec<(usize, f64)> {
    let (x, y) = (px as f64, py as f64);
    let mut hits: Vec<&RefSplat> = splats.iter().filter(|s| s.mahalanobis2(x, y) <= 9.0).collect();
    hits.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let mut t = 1.0;
    let mut out = Vec::new();
    for s in hits {
        let alpha = (s.opacity * (-0.5 * s.mahalanobis2(x, y)).exp()).min(0.99);
        out.push((s.index, alpha * t));
        t *= 1.0 - alpha;
    }
    out
}

/// Each projected Gaussian's weight at its own (rounded, clamped) center
/// pixel: `(index, weight, pixel)`.
pub fn ref_marginal(scene: &GaussianScene, cam: &Camera) -> Vec<(usize, f64, (usize, usize))> {
    let splats = ref_project(scene, cam);
    let (w, h) = (cam.width as f64, cam.height as f64);
    splats
        .iter()
        .map(|s| {
            let px = s.u[0].round().clamp(0.0, w - 1.0) as usize;
            let py = s.u[1].round().clamp(0.0, h - 1.0) as usize;
            let weight = ref_pixel_weights(&splats, px, py)
                .into_iter()
                .find(|(i, _)| *i == s.index)
                .map_or(0.0, |(_, w)| w);
            (s.index, weight, (px, py))
        })
        .collect()
}

/// Weighted mean and variance per Gaussian by a double loop over Gaussians and
/// views. Returns `None` rows for Gaussians with total weight below 1e-6.
pub fn ref_lift(scene: &GaussianScene, cams: &[Camera], maps: &[FeatureMap]) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
    let per_view: Vec<Vec<(usize, f64, (usize, usize))>> = cams.iter().map(|c| ref_marginal(scene, c)).collect();
    let dim = maps[0].dim;
    (0..scene.len())
        .map(|i| {
            let (mut sw, mut swf, mut swf2) = (0.0, vec![0.0; dim], vec![0.0; dim]);
            for (cam, recs) in cams.iter().zip(&per_view) {
                let map = maps.iter().find(|m| m.view_id == cam.view_id).unwrap();
                for &(j, w, (px, py)) in recs {
                    if j != i || w < TAU_W {
                        continue;
                    }
                    sw += w;
                    for d in 0..dim {
                        let f = map.data[(py * map.width + px) * dim + d] as f64;
                        swf[d] += w * f;
                        swf2[d] += w * f * f;
                    }
                }
            }
            if sw < 1e-6 {
                return None;
            }
            let mean: Vec<f64> = swf.iter().map(|v| v / sw).collect();
            let var: Vec<f64> = swf2.iter().zip(&mean).map(|(v, m)| (v / sw - m * m).max(0.0)).collect();
            Some((mean, var))
        })
        .collect()
}

/// Up to `max_gaussians` random Gaussians near the origin and up to
/// `max_views` cameras looking at it.
pub fn random_scene(seed: u64, max_gaussians: usize, max_views: usize, size: u32) -> (GaussianScene, Vec<Camera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_gaussians);
    let gaussians = (0..n)
        .map(|_| {
            let mut q = [0.0; 4];
            for v in &mut q {
                *v = rng.random_range(-1.0..1.0);
            }
            let qn = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(1e-3);
            Gaussian::try_new(
                Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
                q.map(|v| v / qn),
                Vector3::new(rng.random_range(0.03..0.25), rng.random_range(0.03..0.25), rng.random_range(0.03..0.25)),
                rng.random_range(0.2..1.0),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap()
        })
        .collect();
    let views = rng.random_range(1..=max_views);
    let cams = (0..views)
        .map(|v| {
            let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let el: f64 = rng.random_range(-1.0..1.0);
            let eye = Vector3::new(az.cos() * el.cos(), el.sin(), az.sin() * el.cos()) * 2.5;
            let f = size as f64 * 1.2;
            Camera::look_at(v as u32, eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0), f, f, size, size)
        })
        .collect();
    (GaussianScene::new(gaussians), cams)
}

/// Random feature maps for every camera.
pub fn random_maps(seed: u64, cams: &[Camera], dim: usize, g: Granularity) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    cams.iter()
        .map(|c| {
            let mut m = FeatureMap::zeros(c.view_id, g, c.height as usize, c.width as usize, dim);
            for v in &mut m.data {
                *v = rng.random_range(-1.0..1.0);
            }
            m
        })
        .collect()
}
