//! Synthetic labeled scenes with controllable multi-view inconsistency.
//!
//! A scene is `n_classes` ellipsoidal blobs whose surfaces carry the
//! Gaussians. Each blob is cut in two by a plane (parts) and each part in two
//! again (subparts), which gives a strict whole → part → subpart tree.
//! Cameras sit on a sphere around the origin and look at it.
//!
//! Ground-truth feature maps assign each covered pixel the coverage-normalized
//! blend of the prototypes of the Gaussians composited there. Corruption acts
//! per view and per label region: with probability ρ a region's prototype is
//! swapped, blended with another class, or dropped in that view only.

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifter::observations_from;
use crate::model::{Camera, FeatureMap, Gaussian, GaussianScene, Granularity};
use crate::raster::Splats;

/// Pixels whose accumulated weight is below this are background.
pub const COVERAGE_FLOOR: f64 = 0.05;
/// Maximum pairwise cosine similarity between prototypes of one granularity.
pub const PROTOTYPE_MAX_COSINE: f64 = 0.8;
/// Visibility rejection rounds before giving up.
pub const MAX_VISIBILITY_ATTEMPTS: usize = 100;
/// Every Gaussian must be observed in at least this many views.
pub const MIN_VIEWS: usize = 2;

const PARTS_PER_CLASS: usize = 2;
const SUBPARTS_PER_PART: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    SwapClass,
    Blend,
    Dropout,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap_class" => Ok(NoiseMode::SwapClass),
            "blend" => Ok(NoiseMode::Blend),
            "dropout" => Ok(NoiseMode::Dropout),
            _ => Err(Error::Config(format!("unknown noise mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_gaussians: usize,
    /// Whole-object classes K; parts and subparts double it at each level.
    pub n_classes: usize,
    pub n_views: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub feature_dim: usize,
    pub noise_rate: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    pub camera_radius: f64,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_gaussians: 5000,
            n_classes: 8,
            n_views: 16,
            image_width: 96,
            image_height: 96,
            feature_dim: 64,
            noise_rate: 0.3,
            noise_mode: NoiseMode::SwapClass,
            seed: 0,
            camera_radius: 4.0,
            fov_deg: 44.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]");
        }
        if self.n_views < MIN_VIEWS {
            return bad("need at least two views");
        }
        if self.feature_dim == 0 || self.image_width == 0 || self.image_height == 0 {
            return bad("feature_dim and image size must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.camera_radius > 0.0) {
            return bad("invalid camera setup");
        }
        Ok(())
    }

    /// Number of labels at each granularity.
    pub fn class_counts(&self) -> [usize; 3] {
        let k = self.n_classes;
        [k, k * PARTS_PER_CLASS, k * PARTS_PER_CLASS * SUBPARTS_PER_PART]
    }
}

/// Per-Gaussian labels at every granularity plus the class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `labels[i][g.index()]`.
    pub labels: Vec<[u32; 3]>,
    /// Per granularity, K_g×D unit-norm rows.
    pub prototypes: [Vec<f32>; 3],
    pub dim: usize,
}

impl GroundTruth {
    pub fn class_count(&self, g: Granularity) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.prototypes[g.index()].len() / self.dim
        }
    }

    pub fn prototype(&self, g: Granularity, label: u32) -> &[f32] {
        let d = self.dim;
        &self.prototypes[g.index()][label as usize * d..(label as usize + 1) * d]
    }

    pub fn labels_at(&self, g: Granularity) -> Vec<u32> {
        self.labels.iter().map(|l| l[g.index()]).collect()
    }

    /// Parent label of a part/subpart label.
    pub fn parent(g: Granularity, label: u32) -> Option<u32> {
        match g {
            Granularity::Whole => None,
            Granularity::Part => Some(label / PARTS_PER_CLASS as u32),
            Granularity::Subpart => Some(label / SUBPARTS_PER_PART as u32),
        }
    }

    /// Every subpart label maps into its part, every part into its whole.
    pub fn tree_consistent(&self) -> bool {
        self.labels.iter().all(|l| {
            Self::parent(Granularity::Subpart, l[2]) == Some(l[1]) && Self::parent(Granularity::Part, l[1]) == Some(l[0])
        })
    }
}

#[derive(Debug, Clone)]
struct Blob {
    center: Vector3<f64>,
    radii: Vector3<f64>,
    orientation: Rotation3<f64>,
    part_normal: Vector3<f64>,
    subpart_normal: Vector3<f64>,
    color: Vector3<f64>,
    part_tint: Vector3<f64>,
    subpart_tint: Vector3<f64>,
}

impl Blob {
    fn labels(&self, class: usize, p: &Vector3<f64>) -> [u32; 3] {
        let d = p - self.center;
        let part = class * PARTS_PER_CLASS + usize::from(d.dot(&self.part_normal) >= 0.0);
        let sub = part * SUBPARTS_PER_PART + usize::from(d.dot(&self.subpart_normal) >= 0.0);
        [class as u32, part as u32, sub as u32]
    }

    fn sample_gaussian(&self, labels: impl Fn(&Vector3<f64>) -> [u32; 3], rng: &mut ChaCha8Rng) -> (Gaussian, [u32; 3]) {
        let dir = random_unit(rng);
        let jitter = 1.0 + 0.03 * (rng.random::<f64>() * 2.0 - 1.0);
        let local = self.radii.component_mul(&dir) * jitter;
        let mu = self.center + self.orientation * local;
        // Outward normal of the ellipsoid at `local`.
        let n_local = local.component_div(&self.radii.component_mul(&self.radii)).normalize();
        let normal = self.orientation * n_local;
        let spin = UnitQuaternion::from_axis_angle(&Unit::new_normalize(normal), rng.random::<f64>() * std::f64::consts::TAU);
        let align = UnitQuaternion::rotation_between(&Vector3::z(), &normal).unwrap_or_else(UnitQuaternion::identity);
        let q = spin * align;
        let tangent = (0.012f64.ln() + rng.random::<f64>() * (0.03f64.ln() - 0.012f64.ln())).exp();
        let scale = Vector3::new(tangent, tangent * (0.7 + 0.3 * rng.random::<f64>()), tangent * 0.3);
        let opacity = 0.55 + 0.43 * rng.random::<f64>();
        let lab = labels(&mu);
        let side = |v: u32| if v % 2 == 0 { -1.0 } else { 1.0 };
        let mut rgb = self.color + self.part_tint * side(lab[1]) + self.subpart_tint * side(lab[2]);
        for k in 0..3 {
            let z: f64 = StandardNormal.sample(rng);
            rgb[k] = (rgb[k] + 0.03 * z).clamp(0.0, 1.0);
        }
        let qv = q.quaternion().coords; // (x, y, z, w)
        let g = Gaussian {
            mu: mu.map(quantize),
            quat: normalize_f32([qv.w, qv.x, qv.y, qv.z]),
            scale: scale.map(quantize),
            opacity: quantize(opacity),
            rgb: rgb.map(quantize),
        };
        (g, lab)
    }
}

/// Round through `f32` so in-memory scenes equal their on-disk form.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn normalize_f32(q: [f64; 4]) -> [f64; 4] {
    let q = q.map(quantize);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Quantized components are within f32 rounding of unit norm, well inside 1e-6.
    debug_assert!((n - 1.0).abs() < 1e-6);
    q
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = Unit::new_normalize(random_unit(rng));
    Rotation3::from_axis_angle(&axis, rng.random::<f64>() * std::f64::consts::TAU)
}

fn make_blobs(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let k = config.n_classes;
    let radius = (0.22 * (8.0 / k as f64).cbrt()).min(0.3);
    let extent = 0.6;
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(k);
    let mut min_gap = 2.0 * radius * 1.3;
    while centers.len() < k {
        let mut placed = false;
        for _ in 0..2000 {
            let c = Vector3::new(
                (rng.random::<f64>() * 2.0 - 1.0) * extent,
                (rng.random::<f64>() * 2.0 - 1.0) * extent,
                (rng.random::<f64>() * 2.0 - 1.0) * extent,
            );
            if centers.iter().all(|o| (o - c).norm() >= min_gap) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            min_gap *= 0.9;
        }
    }
    centers
        .into_iter()
        .map(|center| {
            let radii = Vector3::new(
                radius * (0.8 + 0.4 * rng.random::<f64>()),
                radius * (0.8 + 0.4 * rng.random::<f64>()),
                radius * (0.8 + 0.4 * rng.random::<f64>()),
            );
            let part_normal = random_unit(rng);
            let mut sub = random_unit(rng);
            sub = (sub - part_normal * sub.dot(&part_normal)).normalize();
            let color = Vector3::new(
                0.2 + 0.6 * rng.random::<f64>(),
                0.2 + 0.6 * rng.random::<f64>(),
                0.2 + 0.6 * rng.random::<f64>(),
            );
            Blob {
                center,
                radii,
                orientation: random_rotation(rng),
                part_normal,
                subpart_normal: sub,
                color,
                part_tint: random_unit(rng) * 0.08,
                subpart_tint: random_unit(rng) * 0.04,
            }
        })
        .collect()
}

/// Random unit prototypes, resampled until every pair has cosine below the cap.
fn make_prototypes(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while rows.len() < count {
        attempts += 1;
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        let ok = rows
            .iter()
            .all(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < PROTOTYPE_MAX_COSINE);
        if ok || attempts > 100_000 {
            rows.push(v);
        }
    }
    rows.into_iter().flatten().map(|v| v as f32).collect()
}

/// Cameras on a sphere of radius `camera_radius`, azimuth evenly spaced and
/// elevation cycling through +30°, 0°, −30°, 0°.
pub fn ring_cameras(config: &SynthConfig) -> Vec<Camera> {
    let n = config.n_views;
    let fx = config.image_width as f64 / 2.0 / (config.fov_deg.to_radians() / 2.0).tan();
    (0..n)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / n as f64;
            let el = (30.0f64).to_radians() * (std::f64::consts::FRAC_PI_2 * k as f64).cos().round();
            let eye = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * config.camera_radius;
            Camera::look_at(
                k as u32,
                eye,
                Vector3::zeros(),
                Vector3::z(),
                fx,
                fx,
                config.image_width,
                config.image_height,
            )
        })
        .collect()
}

/// Builds the scene, its labels and prototypes, and the cameras.
pub fn generate_scene(config: &SynthConfig) -> Result<(GaussianScene, GroundTruth, Vec<Camera>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let blobs = make_blobs(config, &mut rng);
    let counts = config.class_counts();
    let prototypes = [
        make_prototypes(counts[0], config.feature_dim, &mut rng),
        make_prototypes(counts[1], config.feature_dim, &mut rng),
        make_prototypes(counts[2], config.feature_dim, &mut rng),
    ];
    let cams = ring_cameras(config);

    let n = config.n_gaussians;
    let class_of = |i: usize| i * config.n_classes / n.max(1);
    let mut gaussians = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = class_of(i);
        let (g, l) = blobs[c].sample_gaussian(|p| blobs[c].labels(c, p), &mut rng);
        gaussians.push(g);
        labels.push(l);
    }

    let mut attempt = 0;
    loop {
        let scene = GaussianScene::new(gaussians.clone());
        let counts = visibility_counts(&scene, &cams);
        let failing: Vec<usize> = (0..n).filter(|&i| counts[i] < MIN_VIEWS).collect();
        if failing.is_empty() {
            let truth = GroundTruth {
                labels,
                prototypes,
                dim: config.feature_dim,
            };
            return Ok((scene, truth, cams));
        }
        attempt += 1;
        if attempt >= MAX_VISIBILITY_ATTEMPTS {
            return Err(Error::VisibilityUnreachable {
                attempts: attempt,
                failing: failing.len(),
            });
        }
        for i in failing {
            let c = class_of(i);
            let (g, l) = blobs[c].sample_gaussian(|p| blobs[c].labels(c, p), &mut rng);
            gaussians[i] = g;
            labels[i] = l;
        }
    }
}

/// Number of views in which each Gaussian has a marginal weight ≥ τ_w.
pub fn visibility_counts(scene: &GaussianScene, cams: &[Camera]) -> Vec<usize> {
    let per_view: Vec<Vec<usize>> = cams
        .par_iter()
        .map(|cam| {
            observations_from(&Splats::build(scene, cam), cam.view_id)
                .into_iter()
                .map(|o| o.record.gaussian_index)
                .collect()
        })
        .collect();
    let mut counts = vec![0; scene.len()];
    for v in per_view {
        for i in v {
            counts[i] += 1;
        }
    }
    counts
}

/// Per-pixel label weights of one view at one granularity.
#[derive(Debug, Clone)]
pub struct LabelCoverage {
    pub view_id: u32,
    pub granularity: Granularity,
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl LabelCoverage {
    pub fn build(splats: &Splats, view_id: u32, truth: &GroundTruth, g: Granularity) -> Self {
        let (width, height) = (splats.width, splats.height);
        let mut offsets = Vec::with_capacity(width * height + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        let mut pixel: Vec<(u32, f64)> = Vec::new();
        for y in 0..height {
            for x in 0..width {
                pixel.clear();
                splats.composite_pixel(x, y, |i, w| {
                    let l = truth.labels[i][g.index()];
                    match pixel.iter_mut().find(|(pl, _)| *pl == l) {
                        Some(e) => e.1 += w,
                        None => pixel.push((l, w)),
                    }
                });
                entries.extend_from_slice(&pixel);
                offsets.push(entries.len());
            }
        }
        LabelCoverage {
            view_id,
            granularity: g,
            width,
            height,
            offsets,
            entries,
        }
    }

    /// `(label, accumulated weight)` pairs at a pixel, in first-seen depth order.
    pub fn at(&self, x: usize, y: usize) -> &[(u32, f64)] {
        let p = y * self.width + x;
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn coverage(&self, x: usize, y: usize) -> f64 {
        self.at(x, y).iter().map(|e| e.1).sum()
    }

    /// Dominant label of every pixel any Gaussian reaches, row-major. Cosine
    /// relevance ignores feature magnitude, so faint silhouette pixels count.
    pub fn label_map(&self) -> Vec<Option<u32>> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let e = self.at(x, y);
                let cov: f64 = e.iter().map(|e| e.1).sum();
                let best = e
                    .iter()
                    .fold(None::<(u32, f64)>, |acc, &(l, w)| match acc {
                        Some((bl, bw)) if bw > w || (bw == w && bl < l) => Some((bl, bw)),
                        _ => Some((l, w)),
                    });
                out.push(if cov > 0.0 { best.map(|b| b.0) } else { None });
            }
        }
        out
    }

    /// Renders a map with `table[label]` as each label's feature.
    fn render(&self, table: &[Vec<f32>], dim: usize) -> FeatureMap {
        let mut map = FeatureMap::zeros(self.view_id, self.granularity, self.height, self.width, dim);
        let mut acc = vec![0.0f64; dim];
        for y in 0..self.height {
            for x in 0..self.width {
                let e = self.at(x, y);
                let cov: f64 = e.iter().map(|e| e.1).sum();
                if cov < COVERAGE_FLOOR {
                    continue;
                }
                acc.iter_mut().for_each(|v| *v = 0.0);
                for &(l, w) in e {
                    for (a, &p) in acc.iter_mut().zip(&table[l as usize]) {
                        *a += w * p as f64;
                    }
                }
                for (o, a) in map.pixel_mut(x, y).iter_mut().zip(&acc) {
                    *o = (a / cov) as f32;
                }
            }
        }
        map
    }
}

/// Label coverage of every view at one granularity, in camera order.
pub fn label_coverage(scene: &GaussianScene, truth: &GroundTruth, cams: &[Camera], g: Granularity) -> Vec<LabelCoverage> {
    cams.par_iter()
        .map(|cam| LabelCoverage::build(&Splats::build(scene, cam), cam.view_id, truth, g))
        .collect()
}

fn identity_table(truth: &GroundTruth, g: Granularity) -> Vec<Vec<f32>> {
    (0..truth.class_count(g) as u32)
        .map(|l| truth.prototype(g, l).to_vec())
        .collect()
}

/// Consistent feature maps: each covered pixel is the coverage-normalized
/// blend of its Gaussians' prototypes; background is zero.
pub fn render_gt_feature_maps(coverage: &[LabelCoverage], truth: &GroundTruth) -> Vec<FeatureMap> {
    coverage
        .par_iter()
        .map(|c| c.render(&identity_table(truth, c.granularity), truth.dim))
        .collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one (view, granularity) pair.
fn view_rng(seed: u64, view_id: u32, g: Granularity) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(((view_id as u64) << 8) | g.value() as u64)))
}

/// Per-view corruption table: which prototype each label region shows.
pub fn corruption_table(
    truth: &GroundTruth,
    g: Granularity,
    view_id: u32,
    rate: f64,
    mode: NoiseMode,
    seed: u64,
) -> Vec<Vec<f32>> {
    let k = truth.class_count(g) as u32;
    let mut rng = view_rng(seed, view_id, g);
    let mut table = identity_table(truth, g);
    for l in 0..k {
        // Draw both numbers unconditionally so streams do not depend on ρ.
        let u: f64 = rng.random();
        let other = {
            let o = rng.random_range(0..k.max(2) - 1);
            if o >= l {
                o + 1
            } else {
                o
            }
        };
        if u >= rate || k < 2 {
            continue;
        }
        let own = truth.prototype(g, l);
        let alt = truth.prototype(g, other);
        table[l as usize] = match mode {
            NoiseMode::SwapClass => alt.to_vec(),
            NoiseMode::Blend => own.iter().zip(alt).map(|(a, b)| 0.5 * a + 0.5 * b).collect(),
            NoiseMode::Dropout => vec![0.0; truth.dim],
        };
    }
    table
}

/// Feature maps with per-view, per-region corruption at rate ρ.
pub fn corrupt_maps(coverage: &[LabelCoverage], truth: &GroundTruth, config: &SynthConfig) -> Vec<FeatureMap> {
    coverage
        .par_iter()
        .map(|c| {
            let table = corruption_table(truth, c.granularity, c.view_id, config.noise_rate, config.noise_mode, config.seed);
            c.render(&table, truth.dim)
        })
        .collect()
}

/// Even-indexed views lift, odd-indexed views evaluate.
pub fn split_views(cams: &[Camera]) -> (Vec<Camera>, Vec<Camera>) {
    cams.iter().cloned().partition(|c| c.view_id % 2 == 0)
}

/// Gaussians whose center pixel, in every lifting view that observes them,
/// composites only Gaussians of their own label. Their lifted features see
/// no cross-label mixing, so consistent maps must give them zero variance.
pub fn interior_mask(scene: &GaussianScene, truth: &GroundTruth, cams: &[Camera], g: Granularity) -> Vec<bool> {
    let per_view: Vec<Vec<usize>> = cams
        .par_iter()
        .map(|cam| {
            let splats = Splats::build(scene, cam);
            observations_from(&splats, cam.view_id)
                .into_iter()
                .filter(|o| {
                    let own = truth.labels[o.record.gaussian_index][g.index()];
                    let mut mixed = false;
                    splats.composite_pixel(o.pixel.0, o.pixel.1, |j, _| {
                        mixed |= truth.labels[j][g.index()] != own;
                    });
                    mixed
                })
                .map(|o| o.record.gaussian_index)
                .collect()
        })
        .collect();
    let mut interior = vec![true; scene.len()];
    for v in per_view {
        for i in v {
            interior[i] = false;
        }
    }
    interior
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_gaussians: 400,
            n_classes: 3,
            n_views: 8,
            image_width: 64,
            image_height: 64,
            feature_dim: 16,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generate_is_seeded_valid_and_labeled() {
        let cfg = SynthConfig {
            n_gaussians: 100,
            n_classes: 2,
            ..small(3)
        };
        let (scene, truth, cams) = generate_scene(&cfg).unwrap();
        assert_eq!(scene.len(), 100);
        assert!(crate::model::validate_scene(&scene).is_empty());
        let whole = truth.labels_at(Granularity::Whole);
        assert!(whole.contains(&0) && whole.contains(&1));
        assert!(scene.bbox.min.iter().chain(scene.bbox.max.iter()).all(|v| v.is_finite()));
        assert!(truth.tree_consistent());
        for c in &cams {
            c.validate().unwrap();
            assert!((c.position().norm() - 4.0).abs() < 1e-9);
        }
        let (scene2, truth2, cams2) = generate_scene(&cfg).unwrap();
        assert_eq!(scene, scene2);
        assert_eq!(truth, truth2);
        assert_eq!(cams, cams2);
        assert!(visibility_counts(&scene, &cams).iter().all(|&c| c >= MIN_VIEWS));
    }

    #[test]
    fn prototypes_are_separable_unit_vectors() {
        let (_, truth, _) = generate_scene(&small(1)).unwrap();
        for g in Granularity::ALL {
            let k = truth.class_count(g) as u32;
            for a in 0..k {
                let pa = truth.prototype(g, a);
                let n: f32 = pa.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
                for b in 0..a {
                    let c: f32 = pa.iter().zip(truth.prototype(g, b)).map(|(x, y)| x * y).sum();
                    assert!((c as f64) < PROTOTYPE_MAX_COSINE);
                }
            }
        }
    }

    #[test]
    fn ring_cameras_at_radius() {
        let cfg = SynthConfig {
            n_views: 8,
            ..SynthConfig::default()
        };
        for c in ring_cameras(&cfg) {
            assert!((c.position().norm() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_corruption_is_identity() {
        let cfg = small(2);
        let (scene, truth, cams) = generate_scene(&cfg).unwrap();
        let cov = label_coverage(&scene, &truth, &cams[..2], Granularity::Part);
        let clean = render_gt_feature_maps(&cov, &truth);
        let same = corrupt_maps(&cov, &truth, &SynthConfig { noise_rate: 0.0, ..cfg.clone() });
        assert_eq!(clean, same);
    }

    #[test]
    fn full_swap_replaces_every_region() {
        let cfg = SynthConfig {
            n_classes: 2,
            noise_rate: 1.0,
            ..small(4)
        };
        let (_, truth, _) = generate_scene(&cfg).unwrap();
        for view in 0..4 {
            let t = corruption_table(&truth, Granularity::Whole, view, 1.0, NoiseMode::SwapClass, cfg.seed);
            assert_eq!(t[0], truth.prototype(Granularity::Whole, 1));
            assert_eq!(t[1], truth.prototype(Granularity::Whole, 0));
        }
        let t = corruption_table(&truth, Granularity::Whole, 0, 1.0, NoiseMode::Dropout, cfg.seed);
        assert!(t.iter().flatten().all(|&v| v == 0.0));
        let t = corruption_table(&truth, Granularity::Whole, 0, 1.0, NoiseMode::Blend, cfg.seed);
        let p0 = truth.prototype(Granularity::Whole, 0);
        let p1 = truth.prototype(Granularity::Whole, 1);
        for k in 0..truth.dim {
            assert!((t[0][k] - 0.5 * (p0[k] + p1[k])).abs() < 1e-7);
        }
    }

    #[test]
    fn single_class_maps_are_proportional_to_prototype() {
        let cfg = SynthConfig {
            n_gaussians: 200,
            n_classes: 2,
            ..small(5)
        };
        let (scene, mut truth, cams) = generate_scene(&cfg).unwrap();
        // Relabel everything into class 0.
        for l in &mut truth.labels {
            *l = [0, 0, 0];
        }
        let cov = label_coverage(&scene, &truth, &cams[..1], Granularity::Whole);
        let maps = render_gt_feature_maps(&cov, &truth);
        let p = truth.prototype(Granularity::Whole, 0);
        let mut covered = 0;
        for y in 0..maps[0].height {
            for x in 0..maps[0].width {
                let px = maps[0].pixel(x, y);
                let n: f32 = px.iter().map(|v| v * v).sum::<f32>().sqrt();
                if n > 0.0 {
                    covered += 1;
                    let c: f32 = px.iter().zip(p).map(|(a, b)| a * b).sum::<f32>() / n;
                    assert!(c > 1.0 - 1e-5);
                }
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn empty_scene_renders_zero_maps() {
        let cfg = small(6);
        let truth = GroundTruth {
            labels: vec![],
            prototypes: [vec![0.0; 16 * 3], vec![0.0; 16 * 6], vec![0.0; 16 * 12]],
            dim: 16,
        };
        let cams = ring_cameras(&cfg);
        let cov = label_coverage(&GaussianScene::new(vec![]), &truth, &cams[..1], Granularity::Whole);
        let maps = render_gt_feature_maps(&cov, &truth);
        assert!(maps[0].data.iter().all(|&v| v == 0.0));
    }
}
