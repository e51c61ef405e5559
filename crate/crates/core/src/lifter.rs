//! Training-free lifting of 2D feature maps onto Gaussians.
//!
//! Each view contributes its feature sample at a Gaussian's center pixel,
//! weighted by the Gaussian's marginal rendering weight there. The fold keeps
//! the zeroth, first and second weighted moments, so the lifted feature and
//! its per-dimension variance come out of one streaming pass:
//!
//! ```text
//! f_i   = Σ_s w·F / Σ_s w
//! Var_d = Σ_s w·F_d² / Σ_s w − f_d²      (clamped at 0)
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Camera, FeatureMap, GaussianScene, Granularity, SemanticField};
use crate::raster::{Splats, WeightRecord, VISIBILITY_THRESHOLD};

/// Minimum total weight for a lifted row to count as observed (τ_mass).
pub const MIN_WEIGHT_MASS: f64 = 1e-6;

/// Weighted moment sums, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftAccumulator {
    pub granularity: Granularity,
    pub dim: usize,
    pub sum_w: Vec<f64>,
    pub sum_wf: Vec<f64>,
    pub sum_wf2: Vec<f64>,
}

/// One weighted observation: a Gaussian's weight in a view and the pixel its
/// center falls on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub record: WeightRecord,
    pub pixel: (usize, usize),
}

impl LiftAccumulator {
    pub fn new(granularity: Granularity, n: usize, dim: usize) -> Self {
        LiftAccumulator {
            granularity,
            dim,
            sum_w: vec![0.0; n],
            sum_wf: vec![0.0; n * dim],
            sum_wf2: vec![0.0; n * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.sum_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum_w.is_empty()
    }

    /// Adds one view's weighted samples.
    pub fn accumulate_view(&mut self, observations: &[Observation], fmap: &FeatureMap) -> Result<()> {
        if fmap.dim != self.dim {
            return Err(Error::Shape(format!(
                "feature map for view {} has D={}, accumulator has D={}",
                fmap.view_id, fmap.dim, self.dim
            )));
        }
        let d = self.dim;
        for obs in observations {
            let i = obs.record.gaussian_index;
            if obs.record.view_id != fmap.view_id {
                return Err(Error::Shape(format!(
                    "record for view {} applied to feature map of view {}",
                    obs.record.view_id, fmap.view_id
                )));
            }
            if i >= self.len() {
                return Err(Error::Shape(format!("gaussian index {i} out of range {}", self.len())));
            }
            let (x, y) = obs.pixel;
            if x >= fmap.width || y >= fmap.height {
                return Err(Error::Shape(format!(
                    "pixel ({x}, {y}) outside {}×{} map of view {}",
                    fmap.width, fmap.height, fmap.view_id
                )));
            }
            let w = obs.record.weight;
            let sample = fmap.pixel(x, y);
            self.sum_w[i] += w;
            let wf = &mut self.sum_wf[i * d..(i + 1) * d];
            let wf2 = &mut self.sum_wf2[i * d..(i + 1) * d];
            for k in 0..d {
                let f = sample[k] as f64;
                wf[k] += w * f;
                wf2[k] += w * f * f;
            }
        }
        Ok(())
    }

    /// Elementwise sum of two accumulators over the same Gaussians.
    pub fn merge(&mut self, other: &LiftAccumulator) -> Result<()> {
        if other.dim != self.dim || other.len() != self.len() {
            return Err(Error::Shape("merging accumulators of different shape".into()));
        }
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.sum_w, &other.sum_w);
        add(&mut self.sum_wf, &other.sum_wf);
        add(&mut self.sum_wf2, &other.sum_wf2);
        Ok(())
    }

    pub fn finalize(&self) -> SemanticField {
        let (n, d) = (self.len(), self.dim);
        let mut field = SemanticField::empty(self.granularity, n, d);
        for i in 0..n {
            let sw = self.sum_w[i];
            field.weight_mass[i] = sw as f32;
            if sw < MIN_WEIGHT_MASS {
                continue;
            }
            field.valid[i] = true;
            for k in 0..d {
                let mean = self.sum_wf[i * d + k] / sw;
                let var = (self.sum_wf2[i * d + k] / sw - mean * mean).max(0.0);
                field.features[i * d + k] = mean as f32;
                field.variance[i * d + k] = var as f32;
            }
        }
        field
    }
}

/// Visible Gaussians of one view with their weights and center pixels.
pub fn observations(scene: &GaussianScene, cam: &Camera) -> Vec<Observation> {
    observations_from(&Splats::build(scene, cam), cam.view_id)
}

pub fn observations_from(splats: &Splats, view_id: u32) -> Vec<Observation> {
    let mut obs: Vec<Observation> = splats
        .center_weights()
        .into_iter()
        .filter(|&(_, _, w)| w >= VISIBILITY_THRESHOLD)
        .map(|(gaussian_index, pixel, weight)| Observation {
            record: WeightRecord {
                gaussian_index,
                view_id,
                weight,
            },
            pixel,
        })
        .collect();
    obs.sort_by_key(|o| o.record.gaussian_index);
    obs
}

/// Per-view observations for every camera, computed in parallel and returned
/// in ascending view order.
pub fn observations_all(scene: &GaussianScene, cams: &[Camera]) -> Vec<(u32, Vec<Observation>)> {
    let mut sorted: Vec<&Camera> = cams.iter().collect();
    sorted.sort_by_key(|c| c.view_id);
    sorted
        .par_iter()
        .map(|cam| (cam.view_id, observations(scene, cam)))
        .collect()
}

/// Lifts one granularity's feature maps onto the scene. Views are folded in
/// ascending `view_id` order regardless of input order.
pub fn lift(
    scene: &GaussianScene,
    cams: &[Camera],
    fmaps: &[FeatureMap],
    granularity: Granularity,
) -> Result<SemanticField> {
    let obs = observations_all(scene, cams);
    lift_observed(scene.len(), &obs, fmaps, granularity)
}

/// Lifting with precomputed observations, so several granularities can share
/// one rasterization pass.
pub fn lift_observed(
    n: usize,
    observations: &[(u32, Vec<Observation>)],
    fmaps: &[FeatureMap],
    granularity: Granularity,
) -> Result<SemanticField> {
    let mut order: Vec<&(u32, Vec<Observation>)> = observations.iter().collect();
    order.sort_by_key(|(v, _)| *v);
    let mut acc: Option<LiftAccumulator> = None;
    for (view_id, obs) in order {
        let fmap = fmaps
            .iter()
            .find(|m| m.view_id == *view_id && m.granularity == granularity)
            .ok_or(Error::MissingView {
                view_id: *view_id,
                granularity: granularity.value(),
            })?;
        let acc = acc.get_or_insert_with(|| LiftAccumulator::new(granularity, n, fmap.dim));
        acc.accumulate_view(obs, fmap)?;
    }
    let dim = fmaps.iter().find(|m| m.granularity == granularity).map_or(0, |m| m.dim);
    Ok(acc
        .unwrap_or_else(|| LiftAccumulator::new(granularity, n, dim))
        .finalize())
}
