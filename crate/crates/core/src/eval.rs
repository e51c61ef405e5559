//! Segmentation and localization metrics on Gaussians and rendered views.
//!
//! Classes are scored by cosine similarity against one query vector per
//! class. 3D segmentation labels each Gaussian by its best query; 2D
//! segmentation and localization work on rendered feature maps of held-out
//! views.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Camera, FeatureMap, GaussianScene, Granularity, SemanticField};
use crate::raster::{render_feature_map_from, Splats};
use crate::synth::{GroundTruth, LabelCoverage};
use crate::train::{regularize_field, train, GranularityMode, TrainConfig, WeightingMode};

/// Rendered features with a norm below this score −1 in a relevance map.
pub const RELEVANCE_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub prototype: Vec<f32>,
    pub label_id: u32,
    pub granularity: Granularity,
}

impl Query {
    pub fn new(prototype: Vec<f32>, label_id: u32, granularity: Granularity) -> Result<Self> {
        if norm(&prototype) == 0.0 {
            return Err(Error::Config(format!("query {label_id} has a zero prototype")));
        }
        Ok(Query {
            prototype,
            label_id,
            granularity,
        })
    }
}

/// One query per class of `g`, in label order.
pub fn class_queries(truth: &GroundTruth, g: Granularity) -> Vec<Query> {
    (0..truth.class_count(g) as u32)
        .map(|l| Query {
            prototype: truth.prototype(g, l).to_vec(),
            label_id: l,
            granularity: g,
        })
        .collect()
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Cosine similarity in f64; `None` when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    Some(dot / (na * nb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub width: usize,
    pub height: usize,
    /// Row-major scores in [−1, 1].
    pub values: Vec<f64>,
}

impl RelevanceMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Per-pixel cosine between a rendered feature map and a query.
pub fn relevance_from_map(fmap: &FeatureMap, query: &Query) -> RelevanceMap {
    let mut values = Vec::with_capacity(fmap.width * fmap.height);
    for y in 0..fmap.height {
        for x in 0..fmap.width {
            let f = fmap.pixel(x, y);
            let score = if norm(f) < RELEVANCE_NORM_FLOOR {
                -1.0
            } else {
                cosine(f, &query.prototype).unwrap_or(-1.0).clamp(-1.0, 1.0)
            };
            values.push(score);
        }
    }
    RelevanceMap {
        width: fmap.width,
        height: fmap.height,
        values,
    }
}

pub fn relevance_map(scene: &GaussianScene, cam: &Camera, field: &SemanticField, query: &Query) -> RelevanceMap {
    let fmap = render_feature_map_from(&Splats::build(scene, cam), cam.view_id, field);
    relevance_from_map(&fmap, query)
}

/// Best-matching query label for a feature vector; ties go to the lowest
/// label id. `None` for a zero vector.
pub fn classify(f: &[f32], queries: &[Query]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for q in queries {
        let c = cosine(f, &q.prototype)?;
        best = match best {
            Some((bl, bc)) if bc > c || (bc == c && bl < q.label_id) => Some((bl, bc)),
            _ => Some((q.label_id, c)),
        };
    }
    best.map(|b| b.0)
}

/// Argmax-cosine label per Gaussian; invalid rows are unassigned (`None`).
pub fn segment_3d(field: &SemanticField, queries: &[Query]) -> Vec<Option<u32>> {
    (0..field.len())
        .map(|i| if field.valid[i] { classify(field.feature(i), queries) } else { None })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Per-class IoU and their mean over classes present in either labeling.
/// Unassigned predictions match no class.
pub fn miou(pred: &[Option<u32>], truth: &[u32], k_classes: usize) -> IouReport {
    let mut inter = vec![0usize; k_classes];
    let mut union = vec![0usize; k_classes];
    for (p, &t) in pred.iter().zip(truth) {
        match *p {
            Some(p) if p == t => {
                inter[t as usize] += 1;
                union[t as usize] += 1;
            }
            Some(p) => {
                union[p as usize] += 1;
                union[t as usize] += 1;
            }
            None => union[t as usize] += 1,
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    IouReport { per_class, miou }
}

/// Whether the highest-scoring pixel (first in scan order on ties) lies in
/// the region. `region` is a row-major pixel mask.
pub fn localize(relevance: &RelevanceMap, region: &[bool]) -> Result<bool> {
    if !region.iter().any(|&r| r) {
        return Err(Error::EmptyRegion);
    }
    if region.len() != relevance.values.len() {
        return Err(Error::Shape(format!(
            "region has {} pixels, relevance map has {}",
            region.len(),
            relevance.values.len()
        )));
    }
    let mut best = 0;
    for (k, &v) in relevance.values.iter().enumerate() {
        if v > relevance.values[best] {
            best = k;
        }
    }
    Ok(region[best])
}

/// Mean cosine between each valid row and its true class prototype, over
/// rows selected by `support` (all rows when `None`).
pub fn mean_prototype_cosine(field: &SemanticField, truth: &GroundTruth, support: Option<&[bool]>) -> f64 {
    let g = field.granularity;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..field.len() {
        if !field.valid[i] || support.is_some_and(|s| !s[i]) {
            continue;
        }
        let proto = truth.prototype(g, truth.labels[i][g.index()]);
        sum += cosine(field.feature(i), proto).unwrap_or(0.0);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Metrics of one granularity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GranularityReport {
    pub granularity: Granularity,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou_3d: f64,
    pub miou_2d: f64,
    pub macc: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub granularities: Vec<GranularityReport>,
    /// Key-value pairs describing the run, echoed at the top of the report.
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn miou(&self) -> f64 {
        mean(self.granularities.iter().map(|r| r.miou_3d))
    }

    pub fn miou_2d(&self) -> f64 {
        mean(self.granularities.iter().map(|r| r.miou_2d))
    }

    pub fn macc(&self) -> f64 {
        mean(self.granularities.iter().map(|r| r.macc))
    }

    pub fn mean_cosine(&self) -> f64 {
        mean(self.granularities.iter().map(|r| r.mean_cosine))
    }

    /// One `key=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            writeln!(out, "config.{k}={v}").unwrap();
        }
        for r in &self.granularities {
            let name = r.granularity.name();
            for (k, iou) in r.per_class_iou.iter().enumerate() {
                match iou {
                    Some(v) => writeln!(out, "{name}.iou.{k}={v:.6}").unwrap(),
                    None => writeln!(out, "{name}.iou.{k}=absent").unwrap(),
                }
            }
            writeln!(out, "{name}.miou={:.6}", r.miou_3d).unwrap();
            writeln!(out, "{name}.miou_2d={:.6}", r.miou_2d).unwrap();
            writeln!(out, "{name}.macc={:.6}", r.macc).unwrap();
            writeln!(out, "{name}.mean_cosine={:.6}", r.mean_cosine).unwrap();
        }
        writeln!(out, "miou={:.6}", self.miou()).unwrap();
        writeln!(out, "miou_2d={:.6}", self.miou_2d()).unwrap();
        writeln!(out, "macc={:.6}", self.macc()).unwrap();
        writeln!(out, "mean_cosine={:.6}", self.mean_cosine()).unwrap();
        out
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Rasterization and ground-truth label maps of the evaluation views,
/// shared across the fields being scored.
pub struct EvalViews {
    splats: Vec<(u32, Splats)>,
    /// Per granularity, per view: dominant ground-truth label of each pixel.
    labels: [Vec<Vec<Option<u32>>>; 3],
}

impl EvalViews {
    pub fn new(scene: &GaussianScene, truth: &GroundTruth, cams: &[Camera]) -> Self {
        let mut sorted: Vec<&Camera> = cams.iter().collect();
        sorted.sort_by_key(|c| c.view_id);
        let splats: Vec<(u32, Splats)> = sorted
            .par_iter()
            .map(|c| (c.view_id, Splats::build(scene, c)))
            .collect();
        let labels = Granularity::ALL.map(|g| {
            splats
                .par_iter()
                .map(|(v, s)| LabelCoverage::build(s, *v, truth, g).label_map())
                .collect()
        });
        EvalViews { splats, labels }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }
}

/// Scores one field: 3D mIoU over all Gaussians, 2D mIoU over covered pixels
/// of the evaluation views, localization mAcc, and mean prototype cosine over
/// `support`.
pub fn evaluate_field(
    field: &SemanticField,
    truth: &GroundTruth,
    views: &EvalViews,
    support: Option<&[bool]>,
) -> GranularityReport {
    let g = field.granularity;
    let k = truth.class_count(g);
    let queries = class_queries(truth, g);
    let iou = miou(&segment_3d(field, &queries), &truth.labels_at(g), k);

    // (pixel predictions, pixel truth, per-class hits, per-class attempts) per view.
    let per_view: Vec<(Vec<Option<u32>>, Vec<u32>, Vec<usize>, Vec<usize>)> = views
        .splats
        .par_iter()
        .zip(&views.labels[g.index()])
        .map(|((view_id, splats), gt)| {
            let fmap = render_feature_map_from(splats, *view_id, field);
            let (mut pred, mut want) = (Vec::new(), Vec::new());
            for (p, l) in gt.iter().enumerate() {
                if let Some(l) = l {
                    let f = &fmap.data[p * fmap.dim..(p + 1) * fmap.dim];
                    pred.push(if norm(f) < RELEVANCE_NORM_FLOOR { None } else { classify(f, &queries) });
                    want.push(*l);
                }
            }
            let (mut hits, mut tries) = (vec![0; k], vec![0; k]);
            for q in &queries {
                let region: Vec<bool> = gt.iter().map(|l| *l == Some(q.label_id)).collect();
                if !region.iter().any(|&r| r) {
                    continue;
                }
                let rel = relevance_from_map(&fmap, q);
                tries[q.label_id as usize] += 1;
                if localize(&rel, &region).expect("nonempty region") {
                    hits[q.label_id as usize] += 1;
                }
            }
            (pred, want, hits, tries)
        })
        .collect();

    let (mut pred, mut want) = (Vec::new(), Vec::new());
    let (mut hits, mut tries) = (vec![0usize; k], vec![0usize; k]);
    for (p, w, h, t) in per_view {
        pred.extend(p);
        want.extend(w);
        hits.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        tries.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }
    let macc = mean(
        hits.iter()
            .zip(&tries)
            .filter(|(_, &t)| t > 0)
            .map(|(&h, &t)| h as f64 / t as f64),
    );
    GranularityReport {
        granularity: g,
        per_class_iou: iou.per_class,
        miou_3d: iou.miou,
        miou_2d: miou(&pred, &want, k).miou,
        macc,
        mean_cosine: mean_prototype_cosine(field, truth, support),
    }
}

/// Scores a set of fields (one per granularity) on the evaluation views.
pub fn evaluate(
    fields: &[SemanticField],
    truth: &GroundTruth,
    views: &EvalViews,
    support: Option<&[&[bool]]>,
) -> EvalReport {
    let granularities = fields
        .iter()
        .enumerate()
        .map(|(k, f)| evaluate_field(f, truth, views, support.map(|s| s[k])))
        .collect();
    EvalReport {
        granularities,
        config: Vec::new(),
    }
}

/// One regularizer configuration of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub name: &'static str,
    pub weighting: WeightingMode,
    pub granularity_mode: GranularityMode,
}

/// (a) variance weighting with one network per granularity, (b) equal
/// weighting with a shared network, (c) variance weighting with a shared
/// network.
pub const ABLATION_ROWS: [AblationRow; 3] = [
    AblationRow {
        name: "a",
        weighting: WeightingMode::Variance,
        granularity_mode: GranularityMode::Independent,
    },
    AblationRow {
        name: "b",
        weighting: WeightingMode::Equal,
        granularity_mode: GranularityMode::Shared,
    },
    AblationRow {
        name: "c",
        weighting: WeightingMode::Variance,
        granularity_mode: GranularityMode::Shared,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationEntry {
    pub name: String,
    pub miou: f64,
    pub macc: f64,
    pub mean_cosine: f64,
}

impl AblationEntry {
    fn from_report(name: &str, r: &EvalReport) -> Self {
        AblationEntry {
            name: name.to_string(),
            miou: r.miou(),
            macc: r.macc(),
            mean_cosine: r.mean_cosine(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub baseline: AblationEntry,
    pub rows: Vec<AblationEntry>,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in std::iter::once(&self.baseline).chain(&self.rows) {
            writeln!(out, "{}.miou={:.6}", e.name, e.miou).unwrap();
            writeln!(out, "{}.macc={:.6}", e.name, e.macc).unwrap();
            writeln!(out, "{}.mean_cosine={:.6}", e.name, e.mean_cosine).unwrap();
        }
        out
    }
}

/// Trains the three grid configurations on the same lifted fields and seed and
/// scores each against the raw lifted baseline. Mean cosine is measured on
/// the rows the raw lift observed, so all entries share one support.
pub fn ablation_grid(
    scene: &GaussianScene,
    lifted: &[SemanticField],
    truth: &GroundTruth,
    views: &EvalViews,
    config: &TrainConfig,
) -> Result<AblationReport> {
    let support: Vec<&[bool]> = lifted.iter().map(|f| f.valid.as_slice()).collect();
    let raw = evaluate(lifted, truth, views, Some(&support));
    let mut rows = Vec::new();
    for row in ABLATION_ROWS {
        let cfg = TrainConfig {
            weighting_mode: row.weighting,
            granularity_mode: row.granularity_mode,
            ..config.clone()
        };
        let out = train(scene, lifted, &cfg)?;
        let fields: Vec<SemanticField> = lifted
            .iter()
            .map(|f| regularize_field(out.regularizer.model_for(f.granularity), scene, f))
            .collect();
        let report = evaluate(&fields, truth, views, Some(&support));
        rows.push(AblationEntry::from_report(row.name, &report));
    }
    Ok(AblationReport {
        baseline: AblationEntry::from_report("raw", &raw),
        rows,
    })
}
