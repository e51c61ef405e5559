//! Losses, variance-derived sample weights, Adam, and the training loop that
//! fits the regularizer to lifted fields.
//!
//! Per-row loss is `‖f − f̂‖² + λ_cos·(1 − cos(f, f̂))`; the batch loss is its
//! mean, optionally scaled per row by `p_i = exp(−γ·ṽ_i)` where `ṽ_i` is the
//! min-max normalized norm of the lifted variance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::{GaussianScene, Granularity, SemanticField};
use crate::net::{encode_scene, MlpConfig, NormStats, RegularizerModel, INPUT_DIM};

/// Norms below this skip the cosine term for that row.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    Equal,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityMode {
    Shared,
    Independent,
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all steps.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine if total == 0 => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

impl std::str::FromStr for WeightingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(WeightingMode::Equal),
            "variance" => Ok(WeightingMode::Variance),
            _ => Err(Error::Config(format!("unknown weighting mode {s:?}"))),
        }
    }
}

impl std::str::FromStr for GranularityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(GranularityMode::Shared),
            "independent" => Ok(GranularityMode::Independent),
            _ => Err(Error::Config(format!("unknown granularity mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_cos: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weighting_mode: WeightingMode,
    pub granularity_mode: GranularityMode,
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 5.0,
            lambda_cos: 1.0,
            epsilon: 1e-8,
            lr: 1e-3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 512,
            epochs: 50,
            seed: 0,
            weighting_mode: WeightingMode::Variance,
            granularity_mode: GranularityMode::Shared,
            hidden: 256,
            blocks: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be a finite value >= 0");
        }
        if !(self.lambda_cos >= 0.0 && self.lambda_cos.is_finite()) {
            return bad("lambda_cos must be a finite value >= 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be >= 1");
        }
        Ok(())
    }
}

/// `p_i = exp(−γ·ṽ_i)` over valid rows; invalid rows get 0.
pub fn variance_weights(field: &SemanticField, gamma: f64, epsilon: f64) -> Vec<f64> {
    let d = field.dim;
    let norms: Vec<Option<f64>> = (0..field.len())
        .map(|i| {
            field.valid[i].then(|| {
                field.variance[i * d..(i + 1) * d]
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    let (lo, hi) = norms
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    norms
        .iter()
        .map(|v| match v {
            Some(v) => (-gamma * (v - lo) / (hi - lo + epsilon)).exp(),
            None => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: f64,
    /// ∂L/∂preds, same layout as the predictions.
    pub grad: Vec<T>,
    /// Rows whose cosine term was skipped because a norm collapsed.
    pub skipped_cosine: usize,
}

/// Equal-weight loss over a B×D batch.
pub fn loss_equal<T: Real>(targets: &[T], preds: &[T], dim: usize, lambda_cos: f64) -> Result<LossOutput<T>> {
    batch_loss(targets, preds, None, dim, lambda_cos)
}

/// Per-row weighted loss; rows with `p = 0` contribute nothing.
pub fn loss_weighted<T: Real>(
    targets: &[T],
    preds: &[T],
    weights: &[f64],
    dim: usize,
    lambda_cos: f64,
) -> Result<LossOutput<T>> {
    batch_loss(targets, preds, Some(weights), dim, lambda_cos)
}

fn batch_loss<T: Real>(
    targets: &[T],
    preds: &[T],
    weights: Option<&[f64]>,
    dim: usize,
    lambda_cos: f64,
) -> Result<LossOutput<T>> {
    if dim == 0 || targets.len() != preds.len() || targets.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "loss over {} targets and {} predictions with D={dim}",
            targets.len(),
            preds.len()
        )));
    }
    let batch = targets.len() / dim;
    if let Some(w) = weights {
        if w.len() != batch {
            return Err(Error::Shape(format!("{} weights for a batch of {batch}", w.len())));
        }
    }
    let mut grad = vec![T::zero(); preds.len()];
    let mut total = 0.0;
    let mut skipped = 0;
    let inv_b = 1.0 / batch.max(1) as f64;
    let mut row_grad = vec![0.0f64; dim];
    for i in 0..batch {
        let p = weights.map_or(1.0, |w| w[i]);
        let f = &targets[i * dim..(i + 1) * dim];
        let fh = &preds[i * dim..(i + 1) * dim];
        let (loss, cos_skipped) = row_loss(f, fh, lambda_cos, &mut row_grad);
        skipped += cos_skipped as usize;
        total += p * loss;
        let scale = p * inv_b;
        for (g, &rg) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&row_grad) {
            *g = T::from_f64(scale * rg);
        }
    }
    if skipped > 0 {
        log::warn!("cosine term skipped for {skipped} rows with collapsed norm");
    }
    Ok(LossOutput {
        value: total * inv_b,
        grad,
        skipped_cosine: skipped,
    })
}

/// Loss of one row and its gradient with respect to the prediction.
fn row_loss<T: Real>(f: &[T], fh: &[T], lambda_cos: f64, grad: &mut [f64]) -> (f64, bool) {
    let mut mse = 0.0;
    let (mut dot, mut nf2, mut np2) = (0.0, 0.0, 0.0);
    for k in 0..f.len() {
        let (a, b) = (f[k].as_f64(), fh[k].as_f64());
        let diff = b - a;
        mse += diff * diff;
        grad[k] = 2.0 * diff;
        dot += a * b;
        nf2 += a * a;
        np2 += b * b;
    }
    let (nf, np) = (nf2.sqrt(), np2.sqrt());
    if nf < COSINE_NORM_FLOOR || np < COSINE_NORM_FLOOR {
        return (mse, true);
    }
    let cos = dot / (nf * np);
    // ∂cos/∂f̂ = f/(‖f‖‖f̂‖) − cos·f̂/‖f̂‖²
    for k in 0..f.len() {
        let (a, b) = (f[k].as_f64(), fh[k].as_f64());
        grad[k] -= lambda_cos * (a / (nf * np) - cos * b / np2);
    }
    (mse + lambda_cos * (1.0 - cos), false)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }
}

/// One supervised row: a valid lifted feature and its loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub gaussian_index: usize,
    pub granularity: Granularity,
    pub weight: f64,
}

/// Training rows of one field. Only valid rows become samples.
pub fn samples_for(field: &SemanticField, config: &TrainConfig) -> Vec<TrainSample> {
    let p = match config.weighting_mode {
        WeightingMode::Variance => variance_weights(field, config.gamma, config.epsilon),
        WeightingMode::Equal => field.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    };
    (0..field.len())
        .filter(|&i| field.valid[i])
        .map(|i| TrainSample {
            gaussian_index: i,
            granularity: field.granularity,
            weight: p[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLogEntry {
    pub epoch: usize,
    pub granularity: String,
    pub loss: f64,
    pub mean_p: f64,
}

/// The trained network(s): one shared across granularities, or one each.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    Shared(RegularizerModel),
    Independent(Box<[RegularizerModel; 3]>),
}

impl Regularizer {
    pub fn model_for(&self, g: Granularity) -> &RegularizerModel {
        match self {
            Regularizer::Shared(m) => m,
            Regularizer::Independent(ms) => &ms[g.index()],
        }
    }

    pub fn models(&self) -> Vec<&RegularizerModel> {
        match self {
            Regularizer::Shared(m) => vec![m],
            Regularizer::Independent(ms) => ms.iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub regularizer: Regularizer,
    pub log: Vec<LossLogEntry>,
}

/// Fits the regularizer to three lifted fields (one per granularity).
pub fn train(scene: &GaussianScene, fields: &[SemanticField], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let fields = order_fields(fields)?;
    let dim = fields[0].dim;
    for f in &fields {
        if f.dim != dim || f.len() != scene.len() {
            return Err(Error::Shape(format!(
                "field {} is {}×{}, expected {}×{dim}",
                f.granularity,
                f.len(),
                f.dim,
                scene.len()
            )));
        }
        if f.valid_count() == 0 {
            return Err(Error::NoValidSamples(f.granularity.value()));
        }
    }
    let norm = NormStats::from_scene(scene);
    let net = MlpConfig::new(config.hidden, config.blocks, dim);
    net.validate()?;
    let inputs: Vec<Vec<f32>> = Granularity::ALL
        .iter()
        .map(|&g| encode_scene::<f32>(scene, g, &norm))
        .collect();
    let samples: Vec<Vec<TrainSample>> = fields.iter().map(|f| samples_for(f, config)).collect();

    let mut log = Vec::new();
    let regularizer = match config.granularity_mode {
        GranularityMode::Shared => {
            let all: Vec<TrainSample> = samples.concat();
            let model = fit(net, norm, &all, &inputs, &fields, config, "1+2+3", &mut log)?;
            Regularizer::Shared(model)
        }
        GranularityMode::Independent => {
            let mut models = Vec::with_capacity(3);
            for (k, s) in samples.iter().enumerate() {
                let label = (k + 1).to_string();
                models.push(fit(net, norm, s, &inputs, &fields, config, &label, &mut log)?);
            }
            let models: [RegularizerModel; 3] = models.try_into().expect("three granularities");
            Regularizer::Independent(Box::new(models))
        }
    };
    Ok(TrainOutput { regularizer, log })
}

fn order_fields(fields: &[SemanticField]) -> Result<[&SemanticField; 3]> {
    let find = |g: Granularity| {
        fields
            .iter()
            .find(|f| f.granularity == g)
            .ok_or_else(|| Error::Config(format!("no lifted field for granularity {g}")))
    };
    Ok([find(Granularity::Whole)?, find(Granularity::Part)?, find(Granularity::Subpart)?])
}

#[allow(clippy::too_many_arguments)]
fn fit(
    net: MlpConfig,
    norm: NormStats,
    samples: &[TrainSample],
    inputs: &[Vec<f32>],
    fields: &[&SemanticField; 3],
    config: &TrainConfig,
    label: &str,
    log: &mut Vec<LossLogEntry>,
) -> Result<RegularizerModel> {
    let mut model = RegularizerModel::<f32>::init(net, norm, config.seed);
    let mut adam = Adam::new(model.params.len(), config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let dim = net.out_dim;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut x = Vec::with_capacity(config.batch_size * INPUT_DIM);
    let mut y = Vec::with_capacity(config.batch_size * dim);
    let mut p = Vec::with_capacity(config.batch_size);

    let total_steps = config.epochs * samples.len().div_ceil(config.batch_size);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut p_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            x.clear();
            y.clear();
            p.clear();
            for &k in chunk {
                let s = &samples[k];
                let g = s.granularity.index();
                let i = s.gaussian_index;
                x.extend_from_slice(&inputs[g][i * INPUT_DIM..(i + 1) * INPUT_DIM]);
                y.extend_from_slice(fields[g].feature(i));
                p.push(s.weight);
            }
            let (pred, cache) = model.forward_cached(&x);
            let loss = match config.weighting_mode {
                WeightingMode::Variance => loss_weighted(&y, &pred, &p, dim, config.lambda_cos)?,
                WeightingMode::Equal => loss_equal(&y, &pred, dim, config.lambda_cos)?,
            };
            if !loss.value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            let grads = model.backward(&cache, &loss.grad)?;
            adam.lr = config.lr * config.lr_schedule.factor(step, total_steps);
            adam.step(&mut model.params, &grads.grads);
            step += 1;
            loss_sum += loss.value * chunk.len() as f64;
            p_sum += p.iter().sum::<f64>();
        }
        let n = samples.len().max(1) as f64;
        log.push(LossLogEntry {
            epoch,
            granularity: label.to_string(),
            loss: loss_sum / n,
            mean_p: p_sum / n,
        });
        log::debug!("epoch {epoch} [{label}] loss {:.6}", loss_sum / n);
    }
    Ok(model)
}

/// Replaces the lifted features with the network's prediction for every
/// Gaussian, observed or not.
pub fn regularize_field(
    model: &RegularizerModel,
    scene: &GaussianScene,
    lifted: &SemanticField,
) -> SemanticField {
    let features = model.predict_scene(scene, lifted.granularity);
    let n = scene.len();
    SemanticField {
        granularity: lifted.granularity,
        dim: model.config.out_dim,
        features,
        variance: vec![0.0; n * model.config.out_dim],
        weight_mass: lifted.weight_mass.clone(),
        valid: vec![true; n],
    }
}
