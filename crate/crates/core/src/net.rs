//! Conditional residual MLP mapping Gaussian attributes plus a granularity
//! scalar to a semantic feature, with exact reverse-mode gradients.
//!
//! ```text
//! h₀ = ReLU(W_in·x + b_in)
//! h  ← h + W₂·ReLU(W₁·h + b₁) + b₂        (per residual block)
//! y  = W_out·h + b_out
//! ```
//!
//! Parameters live in one flat buffer: entry `W_in (H×15), b_in`, then per
//! block `W₁ (H×H), b₁, W₂ (H×H), b₂`, then head `W_out (D×H), b_out`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::{Gaussian, GaussianScene, Granularity};

/// 3 position + 1 opacity + 4 rotation + 3 scale + 3 rgb + 1 granularity.
pub const INPUT_DIM: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub out_dim: usize,
}

impl MlpConfig {
    pub fn new(hidden: usize, blocks: usize, out_dim: usize) -> Self {
        MlpConfig {
            in_dim: INPUT_DIM,
            hidden,
            blocks,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim != INPUT_DIM || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (i, h, d) = (self.in_dim, self.hidden, self.out_dim);
        h * i + h + self.blocks * 2 * (h * h + h) + d * h + d
    }

    fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig::new(256, 3, 512)
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Linear {
    fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.rows * self.cols]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.rows]
    }
}

#[derive(Debug, Clone)]
struct Layout {
    entry: Linear,
    blocks: Vec<(Linear, Linear)>,
    head: Linear,
}

impl Layout {
    fn new(c: &MlpConfig) -> Self {
        let mut at = 0;
        let mut linear = |rows: usize, cols: usize| {
            let l = Linear {
                w: at,
                b: at + rows * cols,
                rows,
                cols,
            };
            at += rows * cols + rows;
            l
        };
        let entry = linear(c.hidden, c.in_dim);
        let blocks = (0..c.blocks)
            .map(|_| (linear(c.hidden, c.hidden), linear(c.hidden, c.hidden)))
            .collect();
        let head = linear(c.out_dim, c.hidden);
        Layout { entry, blocks, head }
    }
}

/// Input normalization: positions are mapped through the scene bbox to
/// [−1, 1] and log-scales are standardized per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub pos_shift: [f64; 3],
    pub pos_scale: [f64; 3],
    pub log_scale_shift: [f64; 3],
    pub log_scale_scale: [f64; 3],
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats {
            pos_shift: [0.0; 3],
            pos_scale: [1.0; 3],
            log_scale_shift: [0.0; 3],
            log_scale_scale: [1.0; 3],
        }
    }
}

impl NormStats {
    pub fn from_scene(scene: &GaussianScene) -> Self {
        let mut s = NormStats::default();
        if scene.is_empty() {
            return s;
        }
        let c = scene.bbox.center();
        let h = scene.bbox.half_extent();
        let n = scene.len() as f64;
        for k in 0..3 {
            s.pos_shift[k] = c[k];
            s.pos_scale[k] = if h[k] > 1e-9 { h[k] } else { 1.0 };
            let logs = scene.gaussians.iter().map(|g| g.scale[k].ln());
            let mean = logs.clone().sum::<f64>() / n;
            let var = logs.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            s.log_scale_shift[k] = mean;
            s.log_scale_scale[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        // Checkpoints store these as f32; round now so a reloaded model
        // reproduces the in-memory predictions exactly.
        for v in s
            .pos_shift
            .iter_mut()
            .chain(&mut s.pos_scale)
            .chain(&mut s.log_scale_shift)
            .chain(&mut s.log_scale_scale)
        {
            *v = *v as f32 as f64;
        }
        s
    }

    /// Flattened as shift/scale pairs for the 6 normalized channels.
    pub fn to_pairs(&self) -> [(f64, f64); 6] {
        let mut out = [(0.0, 1.0); 6];
        for k in 0..3 {
            out[k] = (self.pos_shift[k], self.pos_scale[k]);
            out[3 + k] = (self.log_scale_shift[k], self.log_scale_scale[k]);
        }
        out
    }

    pub fn from_pairs(p: &[(f64, f64); 6]) -> Self {
        let mut s = NormStats::default();
        for k in 0..3 {
            (s.pos_shift[k], s.pos_scale[k]) = p[k];
            (s.log_scale_shift[k], s.log_scale_scale[k]) = p[3 + k];
        }
        s
    }
}

/// Builds the 15-channel network input for one Gaussian.
pub fn encode_input(g: &Gaussian, granularity: u32, stats: &NormStats) -> Result<[f64; INPUT_DIM]> {
    let gran = Granularity::try_from(granularity)?;
    let mut x = [0.0; INPUT_DIM];
    for k in 0..3 {
        x[k] = (g.mu[k] - stats.pos_shift[k]) / stats.pos_scale[k];
    }
    x[3] = g.opacity;
    let sign = if g.quat[0] < 0.0 { -1.0 } else { 1.0 };
    for k in 0..4 {
        x[4 + k] = sign * g.quat[k];
    }
    for k in 0..3 {
        x[8 + k] = (g.scale[k].ln() - stats.log_scale_shift[k]) / stats.log_scale_scale[k];
    }
    for k in 0..3 {
        x[11 + k] = g.rgb[k];
    }
    x[14] = gran.value() as f64 - 2.0;
    Ok(x)
}

/// Encodes every Gaussian of the scene at one granularity into a B×15 batch.
pub fn encode_scene<T: Real>(scene: &GaussianScene, granularity: Granularity, stats: &NormStats) -> Vec<T> {
    let mut out = Vec::with_capacity(scene.len() * INPUT_DIM);
    for g in &scene.gaussians {
        let x = encode_input(g, granularity.value(), stats).expect("granularity is valid");
        out.extend(x.iter().map(|&v| T::from_f64(v)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerModel<T: Real = f32> {
    pub config: MlpConfig,
    pub params: Vec<T>,
    pub norm: NormStats,
    pub seed: u64,
}

/// Same layout as the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T: Real = f32> {
    pub grads: Vec<T>,
}

/// Activations saved by [`RegularizerModel::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    batch: usize,
    input: Vec<T>,
    /// Entry pre-activation.
    z0: Vec<T>,
    /// Hidden state entering each block, plus the final one.
    hidden: Vec<Vec<T>>,
    /// Pre-activation of each block's first layer.
    block_pre: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    /// Smallest |pre-activation| over all ReLUs, used to avoid kinks in
    /// finite-difference checks.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.z0
            .iter()
            .chain(self.block_pre.iter().flatten())
            .map(|v| v.abs().as_f64())
            .fold(f64::INFINITY, f64::min)
    }
}

fn relu<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect()
}

fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    for row in y.chunks_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, &bb)| *v = *v + bb);
    }
}

fn column_sums_into<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    for row in m.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
    }
}

impl<T: Real> RegularizerModel<T> {
    /// He-initialized weights, zero biases. Each block's second layer starts
    /// at zero so the blocks begin as the identity.
    pub fn init(config: MlpConfig, norm: NormStats, seed: u64) -> Self {
        let layout = config.layout();
        let mut params = vec![T::zero(); config.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |l: &Linear, params: &mut [T]| {
            let std = (2.0 / l.cols as f64).sqrt();
            for v in &mut params[l.w..l.w + l.rows * l.cols] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::from_f64(z * std);
            }
        };
        fill(&layout.entry, &mut params);
        for (first, _) in &layout.blocks {
            fill(first, &mut params);
        }
        fill(&layout.head, &mut params);
        RegularizerModel {
            config,
            params,
            norm,
            seed,
        }
    }

    pub fn zeros(config: MlpConfig) -> Self {
        RegularizerModel {
            config,
            params: vec![T::zero(); config.param_count()],
            norm: NormStats::default(),
            seed: 0,
        }
    }

    pub fn cast<U: Real>(&self) -> RegularizerModel<U> {
        RegularizerModel {
            config: self.config,
            params: self.params.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            norm: self.norm,
            seed: self.seed,
        }
    }

    pub fn forward(&self, inputs: &[T]) -> Vec<T> {
        self.forward_cached(inputs).0
    }

    /// Forward pass over a B×15 batch; returns B×D outputs and the cache.
    pub fn forward_cached(&self, inputs: &[T]) -> (Vec<T>, ForwardCache<T>) {
        let c = &self.config;
        assert_eq!(inputs.len() % c.in_dim, 0, "input is not a multiple of {}", c.in_dim);
        let batch = inputs.len() / c.in_dim;
        let layout = c.layout();
        let p = &self.params;
        let h = c.hidden;

        let mut z0 = vec![T::zero(); batch * h];
        T::gemm(batch, c.in_dim, h, inputs, false, layout.entry.weight(p), true, T::zero(), &mut z0);
        add_bias(&mut z0, layout.entry.bias(p));
        let mut state = relu(&z0);

        let mut hidden = Vec::with_capacity(c.blocks + 1);
        let mut block_pre = Vec::with_capacity(c.blocks);
        let mut branch = vec![T::zero(); batch * h];
        for (first, second) in &layout.blocks {
            let mut a = vec![T::zero(); batch * h];
            T::gemm(batch, h, h, &state, false, first.weight(p), true, T::zero(), &mut a);
            add_bias(&mut a, first.bias(p));
            let r = relu(&a);
            T::gemm(batch, h, h, &r, false, second.weight(p), true, T::zero(), &mut branch);
            add_bias(&mut branch, second.bias(p));
            let next: Vec<T> = state.iter().zip(&branch).map(|(&s, &b)| s + b).collect();
            hidden.push(std::mem::replace(&mut state, next));
            block_pre.push(a);
        }

        let mut out = vec![T::zero(); batch * c.out_dim];
        T::gemm(batch, h, c.out_dim, &state, false, layout.head.weight(p), true, T::zero(), &mut out);
        add_bias(&mut out, layout.head.bias(p));
        hidden.push(state);

        let cache = ForwardCache {
            batch,
            input: inputs.to_vec(),
            z0,
            hidden,
            block_pre,
        };
        (out, cache)
    }

    /// Gradient of Σ upstream ⊙ output with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &[T]) -> Result<GradientBuffer<T>> {
        let c = &self.config;
        let batch = cache.batch;
        if upstream.len() != batch * c.out_dim {
            return Err(Error::Shape(format!(
                "upstream has {} values, expected {}×{}",
                upstream.len(),
                batch,
                c.out_dim
            )));
        }
        let layout = c.layout();
        let p = &self.params;
        let h = c.hidden;
        let mut g = vec![T::zero(); p.len()];

        // Head.
        let last = &cache.hidden[c.blocks];
        let head = &layout.head;
        T::gemm(c.out_dim, batch, h, upstream, true, last, false, T::zero(), &mut g[head.w..head.b]);
        column_sums_into(upstream, c.out_dim, &mut g[head.b..head.b + c.out_dim]);
        let mut dh = vec![T::zero(); batch * h];
        T::gemm(batch, c.out_dim, h, upstream, false, head.weight(p), false, T::zero(), &mut dh);

        // Residual blocks in reverse: h_out = h_in + W₂·ReLU(W₁·h_in + b₁) + b₂.
        let mut dr = vec![T::zero(); batch * h];
        for (k, (first, second)) in layout.blocks.iter().enumerate().rev() {
            let h_in = &cache.hidden[k];
            let a = &cache.block_pre[k];
            let r = relu(a);
            T::gemm(h, batch, h, &dh, true, &r, false, T::zero(), &mut g[second.w..second.b]);
            column_sums_into(&dh, h, &mut g[second.b..second.b + h]);
            T::gemm(batch, h, h, &dh, false, second.weight(p), false, T::zero(), &mut dr);
            for (d, &av) in dr.iter_mut().zip(a) {
                if av <= T::zero() {
                    *d = T::zero();
                }
            }
            T::gemm(h, batch, h, &dr, true, h_in, false, T::zero(), &mut g[first.w..first.b]);
            column_sums_into(&dr, h, &mut g[first.b..first.b + h]);
            // dh_in = dh_out + W₁ᵀ·da
            T::gemm(batch, h, h, &dr, false, first.weight(p), false, T::one(), &mut dh);
        }

        // Entry layer.
        for (d, &z) in dh.iter_mut().zip(&cache.z0) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        let entry = &layout.entry;
        T::gemm(h, batch, c.in_dim, &dh, true, &cache.input, false, T::zero(), &mut g[entry.w..entry.b]);
        column_sums_into(&dh, h, &mut g[entry.b..entry.b + h]);

        Ok(GradientBuffer { grads: g })
    }

    /// The network with all residual blocks removed (entry layer then head).
    pub fn without_blocks(&self) -> RegularizerModel<T> {
        let layout = self.config.layout();
        let config = MlpConfig {
            blocks: 0,
            ..self.config
        };
        let mut params = Vec::with_capacity(config.param_count());
        params.extend_from_slice(&self.params[layout.entry.w..layout.entry.b + self.config.hidden]);
        params.extend_from_slice(&self.params[layout.head.w..layout.head.b + self.config.out_dim]);
        RegularizerModel {
            config,
            params,
            norm: self.norm,
            seed: self.seed,
        }
    }

    /// Runs the network over every Gaussian at one granularity, in chunks.
    pub fn predict_scene(&self, scene: &GaussianScene, granularity: Granularity) -> Vec<T> {
        let inputs = encode_scene::<T>(scene, granularity, &self.norm);
        let chunk = 4096 * INPUT_DIM;
        let mut out = Vec::with_capacity(scene.len() * self.config.out_dim);
        for part in inputs.chunks(chunk) {
            out.extend(self.forward(part));
        }
        out
    }
}
