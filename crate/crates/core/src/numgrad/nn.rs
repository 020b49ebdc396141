//! Layers built from tensor ops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{deform_sample, DeformLayout, Level};
use super::real::{lit, Real};
use super::tensor::{Param, Tensor};
use super::NumError;

/// Anything holding trainable parameters.
pub trait Module<T: Real> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>);

    fn params(&self) -> Vec<(String, Param<T>)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.shape().iter().product::<usize>()).sum()
    }

    fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

impl<T: Real, M: Module<T>> Module<T> for Vec<M> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        for (i, m) in self.iter().enumerate() {
            m.collect_params(&join(prefix, &i.to_string()), out);
        }
    }
}

impl<T: Real, M: Module<T>> Module<T> for Option<M> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        if let Some(m) = self {
            m.collect_params(prefix, out);
        }
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Seeded parameter initializer: Xavier-uniform weights, zero biases.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn xavier<T: Real>(&mut self, fan_in: usize, fan_out: usize, shape: &[usize]) -> Param<T> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(bound, shape)
    }

    pub fn uniform<T: Real>(&mut self, bound: f64, shape: &[usize]) -> Param<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(self.rng.gen_range(-bound..=bound))).collect();
        Param::new(Tensor::new(data, shape).expect("init shape"))
    }

    pub fn zeros<T: Real>(&mut self, shape: &[usize]) -> Param<T> {
        Param::new(Tensor::zeros(shape))
    }

    pub fn ones<T: Real>(&mut self, shape: &[usize]) -> Param<T> {
        Param::new(Tensor::ones(shape))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `y = x·W + b` with `W: [in, out]`.
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize) -> Self {
        Linear { weight: init.xavier(d_in, d_out, &[d_in, d_out]), bias: init.zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Accepts `[.., d_in]`, returns `[rows, d_out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        x.as_2d()?.matmul(&self.weight.get())?.add_row(&self.bias.get())
    }

    /// Overwrites the weights with the identity (square layers only) and zeroes the bias.
    pub fn set_identity(&self) -> Result<(), NumError> {
        let (i, o) = (self.d_in(), self.d_out());
        if i != o {
            return Err(NumError::Config(format!("identity needs a square layer, got {i}x{o}")));
        }
        let mut w = vec![T::zero(); i * o];
        (0..i).for_each(|k| w[k * o + k] = T::one());
        self.weight.set_data(w)?;
        self.bias.set_data(vec![T::zero(); o])
    }

    pub fn set_zero(&self) -> Result<(), NumError> {
        self.weight.set_data(vec![T::zero(); self.d_in() * self.d_out()])?;
        self.bias.set_data(vec![T::zero(); self.d_out()])
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalization with learned gain and shift.
pub struct LayerNorm<T: Real> {
    pub gain: Param<T>,
    pub shift: Param<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(init: &mut Init, d: usize) -> Self {
        LayerNorm { gain: init.ones(&[d]), shift: init.zeros(&[d]) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        x.layer_norm(lit(LAYER_NORM_EPS)).mul_row(&self.gain.get())?.add_row(&self.shift.get())
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "shift"), self.shift.clone()));
    }
}

/// Two-layer perceptron with ReLU.
pub struct Mlp<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Mlp<T> {
    pub fn new(init: &mut Init, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Mlp { fc1: Linear::new(init, d_in, hidden), fc2: Linear::new(init, hidden, d_out) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        self.fc2.forward(&self.fc1.forward(x)?.relu())
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
    }
}

/// Attention stack shape: `embed_dim = heads × head_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub depth: usize,
}

impl AttentionConfig {
    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), NumError> {
        if self.heads == 0 || self.head_dim == 0 || self.mlp_dim == 0 || self.depth == 0 {
            return Err(NumError::Config(format!("attention config must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Config for a model width `d`; fails unless `heads` divides `d`.
    pub fn for_width(d: usize, heads: usize, mlp_dim: usize, depth: usize) -> Result<Self, NumError> {
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Config(format!("embed dim {d} is not divisible by {heads} heads")));
        }
        let cfg = AttentionConfig { heads, head_dim: d / heads, mlp_dim, depth };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scaled dot-product attention over `heads` channel groups, without projections.
pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Tensor<T>, NumError> {
    let d = q.cols();
    if heads == 0 || d % heads != 0 {
        return Err(NumError::Config(format!("embed dim {d} is not divisible by {heads} heads")));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(NumError::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let hd = d / heads;
    let scale = T::one() / lit::<T>(hd as f64).sqrt();
    if heads == 1 {
        return q.as_2d()?.matmul_t(&k.as_2d()?)?.scale(scale).softmax().matmul(&v.as_2d()?);
    }
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * hd, (h + 1) * hd);
        let qh = q.slice_cols(s, e)?;
        let kh = k.slice_cols(s, e)?;
        let vh = v.slice_cols(s, e)?;
        outs.push(qh.matmul_t(&kh)?.scale(scale).softmax().matmul(&vh)?);
    }
    let refs: Vec<&Tensor<T>> = outs.iter().collect();
    Tensor::concat_cols(&refs)
}

/// Multi-head attention with input and output projections.
pub struct MultiHeadAttention<T: Real> {
    pub cfg: AttentionConfig,
    pub q_proj: Linear<T>,
    pub k_proj: Linear<T>,
    pub v_proj: Linear<T>,
    pub out_proj: Linear<T>,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(init: &mut Init, cfg: AttentionConfig) -> Result<Self, NumError> {
        cfg.validate()?;
        let d = cfg.embed_dim();
        Ok(MultiHeadAttention {
            cfg,
            q_proj: Linear::new(init, d, d),
            k_proj: Linear::new(init, d, d),
            v_proj: Linear::new(init, d, d),
            out_proj: Linear::new(init, d, d),
        })
    }

    /// `Q: [M, D]`, `K, V: [N, D]` → `[M, D]`.
    pub fn forward(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        let d = self.cfg.embed_dim();
        for (name, t) in [("Q", q), ("K", k), ("V", v)] {
            if t.cols() != d {
                return Err(NumError::shape("multi_head_attention", format!("{name} {:?} vs embed dim {d}", t.shape())));
            }
        }
        let qp = self.q_proj.forward(q)?;
        let kp = self.k_proj.forward(k)?;
        let vp = self.v_proj.forward(v)?;
        self.out_proj.forward(&attention(&qp, &kp, &vp, self.cfg.heads)?)
    }

    pub fn set_identity(&self) -> Result<(), NumError> {
        for l in [&self.q_proj, &self.k_proj, &self.v_proj, &self.out_proj] {
            l.set_identity()?;
        }
        Ok(())
    }
}

impl<T: Real> Module<T> for MultiHeadAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.q_proj.collect_params(&join(prefix, "q"), out);
        self.k_proj.collect_params(&join(prefix, "k"), out);
        self.v_proj.collect_params(&join(prefix, "v"), out);
        self.out_proj.collect_params(&join(prefix, "out"), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeformableConfig {
    pub heads: usize,
    /// Sampling offsets per head.
    pub n_points: usize,
    /// Maximum offset magnitude, in cells.
    pub offset_scale: f64,
}

impl Default for DeformableConfig {
    fn default() -> Self {
        DeformableConfig { heads: 4, n_points: 4, offset_scale: 2.0 }
    }
}

/// Where each deformable query samples: `hit → (query row, reference, level)`.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub levels: Vec<Level>,
    pub query_of_hit: Vec<usize>,
    /// Reference (row, col) in the hit's level.
    pub refs: Vec<[f64; 2]>,
    pub level_of_hit: Vec<usize>,
}

impl SamplingPlan {
    /// One hit per query, all on a single map.
    pub fn dense(level: Level, refs: Vec<[f64; 2]>) -> Self {
        let n = refs.len();
        SamplingPlan { levels: vec![level], query_of_hit: (0..n).collect(), refs, level_of_hit: vec![0; n] }
    }

    pub fn hits(&self) -> usize {
        self.query_of_hit.len()
    }

    /// Every reference must lie inside its map (half-cell border included).
    pub fn validate(&self) -> Result<(), NumError> {
        for (r, &l) in self.refs.iter().zip(&self.level_of_hit) {
            let level = self.levels.get(l).ok_or_else(|| NumError::Config(format!("level {l} missing")))?;
            let inside = r[0] >= -0.5
                && r[1] >= -0.5
                && r[0] <= level.height as f64 - 0.5
                && r[1] <= level.width as f64 - 0.5;
            if !inside || !r[0].is_finite() || !r[1].is_finite() {
                return Err(NumError::OutOfGrid { point: *r, height: level.height, width: level.width });
            }
        }
        Ok(())
    }
}

/// Deformable attention: each query predicts `heads × n_points` offsets
/// around its reference and softmax weights per head, then sums bilinear
/// samples of the projected value map.
pub struct DeformableAttention<T: Real> {
    pub cfg: DeformableConfig,
    pub offsets: Linear<T>,
    pub weights: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Real> DeformableAttention<T> {
    pub fn new(init: &mut Init, d: usize, cfg: DeformableConfig) -> Result<Self, NumError> {
        if cfg.n_points == 0 || cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(NumError::Config(format!("deformable attention: {d} channels, {cfg:?}")));
        }
        let hp = cfg.heads * cfg.n_points;
        let offsets = Linear::new(init, d, hp * 2);
        // Start each head looking in its own direction, points at growing radius.
        let mut bias = Vec::with_capacity(hp * 2);
        for h in 0..cfg.heads {
            let angle = std::f64::consts::TAU * h as f64 / cfg.heads as f64;
            for k in 0..cfg.n_points {
                let frac = 0.8 * (k + 1) as f64 / (cfg.n_points + 1) as f64;
                bias.push(lit((frac * angle.sin()).atanh()));
                bias.push(lit((frac * angle.cos()).atanh()));
            }
        }
        offsets.bias.set_data(bias)?;
        Ok(DeformableAttention {
            cfg,
            offsets,
            weights: Linear::new(init, d, hp),
            value: Linear::new(init, d, d),
            output: Linear::new(init, d, d),
        })
    }

    fn hp(&self) -> usize {
        self.cfg.heads * self.cfg.n_points
    }

    /// Per-query sampling weights `[Nq, heads·points]`, softmax-normalised per head.
    pub fn attention_weights(&self, queries: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        let nq = queries.rows();
        self.weights
            .forward(queries)?
            .reshape(&[nq * self.cfg.heads, self.cfg.n_points])?
            .softmax()
            .reshape(&[nq, self.hp()])
    }

    /// Sampling offsets `[Nq, heads·points·2]` in cells.
    pub fn sampling_offsets(&self, queries: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        Ok(self.offsets.forward(queries)?.tanh().scale(lit(self.cfg.offset_scale)))
    }

    /// Projected value samples per hit, `[hits, D]`, before the output projection.
    /// `value` is the raw stacked value map `[rows, D]`.
    pub fn sample(&self, queries: &Tensor<T>, value: &Tensor<T>, plan: &SamplingPlan) -> Result<Tensor<T>, NumError> {
        plan.validate()?;
        let hp = self.hp();
        let gather: Vec<Option<usize>> = plan.query_of_hit.iter().map(|&q| Some(q)).collect();
        let offsets = self.sampling_offsets(queries)?.gather_rows(&gather)?;
        let attn = self.attention_weights(queries)?.gather_rows(&gather)?;
        let mut refs = Vec::with_capacity(plan.hits() * hp * 2);
        for r in &plan.refs {
            for _ in 0..hp {
                refs.push(lit(r[0]));
                refs.push(lit(r[1]));
            }
        }
        let refs = Tensor::constant_unchecked(refs, vec![plan.hits(), hp * 2]);
        let locs = offsets.add(&refs)?;
        let v = self.value.forward(value)?;
        let layout = DeformLayout {
            heads: self.cfg.heads,
            points: self.cfg.n_points,
            levels: plan.levels.clone(),
            query_level: plan.level_of_hit.clone(),
        };
        deform_sample(&v, &locs, &attn, &layout)
    }

    /// One output row per hit.
    pub fn forward(&self, queries: &Tensor<T>, value: &Tensor<T>, plan: &SamplingPlan) -> Result<Tensor<T>, NumError> {
        self.output.forward(&self.sample(queries, value, plan)?)
    }

    /// Dense single-map variant with differentiable references: `refs` is
    /// `[Nq, 2]` (row, col); samples outside the map read zero.
    pub fn forward_at(&self, queries: &Tensor<T>, value: &Tensor<T>, level: Level, refs: &Tensor<T>) -> Result<Tensor<T>, NumError> {
        let (nq, hp) = (queries.rows(), self.hp());
        if refs.shape() != [nq, 2] {
            return Err(NumError::shape("deformable forward_at", format!("refs {:?} for {nq} queries", refs.shape())));
        }
        let mut spread = vec![T::zero(); 2 * hp * 2];
        for k in 0..hp {
            spread[2 * k] = T::one();
            spread[hp * 2 + 2 * k + 1] = T::one();
        }
        let spread = Tensor::constant_unchecked(spread, vec![2, hp * 2]);
        let locs = self.sampling_offsets(queries)?.add(&refs.matmul(&spread)?)?;
        let attn = self.attention_weights(queries)?;
        let layout = DeformLayout { heads: self.cfg.heads, points: self.cfg.n_points, levels: vec![level], query_level: vec![0; nq] };
        self.output.forward(&deform_sample(&self.value.forward(value)?, &locs, &attn, &layout)?)
    }

    /// Zero offset weights and biases so every point samples the reference itself.
    pub fn freeze_offsets_at_reference(&self) -> Result<(), NumError> {
        self.offsets.set_zero()
    }
}

impl<T: Real> Module<T> for DeformableAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.offsets.collect_params(&join(prefix, "offsets"), out);
        self.weights.collect_params(&join(prefix, "weights"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Single-query deformable attention at grid point `p = (row, col)` of a
/// `[H, W, D]` value grid. Fails when `p` lies outside the grid.
pub fn deformable_attention<T: Real>(
    module: &DeformableAttention<T>,
    query: &Tensor<T>,
    p: (f64, f64),
    value: &Tensor<T>,
) -> Result<Tensor<T>, NumError> {
    if value.rank() != 3 {
        return Err(NumError::shape("deformable_attention", format!("value {:?}: need [H, W, D]", value.shape())));
    }
    let (h, w) = (value.shape()[0], value.shape()[1]);
    let plan = SamplingPlan::dense(Level::single(h, w), vec![[p.0, p.1]]);
    let q = query.reshape(&[1, query.numel()])?;
    module.forward(&q, &value.as_2d()?, &plan)?.reshape(&[query.numel()])
}
