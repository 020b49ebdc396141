use super::lanes::{encode_lanes_vectornet, s2_augment_vertices, LaneEncoder, VertexRefiner};
use super::patch::{agent_bev_attention, agent_patch_index, patchify, PatchEmbed};
use super::{AgentContext, PredictError, PredictorConfig, Strategy};
use crate::numgrad::{
    join, lit, AttentionConfig, Init, LayerNorm, Linear, Mlp, Module, MultiHeadAttention, Param, Real, Tensor,
};
use crate::pv2bev::{BevGrid, BevGridMeta};
use crate::synthscene::{MapElement, X_RANGE, Y_RANGE};

/// Residual attention followed by layer norm.
pub struct AttentionBlock<T: Real> {
    pub attention: MultiHeadAttention<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> AttentionBlock<T> {
    fn new(init: &mut Init, cfg: AttentionConfig) -> Result<Self, PredictError> {
        Ok(AttentionBlock { attention: MultiHeadAttention::new(init, cfg)?, norm: LayerNorm::new(init, cfg.embed_dim()) })
    }

    fn forward(&self, x: &Tensor<T>, context: &Tensor<T>) -> Result<Tensor<T>, PredictError> {
        Ok(self.norm.forward(&x.add(&self.attention.forward(x, context, context)?)?)?)
    }
}

impl<T: Real> Module<T> for AttentionBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.attention.collect_params(&join(prefix, "attention"), out);
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

/// Attention block followed by a residual feed-forward block.
pub struct BevLayer<T: Real> {
    pub attend: AttentionBlock<T>,
    pub ffn: Mlp<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> BevLayer<T> {
    fn new(init: &mut Init, cfg: AttentionConfig, mlp_dim: usize) -> Result<Self, PredictError> {
        let d = cfg.embed_dim();
        Ok(BevLayer { attend: AttentionBlock::new(init, cfg)?, ffn: Mlp::new(init, d, mlp_dim, d), norm: LayerNorm::new(init, d) })
    }

    fn feed_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, PredictError> {
        Ok(self.norm.forward(&x.add(&self.ffn.forward(x)?)?)?)
    }
}

impl<T: Real> Module<T> for BevLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.attend.collect_params(&join(prefix, "attend"), out);
        self.ffn.collect_params(&join(prefix, "ffn"), out);
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

pub struct Predictor<T: Real> {
    pub cfg: PredictorConfig,
    pub meta: BevGridMeta,
    pub history: Option<Mlp<T>>,
    pub position: Option<Linear<T>>,
    pub patches: Option<PatchEmbed<T>>,
    pub agent_bev: Option<Vec<BevLayer<T>>>,
    pub fuse: Option<Linear<T>>,
    pub agent_agent: AttentionBlock<T>,
    pub lanes: Option<LaneEncoder<T>>,
    pub refiner: Option<VertexRefiner<T>>,
    pub agent_lane: Option<AttentionBlock<T>>,
    pub global: AttentionBlock<T>,
    pub mode_heads: Vec<Mlp<T>>,
    pub score: Linear<T>,
}

impl<T: Real> Predictor<T> {
    pub fn new(init: &mut Init, cfg: PredictorConfig, meta: &BevGridMeta) -> Result<Self, PredictError> {
        cfg.validate()?;
        let s = cfg.strategy;
        let d = cfg.dim;
        let attn = AttentionConfig::for_width(d, cfg.heads, cfg.mlp_dim, 1)?;
        let history_in = (cfg.history_len - 1) * 2 + 2;
        Ok(Predictor {
            history: s.uses_history().then(|| Mlp::new(init, history_in, cfg.mlp_dim, d)),
            position: (s == Strategy::S3).then(|| Linear::new(init, 2, d)),
            patches: if s.uses_patches() { Some(PatchEmbed::new(init, meta, cfg.patch, d)?) } else { None },
            agent_bev: if s.uses_patches() {
                Some((0..cfg.bev_depth).map(|_| BevLayer::new(init, attn, cfg.mlp_dim)).collect::<Result<_, _>>()?)
            } else {
                None
            },
            fuse: (s == Strategy::S1).then(|| Linear::new(init, 2 * d, d)),
            agent_agent: AttentionBlock::new(init, attn)?,
            lanes: s.uses_map().then(|| {
                let extra = if s == Strategy::S2 { 2 + d } else { 0 };
                LaneEncoder::new(init, cfg.lane_points, cfg.lane_hidden, extra, d)
            }),
            refiner: (s == Strategy::S2).then(|| VertexRefiner::new(init, meta.dim, d)),
            agent_lane: if s.uses_map() { Some(AttentionBlock::new(init, attn)?) } else { None },
            global: AttentionBlock::new(init, attn)?,
            mode_heads: (0..cfg.modes).map(|_| Mlp::new(init, d, cfg.mlp_dim, cfg.future_len * 2)).collect(),
            score: Linear::new(init, d, cfg.modes),
            meta: *meta,
            cfg,
        })
    }
}

impl<T: Real> Module<T> for Predictor<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.history.collect_params(&join(prefix, "history"), out);
        self.position.collect_params(&join(prefix, "position"), out);
        self.patches.collect_params(&join(prefix, "patches"), out);
        self.agent_bev.collect_params(&join(prefix, "agent_bev"), out);
        self.fuse.collect_params(&join(prefix, "fuse"), out);
        self.agent_agent.collect_params(&join(prefix, "agent_agent"), out);
        self.lanes.collect_params(&join(prefix, "lanes"), out);
        self.refiner.collect_params(&join(prefix, "refiner"), out);
        self.agent_lane.collect_params(&join(prefix, "agent_lane"), out);
        self.global.collect_params(&join(prefix, "global"), out);
        self.mode_heads.collect_params(&join(prefix, "modes"), out);
        self.score.collect_params(&join(prefix, "score"), out);
    }
}

/// What a strategy may consume; unused fields are ignored.
#[derive(Clone, Copy)]
pub struct PredictionInput<'a, T: Real> {
    pub agents: &'a AgentContext,
    pub map: Option<&'a [MapElement]>,
    pub bev: Option<&'a BevGrid<T>>,
}

/// `K` trajectories and mode logits per agent.
pub struct PredictionSet<T: Real> {
    pub agents: usize,
    pub modes: usize,
    pub horizon: usize,
    /// `[M, K·T_f·2]` ego-frame metres, mode-major.
    pub trajectories: Tensor<T>,
    /// `[M, K]`.
    pub logits: Tensor<T>,
}

impl<T: Real> PredictionSet<T> {
    pub fn new(trajectories: Tensor<T>, logits: Tensor<T>, horizon: usize) -> Result<Self, PredictError> {
        let (agents, modes) = (logits.rows(), logits.cols());
        if trajectories.shape() != [agents, modes * horizon * 2] {
            return Err(PredictError::Config(format!(
                "trajectories {:?} for {agents} agents × {modes} modes × {horizon} steps",
                trajectories.shape()
            )));
        }
        Ok(PredictionSet { agents, modes, horizon, trajectories, logits })
    }

    /// Softmax mode probabilities per agent.
    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.logits.detach().softmax().data().chunks(self.modes).map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect()).collect()
    }

    pub fn trajectory(&self, agent: usize, mode: usize) -> Vec<[f64; 2]> {
        let row = &self.trajectories.data()[agent * self.modes * self.horizon * 2..][mode * self.horizon * 2..];
        (0..self.horizon).map(|t| [row[2 * t].to_f64().unwrap(), row[2 * t + 1].to_f64().unwrap()]).collect()
    }
}

fn normalised(p: [f64; 2]) -> [f64; 2] {
    [p[0] / X_RANGE.1, p[1] / Y_RANGE.1]
}

fn history_features<T: Real>(histories: &[Vec<[f64; 2]>], positions: &[[f64; 2]], len: usize) -> Result<Tensor<T>, PredictError> {
    let width = (len - 1) * 2 + 2;
    let mut out = Vec::with_capacity(histories.len() * width);
    for (h, &p) in histories.iter().zip(positions) {
        if h.len() != len {
            return Err(PredictError::Config(format!("history of {} steps, predictor expects {len}", h.len())));
        }
        for w in h.windows(2) {
            out.extend([lit::<T>(w[1][0] - w[0][0]), lit(w[1][1] - w[0][1])]);
        }
        out.extend(normalised(p).map(lit::<T>));
    }
    Ok(Tensor::new(out, &[histories.len(), width])?)
}

/// Runs the predictor for its configured strategy.
pub fn forward_predict<T: Real>(model: &Predictor<T>, input: PredictionInput<'_, T>) -> Result<PredictionSet<T>, PredictError> {
    let cfg = &model.cfg;
    let strategy = cfg.strategy;
    let ctx = input.agents;
    let m = ctx.len();
    if m == 0 {
        return Err(PredictError::Empty("agent list"));
    }
    let bev = if strategy.uses_bev() {
        let bev = input.bev.ok_or(PredictError::MissingInput("BEV grid"))?;
        if !bev.meta.same_layout(&model.meta) {
            return Err(PredictError::Config(format!("BEV grid {:?} vs predictor {:?}", bev.meta, model.meta)));
        }
        if strategy == Strategy::S3 && !bev.temporal && !cfg.allow_single_frame {
            return Err(PredictError::NotTemporal);
        }
        Some(bev)
    } else {
        None
    };
    let agent_bev = match (bev, &model.agent_bev, &model.patches) {
        (Some(bev), Some(layers), Some(embed)) => {
            let patches = patchify(bev, embed)?;
            let idx = ctx
                .positions
                .iter()
                .map(|&p| Ok(agent_patch_index(p, &bev.meta, cfg.patch)?.flat(&bev.meta, cfg.patch)))
                .collect::<Result<Vec<_>, PredictError>>()?;
            let own = patches.embeddings.gather_rows(&idx.iter().map(|&i| Some(i)).collect::<Vec<_>>())?;
            let first = &layers[0];
            let attended = agent_bev_attention(&idx, &patches, &first.attend.attention)?;
            let mut x = first.feed_forward(&first.attend.norm.forward(&own.add(&attended)?)?)?;
            for layer in &layers[1..] {
                x = layer.feed_forward(&layer.attend.forward(&x, &patches.embeddings)?)?;
            }
            Some(x)
        }
        _ => None,
    };

    let agents = match (&model.history, &model.position, &agent_bev) {
        (Some(mlp), _, _) => {
            let histories = ctx.histories.as_ref().ok_or(PredictError::MissingInput("agent histories"))?;
            mlp.forward(&history_features(histories, &ctx.positions, cfg.history_len)?)?
        }
        (None, Some(position), Some(e)) => {
            let pos: Vec<T> = ctx.positions.iter().flat_map(|&p| normalised(p).map(lit::<T>)).collect();
            e.add(&position.forward(&Tensor::new(pos, &[m, 2])?)?)?
        }
        _ => unreachable!("every strategy encodes agents"),
    };
    let interacted = model.agent_agent.forward(&agents, &agents)?;

    let fused = match (&model.fuse, &agent_bev) {
        (Some(fuse), Some(e)) => fuse.forward(&Tensor::concat_cols(&[&interacted, e])?)?,
        _ => match (&model.lanes, &model.agent_lane) {
            (Some(lanes), Some(block)) => {
                let map = input.map.ok_or(PredictError::MissingInput("vector map"))?;
                let extra = match (&model.refiner, bev) {
                    (Some(refiner), Some(bev)) if !map.is_empty() => {
                        Some(s2_augment_vertices(map, bev, refiner, cfg.lane_points)?.features)
                    }
                    _ => None,
                };
                match encode_lanes_vectornet(lanes, map, extra.as_ref())? {
                    Some(lane_tokens) => block.forward(&interacted, &lane_tokens)?,
                    None => interacted,
                }
            }
            _ => unreachable!("non-patch strategies encode lanes"),
        },
    };
    let context = model.global.forward(&fused, &fused)?;

    let origin: Vec<T> = ctx
        .positions
        .iter()
        .flat_map(|p| (0..cfg.future_len).flat_map(move |_| [lit::<T>(p[0]), lit(p[1])]))
        .collect();
    let origin = Tensor::new(origin, &[m, cfg.future_len * 2])?;
    let modes = model
        .mode_heads
        .iter()
        .map(|head| Ok(head.forward(&context)?.scale(lit(cfg.output_scale)).add(&origin)?))
        .collect::<Result<Vec<_>, PredictError>>()?;
    let refs: Vec<&Tensor<T>> = modes.iter().collect();
    PredictionSet::new(Tensor::concat_cols(&refs)?, model.score.forward(&context)?, cfg.future_len)
}
