use super::{MapDecoderConfig, MapError, ScoredElement, CLASSES, NONE_CLASS};
use crate::numgrad::{
    join, lit, AttentionConfig, DeformableAttention, Init, LayerNorm, Level, Linear, Mlp, Module, MultiHeadAttention,
    Param, Real, Tensor,
};
use crate::pv2bev::{BevGrid, BevGridMeta};
use crate::synthscene::{MapClass, MapElement};

/// Instance and point embeddings; query `i·points + j` is `instance[i] + point[j]`.
pub struct MapQuerySet<T: Real> {
    pub instance: Param<T>,
    pub point: Param<T>,
}

impl<T: Real> MapQuerySet<T> {
    pub fn new(init: &mut Init, instances: usize, points: usize, dim: usize) -> Self {
        MapQuerySet { instance: init.uniform(1.0, &[instances, dim]), point: init.uniform(1.0, &[points, dim]) }
    }

    pub fn instances(&self) -> usize {
        self.instance.shape()[0]
    }

    pub fn points(&self) -> usize {
        self.point.shape()[0]
    }

    /// `[instances·points, D]`.
    pub fn queries(&self) -> Result<Tensor<T>, MapError> {
        let (ni, np) = (self.instances(), self.points());
        let inst: Vec<_> = (0..ni * np).map(|q| Some(q / np)).collect();
        let pts: Vec<_> = (0..ni * np).map(|q| Some(q % np)).collect();
        Ok(self.instance.get().gather_rows(&inst)?.add(&self.point.get().gather_rows(&pts)?)?)
    }
}

impl<T: Real> Module<T> for MapQuerySet<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        out.push((join(prefix, "instance"), self.instance.clone()));
        out.push((join(prefix, "point"), self.point.clone()));
    }
}

pub struct DecoderLayer<T: Real> {
    pub self_attn: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub cross_attn: DeformableAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub norm3: LayerNorm<T>,
}

impl<T: Real> Module<T> for DecoderLayer<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.cross_attn.collect_params(&join(prefix, "cross_attn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.mlp.collect_params(&join(prefix, "mlp"), out);
        self.norm3.collect_params(&join(prefix, "norm3"), out);
    }
}

pub struct MapDecoder<T: Real> {
    pub cfg: MapDecoderConfig,
    pub queries: MapQuerySet<T>,
    pub layers: Vec<DecoderLayer<T>>,
    pub vertex_head: Linear<T>,
    pub class_head: Linear<T>,
}

impl<T: Real> MapDecoder<T> {
    pub fn new(init: &mut Init, dim: usize, cfg: MapDecoderConfig) -> Result<Self, MapError> {
        cfg.validate()?;
        let attn = AttentionConfig::for_width(dim, cfg.heads, cfg.mlp_dim, cfg.depth)?;
        let layers = (0..cfg.depth)
            .map(|_| {
                Ok(DecoderLayer {
                    self_attn: MultiHeadAttention::new(init, attn)?,
                    norm1: LayerNorm::new(init, dim),
                    cross_attn: DeformableAttention::new(init, dim, cfg.attention)?,
                    norm2: LayerNorm::new(init, dim),
                    mlp: Mlp::new(init, dim, cfg.mlp_dim, dim),
                    norm3: LayerNorm::new(init, dim),
                })
            })
            .collect::<Result<Vec<_>, MapError>>()?;
        Ok(MapDecoder {
            queries: MapQuerySet::new(init, cfg.instances, cfg.points, dim),
            layers,
            vertex_head: Linear::new(init, dim, 2),
            class_head: Linear::new(init, dim, CLASSES),
            cfg,
        })
    }

    /// Vertices in metres, squashed into the perception range.
    fn vertices(&self, q: &Tensor<T>, meta: &BevGridMeta) -> Result<Tensor<T>, MapError> {
        let half = [0.5 * (meta.x_range.1 - meta.x_range.0), 0.5 * (meta.y_range.1 - meta.y_range.0)];
        let centre = [0.5 * (meta.x_range.0 + meta.x_range.1), 0.5 * (meta.y_range.0 + meta.y_range.1)];
        Ok(self.vertex_head.forward(q)?.tanh().mul_row(&constant(half)?)?.add_row(&constant(centre)?)?)
    }
}

fn constant<T: Real>(v: [f64; 2]) -> Result<Tensor<T>, MapError> {
    Ok(Tensor::new(vec![lit(v[0]), lit(v[1])], &[2])?)
}

/// `[N, 2]` ego `(x, y)` → continuous grid `(row, col)`.
fn to_grid<T: Real>(vertices: &Tensor<T>, meta: &BevGridMeta) -> Result<Tensor<T>, MapError> {
    let inv = 1.0 / meta.cell;
    let swap = Tensor::new(vec![T::zero(), lit(inv), lit(inv), T::zero()], &[2, 2])?;
    let origin = [-meta.y_range.0 * inv - 0.5, -meta.x_range.0 * inv - 0.5];
    Ok(vertices.matmul(&swap)?.add_row(&constant(origin)?)?)
}

impl<T: Real> Module<T> for MapDecoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.queries.collect_params(&join(prefix, "queries"), out);
        self.layers.collect_params(&join(prefix, "layers"), out);
        self.vertex_head.collect_params(&join(prefix, "vertex_head"), out);
        self.class_head.collect_params(&join(prefix, "class_head"), out);
    }
}

/// Per-instance class logits and vertex polylines.
pub struct DecodedMap<T: Real> {
    pub instances: usize,
    pub points: usize,
    /// `[instances, 5]`, the last column is `none`.
    pub logits: Tensor<T>,
    /// `[instances·points, 2]` ego-frame metres.
    pub vertices: Tensor<T>,
}

impl<T: Real> DecodedMap<T> {
    pub fn probabilities(&self) -> Vec<[f64; CLASSES]> {
        self.logits
            .detach()
            .softmax()
            .data()
            .chunks(CLASSES)
            .map(|row| std::array::from_fn(|k| row[k].to_f64().unwrap_or(f64::NAN)))
            .collect()
    }

    /// Best non-`none` class and its probability, per instance.
    pub fn classify(&self) -> Vec<(MapClass, f64)> {
        self.probabilities()
            .iter()
            .map(|p| {
                let best = (0..NONE_CLASS).fold(0, |b, k| if p[k] > p[b] { k } else { b });
                (MapClass::from_index(best).expect("element class index"), p[best])
            })
            .collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.classify().into_iter().map(|(_, s)| s).collect()
    }

    pub fn polyline(&self, instance: usize) -> Vec<[f64; 2]> {
        let v = self.vertices.data();
        (0..self.points)
            .map(|j| {
                let r = instance * self.points + j;
                [v[2 * r].to_f64().unwrap_or(f64::NAN), v[2 * r + 1].to_f64().unwrap_or(f64::NAN)]
            })
            .collect()
    }

    /// Instances scoring at least `threshold`, in instance order.
    pub fn elements(&self, threshold: f64) -> Vec<ScoredElement> {
        self.classify()
            .into_iter()
            .enumerate()
            .filter(|(_, (_, score))| *score >= threshold)
            .map(|(i, (class, score))| ScoredElement { element: MapElement::new(class, self.polyline(i)), score })
            .collect()
    }
}

/// Self-attention over queries, deformable cross-attention into the BEV grid
/// around each query's current vertex, then an MLP; repeated per layer.
pub fn decode_map<T: Real>(decoder: &MapDecoder<T>, bev: &BevGrid<T>) -> Result<DecodedMap<T>, MapError> {
    if !bev.features.is_finite() {
        return Err(crate::pv2bev::BevError::NonFinite.into());
    }
    let meta = &bev.meta;
    let value = bev.rows();
    let level = Level::single(meta.height, meta.width);
    let mut q = decoder.queries.queries()?;
    for layer in &decoder.layers {
        q = layer.norm1.forward(&q.add(&layer.self_attn.forward(&q, &q, &q)?)?)?;
        let refs = to_grid(&decoder.vertices(&q, meta)?, meta)?;
        q = layer.norm2.forward(&q.add(&layer.cross_attn.forward_at(&q, &value, level.clone(), &refs)?)?)?;
        q = layer.norm3.forward(&q.add(&layer.mlp.forward(&q)?)?)?;
    }
    let (instances, points) = (decoder.queries.instances(), decoder.queries.points());
    Ok(DecodedMap {
        instances,
        points,
        logits: decoder.class_head.forward(&q.group_mean(points)?)?,
        vertices: decoder.vertices(&q, meta)?,
    })
}
