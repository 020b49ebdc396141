//! Attention encoder: learned BEV queries refined by temporal self-attention
//! over the warped previous grid and spatial cross-attention into the
//! camera feature maps.

use serde::{Deserialize, Serialize};

use super::stem::ViewFeatures;
use super::{BevError, BevGridMeta};
use crate::numgrad::{
    join, lit, DeformableAttention, DeformableConfig, Init, LayerNorm, Level, Mlp, Module, NumError, Param, Real,
    SamplingPlan, Tensor,
};
use crate::synthscene::{project_to_camera, CameraRig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevFormerConfig {
    pub depth: usize,
    pub attention: DeformableConfig,
    pub ref_heights: usize,
    /// Reference pillar heights span this range (m), endpoints included.
    pub z_range: (f64, f64),
    pub mlp_dim: usize,
}

impl Default for BevFormerConfig {
    fn default() -> Self {
        BevFormerConfig { depth: 1, attention: DeformableConfig::default(), ref_heights: 4, z_range: (-1.0, 3.0), mlp_dim: 64 }
    }
}

impl BevFormerConfig {
    pub fn heights(&self) -> Vec<f64> {
        let (lo, hi) = self.z_range;
        match self.ref_heights {
            1 => vec![0.5 * (lo + hi)],
            n => (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect(),
        }
    }
}

/// Each cell samples around its own position in every value source and sums the results.
pub struct TemporalSelfAttention<T: Real> {
    pub current: DeformableAttention<T>,
    pub history: DeformableAttention<T>,
}

fn self_plan(meta: &BevGridMeta) -> SamplingPlan {
    let refs = (0..meta.height).flat_map(|r| (0..meta.width).map(move |c| [r as f64, c as f64])).collect();
    SamplingPlan::dense(Level::single(meta.height, meta.width), refs)
}

impl<T: Real> TemporalSelfAttention<T> {
    pub fn new(init: &mut Init, dim: usize, cfg: DeformableConfig) -> Result<Self, NumError> {
        Ok(TemporalSelfAttention { current: DeformableAttention::new(init, dim, cfg)?, history: DeformableAttention::new(init, dim, cfg)? })
    }

    /// `queries` and `prev` are `[H·W, D]` rows; `prev` is already in the current ego frame.
    pub fn forward(&self, queries: &Tensor<T>, prev: Option<&Tensor<T>>, meta: &BevGridMeta) -> Result<Tensor<T>, NumError> {
        let plan = self_plan(meta);
        let out = self.current.forward(queries, queries, &plan)?;
        match prev {
            Some(prev) => out.add(&self.history.forward(queries, prev, &plan)?),
            None => Ok(out),
        }
    }
}

impl<T: Real> Module<T> for TemporalSelfAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.current.collect_params(&join(prefix, "current"), out);
        self.history.collect_params(&join(prefix, "history"), out);
    }
}

/// Projection of every cell's reference pillar into the cameras.
#[derive(Debug, Clone)]
pub struct ScaGeometry {
    pub plan: SamplingPlan,
    /// Per hit: `1 / |cameras seeing the hit's cell|`.
    pub hit_scale: Vec<f64>,
    /// Cameras that see each cell at one or more reference heights.
    pub cameras_per_cell: Vec<usize>,
}

impl ScaGeometry {
    pub fn new(meta: &BevGridMeta, rig: &CameraRig, heights: &[f64], levels: Vec<Level>, downsample: usize) -> Result<Self, BevError> {
        if rig.is_empty() {
            return Err(BevError::Config("spatial cross-attention needs at least one camera".into()));
        }
        if heights.is_empty() {
            return Err(BevError::Config("spatial cross-attention needs at least one reference height".into()));
        }
        if levels.len() != rig.len() {
            return Err(BevError::Config(format!("{} feature maps for {} cameras", levels.len(), rig.len())));
        }
        let s = downsample as f64;
        let mut query_of_hit = Vec::new();
        let mut refs = Vec::new();
        let mut level_of_hit = Vec::new();
        let mut cameras_per_cell = vec![0; meta.cells()];
        for r in 0..meta.height {
            for c in 0..meta.width {
                let cell = r * meta.width + c;
                let [x, y] = meta.cell_centre(r, c);
                for (k, (cam, level)) in rig.cameras.iter().zip(&levels).enumerate() {
                    let mut seen = false;
                    for &z in heights {
                        if let Some((u, v)) = project_to_camera([x, y, z], cam) {
                            let fr = ((v - 0.5) / s).clamp(-0.5, level.height as f64 - 0.5);
                            let fc = ((u - 0.5) / s).clamp(-0.5, level.width as f64 - 0.5);
                            query_of_hit.push(cell);
                            refs.push([fr, fc]);
                            level_of_hit.push(k);
                            seen = true;
                        }
                    }
                    cameras_per_cell[cell] += usize::from(seen);
                }
            }
        }
        let hit_scale = query_of_hit.iter().map(|&q| 1.0 / cameras_per_cell[q] as f64).collect();
        Ok(ScaGeometry { plan: SamplingPlan { levels, query_of_hit, refs, level_of_hit }, hit_scale, cameras_per_cell })
    }

    pub fn for_features<T: Real>(meta: &BevGridMeta, rig: &CameraRig, heights: &[f64], feats: &ViewFeatures<T>) -> Result<Self, BevError> {
        Self::new(meta, rig, heights, feats.levels(), feats.downsample)
    }
}

/// Deformable attention from each cell into the cameras that see it,
/// averaged over those cameras and added to the query. Unseen cells pass through.
pub struct SpatialCrossAttention<T: Real> {
    pub attention: DeformableAttention<T>,
}

impl<T: Real> SpatialCrossAttention<T> {
    pub fn new(init: &mut Init, dim: usize, cfg: DeformableConfig) -> Result<Self, NumError> {
        Ok(SpatialCrossAttention { attention: DeformableAttention::new(init, dim, cfg)? })
    }

    pub fn forward(&self, queries: &Tensor<T>, feats: &ViewFeatures<T>, geometry: &ScaGeometry) -> Result<Tensor<T>, NumError> {
        if geometry.plan.hits() == 0 {
            return Ok(queries.clone());
        }
        let per_hit = self.attention.sample(queries, &feats.maps, &geometry.plan)?;
        let scale: Vec<T> = geometry.hit_scale.iter().map(|&s| lit(s)).collect();
        let cells: Vec<Option<usize>> = geometry.plan.query_of_hit.iter().map(|&q| Some(q)).collect();
        let pooled = per_hit.scale_rows(&scale)?.scatter_rows(&cells, queries.rows())?;
        // the output projection is linear, so it is applied once per cell after averaging
        let seen: Vec<T> = geometry.cameras_per_cell.iter().map(|&n| if n > 0 { T::one() } else { T::zero() }).collect();
        queries.add(&self.attention.output.forward(&pooled)?.scale_rows(&seen)?)
    }
}

impl<T: Real> Module<T> for SpatialCrossAttention<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.attention.collect_params(prefix, out);
    }
}

pub struct BevFormerBlock<T: Real> {
    pub tsa: TemporalSelfAttention<T>,
    pub norm1: LayerNorm<T>,
    pub sca: SpatialCrossAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub norm3: LayerNorm<T>,
}

impl<T: Real> BevFormerBlock<T> {
    pub fn new(init: &mut Init, dim: usize, cfg: &BevFormerConfig) -> Result<Self, NumError> {
        Ok(BevFormerBlock {
            tsa: TemporalSelfAttention::new(init, dim, cfg.attention)?,
            norm1: LayerNorm::new(init, dim),
            sca: SpatialCrossAttention::new(init, dim, cfg.attention)?,
            norm2: LayerNorm::new(init, dim),
            mlp: Mlp::new(init, dim, cfg.mlp_dim, dim),
            norm3: LayerNorm::new(init, dim),
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        prev: Option<&Tensor<T>>,
        feats: &ViewFeatures<T>,
        geometry: &ScaGeometry,
        meta: &BevGridMeta,
    ) -> Result<Tensor<T>, NumError> {
        let x = self.norm1.forward(&x.add(&self.tsa.forward(x, prev, meta)?)?)?;
        let x = self.norm2.forward(&self.sca.forward(&x, feats, geometry)?)?;
        self.norm3.forward(&x.add(&self.mlp.forward(&x)?)?)
    }
}

impl<T: Real> Module<T> for BevFormerBlock<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.tsa.collect_params(&join(prefix, "tsa"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.sca.collect_params(&join(prefix, "sca"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.mlp.collect_params(&join(prefix, "mlp"), out);
        self.norm3.collect_params(&join(prefix, "norm3"), out);
    }
}

pub struct BevFormer<T: Real> {
    pub cfg: BevFormerConfig,
    /// Learned per-cell queries `[H·W, D]`.
    pub queries: Param<T>,
    pub blocks: Vec<BevFormerBlock<T>>,
}

impl<T: Real> BevFormer<T> {
    pub fn new(init: &mut Init, meta: &BevGridMeta, cfg: BevFormerConfig) -> Result<Self, NumError> {
        if cfg.depth == 0 {
            return Err(NumError::Config("attention encoder needs at least one block".into()));
        }
        let queries = init.uniform(0.5, &[meta.cells(), meta.dim]);
        let blocks = (0..cfg.depth).map(|_| BevFormerBlock::new(init, meta.dim, &cfg)).collect::<Result<_, _>>()?;
        Ok(BevFormer { cfg, queries, blocks })
    }

    /// `[H·W, D]` features; `prev` is the warped previous grid as rows.
    pub fn forward(
        &self,
        feats: &ViewFeatures<T>,
        geometry: &ScaGeometry,
        prev: Option<&Tensor<T>>,
        meta: &BevGridMeta,
    ) -> Result<Tensor<T>, NumError> {
        let mut x = self.queries.get();
        for block in &self.blocks {
            x = block.forward(&x, prev, feats, geometry, meta)?;
        }
        Ok(x)
    }
}

impl<T: Real> Module<T> for BevFormer<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        out.push((join(prefix, "queries"), self.queries.clone()));
        self.blocks.collect_params(&join(prefix, "blocks"), out);
    }
}

fn rows_of(t: &Tensor<impl Real>, meta: &BevGridMeta, what: &str) -> Result<(), BevError> {
    if t.numel() != meta.cells() * meta.dim || t.shape().last() != Some(&meta.dim) {
        return Err(BevError::MetaMismatch(format!("{what} {:?} for a {}×{}×{} grid", t.shape(), meta.height, meta.width, meta.dim)));
    }
    Ok(())
}

/// Temporal self-attention over `[H·W, D]` queries and an optional previous
/// grid already aligned to the current frame.
pub fn tsa_layer<T: Real>(
    layer: &TemporalSelfAttention<T>,
    queries: &Tensor<T>,
    prev: Option<&super::BevGrid<T>>,
    meta: &BevGridMeta,
) -> Result<Tensor<T>, BevError> {
    rows_of(queries, meta, "queries")?;
    let prev_rows = match prev {
        Some(p) if !p.meta.same_layout(meta) => {
            return Err(BevError::MetaMismatch(format!("previous grid {:?} vs queries {:?}", p.meta, meta)));
        }
        Some(p) => Some(p.rows()),
        None => None,
    };
    Ok(layer.forward(&queries.reshape(&[meta.cells(), meta.dim])?, prev_rows.as_ref(), meta)?)
}

/// Spatial cross-attention with `n_ref` reference heights over `z_range`.
pub fn sca_layer<T: Real>(
    layer: &SpatialCrossAttention<T>,
    queries: &Tensor<T>,
    feats: &ViewFeatures<T>,
    rig: &CameraRig,
    n_ref: usize,
    z_range: (f64, f64),
    meta: &BevGridMeta,
) -> Result<Tensor<T>, BevError> {
    rows_of(queries, meta, "queries")?;
    if n_ref == 0 {
        return Err(BevError::Config("n_ref must be at least 1".into()));
    }
    let heights = BevFormerConfig { ref_heights: n_ref, z_range, ..BevFormerConfig::default() }.heights();
    let geometry = ScaGeometry::for_features(meta, rig, &heights, feats)?;
    Ok(layer.forward(&queries.reshape(&[meta.cells(), meta.dim])?, feats, &geometry)?)
}
