//! Lift-splat encoder: per-pixel depth distributions lift features onto
//! rays, pillar pooling splats them into BEV cells.

use serde::{Deserialize, Serialize};

use super::stem::{Conv3x3, ViewFeatures};
use super::{BevError, BevGrid, BevGridMeta};
use crate::numgrad::{join, lift_outer, scatter_add_pool, Init, LayerNorm, Linear, Module, NumError, Param, Real, Tensor};
use crate::synthscene::CameraRig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LssConfig {
    pub bins: usize,
    /// Depth along the optical axis (m); bin centres span it endpoints included.
    pub depth_range: (f64, f64),
}

impl Default for LssConfig {
    fn default() -> Self {
        LssConfig { bins: 16, depth_range: (1.0, 35.0) }
    }
}

impl LssConfig {
    pub fn depths(&self) -> Vec<f64> {
        let (lo, hi) = self.depth_range;
        (0..self.bins).map(|b| lo + (hi - lo) * b as f64 / (self.bins - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<(), BevError> {
        let (lo, hi) = self.depth_range;
        if self.bins < 2 || !(lo > 0.0 && hi > lo) {
            return Err(BevError::Config(format!("depth bins {} over [{lo}, {hi}] m", self.bins)));
        }
        Ok(())
    }
}

/// Target cell of every lifted point, `ray·bins + bin`; `None` outside the grid.
#[derive(Debug, Clone)]
pub struct LiftGeometry {
    pub rays: usize,
    pub bins: usize,
    pub cell_of_point: Vec<Option<usize>>,
}

impl LiftGeometry {
    pub fn new<T: Real>(meta: &BevGridMeta, rig: &CameraRig, feats: &ViewFeatures<T>, cfg: &LssConfig) -> Result<Self, BevError> {
        cfg.validate()?;
        if rig.len() != feats.cameras {
            return Err(BevError::Config(format!("{} feature maps for {} cameras", feats.cameras, rig.len())));
        }
        let depths = cfg.depths();
        let mut cell_of_point = Vec::with_capacity(feats.maps.rows() * cfg.bins);
        for cam in &rig.cameras {
            for r in 0..feats.rows {
                for c in 0..feats.cols {
                    let (u, v) = feats.pixel_of(r, c);
                    let ray = cam.ray(u, v);
                    for &d in &depths {
                        let p = [cam.translation[0] + d * ray[0], cam.translation[1] + d * ray[1]];
                        cell_of_point.push(meta.cell_of(p));
                    }
                }
            }
        }
        Ok(LiftGeometry { rays: feats.maps.rows(), bins: cfg.bins, cell_of_point })
    }
}

/// Lifted points `[rays·bins, D]` with their per-ray depth weights `[rays, bins]`.
pub struct LiftedPointCloud<T: Real> {
    pub points: Tensor<T>,
    pub depth_weights: Tensor<T>,
}

pub struct Lss<T: Real> {
    pub cfg: LssConfig,
    pub depth_head: Linear<T>,
    pub context: Linear<T>,
    pub refine1: Conv3x3<T>,
    pub refine2: Conv3x3<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> Lss<T> {
    pub fn new(init: &mut Init, dim: usize, cfg: LssConfig) -> Result<Self, BevError> {
        cfg.validate()?;
        Ok(Lss {
            depth_head: Linear::new(init, dim, cfg.bins),
            context: Linear::new(init, dim, dim),
            refine1: Conv3x3::new(init, dim, dim, 1),
            refine2: Conv3x3::new(init, dim, dim, 1),
            norm: LayerNorm::new(init, dim),
            cfg,
        })
    }

    pub fn lift(&self, feats: &ViewFeatures<T>) -> Result<LiftedPointCloud<T>, NumError> {
        let depth_weights = self.depth_head.forward(&feats.maps)?.softmax();
        let context = self.context.forward(&feats.maps)?;
        Ok(LiftedPointCloud { points: lift_outer(&depth_weights, &context)?, depth_weights })
    }

    /// Lift then splat: `[H·W, D]` pooled features and the number of dropped points.
    pub fn splat(&self, feats: &ViewFeatures<T>, geometry: &LiftGeometry, meta: &BevGridMeta) -> Result<(Tensor<T>, usize), NumError> {
        let lifted = self.lift(feats)?;
        let pooled = scatter_add_pool(&geometry.cell_of_point, &lifted.points, meta.cells())?;
        Ok((pooled.grid, pooled.dropped))
    }

    /// Two 3×3 convolutions over the pooled grid, then a per-cell norm.
    pub fn refine(&self, pooled: &Tensor<T>, meta: &BevGridMeta) -> Result<Tensor<T>, NumError> {
        let (h, _, _) = self.refine1.forward(pooled, 1, meta.height, meta.width)?;
        let (h, _, _) = self.refine2.forward(&h.relu(), 1, meta.height, meta.width)?;
        self.norm.forward(&h)
    }
}

impl<T: Real> Module<T> for Lss<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.depth_head.collect_params(&join(prefix, "depth_head"), out);
        self.context.collect_params(&join(prefix, "context"), out);
        self.refine1.collect_params(&join(prefix, "refine1"), out);
        self.refine2.collect_params(&join(prefix, "refine2"), out);
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

/// Lift-splat into a BEV grid, without refinement.
pub fn lss_encode<T: Real>(
    lss: &Lss<T>,
    feats: &ViewFeatures<T>,
    rig: &CameraRig,
    meta: &BevGridMeta,
    frame: usize,
) -> Result<BevGrid<T>, BevError> {
    let geometry = LiftGeometry::new(meta, rig, feats, &lss.cfg)?;
    let (pooled, _) = lss.splat(feats, &geometry, meta)?;
    BevGrid::new(*meta, pooled, frame, false)
}
