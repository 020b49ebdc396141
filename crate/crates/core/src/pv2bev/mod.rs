//! Perspective-view to bird's-eye-view encoders.
//!
//! Camera images go through a strided conv stem, then either the attention
//! encoder ([`BevFormer`]: temporal self-attention over the warped previous
//! grid, spatial cross-attention into the cameras) or the lift-splat encoder
//! ([`Lss`], current frame only).

mod bevformer;
mod grid;
mod lss;
mod stem;
mod warp;

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use bevformer::{
    sca_layer, tsa_layer, BevFormer, BevFormerBlock, BevFormerConfig, ScaGeometry, SpatialCrossAttention,
    TemporalSelfAttention,
};
pub use grid::{BevGrid, BevGridMeta};
pub use lss::{lss_encode, LiftGeometry, LiftedPointCloud, Lss, LssConfig};
pub use stem::{conv_out, im2col_index, Conv3x3, ConvStem, ViewFeatures};
pub use warp::warp_bev;

use crate::numgrad::{join, Init, Module, NumError, Param, Real};
use crate::synthscene::{CameraRig, EgoMotion, Scene, ViewImage};

#[derive(Debug, thiserror::Error)]
pub enum BevError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("encoder config: {0}")]
    Config(String),
    #[error("grid layout mismatch: {0}")]
    MetaMismatch(String),
    #[error("encoder contract: {0}")]
    Contract(String),
    #[error("non-finite BEV features")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    BevFormer,
    Lss,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bevformer" => Ok(EncoderKind::BevFormer),
            "lss" => Ok(EncoderKind::Lss),
            _ => Err(format!("unknown encoder `{s}` (expected bevformer or lss)")),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::BevFormer => "bevformer",
            EncoderKind::Lss => "lss",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub stem_channels: usize,
    pub bevformer: BevFormerConfig,
    pub lss: LssConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let meta = BevGridMeta::desk();
        EncoderConfig {
            kind: EncoderKind::BevFormer,
            height: meta.height,
            width: meta.width,
            dim: meta.dim,
            stem_channels: 16,
            bevformer: BevFormerConfig::default(),
            lss: LssConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn meta(&self) -> Result<BevGridMeta, BevError> {
        BevGridMeta::new(self.height, self.width, self.dim)
    }
}

enum Geometry {
    Attention(ScaGeometry),
    Lift(LiftGeometry),
}

pub struct BevEncoder<T: Real> {
    pub cfg: EncoderConfig,
    pub meta: BevGridMeta,
    pub stem: ConvStem<T>,
    pub bevformer: Option<BevFormer<T>>,
    pub lss: Option<Lss<T>>,
    /// Camera geometry is fixed per rig, so it is computed once and reused.
    geometry: RefCell<Option<(CameraRig, Rc<Geometry>)>>,
}

impl<T: Real> BevEncoder<T> {
    pub fn new(init: &mut Init, cfg: EncoderConfig) -> Result<Self, BevError> {
        let meta = cfg.meta()?;
        let stem = ConvStem::new(init, cfg.stem_channels, meta.dim);
        let (bevformer, lss) = match cfg.kind {
            EncoderKind::BevFormer => (Some(BevFormer::new(init, &meta, cfg.bevformer.clone())?), None),
            EncoderKind::Lss => (None, Some(Lss::new(init, meta.dim, cfg.lss.clone())?)),
        };
        Ok(BevEncoder { cfg, meta, stem, bevformer, lss, geometry: RefCell::new(None) })
    }

    pub fn kind(&self) -> EncoderKind {
        self.cfg.kind
    }

    fn geometry(&self, rig: &CameraRig, feats: &ViewFeatures<T>) -> Result<Rc<Geometry>, BevError> {
        if let Some((cached_rig, g)) = self.geometry.borrow().as_ref() {
            if cached_rig == rig {
                return Ok(Rc::clone(g));
            }
        }
        let g = Rc::new(match self.cfg.kind {
            EncoderKind::BevFormer => {
                Geometry::Attention(ScaGeometry::for_features(&self.meta, rig, &self.cfg.bevformer.heights(), feats)?)
            }
            EncoderKind::Lss => Geometry::Lift(LiftGeometry::new(&self.meta, rig, feats, &self.cfg.lss)?),
        });
        *self.geometry.borrow_mut() = Some((rig.clone(), Rc::clone(&g)));
        Ok(g)
    }

    /// Cells seen by at least one camera (attention encoder geometry).
    pub fn cameras_per_cell(&self, rig: &CameraRig, images: &[ViewImage]) -> Result<Vec<usize>, BevError> {
        let feats = self.stem.forward(images)?;
        match &*self.geometry(rig, &feats)? {
            Geometry::Attention(g) => Ok(g.cameras_per_cell.clone()),
            Geometry::Lift(_) => Err(BevError::Config("camera coverage is defined for the attention encoder".into())),
        }
    }

    /// Encodes one frame. `prev` is a grid from an earlier frame together with
    /// the ego motion from its frame to this one; the lift-splat encoder ignores it.
    pub fn encode(
        &self,
        images: &[ViewImage],
        rig: &CameraRig,
        frame: usize,
        prev: Option<(&BevGrid<T>, EgoMotion)>,
    ) -> Result<BevGrid<T>, BevError> {
        if images.len() != rig.len() {
            return Err(BevError::Config(format!("{} images for {} cameras", images.len(), rig.len())));
        }
        let feats = self.stem.forward(images)?;
        let geometry = self.geometry(rig, &feats)?;
        match (&*geometry, &self.bevformer, &self.lss) {
            (Geometry::Attention(g), Some(model), _) => {
                let warped = match prev {
                    Some((p, motion)) => {
                        if !p.meta.same_layout(&self.meta) {
                            return Err(BevError::MetaMismatch(format!("previous grid {:?} vs encoder {:?}", p.meta, self.meta)));
                        }
                        if p.frame >= frame {
                            return Err(BevError::Contract(format!("previous grid frame {} is not before {frame}", p.frame)));
                        }
                        Some(warp_bev(p, &motion, frame)?.rows())
                    }
                    None => None,
                };
                let out = model.forward(&feats, g, warped.as_ref(), &self.meta)?;
                BevGrid::new(self.meta, out, frame, warped.is_some())
            }
            (Geometry::Lift(g), _, Some(model)) => {
                let (pooled, _) = model.splat(&feats, g, &self.meta)?;
                BevGrid::new(self.meta, model.refine(&pooled, &self.meta)?, frame, false)
            }
            _ => unreachable!("geometry follows the encoder kind"),
        }
    }
}

impl<T: Real> Module<T> for BevEncoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.stem.collect_params(&join(prefix, "stem"), out);
        self.bevformer.collect_params(&join(prefix, "bevformer"), out);
        self.lss.collect_params(&join(prefix, "lss"), out);
    }
}

/// Encodes `frame` of `scene`. With the attention encoder a previous grid is
/// warped by the scene's ground-truth ego motion and fused; the lift-splat
/// encoder processes the current frame only and ignores `prev`.
pub fn encode_bev<T: Real>(
    encoder: &BevEncoder<T>,
    scene: &Scene,
    frame: usize,
    prev: Option<&BevGrid<T>>,
) -> Result<BevGrid<T>, BevError> {
    let images = scene.views_at(frame).ok_or_else(|| BevError::Config(format!("scene has no views at frame {frame}")))?;
    let prev = match (encoder.kind(), prev) {
        (EncoderKind::Lss, _) | (_, None) => None,
        (EncoderKind::BevFormer, Some(p)) => {
            if p.frame >= scene.frame_count() {
                return Err(BevError::Contract(format!("previous grid frame {} outside the scene", p.frame)));
            }
            Some((p, scene.ego_motion(p.frame, frame)))
        }
    };
    encoder.encode(images, &scene.rig, frame, prev)
}

/// Prediction-time BEV of a scene. `temporal` fuses the attention encoder's
/// output from the previous frame (computed without history and detached).
pub fn encode_scene<T: Real>(encoder: &BevEncoder<T>, scene: &Scene, temporal: bool) -> Result<BevGrid<T>, BevError> {
    let cur = scene.current_frame();
    if temporal && encoder.kind() == EncoderKind::BevFormer {
        let prev = encode_bev(encoder, scene, scene.previous_frame(), None)?.detach();
        encode_bev(encoder, scene, cur, Some(&prev))
    } else {
        encode_bev(encoder, scene, cur, None)
    }
}
