use super::{BevError, BevGrid};
use crate::numgrad::{bilinear_sample, lit, Real, Tensor};
use crate::synthscene::EgoMotion;

/// Resamples `prev` into the ego frame reached after `motion`
/// (`motion` maps previous-frame coordinates to current-frame ones).
/// Cells that see no previous coverage read zero.
pub fn warp_bev<T: Real>(prev: &BevGrid<T>, motion: &EgoMotion, frame: usize) -> Result<BevGrid<T>, BevError> {
    let meta = prev.meta;
    if *motion == EgoMotion::IDENTITY {
        return Ok(BevGrid { frame, ..prev.clone() });
    }
    let mut pts = Vec::with_capacity(meta.cells() * 2);
    for r in 0..meta.height {
        for c in 0..meta.width {
            let g = meta.grid_coords(motion.invert(meta.cell_centre(r, c)));
            pts.push(lit(g[0]));
            pts.push(lit(g[1]));
        }
    }
    let pts = Tensor::new(pts, &[meta.cells(), 2])?;
    let features = bilinear_sample(&prev.features, &pts)?;
    BevGrid::new(meta, features, frame, prev.temporal)
}
