use super::PredictError;
use crate::numgrad::{join, Init, Linear, Module, MultiHeadAttention, Param, Real, Tensor};
use crate::pv2bev::{BevGrid, BevGridMeta};

/// Number of `patch`-sized tiles covering an `height × width` grid.
pub fn patch_count(height: usize, width: usize, patch: (usize, usize)) -> Result<usize, PredictError> {
    let (ph, pw) = patch;
    if ph == 0 || pw == 0 || height % ph != 0 || width % pw != 0 {
        return Err(PredictError::Config(format!(
            "patch {ph}×{pw} does not tile the {height}×{width} BEV grid"
        )));
    }
    Ok((height / ph) * (width / pw))
}

/// Linear patch projection plus a learned embedding per patch position.
pub struct PatchEmbed<T: Real> {
    pub patch: (usize, usize),
    pub proj: Linear<T>,
    pub position: Param<T>,
}

impl<T: Real> PatchEmbed<T> {
    pub fn new(init: &mut Init, meta: &BevGridMeta, patch: (usize, usize), dim: usize) -> Result<Self, PredictError> {
        let n = patch_count(meta.height, meta.width, patch)?;
        Ok(PatchEmbed {
            patch,
            proj: Linear::new(init, patch.0 * patch.1 * meta.dim, dim),
            position: init.uniform(0.1, &[n, dim]),
        })
    }
}

impl<T: Real> Module<T> for PatchEmbed<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.proj.collect_params(&join(prefix, "proj"), out);
        out.push((join(prefix, "position"), self.position.clone()));
    }
}

/// `N` patch tokens, row-major over the patch grid.
pub struct PatchEmbeds<T: Real> {
    pub patch: (usize, usize),
    /// Patch grid extent (rows, cols).
    pub grid: (usize, usize),
    pub embeddings: Tensor<T>,
}

impl<T: Real> PatchEmbeds<T> {
    pub fn count(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Top-left cell of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        ((index / self.grid.1) * self.patch.0, (index % self.grid.1) * self.patch.1)
    }
}

/// Splits the grid into non-overlapping patches, flattens each to
/// `P_h·P_w·D` and projects it; position embeddings are added after.
pub fn patchify<T: Real>(bev: &BevGrid<T>, embed: &PatchEmbed<T>) -> Result<PatchEmbeds<T>, PredictError> {
    let meta = &bev.meta;
    let (ph, pw) = embed.patch;
    let n = patch_count(meta.height, meta.width, embed.patch)?;
    if embed.proj.d_in() != ph * pw * meta.dim || embed.position.shape()[0] != n {
        return Err(PredictError::Config(format!("patch embedding was built for a different grid than {meta:?}")));
    }
    let (gr, gc) = (meta.height / ph, meta.width / pw);
    let mut order = Vec::with_capacity(meta.cells());
    for pr in 0..gr {
        for pc in 0..gc {
            for i in 0..ph {
                for j in 0..pw {
                    order.push(Some((pr * ph + i) * meta.width + pc * pw + j));
                }
            }
        }
    }
    let flat = bev.rows().gather_rows(&order)?.reshape(&[n, ph * pw * meta.dim])?;
    let embeddings = embed.proj.forward(&flat)?.add(&embed.position.get())?;
    Ok(PatchEmbeds { patch: embed.patch, grid: (gr, gc), embeddings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchIndex {
    pub row: usize,
    pub col: usize,
}

impl PatchIndex {
    pub fn flat(self, meta: &BevGridMeta, patch: (usize, usize)) -> usize {
        self.row * (meta.width / patch.1) + self.col
    }
}

/// Patch containing an ego-frame position.
pub fn agent_patch_index(pos: [f64; 2], meta: &BevGridMeta, patch: (usize, usize)) -> Result<PatchIndex, PredictError> {
    patch_count(meta.height, meta.width, patch)?;
    let cell = meta.cell_of(pos).ok_or(PredictError::OutOfRange { x: pos[0], y: pos[1] })?;
    Ok(PatchIndex { row: (cell / meta.width) / patch.0, col: (cell % meta.width) / patch.1 })
}

/// Each agent's own patch token attends over all patch tokens: `[M, D]`.
pub fn agent_bev_attention<T: Real>(
    patch_of_agent: &[usize],
    patches: &PatchEmbeds<T>,
    attention: &MultiHeadAttention<T>,
) -> Result<Tensor<T>, PredictError> {
    if patch_of_agent.is_empty() {
        return Err(PredictError::Empty("agent list"));
    }
    let idx: Vec<_> = patch_of_agent.iter().map(|&p| Some(p)).collect();
    let queries = patches.embeddings.gather_rows(&idx)?;
    Ok(attention.forward(&queries, &patches.embeddings, &patches.embeddings)?)
}
