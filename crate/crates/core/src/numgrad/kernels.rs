//! Sampling and pooling kernels: bilinear lookup, multi-level deformable
//! sampling, depth lifting and pillar scatter.

use super::real::Real;
use super::tensor::Tensor;
use super::NumError;

/// One feature map inside a row-stacked value tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    /// First row of this map in the stacked `[rows, D]` value tensor.
    pub start: usize,
    pub height: usize,
    pub width: usize,
}

impl Level {
    pub fn single(height: usize, width: usize) -> Self {
        Level { start: 0, height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Corner rows and bilinear weights for a continuous (row, col) location.
/// Integer coordinates are cell centres; corners outside the map carry no row.
#[derive(Debug, Clone, Copy)]
struct Corners<T> {
    rows: [Option<usize>; 4],
    w: [T; 4],
    // d weight / d row, d weight / d col
    dr: [T; 4],
    dc: [T; 4],
}

fn corners<T: Real>(level: &Level, r: T, c: T) -> Corners<T> {
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let (ri, ci) = (r0.to_i64().unwrap_or(i64::MIN / 2), c0.to_i64().unwrap_or(i64::MIN / 2));
    let one = T::one();
    let w = [(one - fr) * (one - fc), (one - fr) * fc, fr * (one - fc), fr * fc];
    let dr = [-(one - fc), -fc, one - fc, fc];
    let dc = [-(one - fr), one - fr, -fr, fr];
    let mut rows = [None; 4];
    for (k, (dr_i, dc_i)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let (rr, cc) = (ri + dr_i, ci + dc_i);
        if rr >= 0 && cc >= 0 && (rr as usize) < level.height && (cc as usize) < level.width {
            rows[k] = Some(level.start + rr as usize * level.width + cc as usize);
        }
    }
    Corners { rows, w, dr, dc }
}

/// Bilinear lookup of `grid` (`[H, W, D]`) at continuous `(row, col)` points
/// (`[N, 2]`). Out-of-range corners read as zero. Differentiable in both
/// the grid and the points.
pub fn bilinear_sample<T: Real>(grid: &Tensor<T>, pts: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    if grid.rank() != 3 {
        return Err(NumError::shape("bilinear_sample", format!("grid {:?}: need [H, W, D]", grid.shape())));
    }
    if pts.cols() != 2 {
        return Err(NumError::shape("bilinear_sample", format!("points {:?}: need [N, 2]", pts.shape())));
    }
    let (h, w, d) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
    let level = Level::single(h, w);
    let n = pts.rows();
    let g = grid.data();
    let p = pts.data();
    let mut out = vec![T::zero(); n * d];
    let mut cache = Vec::with_capacity(n);
    for i in 0..n {
        let cr = corners(&level, p[2 * i], p[2 * i + 1]);
        let o = &mut out[i * d..(i + 1) * d];
        for k in 0..4 {
            if let Some(row) = cr.rows[k] {
                let src = &g[row * d..(row + 1) * d];
                o.iter_mut().zip(src).for_each(|(a, &v)| *a += cr.w[k] * v);
            }
        }
        cache.push(cr);
    }
    let (grid_c, pts_c) = (grid.clone(), pts.clone());
    Ok(Tensor::from_op(out, vec![n, d], "bilinear_sample", vec![grid.clone(), pts.clone()], move |go| {
        let g = grid_c.data();
        let mut g_grid = grid_c.requires_grad().then(|| vec![T::zero(); g.len()]);
        let mut g_pts = pts_c.requires_grad().then(|| vec![T::zero(); n * 2]);
        for (i, cr) in cache.iter().enumerate() {
            let go_i = &go[i * d..(i + 1) * d];
            for k in 0..4 {
                let Some(row) = cr.rows[k] else { continue };
                if let Some(gg) = g_grid.as_mut() {
                    gg[row * d..(row + 1) * d].iter_mut().zip(go_i).for_each(|(a, &v)| *a += cr.w[k] * v);
                }
                if let Some(gp) = g_pts.as_mut() {
                    let dot: T = g[row * d..(row + 1) * d].iter().zip(go_i).map(|(&a, &b)| a * b).sum();
                    gp[2 * i] += cr.dr[k] * dot;
                    gp[2 * i + 1] += cr.dc[k] * dot;
                }
            }
        }
        vec![g_grid, g_pts]
    }))
}

/// Layout of a deformable sampling call.
#[derive(Debug, Clone)]
pub struct DeformLayout {
    pub heads: usize,
    pub points: usize,
    /// Feature maps stacked in `value`.
    pub levels: Vec<Level>,
    /// Which level each query samples from.
    pub query_level: Vec<usize>,
}

/// Weighted multi-point deformable sampling.
///
/// * `value`: `[rows, D]`, maps stacked per [`DeformLayout::levels`]; head `h`
///   owns channels `h·D/heads .. (h+1)·D/heads`.
/// * `locs`: `[Q, heads·points·2]` absolute (row, col) sampling locations.
/// * `attn`: `[Q, heads·points]` weights (already normalised by the caller).
///
/// Returns `[Q, D]` with `out[q, head h] = Σ_k attn[q,h,k] · bilinear(value, locs[q,h,k])`.
pub fn deform_sample<T: Real>(
    value: &Tensor<T>,
    locs: &Tensor<T>,
    attn: &Tensor<T>,
    layout: &DeformLayout,
) -> Result<Tensor<T>, NumError> {
    let DeformLayout { heads, points, .. } = *layout;
    let d = value.cols();
    if heads == 0 || points == 0 || d % heads != 0 {
        return Err(NumError::Config(format!("deform_sample: {d} channels over {heads} heads, {points} points")));
    }
    let q = layout.query_level.len();
    let hp = heads * points;
    if locs.rows() != q || locs.cols() != hp * 2 {
        return Err(NumError::shape("deform_sample", format!("locs {:?} vs [{q}, {}]", locs.shape(), hp * 2)));
    }
    if attn.rows() != q || attn.cols() != hp {
        return Err(NumError::shape("deform_sample", format!("attn {:?} vs [{q}, {hp}]", attn.shape())));
    }
    if let Some(l) = layout.levels.iter().find(|l| l.start + l.len() > value.rows()) {
        return Err(NumError::shape("deform_sample", format!("level {l:?} exceeds {} value rows", value.rows())));
    }
    if layout.query_level.iter().any(|&l| l >= layout.levels.len()) {
        return Err(NumError::shape("deform_sample", "query level index out of range".into()));
    }
    let hd = d / heads;
    let v = value.data();
    let lo = locs.data();
    let a = attn.data();
    let mut out = vec![T::zero(); q * d];
    for qi in 0..q {
        let level = &layout.levels[layout.query_level[qi]];
        for h in 0..heads {
            let o = &mut out[qi * d + h * hd..qi * d + (h + 1) * hd];
            for k in 0..points {
                let s = h * points + k;
                let cr = corners(level, lo[qi * hp * 2 + 2 * s], lo[qi * hp * 2 + 2 * s + 1]);
                let weight = a[qi * hp + s];
                for c in 0..4 {
                    if let Some(row) = cr.rows[c] {
                        let f = weight * cr.w[c];
                        let src = &v[row * d + h * hd..row * d + (h + 1) * hd];
                        o.iter_mut().zip(src).for_each(|(acc, &x)| *acc += f * x);
                    }
                }
            }
        }
    }
    let (vc, lc, ac) = (value.clone(), locs.clone(), attn.clone());
    let (levels, query_level) = (layout.levels.clone(), layout.query_level.clone());
    Ok(Tensor::from_op(
        out,
        vec![q, d],
        "deform_sample",
        vec![value.clone(), locs.clone(), attn.clone()],
        move |go| {
            let v = vc.data();
            let a = ac.data();
            let lo = lc.data();
            let mut gv = vc.requires_grad().then(|| vec![T::zero(); v.len()]);
            let mut gl = lc.requires_grad().then(|| vec![T::zero(); q * hp * 2]);
            let mut ga = ac.requires_grad().then(|| vec![T::zero(); q * hp]);
            for qi in 0..q {
                let level = &levels[query_level[qi]];
                for h in 0..heads {
                    let go_h = &go[qi * d + h * hd..qi * d + (h + 1) * hd];
                    for k in 0..points {
                        let s = h * points + k;
                        // recomputed rather than cached: a cache costs ~100 bytes per sample
                        let cr = corners(level, lo[qi * hp * 2 + 2 * s], lo[qi * hp * 2 + 2 * s + 1]);
                        let weight = a[qi * hp + s];
                        let (mut d_attn, mut d_r, mut d_c) = (T::zero(), T::zero(), T::zero());
                        for c in 0..4 {
                            let Some(row) = cr.rows[c] else { continue };
                            let base = row * d + h * hd;
                            let dot: T = v[base..base + hd].iter().zip(go_h).map(|(&x, &g)| x * g).sum();
                            d_attn += cr.w[c] * dot;
                            d_r += cr.dr[c] * dot;
                            d_c += cr.dc[c] * dot;
                            if let Some(gv) = gv.as_mut() {
                                let f = weight * cr.w[c];
                                gv[base..base + hd].iter_mut().zip(go_h).for_each(|(acc, &g)| *acc += f * g);
                            }
                        }
                        if let Some(ga) = ga.as_mut() {
                            ga[qi * hp + s] = d_attn;
                        }
                        if let Some(gl) = gl.as_mut() {
                            gl[qi * hp * 2 + 2 * s] = weight * d_r;
                            gl[qi * hp * 2 + 2 * s + 1] = weight * d_c;
                        }
                    }
                }
            }
            vec![gv, gl, ga]
        },
    ))
}

/// Depth lift: row `p·B + b` of the output is `feats[p] · weights[p, b]`.
/// `weights` is `[P, B]`, `feats` is `[P, D]`, result `[P·B, D]`.
pub fn lift_outer<T: Real>(weights: &Tensor<T>, feats: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    let (p, b) = (weights.rows(), weights.cols());
    let d = feats.cols();
    if feats.rows() != p {
        return Err(NumError::shape("lift_outer", format!("weights {:?} vs feats {:?}", weights.shape(), feats.shape())));
    }
    let (w, f) = (weights.data(), feats.data());
    let mut out = Vec::with_capacity(p * b * d);
    for i in 0..p {
        let fr = &f[i * d..(i + 1) * d];
        for j in 0..b {
            let s = w[i * b + j];
            out.extend(fr.iter().map(|&x| x * s));
        }
    }
    let (wc, fc) = (weights.clone(), feats.clone());
    Ok(Tensor::from_op(out, vec![p * b, d], "lift_outer", vec![weights.clone(), feats.clone()], move |g| {
        let (w, f) = (wc.data(), fc.data());
        let gw = wc.requires_grad().then(|| {
            let mut gw = vec![T::zero(); p * b];
            for i in 0..p {
                let fr = &f[i * d..(i + 1) * d];
                for j in 0..b {
                    let gr = &g[(i * b + j) * d..(i * b + j + 1) * d];
                    gw[i * b + j] = fr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                }
            }
            gw
        });
        let gf = fc.requires_grad().then(|| {
            let mut gf = vec![T::zero(); p * d];
            for i in 0..p {
                let acc = &mut gf[i * d..(i + 1) * d];
                for j in 0..b {
                    let s = w[i * b + j];
                    let gr = &g[(i * b + j) * d..(i * b + j + 1) * d];
                    acc.iter_mut().zip(gr).for_each(|(a, &y)| *a += s * y);
                }
            }
            gf
        });
        vec![gw, gf]
    }))
}

/// Result of pooling point features into grid cells.
#[derive(Debug, Clone)]
pub struct Pooled<T: Real> {
    /// `[cells, D]`
    pub grid: Tensor<T>,
    pub dropped: usize,
}

/// Pillar pooling: sums each point's feature row into its cell. Points whose
/// cell is `None` or `>= cells` are dropped and counted.
pub fn scatter_add_pool<T: Real>(
    cell_of_point: &[Option<usize>],
    features: &Tensor<T>,
    cells: usize,
) -> Result<Pooled<T>, NumError> {
    let idx: Vec<Option<usize>> = cell_of_point.iter().map(|c| c.filter(|&c| c < cells)).collect();
    let dropped = idx.iter().filter(|c| c.is_none()).count();
    let grid = features.as_2d()?.scatter_rows(&idx, cells)?;
    Ok(Pooled { grid, dropped })
}
