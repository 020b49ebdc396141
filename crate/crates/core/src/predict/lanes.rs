use super::PredictError;
use crate::numgrad::{bilinear_sample, join, lit, Init, Linear, Mlp, Module, Param, Real, Tensor};
use crate::pv2bev::BevGrid;
use crate::synthscene::{MapElement, X_RANGE, Y_RANGE};

/// Per-vertex input: normalised position, direction to the next vertex, class one-hot.
pub const VERTEX_FEATURES: usize = 8;

/// Polyline subgraph encoder: shared per-vertex MLP, max-pooled per element.
pub struct LaneEncoder<T: Real> {
    pub points: usize,
    pub mlp: Mlp<T>,
}

impl<T: Real> LaneEncoder<T> {
    /// `extra` is the width of additional per-vertex features; with any, the hidden layer doubles.
    pub fn new(init: &mut Init, points: usize, hidden: usize, extra: usize, dim: usize) -> Self {
        let hidden = if extra > 0 { 2 * hidden } else { hidden };
        LaneEncoder { points, mlp: Mlp::new(init, VERTEX_FEATURES + extra, hidden, dim) }
    }
}

impl<T: Real> Module<T> for LaneEncoder<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.mlp.collect_params(&join(prefix, "mlp"), out);
    }
}

fn vertex_features<T: Real>(elements: &[MapElement], points: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(elements.len() * points * VERTEX_FEATURES);
    for e in elements {
        let v = e.resample(points);
        for j in 0..points {
            let (a, b) = if j + 1 < points { (v[j], v[j + 1]) } else { (v[j - 1], v[j]) };
            let mut row = [0.0; VERTEX_FEATURES];
            row[0] = v[j][0] / X_RANGE.1;
            row[1] = v[j][1] / Y_RANGE.1;
            row[2] = (b[0] - a[0]) / 5.0;
            row[3] = (b[1] - a[1]) / 5.0;
            row[4 + e.class.index()] = 1.0;
            out.extend(row.iter().map(|&x| lit::<T>(x)));
        }
    }
    out
}

/// `[E, D]` element embeddings, or `None` for an empty map. `extra` holds
/// per-vertex features `[E·points, k]` concatenated before the MLP.
pub fn encode_lanes_vectornet<T: Real>(
    encoder: &LaneEncoder<T>,
    elements: &[MapElement],
    extra: Option<&Tensor<T>>,
) -> Result<Option<Tensor<T>>, PredictError> {
    if elements.is_empty() {
        return Ok(None);
    }
    let n = elements.len() * encoder.points;
    let base = Tensor::new(vertex_features(elements, encoder.points), &[n, VERTEX_FEATURES])?;
    let input = match extra {
        Some(x) => Tensor::concat_cols(&[&base, x])?,
        None => base,
    };
    if input.cols() != encoder.mlp.fc1.d_in() {
        return Err(PredictError::Config(format!(
            "lane encoder expects {} vertex features, got {}",
            encoder.mlp.fc1.d_in(),
            input.cols()
        )));
    }
    Ok(Some(encoder.mlp.forward(&input)?.group_max(encoder.points)?))
}

/// Width-3 convolution along each element's vertex sequence (zero padded at the ends).
pub struct VertexRefiner<T: Real> {
    pub conv: Linear<T>,
}

impl<T: Real> VertexRefiner<T> {
    pub fn new(init: &mut Init, bev_dim: usize, dim: usize) -> Self {
        VertexRefiner { conv: Linear::new(init, 3 * bev_dim, dim) }
    }

    /// `x: [E·points, C]` → `[E·points, dim]`.
    pub fn forward(&self, x: &Tensor<T>, points: usize) -> Result<Tensor<T>, PredictError> {
        let n = x.rows();
        let shifted = |delta: isize| -> Vec<Option<usize>> {
            (0..n)
                .map(|i| {
                    let j = (i % points) as isize + delta;
                    (0..points as isize).contains(&j).then(|| (i as isize + delta) as usize)
                })
                .collect()
        };
        let window = Tensor::concat_cols(&[&x.gather_rows(&shifted(-1))?, x, &x.gather_rows(&shifted(1))?])?;
        Ok(self.conv.forward(&window)?)
    }
}

impl<T: Real> Module<T> for VertexRefiner<T> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Param<T>)>) {
        self.conv.collect_params(&join(prefix, "conv"), out);
    }
}

pub struct AugmentedVertices<T: Real> {
    /// `[E·points, 2 + dim]`: raw `(x, y)` then refined BEV features.
    pub features: Tensor<T>,
    /// Vertices that fell outside the range and were clamped onto it.
    pub clamped: Vec<bool>,
}

/// Samples the BEV grid beneath every (resampled) vertex, refines the samples
/// with the vertex convolution and prepends the raw coordinates.
pub fn s2_augment_vertices<T: Real>(
    elements: &[MapElement],
    bev: &BevGrid<T>,
    refiner: &VertexRefiner<T>,
    points: usize,
) -> Result<AugmentedVertices<T>, PredictError> {
    if elements.is_empty() {
        return Err(PredictError::Empty("vector map"));
    }
    let meta = &bev.meta;
    let mut clamped = Vec::with_capacity(elements.len() * points);
    let mut raw = Vec::with_capacity(elements.len() * points * 2);
    let mut at = Vec::with_capacity(raw.capacity());
    for e in elements {
        for p in e.resample(points) {
            let q = [p[0].clamp(meta.x_range.0, meta.x_range.1), p[1].clamp(meta.y_range.0, meta.y_range.1)];
            clamped.push(q != p);
            let g = meta.grid_coords(q);
            raw.extend([lit::<T>(q[0]), lit(q[1])]);
            at.extend([lit::<T>(g[0]), lit(g[1])]);
        }
    }
    let n = clamped.len();
    let sampled = bilinear_sample(&bev.features, &Tensor::new(at, &[n, 2])?)?;
    let refined = refiner.forward(&sampled, points)?;
    let features = Tensor::concat_cols(&[&Tensor::new(raw, &[n, 2])?, &refined])?;
    Ok(AugmentedVertices { features, clamped })
}
