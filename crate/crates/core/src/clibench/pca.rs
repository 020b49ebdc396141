use nalgebra::{DMatrix, SymmetricEigen};

use crate::numgrad::Real;
use crate::pv2bev::BevGrid;

/// 8-bit grayscale image, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Largest eigenvalue and unit eigenvector of the sample covariance of
/// `samples` (`n` rows of width `d`), or `None` when the samples do not vary.
pub fn first_component(samples: &[f64], n: usize, d: usize) -> Option<(f64, Vec<f64>)> {
    if n < 2 || d == 0 {
        return None;
    }
    let x = DMatrix::from_row_slice(n, d, samples);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let (k, &value) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(value > 0.0) {
        return None;
    }
    Some((value, eig.eigenvectors.column(k).iter().copied().collect()))
}

/// Each cell's centred feature projected on the grid's first principal
/// component, row-major. The sign is fixed so the cell with the largest
/// feature norm projects non-negatively. `None` for a constant grid.
pub fn pca_projection<T: Real>(bev: &BevGrid<T>) -> Option<Vec<f64>> {
    let (n, d) = (bev.meta.cells(), bev.meta.dim);
    let x: Vec<f64> = bev.features.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let (_, pc) = first_component(&x, n, d)?;
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
    let mut proj: Vec<f64> =
        x.chunks(d).map(|row| row.iter().zip(&mean).zip(&pc).map(|((v, m), c)| (v - m) * c).sum()).collect();
    let norm = |i: usize| x[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>();
    let brightest = (1..n).fold(0, |b, i| if norm(i) > norm(b) { i } else { b });
    if proj[brightest] < 0.0 {
        proj.iter_mut().for_each(|p| *p = -*p);
    }
    Some(proj)
}

/// First-PC projection min-max scaled to `[0, 255]`. The image shows the
/// forward edge of the grid at the top (image row `r` is grid row `H-1-r`).
/// A constant grid gives uniform 128 with a warning.
pub fn pca_grayscale<T: Real>(bev: &BevGrid<T>) -> GrayImage {
    let (h, w) = (bev.meta.height, bev.meta.width);
    let flat = |proj: &[f64]| -> Option<Vec<u8>> {
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi > lo).then(|| proj.iter().map(|p| (255.0 * (p - lo) / (hi - lo)).round() as u8).collect())
    };
    let pixels = match pca_projection(bev).as_deref().and_then(flat) {
        Some(grid) => (0..h).rev().flat_map(|r| grid[r * w..(r + 1) * w].to_vec()).collect(),
        None => {
            log::warn!("BEV grid has zero variance; writing uniform mid-gray");
            vec![128; h * w]
        }
    };
    GrayImage { rows: h, cols: w, pixels }
}

/// Binary PGM (`P5`, maxval 255).
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}
