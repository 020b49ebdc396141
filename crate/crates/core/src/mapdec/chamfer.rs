use super::MapError;
use crate::synthscene::{dist, resample_polyline};

/// Points spaced at most `step` apart along the polyline, endpoints included.
pub fn resample_by_step(points: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let length: f64 = points.windows(2).map(|w| dist(w[0], w[1])).sum();
    if points.len() < 2 || length == 0.0 {
        return points.iter().take(1).copied().collect();
    }
    resample_polyline(points, (length / step).ceil() as usize + 1)
}

fn mean_nearest(from: &[[f64; 2]], to: &[[f64; 2]]) -> f64 {
    let total: f64 = from.iter().map(|&a| to.iter().map(|&b| dist(a, b)).fold(f64::INFINITY, f64::min)).sum();
    total / from.len() as f64
}

/// Symmetric mean nearest-point distance between two polyline sets, each
/// resampled at `step` metres.
pub fn chamfer_distance(a: &[Vec<[f64; 2]>], b: &[Vec<[f64; 2]>], step: f64) -> Result<f64, MapError> {
    if !(step > 0.0) {
        return Err(MapError::Config(format!("chamfer step {step}")));
    }
    let sample = |set: &[Vec<[f64; 2]>]| -> Vec<[f64; 2]> { set.iter().flat_map(|p| resample_by_step(p, step)).collect() };
    let (pa, pb) = (sample(a), sample(b));
    if pa.is_empty() {
        return Err(MapError::Empty("first polyline set"));
    }
    if pb.is_empty() {
        return Err(MapError::Empty("second polyline set"));
    }
    Ok(0.5 * (mean_nearest(&pa, &pb) + mean_nearest(&pb, &pa)))
}
