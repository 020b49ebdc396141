use super::{hungarian_match, DecodedMap, MapDecoderConfig, MapError, NONE_CLASS};
use crate::numgrad::{lit, Real, Tensor};
use crate::synthscene::VectorMap;

/// Ground-truth elements resampled to the decoder's point count.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTargets {
    pub classes: Vec<usize>,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl MapTargets {
    pub fn new(map: &VectorMap, cfg: &MapDecoderConfig) -> Self {
        let kept = cfg.targets(map);
        MapTargets {
            classes: kept.iter().map(|e| e.class.index()).collect(),
            polylines: kept.iter().map(|e| e.resample(cfg.points)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Mean absolute coordinate error against `gt` read forward or reversed,
/// whichever is smaller; `true` when reversed.
pub fn orientation_l1(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> (f64, bool) {
    let n = gt.len();
    let l1 = |rev: bool| {
        let mut s = 0.0;
        for (j, p) in pred.iter().enumerate() {
            let g = if rev { gt[n - 1 - j] } else { gt[j] };
            s += (p[0] - g[0]).abs() + (p[1] - g[1]).abs();
        }
        s / (2 * n) as f64
    };
    let (fwd, rev) = (l1(false), l1(true));
    if rev < fwd {
        (rev, true)
    } else {
        (fwd, false)
    }
}

fn log_probs<T: Real>(pred: &DecodedMap<T>) -> Vec<f64> {
    pred.logits.detach().log_softmax().data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

/// `cost[pred][gt]`: orientation-free point L1 plus class cross-entropy.
pub fn matching_cost<T: Real>(pred: &DecodedMap<T>, targets: &MapTargets) -> Vec<Vec<f64>> {
    let lp = log_probs(pred);
    let c = super::CLASSES;
    (0..pred.instances)
        .map(|i| {
            let poly = pred.polyline(i);
            targets
                .polylines
                .iter()
                .zip(&targets.classes)
                .map(|(gt, &class)| orientation_l1(&poly, gt).0 - lp[i * c + class])
                .collect()
        })
        .collect()
}

/// Hungarian-matched set loss averaged over instances: matched predictions pay
/// point L1 and class cross-entropy, the rest are pushed toward `none`.
pub fn map_matching_loss<T: Real>(pred: &DecodedMap<T>, targets: &MapTargets) -> Result<Tensor<T>, MapError> {
    if pred.points != targets.polylines.first().map_or(pred.points, Vec::len) {
        return Err(MapError::Config(format!("targets are not resampled to {} points", pred.points)));
    }
    let mut class_of = vec![NONE_CLASS; pred.instances];
    let mut target_pts = vec![T::zero(); pred.instances * pred.points * 2];
    let mut mask = vec![T::zero(); target_pts.len()];
    if !targets.is_empty() {
        let assignment = hungarian_match(&matching_cost(pred, targets))?;
        for (g, &i) in assignment.iter().enumerate() {
            class_of[i] = targets.classes[g];
            let gt = &targets.polylines[g];
            let (_, reversed) = orientation_l1(&pred.polyline(i), gt);
            for j in 0..pred.points {
                let p = if reversed { gt[pred.points - 1 - j] } else { gt[j] };
                let at = (i * pred.points + j) * 2;
                target_pts[at] = lit(p[0]);
                target_pts[at + 1] = lit(p[1]);
                mask[at] = T::one();
                mask[at + 1] = T::one();
            }
        }
    }
    let shape = pred.vertices.shape().to_vec();
    let l1 = pred
        .vertices
        .sub(&Tensor::new(target_pts, &shape)?)?
        .abs()
        .mul(&Tensor::new(mask, &shape)?)?
        .sum()
        .scale(lit(1.0 / (2 * pred.points) as f64));
    let ce = pred.logits.log_softmax().pick(&class_of)?.sum().neg();
    Ok(l1.add(&ce)?.scale(lit(1.0 / pred.instances as f64)))
}
