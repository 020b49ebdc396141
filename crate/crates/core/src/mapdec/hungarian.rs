use super::MapError;

/// Minimum-cost injective assignment of ground-truth columns to prediction
/// rows. `cost[pred][gt]`; returns the prediction matched to each gt.
/// Shortest augmenting paths with potentials; ties go to the lowest prediction index.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Vec<usize>, MapError> {
    let preds = cost.len();
    let gts = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|row| row.len() != gts) {
        return Err(MapError::Config("ragged cost matrix".into()));
    }
    if gts > preds {
        return Err(MapError::TooManyTargets { gt: gts, preds });
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(MapError::Config("non-finite matching cost".into()));
    }
    // 1-based rows (gt) and columns (pred); column 0 is the virtual source.
    let (n, m) = (gts, preds);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[j - 1][i0 - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if row_of_col[j] != 0 {
            assignment[row_of_col[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}
