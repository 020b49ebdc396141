use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BevError;
use crate::numgrad::{blob, Real, Tensor};
use crate::synthscene::{X_RANGE, Y_RANGE};

/// Geometry of the BEV grid. Row 0 is the rear edge (`y_min`), column 0 the
/// left edge (`x_min`); integer grid coordinates are cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridMeta {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub cell: f64,
}

impl BevGridMeta {
    /// Square cells over the fixed perception range.
    pub fn new(height: usize, width: usize, dim: usize) -> Result<Self, BevError> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(BevError::Config(format!("empty grid {height}×{width}×{dim}")));
        }
        let cell = (Y_RANGE.1 - Y_RANGE.0) / height as f64;
        let cell_x = (X_RANGE.1 - X_RANGE.0) / width as f64;
        if (cell - cell_x).abs() > 1e-9 {
            return Err(BevError::Config(format!(
                "{height}×{width} cells are not square over {}×{} m",
                Y_RANGE.1 - Y_RANGE.0,
                X_RANGE.1 - X_RANGE.0
            )));
        }
        Ok(BevGridMeta { height, width, dim, x_range: X_RANGE, y_range: Y_RANGE, cell })
    }

    pub fn desk() -> Self {
        Self::new(100, 50, 32).expect("desk grid is valid")
    }

    pub fn full_scale() -> Self {
        Self::new(200, 100, 256).expect("full-scale grid is valid")
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.dim == other.dim && self.cell == other.cell
    }

    /// Ego-frame `(x, y)` of a cell centre.
    pub fn cell_centre(&self, row: usize, col: usize) -> [f64; 2] {
        [self.x_range.0 + (col as f64 + 0.5) * self.cell, self.y_range.0 + (row as f64 + 0.5) * self.cell]
    }

    /// Continuous grid `(row, col)` of an ego-frame point.
    pub fn grid_coords(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[1] - self.y_range.0) / self.cell - 0.5, (p[0] - self.x_range.0) / self.cell - 0.5]
    }

    /// Flat index of the cell containing `p`, if inside the range.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<usize> {
        let r = ((p[1] - self.y_range.0) / self.cell).floor();
        let c = ((p[0] - self.x_range.0) / self.cell).floor();
        let inside = r >= 0.0 && c >= 0.0 && r < self.height as f64 && c < self.width as f64;
        inside.then(|| r as usize * self.width + c as usize)
    }
}

/// BEV features `[H, W, D]`.
#[derive(Debug, Clone)]
pub struct BevGrid<T: Real> {
    pub meta: BevGridMeta,
    pub features: Tensor<T>,
    pub frame: usize,
    /// Set when fused with a previous frame.
    pub temporal: bool,
}

impl<T: Real> BevGrid<T> {
    pub fn new(meta: BevGridMeta, features: Tensor<T>, frame: usize, temporal: bool) -> Result<Self, BevError> {
        let expect = [meta.height, meta.width, meta.dim];
        let features = if features.shape() == expect {
            features
        } else if features.shape() == [meta.cells(), meta.dim] {
            features.reshape(&expect)?
        } else {
            return Err(BevError::MetaMismatch(format!("features {:?} for grid {:?}", features.shape(), expect)));
        };
        if !features.is_finite() {
            return Err(BevError::NonFinite);
        }
        Ok(BevGrid { meta, features, frame, temporal })
    }

    /// Features as `[H·W, D]` rows.
    pub fn rows(&self) -> Tensor<T> {
        self.features.reshape(&[self.meta.cells(), self.meta.dim]).expect("grid shape checked at construction")
    }

    pub fn detach(&self) -> Self {
        BevGrid { features: self.features.detach(), ..self.clone() }
    }

    /// One-line sidecar: `H W D cell_size frame temporal_flag`.
    pub fn sidecar(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.meta.height,
            self.meta.width,
            self.meta.dim,
            self.meta.cell,
            self.frame,
            u8::from(self.temporal)
        )
    }

    /// Writes `<stem>.bevt` and `<stem>.meta`.
    pub fn write(&self, stem: &Path) -> Result<(), BevError> {
        blob::write_file(&self.features, &stem.with_extension("bevt"))?;
        std::fs::write(stem.with_extension("meta"), self.sidecar() + "\n")?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self, BevError> {
        let features = blob::read_file(&stem.with_extension("bevt"))?;
        let text = std::fs::read_to_string(stem.with_extension("meta"))?;
        let f: Vec<&str> = text.split_whitespace().collect();
        let bad = || BevError::Config(format!("malformed BEV sidecar `{}`", text.trim()));
        if f.len() != 6 {
            return Err(bad());
        }
        let (h, w, d): (usize, usize, usize) =
            (f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?);
        let meta = BevGridMeta::new(h, w, d)?;
        let cell: f64 = f[3].parse().map_err(|_| bad())?;
        if (cell - meta.cell).abs() > 1e-9 {
            return Err(bad());
        }
        let temporal = match f[5] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        BevGrid::new(meta, features, f[4].parse().map_err(|_| bad())?, temporal)
    }
}
