//! Vectorized map decoder: hierarchical instance × point queries refined
//! against the BEV grid, Hungarian matching loss, and map-quality metrics.

mod chamfer;
mod decoder;
mod hungarian;
mod loss;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer_distance, resample_by_step};
pub use decoder::{decode_map, DecodedMap, DecoderLayer, MapDecoder, MapQuerySet};
pub use hungarian::hungarian_match;
pub use loss::{map_matching_loss, matching_cost, orientation_l1, MapTargets};

use crate::numgrad::{DeformableConfig, NumError};
use crate::pv2bev::BevError;
use crate::synthscene::{MapClass, MapElement, VectorMap};

/// Classification outputs: the four element classes followed by `none`.
pub const CLASSES: usize = 5;
pub const NONE_CLASS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error("decoder config: {0}")]
    Config(String),
    #[error("{gt} ground-truth elements exceed {preds} predictions")]
    TooManyTargets { gt: usize, preds: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("decoded map line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDecoderConfig {
    pub instances: usize,
    pub points: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub attention: DeformableConfig,
    /// Train and decode lane centerlines as well as boundaries, dividers and crosswalks.
    pub include_centerlines: bool,
    /// Minimum score for an instance to be emitted downstream.
    pub score_threshold: f64,
}

impl Default for MapDecoderConfig {
    fn default() -> Self {
        MapDecoderConfig {
            instances: 12,
            points: 10,
            depth: 2,
            heads: 4,
            mlp_dim: 64,
            attention: DeformableConfig::default(),
            include_centerlines: true,
            score_threshold: 0.4,
        }
    }
}

impl MapDecoderConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.instances == 0 || self.points < 2 || self.depth == 0 {
            return Err(MapError::Config(format!(
                "{} instances × {} points, depth {}",
                self.instances, self.points, self.depth
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(MapError::Config(format!("score threshold {}", self.score_threshold)));
        }
        Ok(())
    }

    /// Ground-truth elements this decoder is trained on.
    pub fn targets<'a>(&self, map: &'a VectorMap) -> Vec<&'a MapElement> {
        map.elements.iter().filter(|e| self.include_centerlines || e.class != MapClass::Centerline).collect()
    }
}

/// A decoded element with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredElement {
    pub element: MapElement,
    pub score: f64,
}

pub fn as_vector_map(elements: &[ScoredElement]) -> VectorMap {
    VectorMap { elements: elements.iter().map(|s| s.element.clone()).collect() }
}

/// Map text section (`map k`, then `class n x y …`) with a trailing score per line.
pub fn write_decoded(elements: &[ScoredElement]) -> String {
    let mut out = format!("map {}\n", elements.len());
    for s in elements {
        write!(out, "{} {}", s.element.class, s.element.points.len()).unwrap();
        for p in &s.element.points {
            write!(out, " {} {}", p[0], p[1]).unwrap();
        }
        writeln!(out, " {}", s.score).unwrap();
    }
    out
}

pub fn parse_decoded(text: &str) -> Result<Vec<ScoredElement>, MapError> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, reason: &str| MapError::Parse { line: line + 1, reason: reason.to_string() };
    let (_, head) = lines.next().ok_or_else(|| err(0, "missing header"))?;
    let count: usize = head
        .strip_prefix("map ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| err(0, "expected `map <count>`"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, line) = lines.next().ok_or_else(|| err(out.len() + 1, "missing element line"))?;
        let mut fields = line.split_whitespace();
        let class: MapClass = fields.next().ok_or_else(|| err(i, "missing class"))?.parse().map_err(|e: String| err(i, &e))?;
        let n: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(|| err(i, "bad vertex count"))?;
        let values: Vec<f64> = fields.map(|f| f.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err(i, "bad number"))?;
        if values.len() != 2 * n + 1 {
            return Err(err(i, &format!("expected {} numbers, found {}", 2 * n + 1, values.len())));
        }
        let points = values[..2 * n].chunks(2).map(|c| [c[0], c[1]]).collect();
        out.push(ScoredElement { element: MapElement::new(class, points), score: values[2 * n] });
    }
    Ok(out)
}
