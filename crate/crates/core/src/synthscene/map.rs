//! Vectorised HD map: typed polylines in the ego frame.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::SceneError;

pub const X_RANGE: (f64, f64) = (-15.0, 15.0);
pub const Y_RANGE: (f64, f64) = (-30.0, 30.0);

pub fn in_perception_range(p: [f64; 2]) -> bool {
    p[0] >= X_RANGE.0 && p[0] <= X_RANGE.1 && p[1] >= Y_RANGE.0 && p[1] <= Y_RANGE.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapClass {
    Boundary,
    Divider,
    Crosswalk,
    Centerline,
}

impl MapClass {
    pub const ALL: [MapClass; 4] = [MapClass::Boundary, MapClass::Divider, MapClass::Crosswalk, MapClass::Centerline];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MapClass::Boundary => "boundary",
            MapClass::Divider => "divider",
            MapClass::Crosswalk => "crosswalk",
            MapClass::Centerline => "centerline",
        }
    }
}

impl fmt::Display for MapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown map class `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub class: MapClass,
    pub points: Vec<[f64; 2]>,
}

impl MapElement {
    pub fn new(class: MapClass, points: Vec<[f64; 2]>) -> Self {
        MapElement { class, points }
    }

    pub fn is_closed(&self) -> bool {
        self.points.len() > 2 && self.points.first() == self.points.last()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// `n` points evenly spaced by arc length, endpoints included.
    pub fn resample(&self, n: usize) -> Vec<[f64; 2]> {
        resample_polyline(&self.points, n)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorMap {
    pub elements: Vec<MapElement>,
}

impl VectorMap {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn of_class(&self, class: MapClass) -> impl Iterator<Item = &MapElement> {
        self.elements.iter().filter(move |e| e.class == class)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, e) in self.elements.iter().enumerate() {
            let bad = |why: &str| Err(SceneError::InvalidMap(format!("element {i} ({}): {why}", e.class)));
            if e.points.len() < 2 {
                return bad("fewer than 2 vertices");
            }
            if e.points.windows(2).any(|w| w[0] == w[1]) {
                return bad("repeated consecutive vertex");
            }
            if e.class == MapClass::Crosswalk && !e.is_closed() {
                return bad("crosswalk polygon not closed");
            }
            if e.points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return bad("non-finite vertex");
            }
        }
        Ok(())
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn resample_polyline(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    assert!(n >= 2 && !points.is_empty());
    let mut cumulative = Vec::with_capacity(points.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        total += dist(w[0], w[1]);
        cumulative.push(total);
    }
    if total == 0.0 {
        return vec![points[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < points.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let t = if span > 0.0 { ((target - cumulative[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}
