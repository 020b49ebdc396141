use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraRig;
use super::map::{MapClass, MapElement, VectorMap, X_RANGE, Y_RANGE};
use super::render::render_views;
use super::{SceneError, ViewImage};

pub const HISTORY_SECONDS: u32 = 2;
pub const FUTURE_SECONDS: u32 = 3;
pub const MAX_SPEED: f64 = 20.0;
/// Lateral margin kept between the outer road edge and the perception range.
const RANGE_MARGIN: f64 = 0.5;
/// Longitudinal spacing of generated map vertices.
const VERTEX_STEP: f64 = 4.0;
const CROSSWALK_HALF_DEPTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub min_lanes: usize,
    pub max_lanes: usize,
    pub lane_width: f64,
    pub agents: usize,
    /// Curvature magnitude bound (1/m); the realised value is drawn from ±this.
    pub max_curvature: f64,
    pub hz: u32,
    pub crosswalk_prob: f64,
    /// Split or drop map elements until exactly this many remain.
    pub map_elements: Option<usize>,
    pub cameras: usize,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_lanes: 2,
            max_lanes: 4,
            lane_width: 3.5,
            agents: 8,
            max_curvature: 0.006,
            hz: 10,
            crosswalk_prob: 0.5,
            map_elements: None,
            cameras: super::camera::DEFAULT_CAMERAS,
            image_rows: super::camera::DEFAULT_ROWS,
            image_cols: super::camera::DEFAULT_COLS,
        }
    }
}

impl SceneConfig {
    pub fn history_len(&self) -> usize {
        (HISTORY_SECONDS * self.hz) as usize
    }

    pub fn future_len(&self) -> usize {
        (FUTURE_SECONDS * self.hz) as usize
    }

    /// Frames between the previous and current BEV inputs (half a second).
    pub fn prev_stride(&self) -> usize {
        ((self.hz / 2) as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Config(m));
        if self.agents == 0 {
            return bad("at least one agent is required".into());
        }
        if self.hz == 0 {
            return bad("frame rate must be positive".into());
        }
        if self.min_lanes == 0 || self.min_lanes > self.max_lanes {
            return bad(format!("invalid lane range {}..={}", self.min_lanes, self.max_lanes));
        }
        if !(self.lane_width > 0.0) || !(self.max_curvature >= 0.0) {
            return bad("lane width must be positive and curvature bound non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.crosswalk_prob) {
            return bad("crosswalk probability outside [0, 1]".into());
        }
        if self.map_elements == Some(0) {
            return bad("map element target must be positive".into());
        }
        if self.cameras == 0 || self.image_rows == 0 || self.image_cols == 0 {
            return bad("camera rig must have at least one non-empty camera".into());
        }
        for lanes in self.min_lanes..=self.max_lanes {
            if Road::ego_lane_candidates(lanes, self.lane_width).is_empty() {
                return bad(format!(
                    "{lanes} lanes of {} m do not fit the {} m wide perception range",
                    self.lane_width,
                    X_RANGE.1 - X_RANGE.0
                ));
            }
        }
        Ok(())
    }

    pub fn rig(&self) -> CameraRig {
        CameraRig::ring(self.cameras, self.image_rows, self.image_cols)
    }
}

/// Road centred on the curve `x = offset + curvature·y²/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub lanes: usize,
    pub lane_width: f64,
    pub curvature: f64,
    pub offset: f64,
    pub ego_lane: usize,
    /// Longitudinal centre of the crosswalk, if any.
    pub crosswalk: Option<f64>,
}

impl Road {
    pub fn half_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width / 2.0
    }

    pub fn centre_x(&self, y: f64) -> f64 {
        self.offset + 0.5 * self.curvature * y * y
    }

    pub fn slope(&self, y: f64) -> f64 {
        self.curvature * y
    }

    /// Lateral offset of lane `i`'s centre from the road centre, lanes counted from the left.
    pub fn lane_offset(&self, i: usize) -> f64 {
        lane_offset(i, self.lanes, self.lane_width)
    }

    pub fn lane_centre(&self, i: usize, y: f64) -> f64 {
        self.centre_x(y) + self.lane_offset(i)
    }

    /// +1 for lanes travelling toward +y, −1 otherwise (right-hand traffic).
    pub fn lane_direction(&self, i: usize) -> f64 {
        lane_direction(i, self.lanes)
    }

    pub fn divider_offsets(&self) -> Vec<f64> {
        (1..self.lanes).map(|k| k as f64 * self.lane_width - self.half_width()).collect()
    }

    /// Unit travel direction for lane `i` at longitudinal position `y`.
    pub fn heading(&self, i: usize, y: f64) -> [f64; 2] {
        let (dx, dy) = (self.slope(y), 1.0);
        let n = dx.hypot(dy);
        let s = self.lane_direction(i);
        [s * dx / n, s * dy / n]
    }

    /// Lanes travelling toward +y whose centring at the origin keeps the road in range.
    fn ego_lane_candidates(lanes: usize, width: f64) -> Vec<usize> {
        let half = lanes as f64 * width / 2.0;
        (0..lanes)
            .filter(|&i| lane_direction(i, lanes) > 0.0)
            .filter(|&i| lane_offset(i, lanes, width).abs() + half <= X_RANGE.1 - RANGE_MARGIN)
            .collect()
    }

    fn polyline(&self, lateral: f64) -> Vec<[f64; 2]> {
        let steps = ((Y_RANGE.1 - Y_RANGE.0) / VERTEX_STEP).round() as usize;
        (0..=steps)
            .map(|k| {
                let y = Y_RANGE.0 + k as f64 * VERTEX_STEP;
                [self.centre_x(y) + lateral, y]
            })
            .collect()
    }

    pub fn vector_map(&self) -> VectorMap {
        let hw = self.half_width();
        let mut elements = vec![
            MapElement::new(MapClass::Boundary, self.polyline(-hw)),
            MapElement::new(MapClass::Boundary, self.polyline(hw)),
        ];
        for d in self.divider_offsets() {
            elements.push(MapElement::new(MapClass::Divider, self.polyline(d)));
        }
        for i in 0..self.lanes {
            let mut line = self.polyline(self.lane_offset(i));
            if self.lane_direction(i) < 0.0 {
                line.reverse();
            }
            elements.push(MapElement::new(MapClass::Centerline, line));
        }
        if let Some(yc) = self.crosswalk {
            let (y0, y1) = (yc - CROSSWALK_HALF_DEPTH, yc + CROSSWALK_HALF_DEPTH);
            let (c0, c1) = (self.centre_x(y0), self.centre_x(y1));
            let corner = [c0 - hw, y0];
            elements.push(MapElement::new(
                MapClass::Crosswalk,
                vec![corner, [c0 + hw, y0], [c1 + hw, y1], [c1 - hw, y1], corner],
            ));
        }
        VectorMap { elements }
    }

    pub fn in_crosswalk(&self, x: f64, y: f64) -> bool {
        self.crosswalk.is_some_and(|yc| (y - yc).abs() <= CROSSWALK_HALF_DEPTH && (x - self.centre_x(y)).abs() <= self.half_width())
    }
}

fn lane_offset(i: usize, lanes: usize, width: f64) -> f64 {
    (i as f64 + 0.5) * width - lanes as f64 * width / 2.0
}

fn lane_direction(i: usize, lanes: usize) -> f64 {
    if (i as f64 + 0.5) >= lanes as f64 / 2.0 {
        1.0
    } else {
        -1.0
    }
}

/// Planar pose: position and heading (radians from +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn forward(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }

    pub fn right(&self) -> [f64; 2] {
        [self.yaw.sin(), -self.yaw.cos()]
    }

    /// Point in this pose's ego frame to the world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (f, r) = (self.forward(), self.right());
        [self.x + p[0] * r[0] + p[1] * f[0], self.y + p[0] * r[1] + p[1] * f[1]]
    }

    /// World point to this pose's ego frame.
    pub fn to_local(&self, w: [f64; 2]) -> [f64; 2] {
        let d = [w[0] - self.x, w[1] - self.y];
        let (f, r) = (self.forward(), self.right());
        [d[0] * r[0] + d[1] * r[1], d[0] * f[0] + d[1] * f[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub lane: usize,
    /// Half length along the heading, half width across it.
    pub half_extent: [f64; 2],
    /// Oldest first; the last entry is the prediction-time position.
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
}

impl Agent {
    pub fn current(&self) -> [f64; 2] {
        *self.history.last().expect("agent history is never empty")
    }

    /// Position at absolute frame index.
    pub fn position(&self, frame: usize) -> Option<[f64; 2]> {
        let h = self.history.len();
        if frame < h {
            Some(self.history[frame])
        } else {
            self.future.get(frame - h).copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameViews {
    pub frame: usize,
    pub images: Vec<ViewImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub hz: u32,
    pub road: Road,
    pub rig: CameraRig,
    /// One pose per frame, history frames first; prediction time is `current_frame()`.
    pub ego_poses: Vec<Pose2>,
    pub agents: Vec<Agent>,
    pub gt_map: VectorMap,
    pub views: Vec<FrameViews>,
    pub prev_stride: usize,
}

impl Scene {
    pub fn history_len(&self) -> usize {
        (HISTORY_SECONDS * self.hz) as usize
    }

    pub fn future_len(&self) -> usize {
        (FUTURE_SECONDS * self.hz) as usize
    }

    pub fn current_frame(&self) -> usize {
        self.history_len() - 1
    }

    pub fn previous_frame(&self) -> usize {
        self.current_frame() - self.prev_stride
    }

    pub fn frame_count(&self) -> usize {
        self.history_len() + self.future_len()
    }

    pub fn views_at(&self, frame: usize) -> Option<&[ViewImage]> {
        self.views.iter().find(|v| v.frame == frame).map(|v| v.images.as_slice())
    }

    /// Rigid motion taking ego coordinates at frame `from` into ego coordinates at frame `to`.
    pub fn ego_motion(&self, from: usize, to: usize) -> EgoMotion {
        let (a, b) = (self.ego_poses[from], self.ego_poses[to]);
        let origin = b.to_local([a.x, a.y]);
        EgoMotion { dx: origin[0], dy: origin[1], dyaw: a.yaw - b.yaw }
    }
}

/// Planar rigid transform `p ↦ R(dyaw)·p + (dx, dy)` between two ego frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoMotion {
    pub dx: f64,
    pub dy: f64,
    /// Counter-clockwise rotation, radians.
    pub dyaw: f64,
}

impl EgoMotion {
    pub const IDENTITY: EgoMotion = EgoMotion { dx: 0.0, dy: 0.0, dyaw: 0.0 };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.dyaw.sin_cos();
        [c * p[0] - s * p[1] + self.dx, s * p[0] + c * p[1] + self.dy]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.dyaw.sin_cos();
        let d = [q[0] - self.dx, q[1] - self.dy];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Along-lane distance travelled after `t` seconds, with a smooth wobble.
struct Motion {
    speed: f64,
    accel: f64,
    wobble_amp: f64,
    wobble_freq: f64,
    wobble_phase: f64,
    lateral_amp: f64,
    lateral_freq: f64,
    lateral_phase: f64,
}

impl Motion {
    fn sample(rng: &mut ChaCha8Rng, t_min: f64, t_max: f64, speed_range: (f64, f64), accel_bound: f64, lateral: f64) -> Self {
        let speed = uniform(rng, speed_range.0, speed_range.1);
        let margin = 0.5;
        // headroom for the wobble and the road's lateral slope
        let cap = 0.85 * MAX_SPEED;
        // keep v(t) = speed + accel·t inside [margin, cap] over the whole window
        let lo = ((margin - speed) / t_max).max((speed - cap) / -t_min).max(-accel_bound);
        let hi = ((cap - speed) / t_max).min((speed - margin) / -t_min).min(accel_bound);
        let accel = uniform(rng, lo.min(hi), hi);
        Motion {
            speed,
            accel,
            wobble_amp: uniform(rng, 0.0, 0.3),
            wobble_freq: uniform(rng, 0.5, 1.2),
            wobble_phase: uniform(rng, 0.0, std::f64::consts::TAU),
            lateral_amp: uniform(rng, 0.0, lateral),
            lateral_freq: uniform(rng, 0.3, 0.8),
            lateral_phase: uniform(rng, 0.0, std::f64::consts::TAU),
        }
    }

    fn along(&self, t: f64) -> f64 {
        let wobble = self.wobble_amp * ((self.wobble_freq * t + self.wobble_phase).sin() - self.wobble_phase.sin());
        self.speed * t + 0.5 * self.accel * t * t + wobble
    }

    fn lateral(&self, t: f64) -> f64 {
        self.lateral_amp * (self.lateral_freq * t + self.lateral_phase).sin()
    }
}

const MIN_GAP: f64 = 7.0;
const PLACEMENT_TRIES: usize = 64;

pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes = rng.gen_range(cfg.min_lanes..=cfg.max_lanes);
    let candidates = Road::ego_lane_candidates(lanes, cfg.lane_width);
    let ego_lane = candidates[rng.gen_range(0..candidates.len())];
    let mut road = Road {
        lanes,
        lane_width: cfg.lane_width,
        curvature: 0.0,
        offset: -lane_offset(ego_lane, lanes, cfg.lane_width),
        ego_lane,
        crosswalk: None,
    };
    let slack = X_RANGE.1 - RANGE_MARGIN - road.offset.abs() - road.half_width();
    let bound = cfg.max_curvature.min(slack / (0.5 * Y_RANGE.1 * Y_RANGE.1));
    road.curvature = uniform(&mut rng, -bound, bound);
    if rng.gen_bool(cfg.crosswalk_prob) {
        road.crosswalk = Some(uniform(&mut rng, -22.0, 22.0));
    }

    let dt = 1.0 / cfg.hz as f64;
    let (h, f) = (cfg.history_len(), cfg.future_len());
    let times: Vec<f64> = (0..h + f).map(|k| (k as f64 - (h - 1) as f64) * dt).collect();
    let (t_min, t_max) = (times[0], *times.last().unwrap());

    let ego = Motion::sample(&mut rng, t_min, t_max, (4.0, 12.0), 1.0, 0.0);
    let ego_poses = times
        .iter()
        .map(|&t| {
            let y = ego.along(t);
            let x = road.lane_centre(ego_lane, y);
            let head = road.heading(ego_lane, y);
            Pose2 { x, y, yaw: head[1].atan2(head[0]) }
        })
        .collect();

    let mut placed: Vec<(usize, f64)> = vec![(ego_lane, 0.0)];
    let mut agents = Vec::with_capacity(cfg.agents);
    for id in 0..cfg.agents {
        let mut choice = None;
        for attempt in 0..PLACEMENT_TRIES {
            let lane = rng.gen_range(0..lanes);
            let y0 = uniform(&mut rng, Y_RANGE.0 + 2.0, Y_RANGE.1 - 2.0);
            let clear = placed.iter().all(|&(l, y)| l != lane || (y - y0).abs() >= MIN_GAP);
            // crowded configurations fall back to overlapping placement
            if clear || attempt + 1 == PLACEMENT_TRIES {
                choice = Some((lane, y0));
                if clear {
                    break;
                }
            }
        }
        let (lane, y0) = choice.expect("placement loop always yields a choice");
        placed.push((lane, y0));
        let motion = Motion::sample(&mut rng, t_min, t_max, (3.0, 14.0), 1.5, 0.25);
        let dir = road.lane_direction(lane);
        let track: Vec<[f64; 2]> = times
            .iter()
            .map(|&t| {
                let y = y0 + dir * motion.along(t);
                [road.lane_centre(lane, y) + motion.lateral(t), y]
            })
            .collect();
        let half_extent = [uniform(&mut rng, 1.8, 2.6), uniform(&mut rng, 0.8, 1.1)];
        agents.push(Agent {
            id: id as u32,
            lane,
            half_extent,
            history: track[..h].to_vec(),
            future: track[h..].to_vec(),
        });
    }

    let mut gt_map = road.vector_map();
    if let Some(target) = cfg.map_elements {
        fit_element_count(&mut gt_map, target)?;
    }
    gt_map.validate()?;

    let mut scene = Scene {
        seed,
        hz: cfg.hz,
        road,
        rig: cfg.rig(),
        ego_poses,
        agents,
        gt_map,
        views: Vec::new(),
        prev_stride: cfg.prev_stride().min(h - 1),
    };
    for frame in [scene.previous_frame(), scene.current_frame()] {
        let images = render_views(&scene, frame)?;
        scene.views.push(FrameViews { frame, images });
    }
    Ok(scene)
}

/// Seeds of the scenes in a dataset derived from `base_seed`.
pub fn scene_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn generate_dataset(base_seed: u64, n: usize, cfg: &SceneConfig) -> Result<Vec<Scene>, SceneError> {
    scene_seeds(base_seed, n).into_iter().map(|s| generate_scene(s, cfg)).collect()
}

/// Drops trailing elements or splits the longest polylines until `target` remain.
pub fn fit_element_count(map: &mut VectorMap, target: usize) -> Result<(), SceneError> {
    while map.len() > target {
        let drop = map
            .elements
            .iter()
            .rposition(|e| e.class == MapClass::Crosswalk)
            .or_else(|| map.elements.iter().rposition(|e| e.class == MapClass::Centerline))
            .unwrap_or(map.len() - 1);
        map.elements.remove(drop);
    }
    while map.len() < target {
        let splittable = map
            .elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class != MapClass::Crosswalk && e.points.len() >= 3)
            .max_by_key(|(i, e)| (e.points.len(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i);
        let Some(i) = splittable else {
            return Err(SceneError::Config(format!("cannot split the map into {target} elements")));
        };
        let points = std::mem::take(&mut map.elements[i].points);
        let mid = points.len() / 2;
        map.elements[i].points = points[..=mid].to_vec();
        let tail = MapElement::new(map.elements[i].class, points[mid..].to_vec());
        map.elements.insert(i + 1, tail);
    }
    Ok(())
}
