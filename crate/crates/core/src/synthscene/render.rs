//! Ground-plane ray casting with a semantic texture.

use super::camera::Camera;
use super::generate::{Pose2, Road, Scene};
use super::{SceneError, ViewImage};

pub const SKY: f32 = 0.0;
pub const OFF_ROAD: f32 = 0.1;
pub const DRIVEABLE: f32 = 0.5;
pub const CROSSWALK: f32 = 0.8;
pub const AGENT: f32 = 0.9;
pub const LINE: f32 = 1.0;

/// Half widths of the painted bands around road edges and lane dividers.
pub const BOUNDARY_HALF_BAND: f64 = 0.4;
pub const DIVIDER_HALF_BAND: f64 = 0.25;

/// Agent footprint at one frame: centre, unit heading, half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub centre: [f64; 2],
    pub heading: [f64; 2],
    pub half: [f64; 2],
}

impl Footprint {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let d = [p[0] - self.centre[0], p[1] - self.centre[1]];
        let along = d[0] * self.heading[0] + d[1] * self.heading[1];
        let across = -d[0] * self.heading[1] + d[1] * self.heading[0];
        along.abs() <= self.half[0] && across.abs() <= self.half[1]
    }
}

/// Texture value of a world-frame ground point.
pub fn shade(road: &Road, agents: &[Footprint], p: [f64; 2]) -> f32 {
    if agents.iter().any(|a| a.contains(p)) {
        return AGENT;
    }
    shade_road(road, p)
}

/// Texture value ignoring agents.
pub fn shade_road(road: &Road, p: [f64; 2]) -> f32 {
    let lateral = p[0] - road.centre_x(p[1]);
    let hw = road.half_width();
    if (lateral.abs() - hw).abs() <= BOUNDARY_HALF_BAND {
        LINE
    } else if lateral.abs() > hw {
        OFF_ROAD
    } else if road.in_crosswalk(p[0], p[1]) {
        CROSSWALK
    } else if road.divider_offsets().iter().any(|d| (lateral - d).abs() <= DIVIDER_HALF_BAND) {
        LINE
    } else {
        DRIVEABLE
    }
}

pub fn footprints(scene: &Scene, frame: usize) -> Vec<Footprint> {
    scene
        .agents
        .iter()
        .filter_map(|a| {
            let centre = a.position(frame)?;
            Some(Footprint { centre, heading: scene.road.heading(a.lane, centre[1]), half: a.half_extent })
        })
        .collect()
}

pub fn render_camera(cam: &Camera, pose: &Pose2, road: &Road, agents: &[Footprint]) -> ViewImage {
    let mut data = Vec::with_capacity(cam.rows * cam.cols);
    for row in 0..cam.rows {
        for col in 0..cam.cols {
            let value = match cam.unproject_to_ground(col as f64 + 0.5, row as f64 + 0.5) {
                Some(g) => shade(road, agents, pose.to_world([g[0], g[1]])),
                None => SKY,
            };
            data.push(value);
        }
    }
    ViewImage { rows: cam.rows, cols: cam.cols, data }
}

/// Renders every camera of the rig from the ego pose at `frame`.
pub fn render_views(scene: &Scene, frame: usize) -> Result<Vec<ViewImage>, SceneError> {
    let pose = scene
        .ego_poses
        .get(frame)
        .ok_or_else(|| SceneError::Config(format!("frame {frame} outside scene of {} frames", scene.ego_poses.len())))?;
    let agents = footprints(scene, frame);
    Ok(scene.rig.cameras.iter().map(|cam| render_camera(cam, pose, &scene.road, &agents)).collect())
}
