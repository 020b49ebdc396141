//! Seeded procedural driving worlds.
//!
//! A scene is a curved multi-lane road, lane-following agents with history
//! and future tracks, the ground-truth vector map in the ego frame at
//! prediction time, and camera images rendered at the previous and current
//! BEV frames.

mod camera;
mod dataset;
mod generate;
mod map;
mod render;

pub use camera::{project_to_camera, Camera, CameraRig, Intrinsics, Mat3, Vec3, MIN_DEPTH};
pub use dataset::{content_hash, decode_dataset, encode_dataset, read_dataset, write_dataset, HEADER};
pub use generate::{
    fit_element_count, generate_dataset, generate_scene, scene_seeds, Agent, EgoMotion, FrameViews, Pose2, Road, Scene, SceneConfig,
    FUTURE_SECONDS, HISTORY_SECONDS, MAX_SPEED,
};
pub use map::{dist, in_perception_range, resample_polyline, MapClass, MapElement, VectorMap, X_RANGE, Y_RANGE};
pub use render::{footprints, render_camera, render_views, shade, shade_road, Footprint};

pub mod texture {
    pub use super::render::{AGENT, CROSSWALK, DRIVEABLE, LINE, OFF_ROAD, SKY};
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Single-channel image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl ViewImage {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}
