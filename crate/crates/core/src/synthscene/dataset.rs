//! `BEVFLOW-SCENE v1` container: structured text sections with embedded BEVT image blobs.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::camera::{Camera, CameraRig, Intrinsics};
use super::generate::{Agent, FrameViews, Pose2, Road, Scene};
use super::map::{MapClass, MapElement, VectorMap};
use super::{SceneError, ViewImage};
use crate::numgrad::{blob, NumError, Tensor};

pub const HEADER: &str = "BEVFLOW-SCENE v1";

fn join<T: std::fmt::Display>(values: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out
}

fn points_line(points: &[[f64; 2]]) -> String {
    join(points.iter().flat_map(|p| [p[0], p[1]]))
}

fn encode_scene(scene: &Scene, out: &mut Vec<u8>) {
    let mut text = String::new();
    let r = &scene.road;
    let crosswalk = r.crosswalk.map_or("none".to_string(), |y| y.to_string());
    writeln!(text, "scene {} hz {} stride {}", scene.seed, scene.hz, scene.prev_stride).unwrap();
    writeln!(text, "road {} {} {} {} {} {}", r.lanes, r.lane_width, r.curvature, r.offset, r.ego_lane, crosswalk).unwrap();
    writeln!(text, "rig {}", scene.rig.len()).unwrap();
    for c in &scene.rig.cameras {
        let k = &c.intrinsics;
        let rot = c.rotation.iter().flatten();
        writeln!(text, "camera {} {} {} {} {} {} {} {}", c.rows, c.cols, k.fx, k.fy, k.cx, k.cy, join(rot), join(c.translation))
            .unwrap();
    }
    writeln!(text, "poses {}", scene.ego_poses.len()).unwrap();
    for p in &scene.ego_poses {
        writeln!(text, "{} {} {}", p.x, p.y, p.yaw).unwrap();
    }
    writeln!(text, "agents {}", scene.agents.len()).unwrap();
    for a in &scene.agents {
        writeln!(text, "agent {} {} {} {} {} {}", a.id, a.lane, a.half_extent[0], a.half_extent[1], a.history.len(), a.future.len())
            .unwrap();
        writeln!(text, "{}", points_line(&a.history)).unwrap();
        writeln!(text, "{}", points_line(&a.future)).unwrap();
    }
    writeln!(text, "map {}", scene.gt_map.len()).unwrap();
    for e in &scene.gt_map.elements {
        writeln!(text, "{} {} {}", e.class, e.points.len(), points_line(&e.points)).unwrap();
    }
    writeln!(text, "views {}", scene.views.len()).unwrap();
    out.extend_from_slice(text.as_bytes());
    for fv in &scene.views {
        out.extend_from_slice(format!("frame {} {}\n", fv.frame, fv.images.len()).as_bytes());
        for img in &fv.images {
            let t = Tensor::new(img.data.clone(), &[img.rows, img.cols]).expect("image buffer matches its shape");
            out.extend_from_slice(&blob::encode(&t));
        }
        out.push(b'\n');
    }
    out.extend_from_slice(b"end\n");
}

pub fn encode_dataset(scenes: &[Scene]) -> Vec<u8> {
    let mut out = format!("{HEADER}\nscenes {}\n", scenes.len()).into_bytes();
    for s in scenes {
        encode_scene(s, &mut out);
    }
    out
}

pub fn write_dataset(scenes: &[Scene], path: &Path) -> Result<(), SceneError> {
    std::fs::write(path, encode_dataset(scenes))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Scene>, SceneError> {
    decode_dataset(&std::fs::read(path)?)
}

/// Hex SHA-256 of a scene's serialised form.
pub fn content_hash(scene: &Scene) -> String {
    let mut bytes = Vec::new();
    encode_scene(scene, &mut bytes);
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

/// One whitespace-separated line with the byte offset where it starts.
struct Line<'a> {
    offset: usize,
    fields: Vec<&'a str>,
    next: usize,
}

impl<'a> Line<'a> {
    fn err(&self, reason: impl Into<String>) -> SceneError {
        SceneError::Parse { offset: self.offset, reason: reason.into() }
    }

    fn expect_tag(&mut self, tag: &str) -> Result<(), SceneError> {
        match self.fields.get(self.next) {
            Some(&t) if t == tag => {
                self.next += 1;
                Ok(())
            }
            other => Err(self.err(format!("expected `{tag}`, found {other:?}"))),
        }
    }

    fn value<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, SceneError> {
        let field = *self.fields.get(self.next).ok_or_else(|| self.err(format!("missing {what}")))?;
        self.next += 1;
        field.parse().map_err(|_| self.err(format!("invalid {what} `{field}`")))
    }

    fn finish(&self) -> Result<(), SceneError> {
        if self.next == self.fields.len() {
            Ok(())
        } else {
            Err(self.err(format!("{} unexpected trailing fields", self.fields.len() - self.next)))
        }
    }

    fn points(&mut self, n: usize, what: &str) -> Result<Vec<[f64; 2]>, SceneError> {
        (0..n).map(|_| Ok([self.value(what)?, self.value(what)?])).collect()
    }
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<Line<'a>, SceneError> {
        let offset = self.pos;
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(SceneError::Parse { offset, reason: "unexpected end of file".into() })?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| SceneError::Parse { offset, reason: "invalid UTF-8".into() })?;
        self.pos += end + 1;
        Ok(Line { offset, fields: text.split_ascii_whitespace().collect(), next: 0 })
    }

    fn tagged(&mut self, tag: &str) -> Result<Line<'a>, SceneError> {
        let mut line = self.line()?;
        line.expect_tag(tag)?;
        Ok(line)
    }

    fn count(&mut self, tag: &str) -> Result<usize, SceneError> {
        let mut line = self.tagged(tag)?;
        let n = line.value("count")?;
        line.finish()?;
        Ok(n)
    }

    fn image(&mut self) -> Result<ViewImage, SceneError> {
        let start = self.pos;
        let (t, used) = blob::decode::<f32>(&self.buf[start..]).map_err(|e| match e {
            NumError::Blob { offset, reason } => SceneError::Parse { offset: start + offset, reason },
            other => SceneError::Parse { offset: start, reason: other.to_string() },
        })?;
        if t.rank() != 2 {
            return Err(SceneError::Parse { offset: start, reason: format!("image blob has rank {}", t.rank()) });
        }
        self.pos += used;
        let data = t.to_vec();
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SceneError::Parse { offset: start, reason: "image value outside [0, 1]".into() });
        }
        Ok(ViewImage { rows: t.shape()[0], cols: t.shape()[1], data })
    }
}

fn decode_scene(cur: &mut Cursor) -> Result<Scene, SceneError> {
    let mut line = cur.tagged("scene")?;
    let seed = line.value("seed")?;
    line.expect_tag("hz")?;
    let hz: u32 = line.value("frame rate")?;
    line.expect_tag("stride")?;
    let prev_stride = line.value("stride")?;
    line.finish()?;

    let mut line = cur.tagged("road")?;
    let mut road = Road {
        lanes: line.value("lane count")?,
        lane_width: line.value("lane width")?,
        curvature: line.value("curvature")?,
        offset: line.value("offset")?,
        ego_lane: line.value("ego lane")?,
        crosswalk: None,
    };
    let cw: String = line.value("crosswalk")?;
    if cw != "none" {
        road.crosswalk = Some(cw.parse().map_err(|_| line.err(format!("invalid crosswalk `{cw}`")))?);
    }
    line.finish()?;

    let n_cams = cur.count("rig")?;
    let mut cameras = Vec::with_capacity(n_cams);
    for _ in 0..n_cams {
        let mut l = cur.tagged("camera")?;
        let rows = l.value("rows")?;
        let cols = l.value("cols")?;
        let intrinsics = Intrinsics { fx: l.value("fx")?, fy: l.value("fy")?, cx: l.value("cx")?, cy: l.value("cy")? };
        let mut rotation = [[0.0; 3]; 3];
        for row in rotation.iter_mut() {
            for v in row.iter_mut() {
                *v = l.value("rotation")?;
            }
        }
        let translation = [l.value("translation")?, l.value("translation")?, l.value("translation")?];
        l.finish()?;
        cameras.push(Camera { intrinsics, rotation, translation, rows, cols });
    }

    let n_poses = cur.count("poses")?;
    let mut ego_poses = Vec::with_capacity(n_poses);
    for _ in 0..n_poses {
        let mut l = cur.line()?;
        ego_poses.push(Pose2 { x: l.value("pose x")?, y: l.value("pose y")?, yaw: l.value("pose yaw")? });
        l.finish()?;
    }

    let n_agents = cur.count("agents")?;
    let mut agents = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let mut l = cur.tagged("agent")?;
        let id = l.value("agent id")?;
        let lane = l.value("agent lane")?;
        let half_extent = [l.value("half length")?, l.value("half width")?];
        let (nh, nf): (usize, usize) = (l.value("history length")?, l.value("future length")?);
        l.finish()?;
        let mut hl = cur.line()?;
        let history = hl.points(nh, "history point")?;
        hl.finish()?;
        let mut fl = cur.line()?;
        let future = fl.points(nf, "future point")?;
        fl.finish()?;
        if history.is_empty() {
            return Err(hl.err("empty agent history"));
        }
        agents.push(Agent { id, lane, half_extent, history, future });
    }

    let n_elems = cur.count("map")?;
    let mut elements = Vec::with_capacity(n_elems);
    for _ in 0..n_elems {
        let mut l = cur.line()?;
        let class: String = l.value("map class")?;
        let class: MapClass = class.parse().map_err(|e: String| l.err(e))?;
        let n = l.value("vertex count")?;
        let points = l.points(n, "vertex")?;
        l.finish()?;
        elements.push(MapElement { class, points });
    }

    let n_frames = cur.count("views")?;
    let mut views = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut l = cur.tagged("frame")?;
        let frame = l.value("frame index")?;
        let n = l.value("image count")?;
        l.finish()?;
        let images = (0..n).map(|_| cur.image()).collect::<Result<Vec<_>, _>>()?;
        let sep = cur.line()?;
        if !sep.fields.is_empty() {
            return Err(sep.err("expected end of image blobs"));
        }
        views.push(FrameViews { frame, images });
    }
    let end = cur.tagged("end")?;
    end.finish()?;

    let scene = Scene {
        seed,
        hz,
        road,
        rig: CameraRig { cameras },
        ego_poses,
        agents,
        gt_map: VectorMap { elements },
        views,
        prev_stride,
    };
    if scene.hz == 0 || scene.ego_poses.len() != scene.frame_count() || scene.prev_stride > scene.current_frame() {
        return Err(SceneError::Parse { offset: end.offset, reason: "scene timing inconsistent with its frame rate".into() });
    }
    Ok(scene)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Scene>, SceneError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let head = cur.line().map_err(|_| SceneError::Parse { offset: 0, reason: "missing header".into() })?;
    if head.fields.join(" ") != HEADER {
        return Err(SceneError::Parse { offset: 0, reason: format!("bad magic/version, expected `{HEADER}`") });
    }
    let n = cur.count("scenes")?;
    let scenes = (0..n).map(|_| decode_scene(&mut cur)).collect::<Result<Vec<_>, _>>()?;
    if cur.pos != bytes.len() {
        return Err(SceneError::Parse { offset: cur.pos, reason: "trailing bytes after last scene".into() });
    }
    Ok(scenes)
}
