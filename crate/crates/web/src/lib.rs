//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.

use std::fmt::Write as _;

use bevflow::clibench::pca_grayscale;
use bevflow::numgrad::Init;
use bevflow::predict::patch_count;
use bevflow::pv2bev::{encode_bev, BevEncoder, EncoderConfig, EncoderKind};
use bevflow::synthscene::{footprints, generate_scene, MapClass, Scene, SceneConfig, X_RANGE, Y_RANGE};
use wasm_bindgen::prelude::*;

const PX_PER_M: f64 = 10.0;

fn scene(seed: u64, agents: u32, elements: Option<u32>) -> Result<Scene, String> {
    let cfg = SceneConfig { agents: agents.max(1) as usize, map_elements: elements.map(|e| e as usize), ..SceneConfig::default() };
    generate_scene(seed, &cfg).map_err(|e| e.to_string())
}

/// Ego-frame metres to SVG pixels, forward pointing up.
fn px(p: [f64; 2]) -> (f64, f64) {
    ((p[0] - X_RANGE.0) * PX_PER_M, (Y_RANGE.1 - p[1]) * PX_PER_M)
}

fn path(points: &[[f64; 2]]) -> String {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (x, y) = px(p);
            format!("{}{x:.1},{y:.1}", if i == 0 { "M" } else { " L" })
        })
        .collect()
}

fn colour(class: MapClass) -> &'static str {
    match class {
        MapClass::Boundary => "#d9480f",
        MapClass::Divider => "#f2f2f2",
        MapClass::Crosswalk => "#4dabf7",
        MapClass::Centerline => "#69db7c",
    }
}

/// Top-down SVG of a generated scene: ground-truth map, agent boxes,
/// past tracks (grey) and future tracks (yellow).
pub fn render_scene_svg(seed: u64, agents: u32, elements: Option<u32>) -> Result<String, String> {
    let scene = scene(seed, agents, elements)?;
    let (w, h) = ((X_RANGE.1 - X_RANGE.0) * PX_PER_M, (Y_RANGE.1 - Y_RANGE.0) * PX_PER_M);
    let mut svg = format!(r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}"><rect width="{w}" height="{h}" fill="#343a40"/>"##);
    for e in &scene.gt_map.elements {
        let dash = if e.class == MapClass::Centerline { r#" stroke-dasharray="6 6""# } else { "" };
        write!(svg, r#"<path d="{}" stroke="{}" stroke-width="2" fill="none"{dash}/>"#, path(&e.points), colour(e.class)).unwrap();
    }
    for a in &scene.agents {
        write!(svg, r##"<path d="{}" stroke="#adb5bd" stroke-width="1.5" fill="none"/>"##, path(&a.history)).unwrap();
        write!(svg, r##"<path d="{}" stroke="#fcc419" stroke-width="1.5" fill="none"/>"##, path(&a.future)).unwrap();
    }
    for f in footprints(&scene, scene.current_frame()) {
        let [hx, hy] = f.heading;
        let corners: Vec<[f64; 2]> = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|(s, t)| [f.centre[0] + s * f.half[0] * hx - t * f.half[1] * hy, f.centre[1] + s * f.half[0] * hy + t * f.half[1] * hx])
            .collect();
        write!(svg, r##"<path d="{}Z" fill="#e64980" stroke="none"/>"##, path(&corners)).unwrap();
    }
    let (ex, ey) = px([0.0, 0.0]);
    write!(svg, r##"<circle cx="{ex}" cy="{ey}" r="6" fill="#ffffff"/></svg>"##).unwrap();
    Ok(svg)
}

/// Grayscale image of a BEV grid, one pixel per cell, forward pointing up.
#[wasm_bindgen]
pub struct BevImage {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl BevImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// RGBA bytes, row-major, ready for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// Encodes the current frame of a scene with an untrained encoder and
/// renders the first principal component of its BEV features.
pub fn render_bev_pca(seed: u64, kind: &str, init_seed: u64) -> Result<BevImage, String> {
    let kind: EncoderKind = kind.parse().map_err(|e: String| e)?;
    let scene = scene(seed, 8, None)?;
    let encoder = BevEncoder::<f32>::new(&mut Init::new(init_seed), EncoderConfig { kind, ..EncoderConfig::default() })
        .map_err(|e| e.to_string())?;
    let bev = encode_bev(&encoder, &scene, scene.current_frame(), None).map_err(|e| e.to_string())?;
    let img = pca_grayscale(&bev);
    let rgba = img.pixels.iter().flat_map(|&v| [v, v, v, 255]).collect();
    Ok(BevImage { width: img.cols, height: img.rows, rgba })
}

/// Patch count for an `height × width` grid cut into `rows × cols` patches.
pub fn describe_patches(height: usize, width: usize, rows: usize, cols: usize) -> String {
    match patch_count(height, width, (rows, cols)) {
        Ok(n) => format!("{n} patches of {rows}×{cols} cells ({} per patch)", rows * cols),
        Err(e) => e.to_string(),
    }
}

#[wasm_bindgen(js_name = sceneSvg)]
pub fn scene_svg(seed: u32, agents: u32, elements: Option<u32>) -> Result<String, JsError> {
    render_scene_svg(seed.into(), agents, elements).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = bevPca)]
pub fn bev_pca(seed: u32, kind: &str, init_seed: u32) -> Result<BevImage, JsError> {
    render_bev_pca(seed.into(), kind, init_seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = patchLayout)]
pub fn patch_layout(height: usize, width: usize, rows: usize, cols: usize) -> String {
    describe_patches(height, width, rows, cols)
}
