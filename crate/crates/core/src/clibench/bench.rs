use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use super::RunError;
use crate::mapdec::{decode_map, MapDecoder, MapDecoderConfig};
use crate::numgrad::Init;
use crate::predict::{forward_predict, scene_agents, AgentContext, PredictionInput, Predictor, PredictorConfig, Strategy};
use crate::pv2bev::{encode_bev, BevEncoder, EncoderConfig, EncoderKind};
use crate::synthscene::{generate_scene, scene_seeds, MapElement, Scene, SceneConfig};

pub const BENCH_HEADER: &str = "n_agents,n_map_elements,pipeline,median_ms,p95_ms,runs";

const MIN_RUNS: usize = 31;
const MIN_WARMUP: usize = 5;
const SCENE_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// Encode, decode the vector map, predict from the map.
    Decoupled,
    /// Encode, predict directly from BEV patches.
    Integrated,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Decoupled => "decoupled",
            Pipeline::Integrated => "integrated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n_agents: usize,
    pub n_map_elements: usize,
    pub pipeline: Pipeline,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchConfig {
    pub agents: Vec<usize>,
    pub elements: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    pub encoder: EncoderConfig,
    pub decoder: MapDecoderConfig,
    pub predictor: PredictorConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            agents: vec![2, 8, 32],
            elements: vec![5, 20, 40, 60],
            runs: MIN_RUNS,
            warmup: MIN_WARMUP,
            seed: 0,
            scene: SceneConfig::default(),
            encoder: EncoderConfig { kind: EncoderKind::BevFormer, ..EncoderConfig::default() },
            // every decoded instance reaches the predictor, as a decoder sized to the scene would emit
            decoder: MapDecoderConfig { score_threshold: 0.0, ..MapDecoderConfig::default() },
            predictor: PredictorConfig::default(),
        }
    }
}

/// Median of an ascending slice.
pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Nearest-rank percentile of an ascending slice, `q` in `(0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// A scene whose in-range agent count and map element count are exactly as requested.
fn bench_scene(cfg: &BenchConfig, agents: usize, elements: usize) -> Result<Scene, RunError> {
    let scene_cfg = SceneConfig { agents, map_elements: Some(elements), ..cfg.scene.clone() };
    let salt = cfg.seed ^ ((agents as u64) << 32 | elements as u64);
    for seed in scene_seeds(salt, SCENE_TRIES) {
        let scene = generate_scene(seed, &scene_cfg)?;
        if scene_agents(&scene).0.len() == agents {
            return Ok(scene);
        }
    }
    Err(RunError::Config(format!("no scene with {agents} in-range agents after {SCENE_TRIES} tries")))
}

fn time_ms(f: &mut impl FnMut() -> Result<(), RunError>) -> Result<f64, RunError> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn summarise(n_agents: usize, n_map_elements: usize, pipeline: Pipeline, mut samples: Vec<f64>) -> BenchRow {
    samples.sort_by(f64::total_cmp);
    BenchRow {
        n_agents,
        n_map_elements,
        pipeline,
        median_ms: median(&samples),
        p95_ms: percentile(&samples, 0.95),
        runs: samples.len(),
    }
}

/// Times both pipelines on every (agents, elements) cell. Runs are
/// interleaved across pipelines and cells so drift affects all equally.
pub fn run_benchmark_grid(cfg: &BenchConfig) -> Result<Vec<BenchRow>, RunError> {
    if cfg.runs < MIN_RUNS || cfg.warmup < MIN_WARMUP {
        return Err(RunError::Config(format!(
            "benchmark needs at least {MIN_RUNS} runs and {MIN_WARMUP} warmup iterations, got {} and {}",
            cfg.runs, cfg.warmup
        )));
    }
    if cfg.agents.is_empty() || cfg.elements.is_empty() || cfg.agents.contains(&0) || cfg.elements.contains(&0) {
        return Err(RunError::Config("agent and element lists must be non-empty and positive".into()));
    }
    let mut init = Init::new(cfg.seed);
    let encoder = BevEncoder::<f32>::new(&mut init, cfg.encoder.clone())?;
    let meta = encoder.meta;
    let baseline = Predictor::<f32>::new(&mut init, PredictorConfig { strategy: Strategy::Baseline, ..cfg.predictor.clone() }, &meta)?;
    let integrated = Predictor::<f32>::new(&mut init, PredictorConfig { strategy: Strategy::S1, ..cfg.predictor.clone() }, &meta)?;
    let resolution = timer_resolution().as_secs_f64() * 1e3;

    struct Cell {
        n_agents: usize,
        n_elements: usize,
        scene: Scene,
        decoder: MapDecoder<f32>,
        agents: AgentContext,
        decoupled: Vec<f64>,
        integrated: Vec<f64>,
    }
    let mut cells = Vec::new();
    for &n_agents in &cfg.agents {
        for &n_elements in &cfg.elements {
            let scene = bench_scene(cfg, n_agents, n_elements)?;
            let decoder = MapDecoder::<f32>::new(
                &mut Init::new(cfg.seed),
                meta.dim,
                MapDecoderConfig { instances: n_elements, ..cfg.decoder.clone() },
            )?;
            let (agents, _) = scene_agents(&scene);
            cells.push(Cell { n_agents, n_elements, scene, decoder, agents, decoupled: Vec::new(), integrated: Vec::new() });
        }
    }

    let threshold = cfg.decoder.score_threshold;
    // Round-robin over cells so slow machine drift spreads evenly across the grid.
    for run in 0..cfg.warmup + cfg.runs {
        for cell in &mut cells {
            let frame = cell.scene.current_frame();
            let ta = time_ms(&mut || {
                let bev = encode_bev(&encoder, &cell.scene, frame, None)?;
                let map: Vec<MapElement> =
                    decode_map(&cell.decoder, &bev)?.elements(threshold).into_iter().map(|s| s.element).collect();
                black_box(forward_predict(&baseline, PredictionInput { agents: &cell.agents, map: Some(&map), bev: None })?);
                Ok(())
            })?;
            let tb = time_ms(&mut || {
                let bev = encode_bev(&encoder, &cell.scene, frame, None)?;
                black_box(forward_predict(&integrated, PredictionInput { agents: &cell.agents, map: None, bev: Some(&bev) })?);
                Ok(())
            })?;
            if run >= cfg.warmup {
                cell.decoupled.push(ta);
                cell.integrated.push(tb);
            }
        }
    }

    let mut rows = Vec::new();
    for cell in cells {
        for row in [
            summarise(cell.n_agents, cell.n_elements, Pipeline::Decoupled, cell.decoupled),
            summarise(cell.n_agents, cell.n_elements, Pipeline::Integrated, cell.integrated),
        ] {
            if resolution > 0.01 * row.median_ms {
                return Err(RunError::TimerResolution {
                    resolution_ns: (resolution * 1e6).round() as u64,
                    median_ms: row.median_ms,
                });
            }
            log::info!("{} agents, {} elements, {}: median {:.2} ms", row.n_agents, row.n_map_elements, row.pipeline, row.median_ms);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// CSV with a leading comment line recording how the decoupled path was timed.
pub fn bench_csv(rows: &[BenchRow], score_threshold: f64) -> String {
    let mut out = format!(
        "# decoupled timing includes decoder score thresholding (threshold {score_threshold}); single-threaded CPU wall clock\n{BENCH_HEADER}\n"
    );
    for r in rows {
        writeln!(out, "{},{},{},{:.4},{:.4},{}", r.n_agents, r.n_map_elements, r.pipeline, r.median_ms, r.p95_ms, r.runs).unwrap();
    }
    out
}
