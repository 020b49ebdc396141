//! Run configuration, checkpoints, training and evaluation loops, the
//! decoupled-vs-integrated latency grid and PCA visualisation of BEV grids.

mod bench;
mod checkpoint;
mod pca;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use bench::{
    bench_csv, median, percentile, run_benchmark_grid, timer_resolution, BenchConfig, BenchRow, Pipeline, BENCH_HEADER,
};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Checkpoint, ManifestEntry, Role};
pub use pca::{encode_pgm, first_component, pca_grayscale, pca_projection, GrayImage};
pub use train::{
    evaluate_checkpoint, evaluate_prepared, map_chamfer, prepare_scenes, train_map, train_predictor, BevChoice, MapModel,
    PreparedScene, TrainOutcome, CHAMFER_STEP,
};

use crate::mapdec::{MapDecoderConfig, MapError};
use crate::numgrad::{AdamConfig, NumError};
use crate::predict::{PredictError, PredictorConfig};
use crate::pv2bev::{BevError, EncoderConfig};
use crate::synthscene::{SceneConfig, SceneError};

pub const RUN_CONFIG_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("run config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("{0} is empty")]
    Empty(String),
    #[error("timer resolution {resolution_ns} ns exceeds 1% of the {median_ms:.4} ms median; raise the workload")]
    TimerResolution { resolution_ns: u64, median_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch: usize,
    pub optimizer: AdamConfig,
    /// Cosine-anneal the learning rate from `optimizer.lr` towards zero over the epochs.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine_decay && self.epochs > 0 {
            let t = epoch as f64 / self.epochs as f64;
            0.5 * self.optimizer.lr * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.optimizer.lr
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub map_checkpoint: Option<PathBuf>,
}

/// Everything a command needs to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub scene: SceneConfig,
    pub encoder: EncoderConfig,
    pub decoder: MapDecoderConfig,
    pub predictor: PredictorConfig,
    /// Feed the predictor the previous-frame-fused grid (attention encoder only).
    pub temporal: bool,
    pub map_training: TrainConfig,
    pub pred_training: TrainConfig,
    pub paths: RunPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optimizer = AdamConfig { lr: 2e-3, ..AdamConfig::default() };
        RunConfig {
            seed: 0,
            train_scenes: 512,
            val_scenes: 64,
            scene: SceneConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: MapDecoderConfig::default(),
            predictor: PredictorConfig::default(),
            temporal: true,
            map_training: TrainConfig { epochs: 20, batch: 4, optimizer, cosine_decay: false },
            pred_training: TrainConfig {
                epochs: 30,
                batch: 4,
                optimizer: AdamConfig { weight_decay: 1e-2, ..optimizer },
                cosine_decay: true,
            },
            paths: RunPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.scene.validate()?;
        self.decoder.validate()?;
        self.predictor.validate()?;
        for t in [&self.map_training, &self.pred_training] {
            if t.batch == 0 || !(t.optimizer.lr >= 0.0) {
                return Err(RunError::Config(format!("batch {} with learning rate {}", t.batch, t.optimizer.lr)));
            }
        }
        if self.predictor.history_len != self.scene.history_len() || self.predictor.future_len != self.scene.future_len() {
            return Err(RunError::Config(format!(
                "predictor horizons {}/{} do not match {} Hz scenes ({}/{})",
                self.predictor.history_len,
                self.predictor.future_len,
                self.scene.hz,
                self.scene.history_len(),
                self.scene.future_len()
            )));
        }
        Ok(())
    }

    /// Aligns the predictor horizons with the scene frame rate.
    pub fn with_hz(mut self, hz: u32) -> Self {
        self.scene.hz = hz;
        self.predictor.history_len = self.scene.history_len();
        self.predictor.future_len = self.scene.future_len();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serialises") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self, RunError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Writes `run.json` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RUN_CONFIG_FILE), self.to_json())?;
        Ok(())
    }

    /// Seed for predictor initialisation, decorrelated from the map model's.
    pub fn predictor_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
    }
}
