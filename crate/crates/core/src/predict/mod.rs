//! Multi-modal trajectory prediction: a lane-vector baseline and three ways
//! of feeding BEV features to the predictor, with the WTA loss and the
//! minADE / minFDE / miss-rate metrics.

mod lanes;
mod metrics;
mod model;
mod patch;

use serde::{Deserialize, Serialize};

pub use lanes::{encode_lanes_vectornet, s2_augment_vertices, AugmentedVertices, LaneEncoder, VertexRefiner};
pub use metrics::{compute_metrics, metrics_csv, wta_loss, AgentMetrics, MetricsReport, MISS_THRESHOLD};
pub use model::{forward_predict, AttentionBlock, PredictionInput, PredictionSet, Predictor};
pub use patch::{agent_bev_attention, agent_patch_index, patch_count, patchify, PatchEmbed, PatchEmbeds, PatchIndex};

use crate::numgrad::NumError;
use crate::pv2bev::BevError;
use crate::synthscene::{in_perception_range, Scene};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error("predictor config: {0}")]
    Config(String),
    #[error("position ({x}, {y}) is outside the perception range")]
    OutOfRange { x: f64, y: f64 },
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("strategy s3 needs a temporal BEV grid (pass the single-frame ablation flag to override)")]
    NotTemporal,
    #[error("horizon mismatch: predicted {predicted} steps, ground truth {truth}")]
    Horizon { predicted: usize, truth: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
}

/// How BEV features reach the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Decoded lanes and agent histories only.
    Baseline,
    /// Agent-BEV patch attention replaces agent-lane attention.
    S1,
    /// Lane vertices augmented with BEV features sampled beneath them.
    S2,
    /// Agent-BEV attention over the temporal grid replaces the history encoder.
    S3,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Baseline, Strategy::S1, Strategy::S2, Strategy::S3];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::S1 => "s1",
            Strategy::S2 => "s2",
            Strategy::S3 => "s3",
        }
    }

    pub fn uses_history(self) -> bool {
        self != Strategy::S3
    }

    pub fn uses_map(self) -> bool {
        self != Strategy::S1
    }

    pub fn uses_bev(self) -> bool {
        self != Strategy::Baseline
    }

    pub fn uses_patches(self) -> bool {
        matches!(self, Strategy::S1 | Strategy::S3)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected baseline, s1, s2 or s3)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub strategy: Strategy,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub modes: usize,
    pub history_len: usize,
    pub future_len: usize,
    /// BEV patch (rows, cols) in cells.
    pub patch: (usize, usize),
    pub lane_points: usize,
    pub lane_hidden: usize,
    /// Trajectory head outputs are multiplied by this many metres.
    pub output_scale: f64,
    /// Lets s3 run on a single-frame grid (encoder ablation).
    pub allow_single_frame: bool,
    /// Stacked agent-BEV attention layers, each followed by a feed-forward block.
    #[serde(default = "default_bev_depth")]
    pub bev_depth: usize,
}

fn default_bev_depth() -> usize {
    PredictorConfig::default().bev_depth
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            strategy: Strategy::Baseline,
            dim: 32,
            heads: 4,
            mlp_dim: 64,
            modes: 6,
            history_len: 20,
            future_len: 30,
            patch: (10, 10),
            lane_points: 10,
            lane_hidden: 32,
            output_scale: 10.0,
            allow_single_frame: false,
            bev_depth: 2,
        }
    }
}

impl PredictorConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        PredictorConfig { strategy, ..PredictorConfig::default() }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(PredictError::Config(format!("width {} with {} heads", self.dim, self.heads)));
        }
        if self.bev_depth == 0 {
            return Err(PredictError::Config("agent-BEV attention needs at least one layer".into()));
        }
        if self.modes == 0 || self.future_len == 0 || self.history_len < 2 || self.lane_points < 2 {
            return Err(PredictError::Config(format!(
                "{} modes, history {}, future {}, {} lane points",
                self.modes, self.history_len, self.future_len, self.lane_points
            )));
        }
        Ok(())
    }
}

/// Agents the predictor sees: current positions plus histories (oldest
/// first, ending at the current position) for strategies that consume them.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentContext {
    pub ids: Vec<u32>,
    pub positions: Vec<[f64; 2]>,
    pub histories: Option<Vec<Vec<[f64; 2]>>>,
}

impl AgentContext {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Agents inside the perception range at the current frame, with their
/// ground-truth futures; agents outside are excluded from loss and metrics.
pub fn scene_agents(scene: &Scene) -> (AgentContext, Vec<Vec<[f64; 2]>>) {
    let kept: Vec<_> = scene.agents.iter().filter(|a| in_perception_range(a.current())).collect();
    let ctx = AgentContext {
        ids: kept.iter().map(|a| a.id).collect(),
        positions: kept.iter().map(|a| a.current()).collect(),
        histories: Some(kept.iter().map(|a| a.history.clone()).collect()),
    };
    (ctx, kept.iter().map(|a| a.future.clone()).collect())
}
