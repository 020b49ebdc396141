use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, Role};
use super::{RunConfig, RunError};
use crate::mapdec::{chamfer_distance, decode_map, map_matching_loss, MapDecoder, MapTargets, ScoredElement};
use crate::numgrad::{Adam, Init, Module, NumError, Param, Real, Tensor};
use crate::predict::{
    compute_metrics, forward_predict, scene_agents, wta_loss, AgentContext, MetricsReport, PredictionInput, Predictor,
    Strategy,
};
use crate::pv2bev::{encode_bev, encode_scene, BevEncoder, BevGrid, BevGridMeta, EncoderKind};
use crate::synthscene::{MapElement, Scene};

/// Resampling step (m) for held-out Chamfer distance.
pub const CHAMFER_STEP: f64 = 0.5;

/// BEV encoder and map decoder, trained together on the map loss.
pub struct MapModel<T: Real> {
    pub encoder: BevEncoder<T>,
    pub decoder: MapDecoder<T>,
}

impl<T: Real> MapModel<T> {
    pub fn new(cfg: &RunConfig) -> Result<Self, RunError> {
        let mut init = Init::new(cfg.seed);
        let encoder = BevEncoder::new(&mut init, cfg.encoder.clone())?;
        let decoder = MapDecoder::new(&mut init, encoder.meta.dim, cfg.decoder.clone())?;
        Ok(MapModel { encoder, decoder })
    }

    pub fn groups(&self) -> Vec<(Role, Vec<(String, Param<T>)>)> {
        vec![(Role::Encoder, self.encoder.params()), (Role::Decoder, self.decoder.params())]
    }

    fn all_params(&self) -> Vec<Param<T>> {
        self.groups().into_iter().flat_map(|(_, ps)| ps.into_iter().map(|(_, p)| p)).collect()
    }

    /// Current-frame grid and the decoded elements scoring at least `threshold`.
    pub fn decode_scene(&self, scene: &Scene, threshold: f64) -> Result<(BevGrid<T>, Vec<ScoredElement>), RunError> {
        let bev = encode_bev(&self.encoder, scene, scene.current_frame(), None)?.detach();
        let elements = decode_map(&self.decoder, &bev)?.elements(threshold);
        Ok((bev, elements))
    }
}

/// Training log and best validation score of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// One CSV row per epoch.
    pub log_csv: String,
    /// Epoch whose weights were kept (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub train_losses: Vec<f64>,
}

pub(super) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    order.shuffle(&mut rng);
    order
}

fn snapshot<T: Real>(params: &[Param<T>]) -> Vec<Vec<T>> {
    params.iter().map(|p| p.get().to_vec()).collect()
}

fn restore<T: Real>(params: &[Param<T>], values: Vec<Vec<T>>) -> Result<(), NumError> {
    params.iter().zip(values).try_for_each(|(p, v)| p.set_data(v))
}

/// One pass over `order` in minibatches; `loss_of` may skip an item by
/// returning `None`. Returns the mean item loss.
fn run_epoch<T: Real>(
    adam: &mut Adam<T>,
    order: &[usize],
    batch: usize,
    epoch: usize,
    mut loss_of: impl FnMut(usize) -> Result<Option<Tensor<T>>, RunError>,
) -> Result<f64, RunError> {
    let (mut total, mut count) = (0.0, 0usize);
    for (b, chunk) in order.chunks(batch).enumerate() {
        let mut used = 0;
        for &i in chunk {
            let Some(loss) = loss_of(i)? else { continue };
            let value = loss.item()?.to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(RunError::NonFiniteLoss { epoch, batch: b });
            }
            loss.backward()?;
            total += value;
            count += 1;
            used += 1;
        }
        if used > 0 {
            adam.step(1.0 / used as f64).map_err(|e| match e {
                NumError::NonFinite(_) => RunError::NonFiniteLoss { epoch, batch: b },
                other => other.into(),
            })?;
        }
    }
    Ok(if count > 0 { total / count as f64 } else { f64::NAN })
}

/// Mean symmetric Chamfer distance between decoded and ground-truth maps.
/// A scene where no instance clears the threshold is scored with its
/// single highest-scoring instance.
pub fn map_chamfer<T: Real>(model: &MapModel<T>, scenes: &[Scene], threshold: f64) -> Result<f64, RunError> {
    let mut sum = 0.0;
    let mut n = 0;
    for scene in scenes {
        let gt: Vec<Vec<[f64; 2]>> = model.decoder.cfg.targets(&scene.gt_map).iter().map(|e| e.points.clone()).collect();
        if gt.is_empty() {
            continue;
        }
        let (_, mut kept) = model.decode_scene(scene, threshold)?;
        if kept.is_empty() {
            let all = model.decode_scene(scene, 0.0)?.1;
            let best = all.into_iter().max_by(|a, b| a.score.total_cmp(&b.score));
            kept.extend(best);
        }
        let pred: Vec<Vec<[f64; 2]>> = kept.into_iter().map(|s| s.element.points).collect();
        sum += chamfer_distance(&pred, &gt, CHAMFER_STEP)?;
        n += 1;
    }
    if n == 0 {
        return Err(RunError::Empty("held-out map set".into()));
    }
    Ok(sum / n as f64)
}

/// Trains encoder and decoder on single-frame grids; keeps the weights of
/// the epoch with the lowest held-out Chamfer distance.
pub fn train_map(cfg: &RunConfig, train: &[Scene], val: &[Scene]) -> Result<(MapModel<f32>, TrainOutcome), RunError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(RunError::Empty(if train.is_empty() { "training split" } else { "validation split" }.into()));
    }
    let model = MapModel::<f32>::new(cfg)?;
    let params = model.all_params();
    let mut adam = Adam::new(params.clone(), cfg.map_training.optimizer);
    let targets: Vec<MapTargets> = train.iter().map(|s| MapTargets::new(&s.gt_map, &cfg.decoder)).collect();
    let mut log = String::from("epoch,train_loss,val_chamfer\n");
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let mut losses = Vec::new();
    for epoch in 0..cfg.map_training.epochs {
        adam.cfg.lr = cfg.map_training.lr_at(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let loss = run_epoch(&mut adam, &order, cfg.map_training.batch, epoch, |i| {
            let scene = &train[i];
            let bev = encode_bev(&model.encoder, scene, scene.current_frame(), None)?;
            let decoded = decode_map(&model.decoder, &bev)?;
            Ok(Some(map_matching_loss(&decoded, &targets[i])?))
        })?;
        let chamfer = map_chamfer(&model, val, cfg.decoder.score_threshold)?;
        writeln!(log, "{epoch},{loss},{chamfer}").unwrap();
        log::info!("map epoch {epoch}: loss {loss:.4}, held-out chamfer {chamfer:.3} m");
        losses.push(loss);
        if best.as_ref().map_or(true, |b| chamfer < b.1) {
            best = Some((epoch, chamfer, snapshot(&params)));
        }
    }
    let (best_epoch, best_metric) = match best {
        Some((e, m, values)) => {
            restore(&params, values)?;
            (Some(e), m)
        }
        None => (None, f64::NAN),
    };
    Ok((model, TrainOutcome { log_csv: log, best_epoch, best_metric, train_losses: losses }))
}

/// Which inputs a prediction run needs from each scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BevChoice {
    pub map: bool,
    pub single: bool,
    pub temporal: bool,
}

impl BevChoice {
    pub fn for_run(cfg: &RunConfig) -> Self {
        let s = cfg.predictor.strategy;
        let temporal = s.uses_bev() && cfg.temporal && cfg.encoder.kind == EncoderKind::BevFormer;
        BevChoice { map: s.uses_map(), single: s.uses_bev() && !temporal, temporal }
    }

    pub fn union(self, other: Self) -> Self {
        BevChoice { map: self.map || other.map, single: self.single || other.single, temporal: self.temporal || other.temporal }
    }
}

/// Encoded grids, decoded map and in-range agents of one scene.
pub struct PreparedScene {
    pub seed: u64,
    pub agents: AgentContext,
    pub futures: Vec<Vec<[f64; 2]>>,
    pub map: Vec<MapElement>,
    pub single: Option<BevGrid<f32>>,
    pub temporal: Option<BevGrid<f32>>,
}

impl PreparedScene {
    fn input<'a>(&'a self, cfg: &RunConfig) -> PredictionInput<'a, f32> {
        let bev = if !cfg.predictor.strategy.uses_bev() {
            None
        } else if cfg.temporal {
            self.temporal.as_ref().or(self.single.as_ref())
        } else {
            self.single.as_ref()
        };
        PredictionInput { agents: &self.agents, map: Some(&self.map), bev }
    }
}

/// Runs the frozen map model over `scenes` once so predictors can train on the results.
pub fn prepare_scenes(
    model: &MapModel<f32>,
    scenes: &[Scene],
    threshold: f64,
    choice: BevChoice,
) -> Result<Vec<PreparedScene>, RunError> {
    scenes
        .iter()
        .map(|scene| {
            let (agents, futures) = scene_agents(scene);
            let (single, map) = if choice.single || choice.map {
                let (bev, elements) = model.decode_scene(scene, threshold)?;
                (choice.single.then_some(bev), elements.into_iter().map(|s| s.element).collect())
            } else {
                (None, Vec::new())
            };
            let temporal = if choice.temporal && model.encoder.kind() == EncoderKind::BevFormer {
                Some(encode_scene(&model.encoder, scene, true)?.detach())
            } else {
                None
            };
            Ok(PreparedScene { seed: scene.seed, agents, futures, map, single, temporal })
        })
        .collect()
}

/// Best-of-K metrics over every in-range agent of `scenes`; rows are
/// labelled `<scene seed>:<agent id>`.
pub fn evaluate_prepared(model: &Predictor<f32>, scenes: &[PreparedScene], cfg: &RunConfig) -> Result<MetricsReport, RunError> {
    let mut rows = Vec::new();
    for s in scenes.iter().filter(|s| !s.agents.is_empty()) {
        let pred = forward_predict(model, s.input(cfg))?;
        let ids: Vec<String> = s.agents.ids.iter().map(|id| format!("{}:{id}", s.seed)).collect();
        rows.extend(compute_metrics(&pred, &s.futures, &ids)?.agents);
    }
    if rows.is_empty() {
        return Err(RunError::Empty("evaluation split (no in-range agents)".into()));
    }
    Ok(MetricsReport::from_agents(rows)?)
}

/// Trains a predictor with the WTA loss; keeps the epoch with the lowest
/// validation minFDE.
pub fn train_predictor(
    cfg: &RunConfig,
    meta: &BevGridMeta,
    train: &[PreparedScene],
    val: &[PreparedScene],
) -> Result<(Predictor<f32>, TrainOutcome), RunError> {
    cfg.validate()?;
    if train.iter().all(|s| s.agents.is_empty()) {
        return Err(RunError::Empty("training split (no in-range agents)".into()));
    }
    let model = Predictor::<f32>::new(&mut Init::new(cfg.predictor_seed()), cfg.predictor.clone(), meta)?;
    let params: Vec<Param<f32>> = model.params().into_iter().map(|(_, p)| p).collect();
    let mut adam = Adam::new(params.clone(), cfg.pred_training.optimizer);
    let mut log = String::from("epoch,train_loss,val_minADE,val_minFDE,val_MR\n");
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let mut losses = Vec::new();
    for epoch in 0..cfg.pred_training.epochs {
        adam.cfg.lr = cfg.pred_training.lr_at(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let loss = run_epoch(&mut adam, &order, cfg.pred_training.batch, epoch, |i| {
            let s = &train[i];
            if s.agents.is_empty() {
                return Ok(None);
            }
            Ok(Some(wta_loss(&forward_predict(&model, s.input(cfg))?, &s.futures)?))
        })?;
        let report = evaluate_prepared(&model, val, cfg)?;
        writeln!(log, "{epoch},{loss},{},{},{}", report.min_ade, report.min_fde, report.miss_rate).unwrap();
        log::info!(
            "{} epoch {epoch}: loss {loss:.4}, val minADE {:.3} minFDE {:.3} MR {:.3}",
            cfg.predictor.strategy,
            report.min_ade,
            report.min_fde,
            report.miss_rate
        );
        losses.push(loss);
        if best.as_ref().map_or(true, |b| report.min_fde < b.1) {
            best = Some((epoch, report.min_fde, snapshot(&params)));
        }
    }
    let (best_epoch, best_metric) = match best {
        Some((e, m, values)) => {
            restore(&params, values)?;
            (Some(e), m)
        }
        None => (None, f64::NAN),
    };
    Ok((model, TrainOutcome { log_csv: log, best_epoch, best_metric, train_losses: losses }))
}

/// Loads a predictor checkpoint (which bundles its encoder and decoder) and
/// evaluates it on `scenes`. `expected` guards against evaluating the wrong strategy.
pub fn evaluate_checkpoint(dir: &Path, scenes: &[Scene], expected: Option<Strategy>) -> Result<MetricsReport, RunError> {
    if scenes.is_empty() {
        return Err(RunError::Empty("evaluation split".into()));
    }
    let ckpt = load_checkpoint(dir)?;
    let cfg = &ckpt.config;
    let strategy = cfg.predictor.strategy;
    match ckpt.predictor_strategy() {
        Some(s) if s == strategy => {}
        Some(s) => {
            return Err(RunError::Manifest(format!("manifest holds a {s} predictor, run config says {strategy}")));
        }
        None => return Err(RunError::Manifest("no predictor tensors in checkpoint".into())),
    }
    if let Some(want) = expected.filter(|&w| w != strategy) {
        return Err(RunError::Manifest(format!("checkpoint holds a {strategy} predictor, {want} was requested")));
    }
    let map = MapModel::<f32>::new(cfg)?;
    ckpt.restore(Role::Encoder, &map.encoder)?;
    ckpt.restore(Role::Decoder, &map.decoder)?;
    let predictor = Predictor::<f32>::new(&mut Init::new(cfg.predictor_seed()), cfg.predictor.clone(), &map.encoder.meta)?;
    ckpt.restore(Role::Predictor(strategy), &predictor)?;
    let prepared = prepare_scenes(&map, scenes, cfg.decoder.score_threshold, BevChoice::for_run(cfg))?;
    evaluate_prepared(&predictor, &prepared, cfg)
}
