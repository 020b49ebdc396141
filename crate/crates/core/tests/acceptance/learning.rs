use std::time::Instant;

use bevflow::clibench::{map_chamfer, prepare_scenes, train_map, train_predictor, BevChoice, MapModel, PreparedScene, RunConfig};
use bevflow::predict::Strategy;
use bevflow::pv2bev::EncoderKind;
use bevflow::synthscene::{generate_dataset, Scene};

use crate::support::{ensure, Outcome};

const PREDICTOR_SEEDS: [u64; 3] = [0, 1, 2];

/// 3 m × 3 m patches for the BEV-only strategy, finer than the 6 m default.
const S3_PATCH: (usize, usize) = (5, 5);

/// Desk-scale data: 512 training scenes from base seed 0, 64 validation
/// scenes from base seed 1 and 64 unseen test scenes from base seed 2.
pub struct Corpus {
    pub cfg: RunConfig,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Corpus {
    pub fn generate() -> Self {
        let cfg = RunConfig { seed: 0, ..RunConfig::default() };
        let train = generate_dataset(0, cfg.train_scenes, &cfg.scene).expect("training scenes");
        let val = generate_dataset(1, cfg.val_scenes, &cfg.scene).expect("validation scenes");
        let test = generate_dataset(2, cfg.val_scenes, &cfg.scene).expect("test scenes");
        Corpus { cfg, train, val, test }
    }
}

/// Trains the map model; the Chamfer distance is measured on scenes never
/// used for training or checkpoint selection.
pub fn map_sanity(corpus: &Corpus) -> (Outcome, Option<MapModel<f32>>) {
    let start = Instant::now();
    let cfg = &corpus.cfg;
    let (model, outcome) = match train_map(cfg, &corpus.train, &corpus.val) {
        Ok(r) => r,
        Err(e) => return (Err(format!("map training failed: {e}")), None),
    };
    let secs = start.elapsed().as_secs_f64();
    let result = (|| {
        let test = map_chamfer(&model, &corpus.test, cfg.decoder.score_threshold).map_err(|e| e.to_string())?;
        ensure(test < 1.0, || format!("held-out Chamfer {test:.3} m (validation best {:.3} m)", outcome.best_metric))?;
        ensure(secs < 1200.0, || format!("map training took {:.1} min (limit 20)", secs / 60.0))?;
        Ok(format!(
            "held-out Chamfer {test:.3} m (validation {:.3} m at epoch {:?}), {} epochs × {} scenes in {:.1} min",
            outcome.best_metric,
            outcome.best_epoch,
            cfg.map_training.epochs,
            corpus.train.len(),
            secs / 60.0
        ))
    })();
    (result, Some(model))
}

/// Frozen map-model outputs for every scene, holding both the single-frame
/// and the previous-frame-fused grid.
pub struct Prepared {
    pub train: Vec<PreparedScene>,
    pub val: Vec<PreparedScene>,
    pub secs: f64,
}

pub fn prepare(corpus: &Corpus, model: &MapModel<f32>) -> Result<Prepared, String> {
    let start = Instant::now();
    let all = BevChoice { map: true, single: true, temporal: true };
    let thr = corpus.cfg.decoder.score_threshold;
    let train = prepare_scenes(model, &corpus.train, thr, all).map_err(|e| e.to_string())?;
    let val = prepare_scenes(model, &corpus.val, thr, all).map_err(|e| e.to_string())?;
    Ok(Prepared { train, val, secs: start.elapsed().as_secs_f64() })
}

struct Arm {
    min_fde: f64,
    losses: Vec<f64>,
}

fn run_arm(corpus: &Corpus, model: &MapModel<f32>, data: &Prepared, seed: u64, strategy: Strategy, temporal: bool) -> Result<Arm, String> {
    let mut cfg = corpus.cfg.clone();
    cfg.seed = seed;
    cfg.predictor.strategy = strategy;
    if strategy == Strategy::S3 {
        cfg.predictor.patch = S3_PATCH;
    }
    cfg.temporal = temporal;
    cfg.predictor.allow_single_frame = !temporal;
    assert_eq!(cfg.encoder.kind, EncoderKind::BevFormer);
    let (_, outcome) = train_predictor(&cfg, &model.encoder.meta, &data.train, &data.val).map_err(|e| e.to_string())?;
    Ok(Arm { min_fde: outcome.best_metric, losses: outcome.train_losses })
}

pub fn learning_trend(corpus: &Corpus, model: &MapModel<f32>, data: &Prepared) -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut wins = 0;
    let mut within = true;
    for seed in PREDICTOR_SEEDS {
        let base = run_arm(corpus, model, data, seed, Strategy::Baseline, true)?;
        let s1 = run_arm(corpus, model, data, seed, Strategy::S1, true)?;
        if seed == 0 {
            ensure(s1.losses[5] < s1.losses[0], || format!("s1 epoch-5 loss {} not below epoch-0 loss {}", s1.losses[5], s1.losses[0]))?;
            ensure(base.losses[5] < base.losses[0], || format!("baseline epoch-5 loss {} not below epoch-0 loss {}", base.losses[5], base.losses[0]))?;
        }
        within &= s1.min_fde <= base.min_fde * 1.05;
        wins += usize::from(s1.min_fde < base.min_fde);
        rows.push(format!("seed {seed}: s1 {:.3} vs baseline {:.3}", s1.min_fde, base.min_fde));
    }
    let secs = start.elapsed().as_secs_f64() + data.secs;
    let detail = format!("val minFDE (m) {}; {:.1} min", rows.join(", "), secs / 60.0);
    ensure(within, || format!("s1 above 1.05 × baseline: {detail}"))?;
    ensure(wins >= 2, || format!("s1 strictly better in only {wins} of 3 seeds: {detail}"))?;
    ensure(secs < 1800.0, || format!("over the 30 min budget: {detail}"))?;
    Ok(detail)
}

pub fn encoder_selection(corpus: &Corpus, model: &MapModel<f32>, data: &Prepared) -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut wins = 0;
    for seed in PREDICTOR_SEEDS {
        let temporal = run_arm(corpus, model, data, seed, Strategy::S3, true)?;
        let single = run_arm(corpus, model, data, seed, Strategy::S3, false)?;
        wins += usize::from(temporal.min_fde < single.min_fde);
        rows.push(format!("seed {seed}: temporal {:.3} vs single-frame {:.3}", temporal.min_fde, single.min_fde));
    }
    let detail = format!("s3 val minFDE (m) {}; {:.1} min", rows.join(", "), start.elapsed().as_secs_f64() / 60.0);
    ensure(wins >= 2, || format!("temporal BEV better in only {wins} of 3 seeds: {detail}"))?;
    Ok(detail)
}
