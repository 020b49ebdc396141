use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bevflow::clibench::{
    bench_csv, encode_pgm, evaluate_checkpoint, load_checkpoint, pca_grayscale, prepare_scenes, run_benchmark_grid,
    save_checkpoint, train_map, train_predictor, BenchConfig, BevChoice, MapModel, Role, RunConfig, RunError,
};
use bevflow::predict::{metrics_csv, Strategy};
use bevflow::pv2bev::{encode_bev, encode_scene, BevGrid, EncoderKind};
use bevflow::synthscene::{generate_dataset, read_dataset, write_dataset, Scene};

#[derive(Parser)]
#[command(name = "bevflow", version, about = "Synthetic BEV mapping and trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    train: PathBuf,
    /// Validation dataset file.
    #[arg(long)]
    val: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Base run configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene dataset.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 8)]
        agents: usize,
        #[arg(long, default_value_t = 10)]
        hz: u32,
        /// Force exactly this many map elements per scene.
        #[arg(long)]
        elements: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a BEV encoder and map decoder.
    TrainMap {
        #[arg(long, default_value = "bevformer")]
        variant: EncoderKind,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Train a trajectory predictor on top of a trained map checkpoint.
    TrainPred {
        #[arg(long)]
        strategy: Strategy,
        /// BEV patch size in cells, `rows,cols`.
        #[arg(long, value_parser = parse_pair)]
        patch: Option<(usize, usize)>,
        /// Map checkpoint directory from `train-map`.
        #[arg(long)]
        map: PathBuf,
        /// Feed the predictor single-frame BEV (lets s3 run without temporal fusion).
        #[arg(long)]
        ablate: bool,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Evaluate a predictor checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset file to evaluate on.
        #[arg(long)]
        split: PathBuf,
        /// Fail unless the checkpoint holds this strategy.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Per-agent metrics CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time decoupled against integrated inference over a scenario grid.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,8,32")]
        agents: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "5,20,40,60")]
        elements: Vec<usize>,
        #[arg(long, default_value_t = 31)]
        runs: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one scene with a checkpoint's encoder and write the BEV grid blob.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Index of the scene within the split.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Skip temporal fusion with the previous frame.
        #[arg(long)]
        single_frame: bool,
        /// Output stem; writes `<stem>.bevt` and `<stem>.meta`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a BEV grid blob as a PCA grayscale PGM.
    VizBev {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `rows,cols`, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

/// `<path>.run.json`, the config sidecar of a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

fn load_split(path: &Path) -> Result<Vec<Scene>, RunError> {
    let scenes = read_dataset(path)?;
    log::info!("read {} scenes from {}", scenes.len(), path.display());
    Ok(scenes)
}

fn base_config(args: &TrainArgs, train: &[Scene], val: &[Scene]) -> Result<RunConfig, RunError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = train.first() {
        cfg = cfg.with_hz(s.hz);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    for t in [&mut cfg.map_training, &mut cfg.pred_training] {
        if let Some(e) = args.epochs {
            t.epochs = e;
        }
        if let Some(lr) = args.lr {
            t.optimizer.lr = lr;
        }
        if let Some(b) = args.batch {
            t.batch = b;
        }
    }
    cfg.train_scenes = train.len();
    cfg.val_scenes = val.len();
    cfg.paths.train = Some(args.train.clone());
    cfg.paths.val = Some(args.val.clone());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Gen { seed, scenes, agents, hz, elements, out } => {
            let mut cfg = RunConfig::default().with_hz(hz);
            cfg.seed = seed;
            cfg.scene.agents = agents;
            cfg.scene.map_elements = elements;
            cfg.train_scenes = scenes;
            cfg.val_scenes = 0;
            let data = generate_dataset(seed, scenes, &cfg.scene)?;
            write_dataset(&data, &out)?;
            std::fs::write(sidecar(&out), cfg.to_json())?;
            log::info!("wrote {scenes} scenes to {}", out.display());
        }
        Command::TrainMap { variant, args } => {
            let (train, val) = (load_split(&args.train)?, load_split(&args.val)?);
            let mut cfg = base_config(&args, &train, &val)?;
            cfg.encoder.kind = variant;
            let (model, outcome) = train_map(&cfg, &train, &val)?;
            save_checkpoint(&args.out, &cfg, &model.groups())?;
            std::fs::write(args.out.join("train_log.csv"), &outcome.log_csv)?;
            log::info!("best held-out chamfer {:.3} m at epoch {:?}", outcome.best_metric, outcome.best_epoch);
        }
        Command::TrainPred { strategy, patch, map, ablate, args } => {
            let (train, val) = (load_split(&args.train)?, load_split(&args.val)?);
            let map_ckpt = load_checkpoint(&map)?;
            if !map_ckpt.has_role(Role::Encoder) || !map_ckpt.has_role(Role::Decoder) {
                return Err(RunError::Manifest(format!("{} is not a map checkpoint", map.display())));
            }
            let mut cfg = base_config(&args, &train, &val)?;
            cfg.encoder = map_ckpt.config.encoder.clone();
            cfg.decoder = map_ckpt.config.decoder.clone();
            cfg.predictor.strategy = strategy;
            if let Some(p) = patch {
                cfg.predictor.patch = p;
            }
            cfg.temporal = !ablate;
            cfg.predictor.allow_single_frame = ablate;
            cfg.paths.map_checkpoint = Some(map.clone());
            let model = MapModel::<f32>::new(&cfg)?;
            map_ckpt.restore(Role::Encoder, &model.encoder)?;
            map_ckpt.restore(Role::Decoder, &model.decoder)?;
            let choice = BevChoice::for_run(&cfg);
            let threshold = cfg.decoder.score_threshold;
            let train_p = prepare_scenes(&model, &train, threshold, choice)?;
            let val_p = prepare_scenes(&model, &val, threshold, choice)?;
            let (predictor, outcome) = train_predictor(&cfg, &model.encoder.meta, &train_p, &val_p)?;
            let mut groups = model.groups();
            groups.push((Role::Predictor(strategy), bevflow::numgrad::Module::params(&predictor)));
            save_checkpoint(&args.out, &cfg, &groups)?;
            std::fs::write(args.out.join("train_log.csv"), &outcome.log_csv)?;
            log::info!("best val minFDE {:.3} m at epoch {:?}", outcome.best_metric, outcome.best_epoch);
        }
        Command::Eval { ckpt, split, strategy, out } => {
            let scenes = load_split(&split)?;
            let report = evaluate_checkpoint(&ckpt, &scenes, strategy)?;
            let csv = metrics_csv(&report);
            match out {
                Some(path) => {
                    let mut cfg = load_checkpoint(&ckpt)?.config;
                    cfg.paths.val = Some(split.clone());
                    cfg.val_scenes = scenes.len();
                    std::fs::write(&path, csv)?;
                    std::fs::write(sidecar(&path), cfg.to_json())?;
                }
                None => print!("{csv}"),
            }
            eprintln!(
                "minADE {:.4}  minFDE {:.4}  MR {:.4}  ({} agents)",
                report.min_ade,
                report.min_fde,
                report.miss_rate,
                report.agents.len()
            );
        }
        Command::Bench { agents, elements, runs, warmup, seed, out } => {
            let cfg = BenchConfig { agents, elements, runs, warmup, seed, ..BenchConfig::default() };
            let rows = run_benchmark_grid(&cfg)?;
            std::fs::write(&out, bench_csv(&rows, cfg.decoder.score_threshold))?;
            std::fs::write(sidecar(&out), serde_json::to_string_pretty(&cfg)? + "\n")?;
        }
        Command::Encode { ckpt, split, scene, single_frame, out } => {
            let scenes = load_split(&split)?;
            let s = scenes
                .get(scene)
                .ok_or_else(|| RunError::Config(format!("scene {scene} outside a split of {}", scenes.len())))?;
            let mut cfg = load_checkpoint(&ckpt)?.config;
            let model = MapModel::<f32>::new(&cfg)?;
            load_checkpoint(&ckpt)?.restore(Role::Encoder, &model.encoder)?;
            let temporal = !single_frame && cfg.encoder.kind == EncoderKind::BevFormer;
            let bev: BevGrid<f32> = if temporal {
                encode_scene(&model.encoder, s, true)?
            } else {
                encode_bev(&model.encoder, s, s.current_frame(), None)?
            };
            bev.write(&out)?;
            cfg.temporal = temporal;
            cfg.paths.val = Some(split.clone());
            std::fs::write(sidecar(&out), cfg.to_json())?;
        }
        Command::VizBev { input, out } => {
            let bev = BevGrid::<f32>::read(&input)?;
            std::fs::write(&out, encode_pgm(&pca_grayscale(&bev)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
