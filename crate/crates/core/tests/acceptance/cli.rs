use std::path::{Path, PathBuf};
use std::process::Command;

use bevflow::clibench::RunConfig;
use bevflow::mapdec::MapDecoderConfig;
use bevflow::numgrad::DeformableConfig;
use bevflow::predict::{PredictorConfig, Strategy};
use bevflow::pv2bev::EncoderKind;

use crate::support::{ensure, mini_encoder_config, Outcome};

fn bevflow(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bevflow"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("bevflow {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

/// Every regular file under `root`, relative path and bytes, in path order.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn same_outputs(dir: &Path, a: &str, b: &str) -> Result<usize, String> {
    let (x, y) = (snapshot(&dir.join(a)), snapshot(&dir.join(b)));
    ensure(!x.is_empty(), || format!("{a} produced no files"))?;
    ensure(x == y, || {
        let differing: Vec<String> =
            x.iter().zip(&y).filter(|(p, q)| p != q).map(|(p, _)| p.0.display().to_string()).collect();
        format!("{a} and {b} differ: {differing:?}")
    })?;
    Ok(x.len())
}

fn small_run_config() -> RunConfig {
    let deform = DeformableConfig { heads: 2, n_points: 2, offset_scale: 2.0 };
    let mut cfg = RunConfig::default();
    cfg.encoder = mini_encoder_config(EncoderKind::BevFormer);
    cfg.decoder = MapDecoderConfig { points: 4, depth: 1, heads: 2, mlp_dim: 8, attention: deform, ..MapDecoderConfig::default() };
    cfg.predictor = PredictorConfig {
        strategy: Strategy::S1,
        dim: 8,
        heads: 2,
        mlp_dim: 8,
        modes: 3,
        patch: (5, 5),
        lane_points: 4,
        lane_hidden: 8,
        ..cfg.predictor
    };
    cfg.map_training.epochs = 1;
    cfg.pred_training.epochs = 2;
    cfg
}

pub fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("small.json"), small_run_config().to_json()).map_err(|e| e.to_string())?;
    let mut files = 0;
    for run in ["a", "b"] {
        std::fs::create_dir_all(dir.join(format!("gen-{run}"))).unwrap();
        bevflow(dir, &["gen", "--seed", "3", "--scenes", "4", "--agents", "3", "--hz", "2", "--out", &format!("gen-{run}/train.scenes")])?;
        bevflow(dir, &["gen", "--seed", "4", "--scenes", "2", "--agents", "3", "--hz", "2", "--out", &format!("gen-{run}/val.scenes")])?;
    }
    files += same_outputs(dir, "gen-a", "gen-b")?;

    let data = ["--train", "gen-a/train.scenes", "--val", "gen-a/val.scenes", "--config", "small.json"];
    bevflow(dir, &[&["train-map", "--out", "map"][..], &data].concat())?;
    for run in ["a", "b"] {
        let out = format!("pred-{run}");
        bevflow(dir, &[&["train-pred", "--strategy", "s1", "--patch", "5,5", "--map", "map", "--out", &out][..], &data].concat())?;
    }
    files += same_outputs(dir, "pred-a", "pred-b")?;

    for run in ["a", "b"] {
        std::fs::create_dir_all(dir.join(format!("eval-{run}"))).unwrap();
        let out = format!("eval-{run}/metrics.csv");
        bevflow(dir, &["eval", "--ckpt", "pred-a", "--split", "gen-a/val.scenes", "--strategy", "s1", "--out", &out])?;
    }
    files += same_outputs(dir, "eval-a", "eval-b")?;

    bevflow(dir, &["encode", "--ckpt", "pred-a", "--split", "gen-a/val.scenes", "--out", "bev"])?;
    for run in ["a", "b"] {
        std::fs::create_dir_all(dir.join(format!("viz-{run}"))).unwrap();
        bevflow(dir, &["viz-bev", "--in", "bev", "--out", &format!("viz-{run}/bev.pgm")])?;
    }
    files += same_outputs(dir, "viz-a", "viz-b")?;
    Ok(format!("gen, train-pred, eval and viz-bev repeated: {files} output files bit-identical"))
}
