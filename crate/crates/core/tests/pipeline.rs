use std::time::Instant;

use bevflow::clibench::{encode_pgm, pca_grayscale, MapModel, RunConfig};
use bevflow::numgrad::{AttentionConfig, Init, MultiHeadAttention, Tensor};
use bevflow::predict::{agent_bev_attention, forward_predict, patchify, scene_agents, PatchEmbed, PredictionInput, Predictor, Strategy};
use bevflow::pv2bev::{BevGrid, BevGridMeta};
use bevflow::synthscene::{generate_dataset, read_dataset, write_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(meta: BevGridMeta, seed: u64) -> BevGrid<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..meta.cells() * meta.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    BevGrid::new(meta, Tensor::new(data, &[meta.height, meta.width, meta.dim]).unwrap(), 0, false).unwrap()
}

#[test]
fn agent_attention_cost_grows_linearly_with_agents() {
    let meta = BevGridMeta::desk();
    let mut init = Init::new(0);
    let embed = PatchEmbed::<f32>::new(&mut init, &meta, (10, 10), 32).unwrap();
    let patches = patchify(&random_grid(meta, 1), &embed).unwrap();
    let attention = MultiHeadAttention::<f32>::new(&mut init, AttentionConfig::for_width(32, 4, 64, 1).unwrap()).unwrap();
    let n = patches.count();
    let best_of = |m: usize| {
        let agents: Vec<usize> = (0..m).map(|i| i % n).collect();
        (0..7)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(agent_bev_attention(&agents, &patches, &attention).unwrap());
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (small, large) = (best_of(256), best_of(1024));
    // Linear growth predicts a ratio near 4; an M² term would push it towards 16.
    assert!(large / small < 8.0, "4× agents took {:.1}× longer", large / small);
}

#[test]
fn generated_dataset_flows_through_encoder_decoder_and_predictor() {
    let mut cfg = RunConfig::default().with_hz(2);
    cfg.scene.agents = 4;
    let scenes = generate_dataset(11, 2, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.scenes");
    write_dataset(&scenes, &path).unwrap();
    let scenes = read_dataset(&path).unwrap();

    let model = MapModel::<f32>::new(&cfg).unwrap();
    let meta = model.encoder.meta;
    for strategy in [Strategy::Baseline, Strategy::S1, Strategy::S2] {
        cfg.predictor.strategy = strategy;
        let predictor = Predictor::<f32>::new(&mut Init::new(3), cfg.predictor.clone(), &meta).unwrap();
        for scene in &scenes {
            let (agents, futures) = scene_agents(scene);
            let (bev, decoded) = model.decode_scene(scene, 0.0).unwrap();
            assert_eq!(decoded.len(), cfg.decoder.instances);
            let map: Vec<_> = decoded.into_iter().map(|s| s.element).collect();
            let out = forward_predict(&predictor, PredictionInput { agents: &agents, map: Some(&map), bev: Some(&bev) }).unwrap();
            assert_eq!((out.agents, out.modes, out.horizon), (agents.len(), 6, futures[0].len()));
            assert!(out.trajectories.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn bev_blob_roundtrips_and_renders() {
    let meta = BevGridMeta::desk();
    let bev = random_grid(meta, 5);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("grid");
    bev.write(&stem).unwrap();
    let back = BevGrid::<f32>::read(&stem).unwrap();
    assert_eq!(back.meta, bev.meta);
    assert_eq!(back.features.data(), bev.features.data());
    let pgm = encode_pgm(&pca_grayscale(&back));
    assert!(pgm.starts_with(b"P5\n50 100\n255\n"));
    assert_eq!(pgm.len(), b"P5\n50 100\n255\n".len() + meta.cells());
}
