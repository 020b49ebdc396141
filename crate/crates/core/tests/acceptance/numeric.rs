use std::time::Instant;

use bevflow::clibench::{first_component, pca_projection};
use bevflow::mapdec::{chamfer_distance, decode_map, hungarian_match, map_matching_loss, resample_by_step, MapDecoder, MapDecoderConfig, MapTargets};
use bevflow::numgrad::{
    bilinear_sample, deform_sample, deformable_attention, grad_check, grad_check_params, lift_outer, scatter_add_pool,
    AttentionConfig, DeformLayout, DeformableAttention, DeformableConfig, Init, Level, MultiHeadAttention, NumError,
    SamplingPlan, Tensor,
};
use bevflow::predict::{
    compute_metrics, forward_predict, patch_count, scene_agents, wta_loss, PredictionInput, PredictionSet, Predictor,
    PredictorConfig, Strategy,
};
use bevflow::pv2bev::{encode_bev, lss_encode, BevEncoder, BevGrid, EncoderConfig, EncoderKind, LiftGeometry};
use bevflow::synthscene::{dist, MapElement, SceneConfig};
use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::support::*;

const STEP: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-4;
const COMPOSITE_TOL: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-6;

/// Counts checks and keeps the worst relative error.
#[derive(Default)]
struct GradTally {
    checks: usize,
    worst: f64,
    failures: Vec<String>,
}

impl GradTally {
    fn record(&mut self, label: &str, report: Result<bevflow::numgrad::GradCheckReport, NumError>) {
        self.checks += 1;
        match report {
            Ok(r) => {
                self.worst = self.worst.max(r.max_rel_error);
                if !r.passed {
                    self.failures.push(format!("{label}: rel err {:.2e}", r.max_rel_error));
                }
            }
            Err(e) => self.failures.push(format!("{label}: {e}")),
        }
    }

    fn input(&mut self, label: &str, f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>, NumError>, x: &Tensor<f64>) {
        self.record(label, grad_check(f, x, STEP, PRIMITIVE_TOL));
    }
}

fn primitive_suite(t: &mut GradTally, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let y = rand_tensor(&mut rng, &[3, 4]);
    let v = rand_tensor(&mut rng, &[4]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[5, 4]);
    let wts = rand_tensor(&mut rng, &[3, 4]);
    let weighted = |t: Tensor<f64>| Ok(t.mul(&wts)?.sum());
    t.input("matmul", |x| Ok(x.matmul(&w)?.tanh().sum()), &x);
    t.input("matmul rhs", |w| Ok(x.matmul(w)?.square().sum()), &w);
    t.input("matmul_t", |x| Ok(x.matmul_t(&b)?.square().sum()), &x);
    t.input("matmul_t rhs", |b| Ok(x.matmul_t(b)?.square().sum()), &b);
    t.input("transpose", |x| Ok(x.transpose()?.matmul(x)?.sum()), &x);
    t.input("add/mul", |x| weighted(x.add(&y)?.mul(x)?), &x);
    t.input("sub/neg", |x| weighted(x.sub(&y)?.neg()), &x);
    t.input("add_row/mul_row", |x| weighted(x.add_row(&v)?.mul_row(&v)?), &x);
    t.input("row vector", |v| weighted(x.add_row(v)?.mul_row(v)?), &v);
    t.input("scale_rows/scale/add_scalar", |x| weighted(x.scale_rows(&[0.5, -2.0, 3.0])?.scale(1.5).add_scalar(0.1)), &x);
    t.input("tanh", |x| weighted(x.tanh()), &x);
    t.input("sigmoid", |x| weighted(x.sigmoid()), &x);
    t.input("exp", |x| weighted(x.exp()), &x);
    t.input("relu", |x| weighted(x.relu()), &x);
    t.input("abs", |x| weighted(x.abs()), &x);
    t.input("sqrt/square", |x| weighted(x.square().add_scalar(0.5).sqrt()), &x);
    t.input("softmax", |x| weighted(x.softmax()), &x);
    t.input("log_softmax", |x| weighted(x.log_softmax()), &x);
    t.input("layer_norm", |x| weighted(x.layer_norm(1e-5)), &x);
    t.input("sum_rows", |x| Ok(x.sum_rows().mul(&v)?.sum()), &x);
    t.input("sum_cols", |x| Ok(x.sum_cols().square().sum()), &x);
    t.input("mean", |x| Ok(x.mean().square()), &x);
    t.input("dropout", |x| weighted(x.dropout(0.3, &mut ChaCha8Rng::seed_from_u64(seed))), &x);

    let x = rand_tensor(&mut rng, &[6, 3]);
    let w3 = rand_tensor(&mut rng, &[4, 3]);
    let w2 = rand_tensor(&mut rng, &[2, 3]);
    t.input("gather_rows", |x| Ok(x.gather_rows(&[Some(2), None, Some(2), Some(5)])?.mul(&w3)?.sum()), &x);
    t.input("scatter_rows", |x| Ok(x.scatter_rows(&[Some(1), None, Some(0), Some(1), Some(3), None], 4)?.mul(&w3)?.sum()), &x);
    t.input("pick", |x| Ok(x.pick(&[0, 2, 1, 1, 0, 2])?.square().sum()), &x);
    t.input("group_max", |x| Ok(x.group_max(3)?.mul(&w2)?.sum()), &x);
    t.input("group_mean", |x| Ok(x.group_mean(3)?.mul(&w2)?.sum()), &x);
    t.input("slice_cols", |x| Ok(x.slice_cols(1, 3)?.square().sum()), &x);
    t.input("concat_cols", |x| Ok(Tensor::concat_cols(&[x, &x.tanh()])?.square().sum()), &x);
    t.input("concat_rows", |x| Ok(Tensor::concat_rows(&[x, &x.sigmoid()])?.square().sum()), &x);
    t.input("reshape", |x| Ok(x.reshape(&[3, 6])?.softmax().square().sum()), &x);
    let cells: Vec<Option<usize>> = vec![Some(0), Some(3), None, Some(3), Some(1), Some(9)];
    t.input("scatter_add_pool", |x| Ok(scatter_add_pool(&cells, x, 4)?.grid.mul(&w3)?.sum()), &x);

    let grid = rand_tensor(&mut rng, &[4, 5, 3]);
    let pts: Vec<f64> = (0..6).flat_map(|_| [rng.gen_range(-0.7..3.7), rng.gen_range(-0.7..4.7)]).collect();
    let pts = Tensor::new(pts, &[6, 2]).unwrap();
    let wts6 = rand_tensor(&mut rng, &[6, 3]);
    t.input("bilinear_sample grid", |g| Ok(bilinear_sample(g, &pts)?.mul(&wts6)?.sum()), &grid);
    t.input("bilinear_sample points", |p| Ok(bilinear_sample(&grid, p)?.mul(&wts6)?.sum()), &pts);

    let levels = vec![Level { start: 0, height: 3, width: 4 }, Level { start: 12, height: 2, width: 2 }];
    let value = rand_tensor(&mut rng, &[16, 4]);
    let (heads, points, q) = (2, 3, 3);
    let locs: Vec<f64> = (0..q * heads * points).flat_map(|_| [rng.gen_range(-0.5..2.5), rng.gen_range(-0.5..3.5)]).collect();
    let locs = Tensor::new(locs, &[q, heads * points * 2]).unwrap();
    let attn = rand_tensor(&mut rng, &[q, heads * points]);
    let layout = DeformLayout { heads, points, levels, query_level: vec![0, 1, 0] };
    let wq = rand_tensor(&mut rng, &[q, 4]);
    t.input("deform_sample value", |v| Ok(deform_sample(v, &locs, &attn, &layout)?.mul(&wq)?.sum()), &value);
    t.input("deform_sample locations", |l| Ok(deform_sample(&value, l, &attn, &layout)?.mul(&wq)?.sum()), &locs);
    t.input("deform_sample weights", |a| Ok(deform_sample(&value, &locs, a, &layout)?.mul(&wq)?.sum()), &attn);
    let depth = rand_tensor(&mut rng, &[5, 4]);
    let feats = rand_tensor(&mut rng, &[5, 3]);
    let wl = rand_tensor(&mut rng, &[20, 3]);
    t.input("lift_outer depth", |d| Ok(lift_outer(&d.softmax(), &feats)?.mul(&wl)?.sum()), &depth);
    t.input("lift_outer features", |f| Ok(lift_outer(&depth.softmax(), f)?.mul(&wl)?.sum()), &feats);

    let mut init = Init::new(seed);
    let mha = MultiHeadAttention::<f64>::new(&mut init, AttentionConfig { heads: 2, head_dim: 2, mlp_dim: 8, depth: 1 }).unwrap();
    let kv = rand_tensor(&mut rng, &[5, 4]);
    let q = rand_tensor(&mut rng, &[3, 4]);
    t.input("mha query", |q| Ok(mha.forward(q, &kv, &kv)?.mul(&wts)?.sum()), &q);
    t.input("mha keys", |kv| Ok(mha.forward(&q, kv, kv)?.mul(&wts)?.sum()), &kv);
    t.record(
        "mha weights",
        grad_check_params(|| Ok(mha.forward(&q, &kv, &kv)?.mul(&wts)?.sum()), &leaves(&mha), STEP, PRIMITIVE_TOL, 64, seed),
    );
    let da = DeformableAttention::<f64>::new(&mut init, 4, DeformableConfig { heads: 2, n_points: 2, offset_scale: 2.0 }).unwrap();
    let grid = rand_tensor(&mut rng, &[4, 4, 4]).reshape(&[16, 4]).unwrap();
    let plan = SamplingPlan::dense(Level::single(4, 4), vec![[1.3, 2.2], [0.0, 3.0], [2.6, 0.4]]);
    let qs = rand_tensor(&mut rng, &[3, 4]);
    t.input("deformable query", |q| Ok(da.forward(q, &grid, &plan)?.mul(&wts)?.sum()), &qs);
    t.input("deformable value", |g| Ok(da.forward(&qs, g, &plan)?.mul(&wts)?.sum()), &grid);
    t.record(
        "deformable weights",
        grad_check_params(|| Ok(da.forward(&qs, &grid, &plan)?.mul(&wts)?.sum()), &leaves(&da), STEP, PRIMITIVE_TOL, 64, seed),
    );
}

fn composite_suite(t: &mut GradTally, seed: u64) {
    let scene = mini_scene(seed);
    for kind in [EncoderKind::BevFormer, EncoderKind::Lss] {
        let enc = BevEncoder::<f64>::new(&mut Init::new(seed), mini_encoder_config(kind)).unwrap();
        let prev = encode_bev(&enc, &scene, scene.previous_frame(), None).unwrap().detach();
        let report = grad_check_params(
            || Ok(encode_bev(&enc, &scene, scene.current_frame(), Some(&prev)).map_err(|e| NumError::Config(e.to_string()))?.features.sum()),
            &leaves(&enc),
            STEP,
            COMPOSITE_TOL,
            6,
            seed,
        );
        t.record(&format!("{kind} encoder"), report);
    }

    let meta = mini_meta();
    let dec_cfg = MapDecoderConfig { points: 3, depth: 1, heads: 2, mlp_dim: 8, attention: small_deform(), ..MapDecoderConfig::default() };
    let dec = MapDecoder::<f64>::new(&mut Init::new(seed), meta.dim, dec_cfg.clone()).unwrap();
    let grid = random_grid(seed + 50, meta, false);
    let targets = MapTargets::new(&scene.gt_map, &dec_cfg);
    let report = grad_check_params(
        || {
            let decoded = decode_map(&dec, &grid).map_err(|e| NumError::Config(e.to_string()))?;
            map_matching_loss(&decoded, &targets).map_err(|e| NumError::Config(e.to_string()))
        },
        &leaves(&dec),
        STEP,
        COMPOSITE_TOL,
        6,
        seed,
    );
    t.record("map decoder + matching loss", report);

    let (agents, futures) = scene_agents(&scene);
    let map: Vec<MapElement> = scene.gt_map.elements.clone();
    let bev = random_grid(seed + 60, meta, true);
    let hz = SceneConfig { hz: 2, ..SceneConfig::default() };
    for strategy in [Strategy::Baseline, Strategy::S1, Strategy::S2, Strategy::S3] {
        let cfg = PredictorConfig {
            strategy,
            dim: 8,
            heads: 2,
            mlp_dim: 8,
            modes: 3,
            history_len: hz.history_len(),
            future_len: hz.future_len(),
            patch: (5, 5),
            lane_points: 3,
            lane_hidden: 6,
            output_scale: 1.0,
            allow_single_frame: false,
            bev_depth: 2,
        };
        let model = Predictor::<f64>::new(&mut Init::new(seed), cfg, &meta).unwrap();
        let report = grad_check_params(
            || {
                let input = PredictionInput { agents: &agents, map: Some(&map), bev: Some(&bev) };
                let out = forward_predict(&model, input).map_err(|e| NumError::Config(e.to_string()))?;
                wta_loss(&out, &futures).map_err(|e| NumError::Config(e.to_string()))
            },
            &leaves(&model),
            STEP,
            COMPOSITE_TOL,
            6,
            seed,
        );
        t.record(&format!("{strategy} predictor + WTA loss"), report);
    }
}

pub fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut tally = GradTally::default();
    for seed in SEEDS {
        primitive_suite(&mut tally, seed);
        composite_suite(&mut tally, seed);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(tally.failures.is_empty(), || tally.failures.join("; "))?;
    ensure(secs < 120.0, || format!("gradient suite took {secs:.1} s (limit 120 s)"))?;
    Ok(format!("{} grad checks over 5 seeds, worst rel err {:.2e}, {secs:.1} s", tally.checks, tally.worst))
}

fn assignment_cost(cost: &[Vec<f64>], a: &[usize]) -> f64 {
    a.iter().enumerate().map(|(g, &p)| cost[p][g]).sum()
}

fn oracle_chamfer(a: &[Vec<[f64; 2]>], b: &[Vec<[f64; 2]>], step: f64) -> f64 {
    let pa: Vec<[f64; 2]> = a.iter().flat_map(|p| resample_by_step(p, step)).collect();
    let pb: Vec<[f64; 2]> = b.iter().flat_map(|p| resample_by_step(p, step)).collect();
    let directed = |from: &[[f64; 2]], to: &[[f64; 2]]| {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / from.len() as f64
    };
    0.5 * (directed(&pa, &pb) + directed(&pb, &pa))
}

fn random_polyline(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = rng.gen_range(2..6);
    (0..n).map(|_| [rng.gen_range(-15.0..15.0), rng.gen_range(-30.0..30.0)]).collect()
}

pub fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut note = |label: &str, err: f64| -> Result<(), String> {
        worst = worst.max(err);
        ensure(err <= ORACLE_TOL, || format!("{label}: deviation {err:.2e}"))
    };
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(seed + 100);

        let mha = MultiHeadAttention::<f64>::new(&mut init, AttentionConfig { heads: 2, head_dim: 2, mlp_dim: 4, depth: 1 }).unwrap();
        let (q, k, v) = (rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[5, 4]), rand_tensor(&mut rng, &[5, 4]));
        note("MHA", max_abs_diff(mha.forward(&q, &k, &v).unwrap().data(), &oracle_mha(&mha, &q, &k, &v)))?;

        let da = DeformableAttention::<f64>::new(&mut init, 4, DeformableConfig::default()).unwrap();
        let grid = rand_tensor(&mut rng, &[5, 6, 4]);
        let qd = rand_tensor(&mut rng, &[4]);
        let p = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..5.0));
        let out = deformable_attention(&da, &qd, p, &grid).unwrap();
        note("deformable attention", max_abs_diff(out.data(), &oracle_deformable(&da, qd.data(), p, &grid)))?;

        let cells = 40;
        let idx: Vec<Option<usize>> =
            (0..1000).map(|_| if rng.gen_bool(0.9) { Some(rng.gen_range(0..cells + 5)) } else { None }).collect();
        let feats = rand_tensor(&mut rng, &[1000, 3]);
        let pooled = scatter_add_pool(&idx, &feats, cells).unwrap();
        let mut expect = vec![0.0; cells * 3];
        for (i, c) in idx.iter().enumerate() {
            if let Some(c) = c.filter(|&c| c < cells) {
                (0..3).for_each(|j| expect[c * 3 + j] += feats.data()[i * 3 + j]);
            }
        }
        note("scatter_add_pool", max_abs_diff(pooled.grid.data(), &expect))?;

        for _ in 0..4 {
            let cost: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.gen_range(-3.0..5.0)).collect()).collect();
            let brute = (0..6).permutations(6).map(|a| assignment_cost(&cost, &a)).fold(f64::INFINITY, f64::min);
            let got = hungarian_match(&cost).map_err(|e| e.to_string())?;
            ensure(got.iter().all_unique(), || "hungarian assignment repeats a prediction".into())?;
            note("hungarian_match", (assignment_cost(&cost, &got) - brute).abs())?;
        }

        let a: Vec<Vec<[f64; 2]>> = (0..3).map(|_| random_polyline(&mut rng)).collect();
        let b: Vec<Vec<[f64; 2]>> = (0..4).map(|_| random_polyline(&mut rng)).collect();
        let got = chamfer_distance(&a, &b, 0.5).map_err(|e| e.to_string())?;
        note("chamfer", (got - oracle_chamfer(&a, &b, 0.5)).abs())?;

        let (agents, modes, horizon) = (3, 6, 5);
        let traj = Tensor::new((0..agents * modes * horizon * 2).map(|_| rng.gen_range(-20.0..20.0)).collect(), &[agents, modes * horizon * 2]).unwrap();
        let logits = rand_tensor(&mut rng, &[agents, modes]);
        let set = PredictionSet::new(traj.clone(), logits, horizon).unwrap();
        let truth: Vec<Vec<[f64; 2]>> =
            (0..agents).map(|_| (0..horizon).map(|_| [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)]).collect()).collect();
        let ids: Vec<String> = (0..agents).map(|i| i.to_string()).collect();
        let report = compute_metrics(&set, &truth, &ids).map_err(|e| e.to_string())?;
        for a in 0..agents {
            let per_mode: Vec<(f64, f64)> = (0..modes)
                .map(|m| {
                    let base = a * modes * horizon * 2 + m * horizon * 2;
                    let errs: Vec<f64> = (0..horizon)
                        .map(|s| dist([traj.data()[base + 2 * s], traj.data()[base + 2 * s + 1]], truth[a][s]))
                        .collect();
                    (errs.iter().sum::<f64>() / horizon as f64, errs[horizon - 1])
                })
                .collect();
            let ade = per_mode.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
            let fde = per_mode.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            note("minADE", (report.agents[a].min_ade - ade).abs())?;
            note("minFDE", (report.agents[a].min_fde - fde).abs())?;
            ensure(report.agents[a].miss == (fde > 2.0), || "miss flag disagrees with enumeration".into())?;
        }

        let (h, w, d) = (20, 10, 32);
        let n = h * w;
        let scales: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..2.0)).collect();
        let data: Vec<f64> = (0..n * d).map(|i| scales[i % d] * rng.gen_range(-1.0..1.0)).collect();
        let meta = bevflow::pv2bev::BevGridMeta::new(h, w, d).unwrap();
        let bev = BevGrid::new(meta, Tensor::new(data.clone(), &[h, w, d]).unwrap(), 0, false).unwrap();
        let proj = pca_projection(&bev).ok_or("PCA of a random grid returned nothing")?;
        let x = DMatrix::from_row_slice(n, d, &data);
        let mean = x.row_mean();
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / (n - 1) as f64;
        let eig = cov.symmetric_eigen();
        let top = eig.eigenvalues.imax();
        let oracle = &centred * eig.eigenvectors.column(top);
        let sign = if proj[0] * oracle[0] >= 0.0 { 1.0 } else { -1.0 };
        let dev = (0..n).map(|i| (proj[i] - sign * oracle[i]).abs()).fold(0.0, f64::max);
        note("PCA projection", dev)?;
        let (value, _) = first_component(&data, n, d).ok_or("no principal component")?;
        note("PCA eigenvalue", (value - eig.eigenvalues[top]).abs())?;
    }
    Ok(format!("7 oracles × 5 seeds, worst deviation {worst:.2e}"))
}

pub fn conservation() -> Outcome {
    let mut worst_mass = 0.0f64;
    for seed in 0..20u64 {
        let cfg = EncoderConfig { kind: EncoderKind::Lss, stem_channels: 4, dim: 8, ..EncoderConfig::default() };
        let enc = BevEncoder::<f64>::new(&mut Init::new(seed), cfg).map_err(|e| e.to_string())?;
        let lss = enc.lss.as_ref().ok_or("LSS encoder without LSS head")?;
        let scene = mini_scene(seed);
        let feats = enc.stem.forward(scene.views_at(scene.current_frame()).unwrap()).map_err(|e| e.to_string())?;
        let geometry = LiftGeometry::new(&enc.meta, &scene.rig, &feats, &lss.cfg).map_err(|e| e.to_string())?;
        let lifted = lss.lift(&feats).map_err(|e| e.to_string())?;
        let d = enc.meta.dim;
        let direct: f64 = lifted
            .points
            .data()
            .chunks(d)
            .zip(&geometry.cell_of_point)
            .filter(|(_, c)| c.is_some())
            .flat_map(|(row, _)| row.iter())
            .sum();
        let grid = lss_encode(lss, &feats, &scene.rig, &enc.meta, 0).map_err(|e| e.to_string())?;
        let pooled: f64 = grid.features.data().iter().sum();
        let rel = (pooled - direct).abs() / direct.abs().max(1e-12);
        worst_mass = worst_mass.max(rel);
        ensure(rel <= 1e-6, || format!("seed {seed}: pooled {pooled} vs lifted {direct}"))?;
        let rays = lifted.depth_weights.sum_cols();
        ensure(rays.data().iter().all(|s| (s - 1.0).abs() <= 1e-6), || format!("seed {seed}: depth distribution off simplex"))?;
    }

    let mut worst_sum = 0.0f64;
    let mut track = |label: &str, rows: Vec<Vec<f64>>| -> Result<(), String> {
        for r in rows {
            let err = (r.iter().sum::<f64>() - 1.0).abs();
            worst_sum = worst_sum.max(err);
            ensure(err <= 1e-6, || format!("{label} sums to 1 ± {err:.2e}"))?;
        }
        Ok(())
    };
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new((0..40).map(|_| rng.gen_range(-40.0..40.0)).collect(), &[5, 8]).unwrap();
        track("softmax", x.softmax().data().chunks(8).map(|r| r.to_vec()).collect())?;

        let meta = mini_meta();
        let dec_cfg = MapDecoderConfig { points: 3, depth: 1, heads: 2, mlp_dim: 8, attention: small_deform(), ..MapDecoderConfig::default() };
        let dec = MapDecoder::<f64>::new(&mut Init::new(seed), meta.dim, dec_cfg).unwrap();
        let decoded = decode_map(&dec, &random_grid(seed, meta, false)).map_err(|e| e.to_string())?;
        track("decoder class probabilities", decoded.probabilities().iter().map(|p| p.to_vec()).collect())?;

        let scene = mini_scene(seed);
        let (agents, _) = scene_agents(&scene);
        let hz = SceneConfig { hz: 2, ..SceneConfig::default() };
        for strategy in [Strategy::Baseline, Strategy::S1, Strategy::S2, Strategy::S3] {
            let cfg = PredictorConfig {
                strategy,
                dim: 8,
                heads: 2,
                mlp_dim: 8,
                history_len: hz.history_len(),
                future_len: hz.future_len(),
                patch: (5, 5),
                ..PredictorConfig::default()
            };
            let model = Predictor::<f64>::new(&mut Init::new(seed), cfg, &meta).unwrap();
            let bev = random_grid(seed + 1, meta, true);
            let input = PredictionInput { agents: &agents, map: Some(&scene.gt_map.elements), bev: Some(&bev) };
            let out = forward_predict(&model, input).map_err(|e| e.to_string())?;
            track("mode scores", out.scores())?;
        }
    }
    Ok(format!("LSS mass rel err ≤ {worst_mass:.2e} on 20 scenes; score sums within {worst_sum:.2e} of 1"))
}

pub fn patch_arithmetic() -> Outcome {
    let square = patch_count(200, 100, (20, 20)).map_err(|e| e.to_string())?;
    let tall = patch_count(200, 100, (20, 10)).map_err(|e| e.to_string())?;
    ensure(square == 50 && square == 200 * 100 / (20 * 20), || format!("(20,20) gives {square}"))?;
    ensure(tall == 100, || format!("(20,10) gives {tall}"))?;
    Ok(format!("200×100: (20,20) → {square}, (20,10) → {tall}"))
}

pub fn miss_boundary() -> Outcome {
    let horizon = 3;
    let set_for = |end: f64| {
        let traj = Tensor::new(vec![0.0, 0.0, 0.0, 1.0, end, 2.0], &[1, horizon * 2]).unwrap();
        PredictionSet::new(traj, Tensor::new(vec![0.0], &[1, 1]).unwrap(), horizon).unwrap()
    };
    let truth = vec![vec![[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]]];
    let ids = vec!["a".to_string()];
    let at = compute_metrics(&set_for(2.0), &truth, &ids).map_err(|e| e.to_string())?;
    let over = compute_metrics(&set_for(2.0 + 1e-6), &truth, &ids).map_err(|e| e.to_string())?;
    ensure(at.agents[0].min_fde == 2.0, || format!("endpoint error {}", at.agents[0].min_fde))?;
    ensure(at.miss_rate == 0.0, || "2.0 m endpoint error scored as a miss".into())?;
    ensure(over.miss_rate == 1.0, || "2.0 m + 1e-6 endpoint error scored as a hit".into())?;
    Ok("FDE 2.0 m → hit, 2.0 m + 1e-6 → miss".into())
}
