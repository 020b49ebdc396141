use bevflow::numgrad::{DeformableAttention, DeformableConfig, Linear, Module, MultiHeadAttention, Param, Tensor};
use bevflow::pv2bev::{BevFormerConfig, BevGrid, BevGridMeta, EncoderConfig, EncoderKind, LssConfig};
use bevflow::synthscene::{generate_scene, Scene, SceneConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Result of one criterion: a detail line on pass, the failure reason otherwise.
pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn leaves<M: Module<f64>>(m: &M) -> Vec<Param<f64>> {
    m.params().into_iter().map(|(_, p)| p).collect()
}

pub fn small_deform() -> DeformableConfig {
    DeformableConfig { heads: 2, n_points: 3, offset_scale: 1.5 }
}

pub fn mini_meta() -> BevGridMeta {
    BevGridMeta::new(10, 5, 8).unwrap()
}

pub fn mini_scene(seed: u64) -> Scene {
    generate_scene(seed, &SceneConfig { image_rows: 16, image_cols: 24, agents: 3, hz: 2, ..SceneConfig::default() }).unwrap()
}

pub fn mini_encoder_config(kind: EncoderKind) -> EncoderConfig {
    EncoderConfig {
        kind,
        height: 10,
        width: 5,
        dim: 8,
        stem_channels: 4,
        bevformer: BevFormerConfig { depth: 1, attention: small_deform(), ref_heights: 2, z_range: (-1.0, 3.0), mlp_dim: 8 },
        lss: LssConfig { bins: 4, depth_range: (1.0, 35.0) },
    }
}

pub fn random_grid(seed: u64, meta: BevGridMeta, temporal: bool) -> BevGrid<f64> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let features = rand_tensor(&mut rng, &[meta.height, meta.width, meta.dim]);
    BevGrid::new(meta, features, 0, temporal).unwrap()
}

pub fn oracle_linear(x: &[f64], l: &Linear<f64>) -> Vec<f64> {
    let (i, o) = (l.d_in(), l.d_out());
    let w = l.weight.get().to_vec();
    let b = l.bias.get().to_vec();
    (0..o).map(|j| b[j] + (0..i).map(|k| x[k] * w[k * o + j]).sum::<f64>()).collect()
}

pub fn oracle_bilinear(grid: &[f64], h: usize, w: usize, d: usize, r: f64, c: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    let (r0, c0) = (r.floor(), c.floor());
    for (dr, dc) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
        let (rr, cc) = (r0 + dr, c0 + dc);
        if rr < 0.0 || cc < 0.0 || rr >= h as f64 || cc >= w as f64 {
            continue;
        }
        let wgt = (1.0 - (r - rr).abs()) * (1.0 - (c - cc).abs());
        let base = (rr as usize * w + cc as usize) * d;
        for k in 0..d {
            out[k] += wgt * grid[base + k];
        }
    }
    out
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = xs.iter().map(|s| (s - m).exp()).sum();
    xs.iter().map(|s| (s - m).exp() / z).collect()
}

pub fn oracle_mha(mha: &MultiHeadAttention<f64>, q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Vec<f64> {
    let d = mha.cfg.embed_dim();
    let (heads, hd) = (mha.cfg.heads, mha.cfg.head_dim);
    let rows = |t: &Tensor<f64>, l: &Linear<f64>| -> Vec<Vec<f64>> { t.data().chunks(d).map(|r| oracle_linear(r, l)).collect() };
    let (qp, kp, vp) = (rows(q, &mha.q_proj), rows(k, &mha.k_proj), rows(v, &mha.v_proj));
    let mut out = Vec::new();
    for qi in &qp {
        let mut cat = vec![0.0; d];
        for h in 0..heads {
            let r = h * hd..(h + 1) * hd;
            let scores: Vec<f64> = kp
                .iter()
                .map(|kj| qi[r.clone()].iter().zip(&kj[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            for (j, a) in softmax(&scores).into_iter().enumerate() {
                for c in r.clone() {
                    cat[c] += a * vp[j][c];
                }
            }
        }
        out.extend(oracle_linear(&cat, &mha.out_proj));
    }
    out
}

pub fn oracle_deformable(da: &DeformableAttention<f64>, q: &[f64], p: (f64, f64), grid: &Tensor<f64>) -> Vec<f64> {
    let (h, w, d) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
    let (heads, points) = (da.cfg.heads, da.cfg.n_points);
    let hd = d / heads;
    let off: Vec<f64> = oracle_linear(q, &da.offsets).iter().map(|v| da.cfg.offset_scale * v.tanh()).collect();
    let logits = oracle_linear(q, &da.weights);
    let value: Vec<f64> = grid.data().chunks(d).flat_map(|r| oracle_linear(r, &da.value)).collect();
    let mut cat = vec![0.0; d];
    for hh in 0..heads {
        let weights = softmax(&logits[hh * points..(hh + 1) * points]);
        for (k, a) in weights.into_iter().enumerate() {
            let s = hh * points + k;
            let sample = oracle_bilinear(&value, h, w, d, p.0 + off[2 * s], p.1 + off[2 * s + 1]);
            for c in hh * hd..(hh + 1) * hd {
                cat[c] += a * sample[c];
            }
        }
    }
    oracle_linear(&cat, &da.output)
}

