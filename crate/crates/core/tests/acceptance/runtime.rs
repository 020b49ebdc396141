use std::time::Instant;

use bevflow::clibench::{run_benchmark_grid, BenchConfig, BenchRow, Pipeline};

use crate::support::{ensure, Outcome};

fn ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let below = xs.iter().filter(|y| *y < x).count() as f64;
            let ties = xs.iter().filter(|y| *y == x).count() as f64;
            below + (ties + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn median_of(rows: &[BenchRow], agents: usize, elements: usize, pipeline: Pipeline) -> f64 {
    rows.iter()
        .find(|r| r.n_agents == agents && r.n_map_elements == elements && r.pipeline == pipeline)
        .map(|r| r.median_ms)
        .expect("grid cell present")
}

pub fn runtime_trend() -> Outcome {
    let start = Instant::now();
    let cfg = BenchConfig::default();
    let rows = run_benchmark_grid(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(rows.len() == cfg.agents.len() * cfg.elements.len() * 2, || format!("{} rows", rows.len()))?;

    let (first, last) = (cfg.elements[0], *cfg.elements.last().unwrap());
    let mut notes = Vec::new();
    for &a in &cfg.agents {
        let dec: Vec<f64> = cfg.elements.iter().map(|&e| median_of(&rows, a, e, Pipeline::Decoupled)).collect();
        let int: Vec<f64> = cfg.elements.iter().map(|&e| median_of(&rows, a, e, Pipeline::Integrated)).collect();
        for (i, &e) in cfg.elements.iter().enumerate().filter(|(_, &e)| e >= 20) {
            ensure(int[i] < dec[i], || format!("{a} agents, {e} elements: integrated {:.2} ms ≥ decoupled {:.2} ms", int[i], dec[i]))?;
        }
        let speedup = |e: usize| median_of(&rows, a, e, Pipeline::Decoupled) / median_of(&rows, a, e, Pipeline::Integrated);
        ensure(speedup(last) > speedup(first), || {
            format!("{a} agents: speedup {:.2}× at {last} elements vs {:.2}× at {first}", speedup(last), speedup(first))
        })?;
        let mean = int.iter().sum::<f64>() / int.len() as f64;
        let spread = int.iter().map(|t| (t - mean).abs()).fold(0.0, f64::max) / mean;
        ensure(spread < 0.10, || format!("{a} agents: integrated medians {int:.2?} deviate {:.1}% from their mean", 100.0 * spread))?;
        let counts: Vec<f64> = cfg.elements.iter().map(|&e| e as f64).collect();
        let rho = spearman(&counts, &dec);
        ensure(rho > 0.9, || format!("{a} agents: decoupled medians {dec:.2?} have Spearman ρ {rho:.2}"))?;
        notes.push(format!(
            "{a} agents: speedup {:.2}×→{:.2}×, integrated spread {:.1}%",
            speedup(first),
            speedup(last),
            100.0 * spread
        ));
    }
    ensure(secs < 600.0, || format!("benchmark took {:.1} min (limit 10)", secs / 60.0))?;
    Ok(format!("{}; {:.1} min", notes.join(", "), secs / 60.0))
}
