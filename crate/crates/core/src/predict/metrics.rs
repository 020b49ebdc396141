use std::fmt::Write as _;

use super::model::PredictionSet;
use super::PredictError;
use crate::numgrad::{lit, Real, Tensor};
use crate::synthscene::dist;

/// An agent misses when its best endpoint error is strictly above this (m).
pub const MISS_THRESHOLD: f64 = 2.0;

const SMOOTH: f64 = 1e-6;

fn check_horizon<T: Real>(pred: &PredictionSet<T>, truth: &[Vec<[f64; 2]>]) -> Result<(), PredictError> {
    if truth.len() != pred.agents {
        return Err(PredictError::Config(format!("{} futures for {} agents", truth.len(), pred.agents)));
    }
    if let Some(bad) = truth.iter().find(|f| f.len() != pred.horizon) {
        return Err(PredictError::Horizon { predicted: pred.horizon, truth: bad.len() });
    }
    Ok(())
}

fn best_endpoint_mode<T: Real>(pred: &PredictionSet<T>, agent: usize, future: &[[f64; 2]]) -> usize {
    let end = future[future.len() - 1];
    let fde = |k: usize| dist(*pred.trajectory(agent, k).last().unwrap(), end);
    (1..pred.modes).fold(0, |best, k| if fde(k) < fde(best) { k } else { best })
}

/// Winner-takes-all: mean displacement of the lowest-FDE mode plus
/// cross-entropy toward that mode, averaged over agents.
pub fn wta_loss<T: Real>(pred: &PredictionSet<T>, truth: &[Vec<[f64; 2]>]) -> Result<Tensor<T>, PredictError> {
    check_horizon(pred, truth)?;
    let (m, k, h) = (pred.agents, pred.modes, pred.horizon);
    let best: Vec<usize> = truth.iter().enumerate().map(|(a, f)| best_endpoint_mode(pred, a, f)).collect();
    let rows: Vec<_> = best.iter().enumerate().map(|(a, &b)| Some(a * k + b)).collect();
    let chosen = pred.trajectories.reshape(&[m * k, h * 2])?.gather_rows(&rows)?;
    let target: Vec<T> = truth.iter().flatten().flat_map(|p| [lit::<T>(p[0]), lit(p[1])]).collect();
    let displacement = chosen
        .sub(&Tensor::new(target, &[m, h * 2])?)?
        .square()
        .reshape(&[m * h, 2])?
        .sum_cols()
        .add_scalar(lit(SMOOTH))
        .sqrt()
        .add_scalar(lit(-SMOOTH.sqrt()))
        .mean();
    let ce = pred.logits.log_softmax().pick(&best)?.sum().scale(lit(-1.0 / m as f64));
    Ok(displacement.add(&ce)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMetrics {
    pub agent_id: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub agents: Vec<AgentMetrics>,
}

impl MetricsReport {
    /// Aggregates per-agent rows (means over agents).
    pub fn from_agents(agents: Vec<AgentMetrics>) -> Result<Self, PredictError> {
        if agents.is_empty() {
            return Err(PredictError::Empty("agent set"));
        }
        let n = agents.len() as f64;
        Ok(MetricsReport {
            min_ade: agents.iter().map(|a| a.min_ade).sum::<f64>() / n,
            min_fde: agents.iter().map(|a| a.min_fde).sum::<f64>() / n,
            miss_rate: agents.iter().filter(|a| a.miss).count() as f64 / n,
            agents,
        })
    }
}

/// Per-agent best-of-K errors; `ids` label the rows.
pub fn compute_metrics<T: Real>(
    pred: &PredictionSet<T>,
    truth: &[Vec<[f64; 2]>],
    ids: &[String],
) -> Result<MetricsReport, PredictError> {
    check_horizon(pred, truth)?;
    if ids.len() != pred.agents {
        return Err(PredictError::Config(format!("{} ids for {} agents", ids.len(), pred.agents)));
    }
    let rows = truth
        .iter()
        .enumerate()
        .map(|(a, future)| {
            let (mut ade, mut fde) = (f64::INFINITY, f64::INFINITY);
            for k in 0..pred.modes {
                let traj = pred.trajectory(a, k);
                let errors: Vec<f64> = traj.iter().zip(future).map(|(&p, &q)| dist(p, q)).collect();
                ade = ade.min(errors.iter().sum::<f64>() / errors.len() as f64);
                fde = fde.min(errors[errors.len() - 1]);
            }
            AgentMetrics { agent_id: ids[a].clone(), min_ade: ade, min_fde: fde, miss: fde > MISS_THRESHOLD }
        })
        .collect();
    MetricsReport::from_agents(rows)
}

/// `agent_id,minADE,minFDE,miss` rows.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("agent_id,minADE,minFDE,miss\n");
    for a in &report.agents {
        writeln!(out, "{},{},{},{}", a.agent_id, a.min_ade, a.min_fde, u8::from(a.miss)).unwrap();
    }
    out
}
