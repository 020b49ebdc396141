use super::real::{lit, Real};
use super::tensor::Param;
use super::NumError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: Some(1.0) }
    }
}

/// Adam with decoupled weight decay and global norm clipping.
pub struct Adam<T: Real> {
    pub cfg: AdamConfig,
    params: Vec<Param<T>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: Vec<Param<T>>, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.shape().iter().product()]).collect::<Vec<_>>();
        let v = m.clone();
        Adam { cfg, params, m, v, step: 0 }
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.zero_grad());
    }

    /// Global L2 norm of the current gradients (missing gradients count as zero).
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad())
            .flat_map(|g| g.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update and clears gradients. `scale` multiplies every
    /// gradient first (e.g. `1 / batch` for summed minibatch losses).
    pub fn step(&mut self, scale: f64) -> Result<(), NumError> {
        self.step += 1;
        let norm = self.grad_norm() * scale.abs();
        if !norm.is_finite() {
            return Err(NumError::NonFinite("gradient norm".into()));
        }
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let c = self.cfg;
        let b1t = 1.0 - c.beta1.powi(self.step as i32);
        let b2t = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let mut data: Vec<T> = p.get().to_vec();
            for (j, x) in data.iter_mut().enumerate() {
                let gj = g[j].to_f64().unwrap_or(0.0) * scale * clip;
                self.m[i][j] = c.beta1 * self.m[i][j] + (1.0 - c.beta1) * gj;
                self.v[i][j] = c.beta2 * self.v[i][j] + (1.0 - c.beta2) * gj * gj;
                let mhat = self.m[i][j] / b1t;
                let vhat = self.v[i][j] / b2t;
                let xf = x.to_f64().unwrap_or(0.0);
                let next = xf - c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * xf);
                *x = lit(next);
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}
