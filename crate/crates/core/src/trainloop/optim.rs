use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
    Linear,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    /// lr 2e-5, batch 128, cosine with 3% warmup, no weight decay.
    fn default() -> Self {
        Self {
            lr: 2e-5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.03,
            schedule: Schedule::Cosine,
            batch_size: 128,
            epochs: 3,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_ratio * total_steps as f64).round() as usize
    }

    /// Learning rate for update `step` of `total_steps`: linear warmup from 0,
    /// then the configured decay (cosine and linear reach 0 at `total_steps`).
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup_steps(total_steps);
        if step < warmup {
            return self.lr * step as f64 / warmup as f64;
        }
        let span = total_steps.saturating_sub(warmup);
        let progress = if span == 0 {
            1.0
        } else {
            ((step - warmup) as f64 / span as f64).min(1.0)
        };
        match self.schedule {
            Schedule::Cosine => self.lr * 0.5 * (1.0 + (PI * progress).cos()),
            Schedule::Linear => self.lr * (1.0 - progress),
            Schedule::Constant => self.lr,
        }
    }
}

pub fn lr_at(step: usize, total_steps: usize, cfg: &OptimConfig) -> f64 {
    cfg.lr_at(step, total_steps)
}

/// AdamW moment buffers for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &[&Matrix]) -> Self {
        let zeros = |p: &&Matrix| Matrix::zeros(p.rows(), p.cols());
        Self {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One decoupled-weight-decay Adam update with bias correction.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], cfg: &OptimConfig, lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adamw_step",
                format!("{} params, {} grads, {} state slots", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(shape_err(
                    "adamw_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let ps = p.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                ms[k] = b1 * ms[k] + (1.0 - b1) * gk;
                vs[k] = b2 * vs[k] + (1.0 - b2) * gk * gk;
                let mhat = ms[k] / c1;
                let vhat = vs[k] / c2;
                ps[k] = ps[k] * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

pub fn adamw_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    state: &mut AdamW,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, cfg, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(schedule: Schedule) -> OptimConfig {
        OptimConfig {
            lr: 0.1,
            schedule,
            warmup_ratio: 0.1,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = cfg(Schedule::Cosine);
        assert_eq!(c.warmup_steps(100), 10);
        assert_eq!(c.lr_at(0, 100), 0.0);
        assert_eq!(c.lr_at(5, 100), 0.05);
        assert_eq!(c.lr_at(10, 100), 0.1);
        assert!(c.lr_at(100, 100).abs() < 1e-12);
        assert!((c.lr_at(55, 100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn schedule_never_negative() {
        for s in [Schedule::Cosine, Schedule::Linear, Schedule::Constant] {
            let c = cfg(s);
            for step in 0..=37 {
                assert!(c.lr_at(step, 37) >= 0.0);
            }
        }
        assert_eq!(cfg(Schedule::Linear).lr_at(100, 100), 0.0);
        assert_eq!(cfg(Schedule::Constant).lr_at(90, 100), 0.1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let before = w.clone();
        let mut opt = AdamW::new(&[&w]);
        opt.step(&mut [&mut w], &[Matrix::zeros(1, 2)], &OptimConfig::default(), 0.1).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut w = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let c = OptimConfig {
            weight_decay: 0.1,
            ..OptimConfig::default()
        };
        let mut opt = AdamW::new(&[&w]);
        opt.step(&mut [&mut w], &[Matrix::zeros(1, 2)], &c, 0.5).unwrap();
        assert_eq!(w.as_slice(), &[1.0 * (1.0 - 0.05), -2.0 * (1.0 - 0.05)]);
    }

    #[test]
    fn first_step_on_quadratic_descends() {
        // f(w) = w²/2, grad = w; Adam's first step moves by lr·sign(g)
        let mut w = Matrix::scalar(1.0);
        let mut opt = AdamW::new(&[&w]);
        let g = w.clone();
        opt.step(&mut [&mut w], &[g], &OptimConfig::default(), 0.1).unwrap();
        assert!(w.item().abs() < 1.0);
        assert!((w.item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Matrix::zeros(2, 2);
        let mut opt = AdamW::new(&[&w]);
        let r = opt.step(&mut [&mut w], &[Matrix::zeros(1, 2)], &OptimConfig::default(), 0.1);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
