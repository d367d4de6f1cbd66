//! Training: optimizers, the A2C and DQN objectives, replay, exploration
//! schedule, imitation interleaving, and gradient checking.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::GradError;
use crate::gdn::ModelError;
use crate::params::ParamStore;

pub mod a2c;
pub mod dqn;
pub mod gradcheck;
pub mod imitation;

pub use a2c::{a2c_update, carry_mask, episode_returns, returns, A2cStats, Episode, Transition};
pub use dqn::{
    accumulate_td_loss, dqn_update, regression_sanity, sync_target, td_target, Experience,
    ReplayBuffer,
};
pub use gradcheck::{check_model_gradients, GradCheck};
pub use imitation::{ImitationSchedule, Source};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("inconsistent batch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Rmsprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lrate: f64,
    pub gamma: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    /// Environment steps collected before each A2C update.
    pub batch_size: usize,
    /// Updates per epoch.
    pub epoch_size: usize,
    pub dgn_batch_size: usize,
    pub update_interval: usize,
    pub train_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_step: f64,
    pub buffer_capacity: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    /// Hidden states are cut from the gradient every this many steps.
    pub detach_gap: usize,
    pub num_imitation_experiences: usize,
    pub num_normal_experiences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lrate: 0.001,
            gamma: 1.0,
            value_coeff: 0.01,
            entropy_coeff: 0.0,
            batch_size: 500,
            epoch_size: 10,
            dgn_batch_size: 128,
            update_interval: 5,
            train_steps: 5,
            epsilon_start: 1.0,
            epsilon_min: 0.1,
            epsilon_step: 2e-5,
            buffer_capacity: 40000,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Sgd,
            rmsprop_alpha: 0.97,
            rmsprop_eps: 1e-6,
            detach_gap: 10,
            num_imitation_experiences: 100,
            num_normal_experiences: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.to_string()));
        let reals = [
            self.lrate,
            self.gamma,
            self.value_coeff,
            self.entropy_coeff,
            self.epsilon_start,
            self.epsilon_min,
            self.epsilon_step,
            self.clip_norm,
            self.rmsprop_alpha,
            self.rmsprop_eps,
        ];
        if reals.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("real-valued settings must be finite and non-negative");
        }
        if self.lrate == 0.0 {
            return bad("lrate must be positive");
        }
        if self.gamma > 1.0 {
            return bad("gamma must lie in [0, 1]");
        }
        if self.epsilon_min > self.epsilon_start || self.epsilon_start > 1.0 {
            return bad("need epsilon_min <= epsilon_start <= 1");
        }
        let counts = [
            self.batch_size,
            self.epoch_size,
            self.dgn_batch_size,
            self.update_interval,
            self.train_steps,
            self.buffer_capacity,
            self.detach_gap,
        ];
        if counts.contains(&0) {
            return bad("batch sizes, intervals and capacities must be positive");
        }
        if self.dgn_batch_size > self.buffer_capacity {
            return bad("dgn_batch_size cannot exceed buffer_capacity");
        }
        Ok(())
    }
}

/// `max(epsilon_min, epsilon_start - episode * epsilon_step)`.
pub fn epsilon(episode: u64, cfg: &TrainConfig) -> f64 {
    // absorb rounding so the floor is reached exactly
    let dec = episode as f64 * cfg.epsilon_step;
    let e = cfg.epsilon_start - dec;
    if e <= cfg.epsilon_min + 1e-12 {
        cfg.epsilon_min
    } else {
        e
    }
}

/// Gradient step on a parameter store after global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip: f64,
    alpha: f64,
    eps: f64,
    square_avg: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.lrate,
            clip: cfg.clip_norm,
            alpha: cfg.rmsprop_alpha,
            eps: cfg.rmsprop_eps,
            square_avg: Vec::new(),
        }
    }

    pub fn sgd(lr: f64, clip: f64) -> Self {
        Self::new(&TrainConfig {
            lrate: lr,
            clip_norm: clip,
            ..TrainConfig::default()
        })
    }

    /// Applies the accumulated gradients and zeroes them. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        let norm = store.grad_norm();
        if self.clip > 0.0 && norm > self.clip {
            store.scale_grads(self.clip / norm);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (g, v) in store.grads_and_values_mut() {
                    v.scaled_add(-self.lr, g);
                }
            }
            OptimizerKind::Rmsprop => {
                if self.square_avg.len() != store.len() {
                    self.square_avg = store.iter().map(|(_, v)| Array2::zeros(v.dim())).collect();
                }
                let (a, lr, eps) = (self.alpha, self.lr, self.eps);
                for ((g, v), s) in store.grads_and_values_mut().zip(&mut self.square_avg) {
                    ndarray::Zip::from(v).and(s).and(g).for_each(|v, s, &g| {
                        *s = a * *s + (1.0 - a) * g * g;
                        *v -= lr * g / (s.sqrt() + eps);
                    });
                }
            }
        }
        store.zero_grads();
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig::default();
        assert_eq!(epsilon(0, &c), 1.0);
        assert_eq!(epsilon(45000, &c), 0.1);
        assert_eq!(epsilon(1_000_000, &c), 0.1);
        assert!((epsilon(10000, &c) - 0.8).abs() < 1e-12);
        let mut prev = 1.0;
        for ep in (0..60000).step_by(97) {
            let e = epsilon(ep, &c);
            assert!(e <= prev && (0.1..=1.0).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn default_config_matches_tables() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.batch_size, c.epoch_size, c.dgn_batch_size),
            (500, 10, 128)
        );
        assert_eq!(
            (c.update_interval, c.train_steps, c.buffer_capacity),
            (5, 5, 40000)
        );
        assert_eq!(
            (c.lrate, c.gamma, c.value_coeff, c.entropy_coeff),
            (0.001, 1.0, 0.01, 0.0)
        );
        let bad = TrainConfig {
            epsilon_min: 2.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sgd_clips_by_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[0.0, 0.0]]);
        s.accumulate(a, &array![[30.0, 40.0]]);
        let mut opt = Optimizer::sgd(0.1, 5.0);
        let norm = opt.step(&mut s);
        assert_eq!(norm, 50.0);
        assert!((s.value(a)[[0, 0]] + 0.3).abs() < 1e-12);
        assert!((s.value(a)[[0, 1]] + 0.4).abs() < 1e-12);
        assert_eq!(s.grad_norm(), 0.0);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[1.0]]);
        s.accumulate(a, &array![[2.0]]);
        let mut opt = Optimizer::new(&TrainConfig {
            optimizer: OptimizerKind::Rmsprop,
            lrate: 0.01,
            ..TrainConfig::default()
        });
        opt.step(&mut s);
        let expect = 1.0 - 0.01 * 2.0 / ((0.03 * 4.0f64).sqrt() + 1e-6);
        assert!((s.value(a)[[0, 0]] - expect).abs() < 1e-12);
    }
}
