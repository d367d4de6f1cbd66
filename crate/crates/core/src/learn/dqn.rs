//! Q-learning with a replay buffer and an intermittently copied target
//! network.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{LearnError, Optimizer};
use crate::autodiff::Tape;
use crate::envs::CommMask;
use crate::gdn::{rows_to_matrix, CommMatrices, GdnModel};

/// `(O, A, O', R, C)` for every agent, plus the next communication mask and
/// per-agent presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub next_observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub comm: CommMask,
    pub next_comm: CommMask,
    pub alive: Vec<bool>,
    pub done: bool,
    /// Produced by the scripted expert rather than the agents.
    #[serde(default)]
    pub expert: bool,
}

impl Experience {
    pub fn agents(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let n = self.agents();
        let square = |m: &CommMask| m.len() == n && m.iter().all(|r| r.len() == n);
        let ok = self.observations.len() == n
            && self.next_observations.len() == n
            && self.rewards.len() == n
            && self.alive.len() == n
            && square(&self.comm)
            && square(&self.next_comm);
        if ok {
            Ok(())
        } else {
            Err(LearnError::Shape(
                "experience fields disagree on the agent count".into(),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `k` distinct entries chosen uniformly, or `None` if fewer are stored.
    pub fn sample(&self, k: usize, rng: &mut dyn RngCore) -> Option<Vec<&Experience>> {
        if k > self.items.len() {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), k);
        Some(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// `r + gamma * (1 - done) * max_a q_next[a]`.
pub fn td_target(r: f64, gamma: f64, done: bool, q_next: &[f64]) -> f64 {
    if done {
        return r;
    }
    r + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Accumulates the gradient of the mean TD loss over `batch` into `model`
/// and returns that loss. Each experience contributes the mean over its
/// present agents.
pub fn accumulate_td_loss(
    model: &mut GdnModel,
    target: &GdnModel,
    batch: &[&Experience],
    gamma: f64,
) -> Result<f64, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for e in batch {
        e.validate()?;
        let n = e.agents();
        let present = e.alive.iter().filter(|&&a| a).count();
        if present == 0 {
            continue;
        }
        if e.actions.iter().any(|&a| a >= model.config.n_outputs) {
            return Err(LearnError::Shape("action index outside the Q-head".into()));
        }
        let q_next = if e.done {
            vec![Vec::new(); n]
        } else {
            target
                .forward_with(
                    &CommMatrices::from_mask(&e.next_comm),
                    &e.next_observations,
                    None,
                )?
                .outputs
        };
        let y = Array2::from_shape_fn((n, 1), |(i, _)| {
            td_target(e.rewards[i], gamma, e.done, &q_next[i])
        });

        let mut tape = Tape::new();
        let obs = tape.constant(rows_to_matrix(&e.observations, model.config.obs_dim)?);
        let out = model.forward_tape(&mut tape, &CommMatrices::from_mask(&e.comm), obs, None)?;
        let q = tape.gather(out.outputs, e.actions.clone());
        let y = tape.constant(y);
        let d = tape.sub(q, y);
        let sq = tape.square(d);
        let sq = tape.row_mask(sq, e.alive.clone());
        let s = tape.sum(sq);
        let loss = tape.scale(s, scale / present as f64);
        total += tape.scalar(loss);
        tape.backward(loss)?.accumulate_into(&mut model.params);
    }
    Ok(total)
}

/// One gradient step on a sampled minibatch. `Ok(None)` means the buffer
/// holds fewer than `batch_size` experiences and nothing was done.
pub fn dqn_update(
    model: &mut GdnModel,
    target: &GdnModel,
    buffer: &ReplayBuffer,
    opt: &mut Optimizer,
    batch_size: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>, LearnError> {
    let Some(batch) = buffer.sample(batch_size, rng) else {
        return Ok(None);
    };
    model.params.zero_grads();
    let loss = match accumulate_td_loss(model, target, &batch, gamma) {
        Ok(l) => l,
        Err(e) => {
            model.params.zero_grads();
            return Err(e);
        }
    };
    opt.step(&mut model.params);
    Ok(Some(loss))
}

/// Hard copy of the online parameters into the target network.
pub fn sync_target(target: &mut GdnModel, model: &GdnModel) {
    target.params.copy_values_from(&model.params);
}

/// Fits a small attention Q-network to a fixed batch of terminal
/// experiences whose targets come from a second network of the same shape.
/// Returns the batch loss before the first and after the last of `updates`
/// SGD steps.
pub fn regression_sanity(seed: u64, updates: usize) -> Result<(f64, f64), LearnError> {
    use crate::gdn::{LayerKind, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let (n, obs_dim, actions) = (3, 4, 3);
    let mut cfg = ModelConfig::new(obs_dim, actions, LayerKind::Attention);
    cfg.hidden = 8;
    cfg.layers = vec![LayerKind::Attention];
    cfg.key_dim = 4;
    cfg.value_dim = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GdnModel::new(cfg.clone(), &mut rng)?;
    let teacher = GdnModel::new(cfg, &mut rng)?;
    let mut batch = Vec::new();
    for _ in 0..8 {
        let mut obs = || -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let (o, o2) = (obs(), obs());
        let comm: CommMask = (0..n)
            .map(|i| (0..n).map(|j| i != j && rng.random_bool(0.5)).collect())
            .collect();
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..actions)).collect();
        let q = teacher
            .forward_with(&CommMatrices::from_mask(&comm), &o, None)?
            .outputs;
        batch.push(Experience {
            rewards: (0..n).map(|i| q[i][a[i]]).collect(),
            observations: o,
            actions: a,
            next_observations: o2,
            next_comm: comm.clone(),
            comm,
            alive: vec![true; n],
            done: true,
            expert: false,
        });
    }
    let refs: Vec<&Experience> = batch.iter().collect();
    let target = model.clone();
    let mut opt = Optimizer::sgd(0.3, 5.0);
    let mut first = None;
    for _ in 0..updates {
        model.params.zero_grads();
        let l = accumulate_td_loss(&mut model, &target, &refs, 1.0)?;
        first.get_or_insert(l);
        opt.step(&mut model.params);
    }
    model.params.zero_grads();
    let last = accumulate_td_loss(&mut model, &target, &refs, 1.0)?;
    model.params.zero_grads();
    Ok((first.unwrap_or(last), last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdn::{LayerKind, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp(rng: &mut ChaCha8Rng, n: usize, done: bool) -> Experience {
        let obs = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let mask = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|i| (0..n).map(|j| i != j && rng.random_bool(0.5)).collect())
                .collect()
        };
        Experience {
            observations: obs(rng),
            actions: (0..n).map(|_| rng.random_range(0..3)).collect(),
            next_observations: obs(rng),
            rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            comm: mask(rng),
            next_comm: mask(rng),
            alive: vec![true; n],
            done,
            expert: false,
        }
    }

    fn model(seed: u64) -> GdnModel {
        let mut c = ModelConfig::new(4, 3, LayerKind::Attention);
        c.hidden = 8;
        c.layers = vec![LayerKind::Attention];
        c.key_dim = 4;
        c.value_dim = 4;
        GdnModel::new(c, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn target_formula() {
        assert_eq!(td_target(1.0, 1.0, false, &[2.0, -1.0]), 3.0);
        assert_eq!(td_target(1.0, 1.0, true, &[2.0]), 1.0);
        assert_eq!(td_target(0.5, 0.5, false, &[1.0, 4.0]), 2.5);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            let mut e = exp(&mut rng, 2, false);
            e.rewards[0] = k as f64;
            b.push(e);
            assert!(b.len() <= 3);
        }
        let kept: Vec<f64> = b.iter().map(|e| e.rewards[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
        assert!(b.sample(4, &mut rng).is_none());
    }

    #[test]
    fn sampling_is_distinct_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(100);
        for k in 0..50 {
            let mut e = exp(&mut rng, 1, false);
            e.rewards[0] = k as f64;
            b.push(e);
        }
        let pick = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            b.sample(20, &mut r)
                .unwrap()
                .iter()
                .map(|e| e.rewards[0] as usize)
                .collect::<Vec<_>>()
        };
        let a = pick(7);
        assert_eq!(a, pick(7));
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 20);
    }

    #[test]
    fn exact_targets_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = model(3);
        let target = m.clone();
        let mut e = exp(&mut rng, 3, true);
        let q = m
            .forward_with(&CommMatrices::from_mask(&e.comm), &e.observations, None)
            .unwrap();
        for i in 0..3 {
            e.rewards[i] = q.outputs[i][e.actions[i]];
        }
        let loss = accumulate_td_loss(&mut m, &target, &[&e], 1.0).unwrap();
        assert!(loss.abs() < 1e-20);
        assert!(m.params.grad_norm() < 1e-9);
    }

    #[test]
    fn underfilled_buffer_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = model(0);
        let t = m.clone();
        let mut b = ReplayBuffer::new(10);
        b.push(exp(&mut rng, 2, false));
        let mut opt = Optimizer::sgd(0.01, 5.0);
        assert_eq!(
            dqn_update(&mut m, &t, &b, &mut opt, 2, 1.0, &mut rng).unwrap(),
            None
        );
        b.push(exp(&mut rng, 2, false));
        assert!(dqn_update(&mut m, &t, &b, &mut opt, 2, 1.0, &mut rng)
            .unwrap()
            .is_some());
    }

    #[test]
    fn regression_batch_loss_drops_tenfold() {
        for seed in 0..3 {
            let (first, last) = regression_sanity(seed, 100).unwrap();
            assert!(first >= 10.0 * last, "{first} -> {last}");
        }
    }

    #[test]
    fn target_copy_is_exact() {
        let a = model(1);
        let mut b = model(2);
        assert_ne!(a.params, b.params);
        sync_target(&mut b, &a);
        assert_eq!(a.params, b.params);
    }
}
