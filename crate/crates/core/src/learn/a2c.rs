//! Advantage actor-critic over recorded episodes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LearnError, Optimizer, TrainConfig};
use crate::autodiff::{Tape, Var};
use crate::envs::CommMask;
use crate::gdn::{rows_to_matrix, CommMatrices, GdnModel};

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observations: Vec<Vec<f64>>,
    pub comm: CommMask,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Agents that acted this step.
    pub alive: Vec<bool>,
    pub done: bool,
}

pub type Episode = Vec<Transition>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct A2cStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub steps: usize,
    pub grad_norm: f64,
}

/// Discounted reward-to-go of a single reward sequence.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-agent returns for an episode. The running sum restarts whenever an
/// agent is absent at the following step, so consecutive occupants of one
/// slot do not share credit.
pub fn episode_returns(ep: &[Transition], gamma: f64) -> Vec<Vec<f64>> {
    let n = ep.first().map_or(0, |t| t.alive.len());
    let mut out = vec![vec![0.0; n]; ep.len()];
    let mut acc = vec![0.0; n];
    for t in (0..ep.len()).rev() {
        for i in 0..n {
            let carry = ep.get(t + 1).is_some_and(|nx| nx.alive[i]);
            acc[i] = ep[t].rewards[i] + if carry { gamma * acc[i] } else { 0.0 };
            out[t][i] = acc[i];
        }
    }
    out
}

/// Rows of the recurrent state that survive into the next step: agents that
/// were present before and are present now.
pub fn carry_mask(prev_alive: &[bool], alive: &[bool]) -> Vec<bool> {
    prev_alive
        .iter()
        .zip(alive)
        .map(|(a, b)| *a && *b)
        .collect()
}

fn check_episode(ep: &[Transition], model: &GdnModel) -> Result<usize, LearnError> {
    let n = ep.first().ok_or(LearnError::EmptyBatch)?.alive.len();
    for t in ep {
        let ok = t.observations.len() == n
            && t.comm.len() == n
            && t.comm.iter().all(|r| r.len() == n)
            && t.actions.len() == n
            && t.rewards.len() == n
            && t.alive.len() == n;
        if !ok {
            return Err(LearnError::Shape(
                "per-agent fields disagree in length".into(),
            ));
        }
        if t.actions.iter().any(|&a| a >= model.config.n_outputs) {
            return Err(LearnError::Shape(
                "action index outside the actor head".into(),
            ));
        }
        if t.rewards.iter().any(|r| !r.is_finite()) {
            return Err(LearnError::Shape("non-finite reward".into()));
        }
    }
    Ok(n)
}

/// Records the loss of one episode and accumulates its gradient into the
/// model's parameter store.
fn accumulate_episode(
    model: &mut GdnModel,
    ep: &[Transition],
    cfg: &TrainConfig,
    stats: &mut A2cStats,
) -> Result<(), LearnError> {
    let n = check_episode(ep, model)?;
    let rets = episode_returns(ep, cfg.gamma);
    let mut tape = Tape::new();
    let mut terms: Vec<Var> = Vec::new();
    let mut hidden: Option<Var> = None;
    let mut prev_alive = vec![false; n];
    for (t, tr) in ep.iter().enumerate() {
        let comm = CommMatrices::from_mask(&tr.comm);
        let obs = tape.constant(rows_to_matrix(&tr.observations, model.config.obs_dim)?);
        let h_in = hidden.map(|h| {
            let h = if t % cfg.detach_gap == 0 {
                tape.constant(tape.value(h).clone())
            } else {
                h
            };
            tape.row_mask(h, carry_mask(&prev_alive, &tr.alive))
        });
        let out = model.forward_tape(&mut tape, &comm, obs, h_in)?;
        hidden = out.hidden;
        prev_alive.clone_from(&tr.alive);

        let logp = tape.log_softmax(out.outputs);
        let chosen = tape.gather(logp, tr.actions.clone());
        let ret =
            Array2::from_shape_fn((n, 1), |(i, _)| if tr.alive[i] { rets[t][i] } else { 0.0 });
        let baseline = match out.values {
            Some(v) => tape.value(v).clone(),
            None => Array2::zeros((n, 1)),
        };
        let adv = Array2::from_shape_fn((n, 1), |(i, _)| {
            if tr.alive[i] {
                ret[[i, 0]] - baseline[[i, 0]]
            } else {
                0.0
            }
        });
        let adv_c = tape.constant(adv);
        let pg = tape.mul(chosen, adv_c);
        let pg = tape.sum(pg);
        let pg = tape.scale(pg, -1.0);
        stats.policy_loss += tape.scalar(pg);
        terms.push(pg);

        if let Some(v) = out.values {
            let ret_c = tape.constant(ret);
            let diff = tape.sub(ret_c, v);
            let sq = tape.square(diff);
            let sq = tape.row_mask(sq, tr.alive.clone());
            let vl = tape.sum(sq);
            stats.value_loss += tape.scalar(vl);
            terms.push(tape.scale(vl, cfg.value_coeff));
        }

        let probs = tape.masked_softmax(out.outputs, Array2::ones((n, model.config.n_outputs)));
        let plogp = tape.mul(probs, logp);
        let plogp = tape.row_mask(plogp, tr.alive.clone());
        let neg_h = tape.sum(plogp);
        stats.entropy -= tape.scalar(neg_h);
        if cfg.entropy_coeff > 0.0 {
            terms.push(tape.scale(neg_h, cfg.entropy_coeff));
        }
        stats.steps += 1;
    }
    let mut loss = terms[0];
    for &v in &terms[1..] {
        loss = tape.add(loss, v);
    }
    let grads = tape.backward(loss)?;
    grads.accumulate_into(&mut model.params);
    Ok(())
}

/// One A2C gradient step over a batch of episodes. Gradients are summed
/// over agents and steps, then divided by the number of steps.
pub fn a2c_update(
    model: &mut GdnModel,
    opt: &mut Optimizer,
    episodes: &[Episode],
    cfg: &TrainConfig,
) -> Result<A2cStats, LearnError> {
    if episodes.iter().all(|e| e.is_empty()) {
        return Err(LearnError::EmptyBatch);
    }
    model.params.zero_grads();
    let mut stats = A2cStats::default();
    for ep in episodes.iter().filter(|e| !e.is_empty()) {
        if let Err(e) = accumulate_episode(model, ep, cfg, &mut stats) {
            model.params.zero_grads();
            return Err(e);
        }
    }
    model.params.scale_grads(1.0 / stats.steps as f64);
    stats.grad_norm = opt.step(&mut model.params);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdn::{LayerKind, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_to_go() {
        assert_eq!(returns(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
        assert_eq!(returns(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
        assert!(returns(&[], 1.0).is_empty());
    }

    fn step(n: usize, alive: Vec<bool>, rewards: Vec<f64>) -> Transition {
        Transition {
            observations: vec![vec![1.0]; n],
            comm: vec![vec![false; n]; n],
            actions: vec![0; n],
            rewards,
            alive,
            done: false,
        }
    }

    #[test]
    fn returns_restart_for_new_occupant() {
        let ep = vec![
            step(2, vec![true, true], vec![1.0, 1.0]),
            step(2, vec![false, true], vec![0.0, 1.0]),
            step(2, vec![true, true], vec![5.0, 1.0]),
        ];
        let r = episode_returns(&ep, 1.0);
        assert_eq!(r[0], vec![1.0, 3.0]);
        assert_eq!(r[2], vec![5.0, 1.0]);
    }

    fn bandit_model(seed: u64) -> GdnModel {
        let mut cfg = ModelConfig::new(1, 2, LayerKind::MeanAgg);
        cfg.layers.clear();
        cfg.value_head = true;
        GdnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn pi0(model: &GdnModel) -> f64 {
        let out = model
            .forward_with(&CommMatrices::from_mask(&[vec![false]]), &[vec![1.0]], None)
            .unwrap();
        let l = &out.outputs[0];
        let m = l[0].max(l[1]);
        let e0 = (l[0] - m).exp();
        e0 / (e0 + (l[1] - m).exp())
    }

    #[test]
    fn zero_advantage_gives_no_policy_gradient() {
        let mut model = bandit_model(3);
        let v = model
            .forward_with(&CommMatrices::from_mask(&[vec![false]]), &[vec![1.0]], None)
            .unwrap()
            .values
            .unwrap()[0];
        let ep = vec![step(1, vec![true], vec![v])];
        let cfg = TrainConfig {
            value_coeff: 0.0,
            ..TrainConfig::default()
        };
        let before = model.params.clone();
        let mut opt = Optimizer::sgd(1.0, 0.0);
        let stats = a2c_update(&mut model, &mut opt, &[ep], &cfg).unwrap();
        assert!(stats.policy_loss.abs() < 1e-12);
        assert!(stats.grad_norm < 1e-12);
        assert_eq!(model.params, before);
    }

    #[test]
    fn bandit_converges_to_rewarded_arm() {
        use rand::Rng;
        let mut model = bandit_model(11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TrainConfig {
            lrate: 0.1,
            ..TrainConfig::default()
        };
        let mut opt = Optimizer::new(&cfg);
        for _ in 0..200 {
            let p = pi0(&model);
            let batch: Vec<Episode> = (0..10)
                .map(|_| {
                    let a = if rng.random::<f64>() < p { 0 } else { 1 };
                    let mut s = step(1, vec![true], vec![if a == 0 { 1.0 } else { 0.0 }]);
                    s.actions = vec![a];
                    s.done = true;
                    vec![s]
                })
                .collect();
            a2c_update(&mut model, &mut opt, &batch, &cfg).unwrap();
        }
        assert!(pi0(&model) > 0.9, "pi(0) = {}", pi0(&model));
    }

    #[test]
    fn empty_and_malformed_batches_are_errors() {
        let mut model = bandit_model(0);
        let mut opt = Optimizer::sgd(0.1, 5.0);
        let cfg = TrainConfig::default();
        assert!(matches!(
            a2c_update(&mut model, &mut opt, &[], &cfg),
            Err(LearnError::EmptyBatch)
        ));
        let mut bad = step(1, vec![true], vec![1.0]);
        bad.actions = vec![7];
        assert!(a2c_update(&mut model, &mut opt, &[vec![bad]], &cfg).is_err());
    }

    fn recurrent_episode(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Episode {
        use rand::Rng;
        (0..len)
            .map(|t| Transition {
                observations: (0..n)
                    .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                    .collect(),
                comm: (0..n)
                    .map(|i| (0..n).map(|j| i != j && rng.random_bool(0.5)).collect())
                    .collect(),
                actions: (0..n).map(|_| rng.random_range(0..2)).collect(),
                rewards: (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
                alive: (0..n).map(|i| t < 3 || i != 1).collect(),
                done: t + 1 == len,
            })
            .collect()
    }

    #[test]
    fn recurrent_update_is_reproducible() {
        let mut cfg = ModelConfig::new(3, 2, LayerKind::GatedMean);
        cfg.hidden = 6;
        cfg.layers = vec![LayerKind::GatedMean];
        cfg.recurrent = true;
        cfg.value_head = true;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = GdnModel::new(cfg.clone(), &mut rng).unwrap();
            let tc = TrainConfig {
                detach_gap: 4,
                ..TrainConfig::default()
            };
            let mut opt = Optimizer::new(&tc);
            let mut all = Vec::new();
            for _ in 0..3 {
                let batch = vec![
                    recurrent_episode(&mut rng, 3, 12),
                    recurrent_episode(&mut rng, 3, 5),
                ];
                all.push(a2c_update(&mut model, &mut opt, &batch, &tc).unwrap());
            }
            (model.params, all)
        };
        let (pa, sa) = run();
        let (pb, sb) = run();
        assert_eq!(pa, pb);
        assert_eq!(sa, sb);
        assert_eq!(sa[0].steps, 17);
    }
}
