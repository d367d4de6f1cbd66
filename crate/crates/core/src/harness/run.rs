//! The train-then-evaluate loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, ModelStyle, RunConfig};
use crate::envs::{make_env, metric_set, Environment, Metric, StepResult};
use crate::gdn::{save_checkpoint, Augmenter, CommMatrices, GdnModel, HiddenState};
use crate::learn::{
    a2c_update, carry_mask, dqn_update, epsilon, sync_target, Episode, Experience,
    ImitationSchedule, Optimizer, ReplayBuffer, Source, Transition,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub metric: Metric,
    pub value: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub env_steps: u64,
    pub episodes: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub td_loss: f64,
    pub epsilon: f64,
    pub buffer_size: usize,
}

/// Identifies a run for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub env: String,
    pub model: String,
    pub augmentation: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            env: cfg.env.env_name.to_string(),
            model: cfg.model.to_string(),
            augmentation: cfg.augmentation().label(),
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricRecord>,
    pub log: Vec<TrainLogRecord>,
    pub model: Option<GdnModel>,
    /// Evaluation index at which the stop condition was met.
    pub stopped_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    Sample,
    Greedy,
    EpsilonGreedy(f64),
    Uniform,
}

/// Drives one policy through an episode, carrying recurrent state.
pub struct Actor<'a> {
    model: Option<&'a GdnModel>,
    n_actions: usize,
    hidden: Option<HiddenState>,
    prev_alive: Vec<bool>,
}

impl<'a> Actor<'a> {
    pub fn new(model: Option<&'a GdnModel>, n_actions: usize) -> Self {
        Self {
            model,
            n_actions,
            hidden: None,
            prev_alive: Vec::new(),
        }
    }

    pub fn begin_episode(&mut self) {
        self.hidden = None;
        self.prev_alive.clear();
    }

    /// Actions for the current step. `obs` are already augmented.
    pub fn act(
        &mut self,
        obs: &[Vec<f64>],
        comm: &CommMatrices,
        alive: &[bool],
        mode: ActMode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<usize>, HarnessError> {
        let n = obs.len();
        let Some(model) = self.model.filter(|_| mode != ActMode::Uniform) else {
            return Ok((0..n)
                .map(|_| rng.random_range(0..self.n_actions))
                .collect());
        };
        if let Some(h) = self.hidden.as_mut() {
            for (i, keep) in carry_mask(&self.prev_alive, alive).into_iter().enumerate() {
                if !keep {
                    h.0.row_mut(i).fill(0.0);
                }
            }
        }
        let out = model.forward_with(comm, obs, self.hidden.as_ref())?;
        self.hidden = out.hidden;
        self.prev_alive = alive.to_vec();
        Ok(out
            .outputs
            .iter()
            .map(|row| match mode {
                ActMode::Greedy => argmax(row),
                ActMode::EpsilonGreedy(e) => {
                    if rng.random::<f64>() < e {
                        rng.random_range(0..self.n_actions)
                    } else {
                        argmax(row)
                    }
                }
                _ => sample_softmax(row, rng),
            })
            .collect())
    }
}

/// First index of the largest entry.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn sample_softmax(logits: &[f64], rng: &mut dyn RngCore) -> usize {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, x) in w.iter().enumerate() {
        if u < *x {
            return i;
        }
        u -= x;
    }
    w.len() - 1
}

struct Episodic<'e> {
    env: &'e mut dyn Environment,
    aug: Augmenter,
    obs: Vec<Vec<f64>>,
    last: StepResult,
}

impl<'e> Episodic<'e> {
    fn start(
        env: &'e mut dyn Environment,
        mut aug: Augmenter,
        rng: &mut dyn RngCore,
    ) -> Result<Self, HarnessError> {
        let last = env.reset(rng);
        aug.begin_episode();
        let obs = aug.apply(&last.observations, rng)?;
        Ok(Self {
            env,
            aug,
            obs,
            last,
        })
    }

    fn restart(&mut self, rng: &mut dyn RngCore) -> Result<(), HarnessError> {
        self.last = self.env.reset(rng);
        self.aug.begin_episode();
        self.obs = self.aug.apply(&self.last.observations, rng)?;
        Ok(())
    }

    fn step(
        &mut self,
        actions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<StepResult, HarnessError> {
        let r = self.env.step(actions, rng)?;
        let obs = self.aug.apply(&r.observations, rng)?;
        let prev = std::mem::replace(&mut self.last, r.clone());
        self.obs = obs;
        Ok(prev)
    }
}

/// Mean of every declared metric over `episodes` evaluation episodes.
pub fn evaluate(
    cfg: &RunConfig,
    model: Option<&GdnModel>,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<(Metric, f64)>, HarnessError> {
    let mut env = make_env(&cfg.env)?;
    let n_actions = env.n_actions();
    let mode = match cfg.model {
        ModelStyle::Random => ActMode::Uniform,
        ModelStyle::Dgn => ActMode::Greedy,
        _ if cfg.greedy_a2c_eval => ActMode::Greedy,
        _ => ActMode::Sample,
    };
    let metrics = metric_set(cfg.env.env_name);
    let mut sums = vec![0.0; metrics.len()];
    let mut counts = vec![0usize; metrics.len()];
    let mut actor = Actor::new(model, n_actions);
    let mut ep = Episodic::start(
        env.as_mut(),
        Augmenter::new(cfg.augmentation(), false)?,
        rng,
    )?;
    for k in 0..episodes {
        if k > 0 {
            ep.restart(rng)?;
        }
        actor.begin_episode();
        loop {
            let comm = CommMatrices::from_mask(&ep.last.comm_mask);
            let alive = ep.last.alive.clone();
            let a = actor.act(&ep.obs, &comm, &alive, mode, rng)?;
            ep.step(&a, rng)?;
            if ep.last.done {
                break;
            }
        }
        for (i, &m) in metrics.iter().enumerate() {
            if let Some(v) = ep.last.info.get(m) {
                sums[i] += v;
                counts[i] += 1;
            }
        }
    }
    Ok(metrics
        .iter()
        .zip(sums.iter().zip(&counts))
        .filter(|(_, (_, &c))| c > 0)
        .map(|(&m, (&s, &c))| (m, s / c as f64))
        .collect())
}

fn pick_actions(
    actor: &mut Actor,
    ep: &Episodic,
    sched: &mut Option<ImitationSchedule>,
    mode: ActMode,
    rng: &mut dyn RngCore,
) -> Result<(Vec<usize>, bool), HarnessError> {
    let comm = CommMatrices::from_mask(&ep.last.comm_mask);
    // the policy always runs so its recurrent state tracks the episode
    let own = actor.act(&ep.obs, &comm, &ep.last.alive, mode, rng)?;
    if let Some(s) = sched {
        if s.advance() == Source::Expert {
            if let Some(a) = ep.env.expert_actions() {
                return Ok((a, true));
            }
        }
    }
    Ok((own, false))
}

struct Trainer {
    rng: ChaCha8Rng,
    opt: Optimizer,
    sched: Option<ImitationSchedule>,
    buffer: ReplayBuffer,
    target: Option<GdnModel>,
    env_steps: u64,
    episodes: u64,
}

impl Trainer {
    fn a2c_epoch(
        &mut self,
        cfg: &RunConfig,
        model: &mut GdnModel,
        env: &mut dyn Environment,
    ) -> Result<TrainLogRecord, HarnessError> {
        let t = &cfg.train;
        let mut log = TrainLogRecord::default();
        let mut ep = Episodic::start(
            env,
            Augmenter::new(cfg.augmentation(), false)?,
            &mut self.rng,
        )?;
        for _ in 0..t.epoch_size {
            let mut batch: Vec<Episode> = Vec::new();
            let mut steps = 0;
            while steps < t.batch_size {
                if !batch.is_empty() {
                    ep.restart(&mut self.rng)?;
                }
                let mut actor = Actor::new(Some(model), ep.env.n_actions());
                let mut episode = Vec::new();
                loop {
                    let (actions, _) = pick_actions(
                        &mut actor,
                        &ep,
                        &mut self.sched,
                        ActMode::Sample,
                        &mut self.rng,
                    )?;
                    let obs = ep.obs.clone();
                    let before = ep.step(&actions, &mut self.rng)?;
                    episode.push(Transition {
                        observations: obs,
                        comm: before.comm_mask,
                        actions,
                        rewards: ep.last.rewards.clone(),
                        alive: before.alive,
                        done: ep.last.done,
                    });
                    if ep.last.done {
                        break;
                    }
                }
                steps += episode.len();
                batch.push(episode);
            }
            let stats = a2c_update(model, &mut self.opt, &batch, t)?;
            self.env_steps += steps as u64;
            self.episodes += batch.len() as u64;
            log.policy_loss += stats.policy_loss / t.epoch_size as f64;
            log.value_loss += stats.value_loss / t.epoch_size as f64;
            log.entropy += stats.entropy / (t.epoch_size * stats.steps) as f64;
            ep.restart(&mut self.rng)?;
        }
        Ok(log)
    }

    fn dqn_epoch(
        &mut self,
        cfg: &RunConfig,
        model: &mut GdnModel,
        env: &mut dyn Environment,
    ) -> Result<TrainLogRecord, HarnessError> {
        let t = &cfg.train;
        let mut log = TrainLogRecord::default();
        let budget = (t.epoch_size * t.batch_size) as u64;
        let start = self.env_steps;
        let mut updates = 0usize;
        let target = self.target.get_or_insert_with(|| model.clone());
        let mut ep = Episodic::start(
            env,
            Augmenter::new(cfg.augmentation(), false)?,
            &mut self.rng,
        )?;
        while self.env_steps - start < budget {
            let eps = epsilon(self.episodes, t);
            log.epsilon = eps;
            let mut actor = Actor::new(Some(model), ep.env.n_actions());
            loop {
                let (actions, expert) = pick_actions(
                    &mut actor,
                    &ep,
                    &mut self.sched,
                    ActMode::EpsilonGreedy(eps),
                    &mut self.rng,
                )?;
                let obs = ep.obs.clone();
                let before = ep.step(&actions, &mut self.rng)?;
                self.buffer.push(Experience {
                    observations: obs,
                    actions,
                    next_observations: ep.obs.clone(),
                    rewards: ep.last.rewards.clone(),
                    comm: before.comm_mask,
                    next_comm: ep.last.comm_mask.clone(),
                    alive: before.alive,
                    done: ep.last.done,
                    expert,
                });
                self.env_steps += 1;
                if ep.last.done {
                    break;
                }
            }
            self.episodes += 1;
            if self.episodes % t.update_interval as u64 == 0 {
                for _ in 0..t.train_steps {
                    if let Some(l) = dqn_update(
                        model,
                        target,
                        &self.buffer,
                        &mut self.opt,
                        t.dgn_batch_size,
                        t.gamma,
                        &mut self.rng,
                    )? {
                        log.td_loss += l;
                        updates += 1;
                    }
                }
                sync_target(target, model);
            }
            ep.restart(&mut self.rng)?;
        }
        if updates > 0 {
            log.td_loss /= updates as f64;
        }
        log.buffer_size = self.buffer.len();
        Ok(log)
    }
}

fn eval_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1 + index as u64);
    r
}

fn reached(stop: Option<(Metric, f64)>, results: &[(Metric, f64)]) -> bool {
    let Some((m, target)) = stop else {
        return false;
    };
    results.iter().any(|&(k, v)| {
        k == m
            && match m.polarity() {
                crate::envs::Polarity::Max => v >= target,
                crate::envs::Polarity::Min => v <= target,
            }
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates the initial model, then alternates one training epoch with
/// one evaluation. `on_eval` sees each evaluation as it is produced.
pub fn run_experiment_with(
    cfg: &RunConfig,
    on_eval: &mut dyn FnMut(usize, &[(Metric, f64)]),
) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let mut env = make_env(&cfg.env)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = match cfg.model_config(env.obs_dim(), env.n_actions()) {
        Some(mc) => Some(GdnModel::new(mc, &mut init_rng)?),
        None => None,
    };
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(0x7261696e);
    let mut trainer = Trainer {
        rng: train_rng,
        opt: Optimizer::new(&cfg.train),
        sched: cfg.imitation.then(|| {
            ImitationSchedule::new(
                cfg.train.num_normal_experiences,
                cfg.train.num_imitation_experiences,
                true,
            )
        }),
        buffer: ReplayBuffer::new(cfg.train.buffer_capacity),
        target: None,
        env_steps: 0,
        episodes: 0,
    };
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("run.json"),
            serde_json::to_string_pretty(&RunMeta::of(cfg))?,
        )?;
    }
    let mut out = RunOutcome {
        records: Vec::new(),
        log: Vec::new(),
        model: None,
        stopped_at: None,
    };
    for epoch in 0..=cfg.num_epochs {
        if epoch > 0 {
            let mut log = match (&mut model, cfg.model) {
                (Some(m), style) if style.is_a2c() => trainer.a2c_epoch(cfg, m, env.as_mut())?,
                (Some(m), _) => trainer.dqn_epoch(cfg, m, env.as_mut())?,
                (None, _) => TrainLogRecord::default(),
            };
            log.epoch = epoch;
            log.env_steps = trainer.env_steps;
            log.episodes = trainer.episodes;
            out.log.push(log);
        }
        let results = evaluate(
            cfg,
            model.as_ref(),
            cfg.eval_episodes,
            &mut eval_rng(cfg.seed, epoch),
        )?;
        on_eval(epoch, &results);
        out.records
            .extend(results.iter().map(|&(metric, value)| MetricRecord {
                epoch,
                metric,
                value,
            }));
        if let Some(dir) = &cfg.out_dir {
            write_jsonl(&dir.join("metrics.jsonl"), &out.records)?;
            write_jsonl(&dir.join("train_log.jsonl"), &out.log)?;
            if let Some(m) = &model {
                save_checkpoint(m, &dir.join("checkpoint.txt"))?;
            }
        }
        if reached(cfg.stop, &results) {
            out.stopped_at = Some(epoch);
            break;
        }
    }
    out.model = model;
    Ok(out)
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    run_experiment_with(cfg, &mut |_, _| {})
}
