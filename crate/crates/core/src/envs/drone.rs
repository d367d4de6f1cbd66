//! Drone scatter: drones start stacked on one random cell of a fenced field
//! and search for a hidden target.
//!
//! Observation per drone: the `3x3` patch around it marking fence cells,
//! then the one-hot of its previous action (zeros before the first move).
//! With identical observations and shared weights the drones cannot split up
//! unless something breaks the symmetry.

use rand::{Rng, RngCore};

use super::{
    check_actions, in_bounds, one_hot, range_mask, Cell, CommMask, EnvConfig, EnvError,
    Environment, EpisodeInfo, PairwiseSummary, StepResult, CARDINAL,
};

#[derive(Debug, Clone)]
pub struct DroneScatter {
    cfg: EnvConfig,
    drones: Vec<Cell>,
    last: Vec<Option<usize>>,
    found: Vec<bool>,
    target: Cell,
    t: usize,
    done: bool,
    pairwise_sum: f64,
    info: EpisodeInfo,
}

impl DroneScatter {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let n = cfg.nagents;
        Ok(Self {
            cfg,
            drones: vec![(0, 0); n],
            last: vec![None; n],
            found: vec![false; n],
            target: (0, 0),
            t: 0,
            done: false,
            pairwise_sum: 0.0,
            info: EpisodeInfo::default(),
        })
    }

    pub fn positions(&self) -> &[Cell] {
        &self.drones
    }

    pub fn target(&self) -> Cell {
        self.target
    }

    /// Mean distance over all unordered drone pairs.
    pub fn mean_pairwise(&self) -> f64 {
        let n = self.drones.len();
        if n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += self
                    .cfg
                    .distance_metric
                    .between(self.drones[i], self.drones[j]);
            }
        }
        s / (n * (n - 1) / 2) as f64
    }

    fn euclid(a: Cell, b: Cell) -> f64 {
        f64::from(a.0 - b.0).hypot(f64::from(a.1 - b.1))
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        self.drones
            .iter()
            .zip(&self.last)
            .map(|(&p, last)| {
                let mut o = Vec::with_capacity(13);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        o.push(f64::from(u8::from(!in_bounds(
                            (p.0 + dr, p.1 + dc),
                            self.cfg.dim,
                        ))));
                    }
                }
                match last {
                    Some(a) => o.extend(one_hot(*a, 4)),
                    None => o.extend([0.0; 4]),
                }
                o
            })
            .collect()
    }

    fn result(&self, rewards: Vec<f64>) -> StepResult {
        StepResult {
            observations: self.observe(),
            rewards,
            done: self.done,
            comm_mask: self.comm_graph(),
            alive: vec![true; self.cfg.nagents],
            info: self.info.clone(),
        }
    }
}

impl Environment for DroneScatter {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        13
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> StepResult {
        let d = self.cfg.dim as i32;
        let spawn = (rng.random_range(0..d), rng.random_range(0..d));
        self.target = loop {
            let t = (rng.random_range(0..d), rng.random_range(0..d));
            if Self::euclid(t, spawn) >= self.cfg.min_target_distance {
                break t;
            }
        };
        let n = self.cfg.nagents;
        self.drones = vec![spawn; n];
        self.last = vec![None; n];
        self.found = vec![false; n];
        self.t = 0;
        self.done = false;
        self.pairwise_sum = 0.0;
        self.info = EpisodeInfo {
            steps_taken: Some(self.cfg.max_steps as f64),
            pairwise_distance: Some(0.0),
            ..EpisodeInfo::default()
        };
        self.result(vec![0.0; n])
    }

    fn step(&mut self, actions: &[usize], _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        let n = self.cfg.nagents;
        check_actions(actions, n, 4)?;
        let d = self.cfg.dim as i32 - 1;
        for i in 0..n {
            let (dr, dc) = CARDINAL[actions[i]];
            let p = self.drones[i];
            self.drones[i] = ((p.0 + dr).clamp(0, d), (p.1 + dc).clamp(0, d));
            self.last[i] = Some(actions[i]);
        }
        self.t += 1;
        let mut rewards = vec![0.0; n];
        for i in 0..n {
            let spread: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    self.cfg
                        .distance_metric
                        .between(self.drones[i], self.drones[j])
                })
                .sum::<f64>()
                / (n.max(2) - 1) as f64;
            rewards[i] = self.cfg.spread_coeff * spread;
            if !self.found[i] && Self::euclid(self.drones[i], self.target) <= self.cfg.find_range {
                self.found[i] = true;
                rewards[i] += self.cfg.find_reward;
            }
        }
        let finished = if self.cfg.find_all {
            self.found.iter().all(|&f| f)
        } else {
            self.found.iter().any(|&f| f)
        };
        if finished {
            self.info.steps_taken = Some(self.t as f64);
        }
        self.done = finished || self.t >= self.cfg.max_steps;
        let now = self.mean_pairwise();
        self.pairwise_sum += now;
        self.info.pairwise_distance = Some(match self.cfg.pairwise_summary {
            PairwiseSummary::FinalStep => now,
            PairwiseSummary::MeanOverTime => self.pairwise_sum / self.t as f64,
        });
        self.info.add_rewards(&rewards);
        Ok(self.result(rewards))
    }

    fn comm_graph(&self) -> CommMask {
        range_mask(
            &self.drones,
            &vec![true; self.cfg.nagents],
            self.cfg.comm_range,
        )
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn render(&self) -> String {
        let d = self.cfg.dim as i32;
        let mut s = String::new();
        for r in 0..d {
            for c in 0..d {
                let n = self.drones.iter().filter(|&&p| p == (r, c)).count();
                s.push(match n {
                    0 if (r, c) == self.target => 'T',
                    0 => '.',
                    1..=9 => char::from_digit(n as u32, 10).unwrap_or('?'),
                    _ => '+',
                });
            }
            s.push('\n');
        }
        s
    }
}
