//! Cooperative predator-prey with one stationary prey.
//!
//! Observation per predator: own row and column scaled to `[0, 1]`, then for
//! every cell of the `(2v+1)²` window three flags: prey, another predator,
//! outside the grid.

use rand::{Rng, RngCore};

use super::{
    check_actions, in_bounds, range_mask, Cell, CommMask, EnvConfig, EnvError, Environment,
    EpisodeInfo, StepResult, CARDINAL,
};

pub const STAY: usize = 4;

#[derive(Debug, Clone)]
pub struct PredatorPrey {
    cfg: EnvConfig,
    predators: Vec<Cell>,
    prey: Cell,
    t: usize,
    done: bool,
    info: EpisodeInfo,
}

impl PredatorPrey {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            predators: vec![(0, 0); cfg.nagents],
            cfg,
            prey: (0, 0),
            t: 0,
            done: false,
            info: EpisodeInfo::default(),
        })
    }

    pub fn predators(&self) -> &[Cell] {
        &self.predators
    }

    pub fn prey(&self) -> Cell {
        self.prey
    }

    /// Overrides the layout; used by tests and replays.
    pub fn place(&mut self, predators: Vec<Cell>, prey: Cell) {
        assert_eq!(predators.len(), self.cfg.nagents);
        assert!(predators
            .iter()
            .chain([&prey])
            .all(|&c| in_bounds(c, self.cfg.dim)));
        self.predators = predators;
        self.prey = prey;
    }

    fn on_prey(&self) -> usize {
        self.predators.iter().filter(|&&p| p == self.prey).count()
    }

    fn random_cell(&self, rng: &mut dyn RngCore) -> Cell {
        let d = self.cfg.dim as i32;
        (rng.random_range(0..d), rng.random_range(0..d))
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let v = self.cfg.vision as i32;
        let scale = (self.cfg.dim.max(2) - 1) as f64;
        (0..self.predators.len())
            .map(|i| {
                let me = self.predators[i];
                let mut o = vec![f64::from(me.0) / scale, f64::from(me.1) / scale];
                for dr in -v..=v {
                    for dc in -v..=v {
                        let c = (me.0 + dr, me.1 + dc);
                        let inside = in_bounds(c, self.cfg.dim);
                        let others = self
                            .predators
                            .iter()
                            .enumerate()
                            .any(|(j, &p)| j != i && p == c);
                        o.extend([
                            f64::from(u8::from(inside && c == self.prey)),
                            f64::from(u8::from(others)),
                            f64::from(u8::from(!inside)),
                        ]);
                    }
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

impl Environment for PredatorPrey {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.cfg.vision + 1;
        2 + 3 * w * w
    }

    fn n_actions(&self) -> usize {
        5
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> StepResult {
        self.prey = self.random_cell(rng);
        self.predators = (0..self.cfg.nagents)
            .map(|_| self.random_cell(rng))
            .collect();
        self.t = 0;
        self.done = false;
        self.info = EpisodeInfo {
            success: Some(if self.on_prey() == self.cfg.nagents {
                1.0
            } else {
                0.0
            }),
            ..EpisodeInfo::default()
        };
        self.result(vec![0.0; self.cfg.nagents])
    }

    fn step(&mut self, actions: &[usize], _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        check_actions(actions, self.cfg.nagents, 5)?;
        for (p, &a) in self.predators.iter_mut().zip(actions) {
            // predators that reached the prey stay on it
            if *p == self.prey || a == STAY {
                continue;
            }
            let next = (p.0 + CARDINAL[a].0, p.1 + CARDINAL[a].1);
            if in_bounds(next, self.cfg.dim) {
                *p = next;
            }
        }
        let k = self.on_prey();
        let r = -self.cfg.step_penalty + self.cfg.prey_reward * k as f64;
        let rewards = vec![r; self.cfg.nagents];
        self.t += 1;
        let caught = k == self.cfg.nagents;
        self.done = caught || self.t >= self.cfg.max_steps;
        self.info.add_rewards(&rewards);
        self.info.success = Some(if caught { 1.0 } else { 0.0 });
        Ok(self.result(rewards))
    }

    fn comm_graph(&self) -> CommMask {
        range_mask(
            &self.predators,
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
                let n = self.predators.iter().filter(|&&p| p == (r, c)).count();
                s.push(match (n, (r, c) == self.prey) {
                    (0, true) => 'P',
                    (_, true) => '*',
                    (0, false) => '.',
                    (1, false) => 'x',
                    _ => 'X',
                });
            }
            s.push('\n');
        }
        s
    }
}
