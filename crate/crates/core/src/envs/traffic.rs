//! Easy traffic junction: two one-way roads crossing in the middle of a
//! `dim x dim` grid. The horizontal road runs west to east along row
//! `dim / 2`, the vertical road north to south along column `dim / 2`.
//!
//! Observation per car: last action one-hot (2), route one-hot (2), own
//! location one-hot (`dim²`), then occupancy of the `(2v+1)²` window around
//! the car by other cars. Inactive slots observe zeros.

use rand::{Rng, RngCore};

use super::{
    check_actions, in_bounds, one_hot, range_mask, Cell, CommMask, EnvConfig, EnvError,
    Environment, EpisodeInfo, StepResult,
};

pub const GAS: usize = 0;
pub const BRAKE: usize = 1;
const ROUTES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Car {
    route: usize,
    progress: usize,
    /// Steps spent in the system.
    tau: usize,
    last_action: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrafficJunction {
    cfg: EnvConfig,
    cars: Vec<Option<Car>>,
    t: usize,
    collisions: usize,
    done: bool,
    info: EpisodeInfo,
}

impl TrafficJunction {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            cars: vec![None; cfg.nagents],
            cfg,
            t: 0,
            collisions: 0,
            done: false,
            info: EpisodeInfo::default(),
        })
    }

    fn mid(&self) -> i32 {
        (self.cfg.dim / 2) as i32
    }

    pub fn route_cell(&self, route: usize, progress: usize) -> Cell {
        let p = progress as i32;
        match route {
            0 => (self.mid(), p),
            _ => (p, self.mid()),
        }
    }

    /// Positions of active cars; inactive slots map to `None`.
    pub fn positions(&self) -> Vec<Option<Cell>> {
        self.cars
            .iter()
            .map(|c| c.map(|c| self.route_cell(c.route, c.progress)))
            .collect()
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    /// Places a car at a route entry, as if it had just arrived.
    pub fn insert_car(&mut self, slot: usize, route: usize, progress: usize) {
        self.cars[slot] = Some(Car {
            route: route % ROUTES,
            progress: progress.min(self.cfg.dim - 1),
            tau: 0,
            last_action: None,
        });
    }

    pub fn clear_cars(&mut self) {
        self.cars.iter_mut().for_each(|c| *c = None);
    }

    /// A slot emptied during this step is not reused before the next one,
    /// so a fresh car never inherits a departing car's slot mid-step.
    fn spawn(&mut self, reusable: &[bool], rng: &mut dyn RngCore) {
        for route in 0..ROUTES {
            let roll: f64 = rng.random();
            if roll >= self.cfg.add_rate {
                continue;
            }
            let entry = self.route_cell(route, 0);
            if self.positions().contains(&Some(entry)) {
                continue;
            }
            if let Some(slot) =
                (0..self.cars.len()).find(|&i| self.cars[i].is_none() && reusable[i])
            {
                self.insert_car(slot, route, 0);
            }
        }
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let dim = self.cfg.dim;
        let v = self.cfg.vision as i32;
        let pos = self.positions();
        (0..self.cars.len())
            .map(|i| {
                let Some(car) = self.cars[i] else {
                    return vec![0.0; self.obs_dim()];
                };
                let me = pos[i].expect("active car has a position");
                let mut o = Vec::with_capacity(self.obs_dim());
                match car.last_action {
                    Some(a) => o.extend(one_hot(a, 2)),
                    None => o.extend([0.0, 0.0]),
                }
                o.extend(one_hot(car.route, ROUTES));
                o.extend(one_hot(me.0 as usize * dim + me.1 as usize, dim * dim));
                for dr in -v..=v {
                    for dc in -v..=v {
                        let cell = (me.0 + dr, me.1 + dc);
                        let others = pos
                            .iter()
                            .enumerate()
                            .filter(|&(j, p)| j != i && *p == Some(cell))
                            .count();
                        o.push(others as f64);
                    }
                }
                o
            })
            .collect()
    }

    fn alive(&self) -> Vec<bool> {
        self.cars.iter().map(Option::is_some).collect()
    }

    fn result(&self, rewards: Vec<f64>) -> StepResult {
        StepResult {
            observations: self.observe(),
            rewards,
            done: self.done,
            comm_mask: self.comm_graph(),
            alive: self.alive(),
            info: self.info.clone(),
        }
    }
}

impl Environment for TrafficJunction {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.cfg.vision + 1;
        2 + ROUTES + self.cfg.dim * self.cfg.dim + w * w
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> StepResult {
        self.clear_cars();
        self.t = 0;
        self.collisions = 0;
        self.done = false;
        self.info = EpisodeInfo {
            success: Some(1.0),
            ..EpisodeInfo::default()
        };
        self.spawn(&vec![true; self.cfg.nagents], rng);
        self.result(vec![0.0; self.cfg.nagents])
    }

    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        check_actions(actions, self.cfg.nagents, 2)?;
        let mut rewards = vec![0.0; self.cfg.nagents];
        let dim = self.cfg.dim;
        let was_free: Vec<bool> = self.cars.iter().map(Option::is_none).collect();
        for (i, slot) in self.cars.iter_mut().enumerate() {
            let Some(car) = slot else { continue };
            car.last_action = Some(actions[i]);
            car.tau += 1;
            rewards[i] -= self.cfg.time_penalty * car.tau as f64;
            if actions[i] == GAS {
                car.progress += 1;
                if car.progress >= dim {
                    *slot = None;
                }
            }
        }
        let pos = self.positions();
        let mut counted: Vec<Cell> = Vec::new();
        for i in 0..pos.len() {
            let Some(p) = pos[i] else { continue };
            debug_assert!(in_bounds(p, dim));
            let crowd = pos.iter().filter(|q| **q == Some(p)).count();
            if crowd > 1 {
                rewards[i] -= self.cfg.collision_penalty;
                if !counted.contains(&p) {
                    counted.push(p);
                    self.collisions += 1;
                }
            }
        }
        self.t += 1;
        self.done = self.t >= self.cfg.max_steps;
        self.info.add_rewards(&rewards);
        self.info.success = Some(if self.collisions == 0 { 1.0 } else { 0.0 });
        if !self.done {
            self.spawn(&was_free, rng);
        }
        Ok(self.result(rewards))
    }

    fn comm_graph(&self) -> CommMask {
        let pos: Vec<Cell> = self
            .positions()
            .iter()
            .map(|p| p.unwrap_or((-1, -1)))
            .collect();
        range_mask(&pos, &self.alive(), self.cfg.comm_range)
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn render(&self) -> String {
        let dim = self.cfg.dim as i32;
        let pos = self.positions();
        let mut s = String::new();
        for r in 0..dim {
            for c in 0..dim {
                let here: Vec<usize> = (0..pos.len()).filter(|&i| pos[i] == Some((r, c))).collect();
                let ch = match here.as_slice() {
                    [] if r == self.mid() || c == self.mid() => '.',
                    [] => '#',
                    [i] => char::from_digit(*i as u32 % 36, 36).unwrap_or('?'),
                    _ => 'X',
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvName;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> TrafficJunction {
        TrafficJunction::new(EnvConfig::defaults(EnvName::TrafficJunction)).unwrap()
    }

    #[test]
    fn obs_layout() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = e.reset(&mut rng);
        assert_eq!(e.obs_dim(), 2 + 2 + 36 + 9);
        assert!(r.observations.iter().all(|o| o.len() == 49));
        for (o, a) in r.observations.iter().zip(&r.alive) {
            assert_eq!(o.iter().any(|x| *x != 0.0), *a);
        }
    }

    #[test]
    fn crossing_cars_collide() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        e.reset(&mut rng);
        e.cfg.add_rate = 0.0;
        e.clear_cars();
        e.insert_car(0, 0, 2);
        e.insert_car(1, 1, 2);
        let r = e.step(&[GAS, GAS, GAS, GAS, GAS], &mut rng).unwrap();
        assert_eq!(e.positions()[0], Some((3, 3)));
        assert_eq!(e.collisions(), 1);
        assert_eq!(r.info.success, Some(0.0));
        assert!((r.rewards[0] - (-10.0 - 0.01)).abs() < 1e-12);
        assert_eq!(r.rewards[2], 0.0);
    }

    #[test]
    fn braking_avoids_collision() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        e.reset(&mut rng);
        e.cfg.add_rate = 0.0;
        e.clear_cars();
        e.insert_car(0, 0, 2);
        e.insert_car(1, 1, 2);
        let r = e.step(&[GAS, BRAKE, GAS, GAS, GAS], &mut rng).unwrap();
        assert_eq!(e.collisions(), 0);
        assert_eq!(r.info.success, Some(1.0));
        assert!(r.comm_mask[0][1] && r.comm_mask[1][0]);
    }

    #[test]
    fn cars_exit_and_free_slot() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.reset(&mut rng);
        e.cfg.add_rate = 0.0;
        e.clear_cars();
        e.insert_car(3, 0, 5);
        let r = e.step(&[GAS; 5], &mut rng).unwrap();
        assert!(!r.alive[3]);
        assert!(r.observations[3].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn emptied_slot_waits_one_step() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.reset(&mut rng);
        e.cfg.add_rate = 1.0;
        e.clear_cars();
        for slot in 1..5 {
            e.insert_car(slot, 1, 5);
        }
        e.insert_car(0, 0, 5);
        let r = e
            .step(&[GAS, BRAKE, BRAKE, BRAKE, BRAKE], &mut rng)
            .unwrap();
        assert!(!r.alive[0]);
        let r = e
            .step(&[GAS, BRAKE, BRAKE, BRAKE, BRAKE], &mut rng)
            .unwrap();
        assert!(r.alive[0]);
        assert_eq!(e.positions()[0], Some((3, 0)));
    }

    #[test]
    fn episode_ends_at_max_steps() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        e.reset(&mut rng);
        let mut steps = 0;
        loop {
            let r = e.step(&[GAS; 5], &mut rng).unwrap();
            steps += 1;
            assert!(r.comm_mask.iter().enumerate().all(|(i, row)| !row[i]));
            if r.done {
                break;
            }
        }
        assert_eq!(steps, 20);
        assert_eq!(e.step(&[GAS; 5], &mut rng), Err(EnvError::Finished));
    }

    #[test]
    fn illegal_actions() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        e.reset(&mut rng);
        assert!(matches!(
            e.step(&[0, 2, 0, 0, 0], &mut rng),
            Err(EnvError::IllegalAction { agent: 1, .. })
        ));
        assert!(matches!(
            e.step(&[0], &mut rng),
            Err(EnvError::ActionCount { .. })
        ));
    }

    #[test]
    fn slots_never_exceed_cap_and_entries_stay_distinct() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            e.reset(&mut rng);
            loop {
                let a: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
                let r = e.step(&a, &mut rng).unwrap();
                assert!(e.positions().iter().flatten().all(|p| in_bounds(*p, 6)));
                if r.done {
                    break;
                }
            }
        }
    }
}
