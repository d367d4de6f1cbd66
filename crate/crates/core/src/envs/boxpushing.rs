//! Box pushing, easy variant: robots spawn attached to either one large
//! `2x4` box (8 robots) or two small `2x2` boxes (4 robots each). The
//! remaining robots roam free. Boxes have to be pushed into the clearing
//! area, the outer `clearing_width` cells on every side.
//!
//! Attached robots sit on handle cells around their box and talk only to
//! their two ring neighbours on the same box, so the large box yields an
//! 8-cycle and the small boxes two 4-cycles. Free robots form a clique and
//! also link to any robot on an edge-adjacent cell.
//!
//! A box moves only when its whole crew agrees, and is stopped by the grid
//! edge or another box. It slides over free robots, which then have to walk
//! out from under it.
//!
//! Observation per robot: attached flag, then for each cell of the `3x3`
//! window three flags: box, robot, outside the grid. Attached robots see
//! nothing but the flag.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{
    check_actions, in_bounds, Cell, CommMask, EnvConfig, EnvError, Environment, EpisodeInfo,
    StepResult, CARDINAL,
};

pub const STAY: usize = 0;
pub const N_ACTIONS: usize = 9;

/// Plain move in cardinal direction `d` (N, E, S, W).
pub fn plain(d: usize) -> usize {
    1 + d
}

pub fn power(d: usize) -> usize {
    5 + d
}

/// Splits an action into (direction, is_power); `None` for stay.
pub fn decode(a: usize) -> Option<(usize, bool)> {
    match a {
        1..=4 => Some((a - 1, false)),
        5..=8 => Some((a - 5, true)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnMode {
    Large,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSize {
    Small,
    Large,
}

impl BoxSize {
    fn extent(self) -> (i32, i32) {
        match self {
            Self::Small => (2, 2),
            Self::Large => (2, 4),
        }
    }

    /// Handle offsets from the top-left corner, in ring order.
    fn handles(self) -> &'static [Cell] {
        match self {
            Self::Small => &[(-1, 0), (0, 2), (2, 1), (1, -1)],
            Self::Large => &[
                (-1, 1),
                (-1, 2),
                (0, 4),
                (1, 4),
                (2, 2),
                (2, 1),
                (1, -1),
                (0, -1),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushBox {
    pub size: BoxSize,
    pub corner: Cell,
    pub cleared: bool,
}

impl PushBox {
    pub fn cells(&self) -> Vec<Cell> {
        let (h, w) = self.size.extent();
        let (r, c) = self.corner;
        (0..h)
            .flat_map(|i| (0..w).map(move |j| (r + i, c + j)))
            .collect()
    }

    pub fn handle_cells(&self) -> Vec<Cell> {
        let (r, c) = self.corner;
        self.size
            .handles()
            .iter()
            .map(|&(dr, dc)| (r + dr, c + dc))
            .collect()
    }

    fn footprint(&self) -> Vec<Cell> {
        let mut f = self.cells();
        f.extend(self.handle_cells());
        f
    }

    fn shifted(&self, d: usize) -> Self {
        let (dr, dc) = CARDINAL[d];
        Self {
            corner: (self.corner.0 + dr, self.corner.1 + dc),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Robot {
    pub pos: Cell,
    /// (box index, handle index) while attached.
    pub attached: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct BoxPushing {
    cfg: EnvConfig,
    robots: Vec<Robot>,
    boxes: Vec<PushBox>,
    mode: SpawnMode,
    t: usize,
    done: bool,
    info: EpisodeInfo,
}

impl BoxPushing {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            robots: vec![
                Robot {
                    pos: (0, 0),
                    attached: None
                };
                cfg.nagents
            ],
            cfg,
            boxes: Vec::new(),
            mode: SpawnMode::Large,
            t: 0,
            done: false,
            info: EpisodeInfo::default(),
        })
    }

    pub fn robots(&self) -> &[Robot] {
        &self.robots
    }

    pub fn boxes(&self) -> &[PushBox] {
        &self.boxes
    }

    pub fn mode(&self) -> SpawnMode {
        self.mode
    }

    fn w(&self) -> i32 {
        self.cfg.clearing_width as i32
    }

    fn d(&self) -> i32 {
        self.cfg.dim as i32
    }

    /// Moves needed in each direction (N, E, S, W) until the box lies
    /// entirely inside the clearing area.
    pub fn clearing_distances(&self, b: &PushBox) -> [i32; 4] {
        let (h, w) = b.size.extent();
        let (r, c) = b.corner;
        let (cw, d) = (self.w(), self.d());
        [
            (r + h - cw).max(0),
            (d - cw - c).max(0),
            (d - cw - r).max(0),
            (c + w - cw).max(0),
        ]
    }

    pub fn clearing_distance(&self, b: &PushBox) -> i32 {
        self.clearing_distances(b).into_iter().min().unwrap_or(0)
    }

    /// Boxes are blocked by the grid edge and by other boxes with their
    /// crews. Free robots never block a box.
    fn can_shift(&self, k: usize, d: usize) -> bool {
        let moved = self.boxes[k].shifted(d);
        let blocked: Vec<Cell> = self
            .boxes
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != k && !b.cleared)
            .flat_map(|(_, b)| b.footprint())
            .collect();
        moved
            .footprint()
            .iter()
            .all(|&c| in_bounds(c, self.cfg.dim) && !blocked.contains(&c))
    }

    fn attached_to(&self, k: usize) -> Vec<usize> {
        (0..self.robots.len())
            .filter(|&i| matches!(self.robots[i].attached, Some((b, _)) if b == k))
            .collect()
    }

    /// Resets into a chosen spawn mode.
    pub fn reset_with_mode(&mut self, mode: SpawnMode, rng: &mut dyn RngCore) -> StepResult {
        self.mode = mode;
        let (lo, d) = (self.w(), self.d());
        let sizes: &[BoxSize] = match mode {
            SpawnMode::Large => &[BoxSize::Large],
            SpawnMode::Small => &[BoxSize::Small, BoxSize::Small],
        };
        let mut boxes: Vec<PushBox> = Vec::new();
        for &size in sizes {
            let (h, w) = size.extent();
            loop {
                let corner = (
                    rng.random_range(lo..=d - lo - h),
                    rng.random_range(lo..=d - lo - w),
                );
                let b = PushBox {
                    size,
                    corner,
                    cleared: false,
                };
                let taken: Vec<Cell> = boxes.iter().flat_map(PushBox::footprint).collect();
                if b.footprint().iter().all(|c| !taken.contains(c)) {
                    boxes.push(b);
                    break;
                }
            }
        }
        let mut roles: Vec<Robot> = Vec::new();
        for (k, b) in boxes.iter().enumerate() {
            for (h, pos) in b.handle_cells().into_iter().enumerate() {
                roles.push(Robot {
                    pos,
                    attached: Some((k, h)),
                });
            }
        }
        let footprint: Vec<Cell> = boxes.iter().flat_map(PushBox::footprint).collect();
        while roles.len() < self.cfg.nagents {
            let pos = (rng.random_range(0..d), rng.random_range(0..d));
            let far = footprint
                .iter()
                .all(|&f| (f.0 - pos.0).abs() + (f.1 - pos.1).abs() >= 2);
            if far {
                roles.push(Robot {
                    pos,
                    attached: None,
                });
            }
        }
        roles.shuffle(rng);
        self.robots = roles;
        self.boxes = boxes;
        self.t = 0;
        self.done = false;
        self.info = EpisodeInfo {
            ratio_cleared: Some(0.0),
            ..EpisodeInfo::default()
        };
        self.result(vec![0.0; self.cfg.nagents])
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let box_cells: Vec<Cell> = self
            .boxes
            .iter()
            .filter(|b| !b.cleared)
            .flat_map(PushBox::cells)
            .collect();
        (0..self.robots.len())
            .map(|i| {
                let me = self.robots[i];
                let mut o = vec![0.0; 28];
                if me.attached.is_some() {
                    o[0] = 1.0;
                    return o;
                }
                let mut k = 1;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let c = (me.pos.0 + dr, me.pos.1 + dc);
                        let inside = in_bounds(c, self.cfg.dim);
                        let robot = self
                            .robots
                            .iter()
                            .enumerate()
                            .any(|(j, r)| j != i && r.pos == c);
                        o[k] = f64::from(u8::from(box_cells.contains(&c)));
                        o[k + 1] = f64::from(u8::from(robot));
                        o[k + 2] = f64::from(u8::from(!inside));
                        k += 3;
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

impl Environment for BoxPushing {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dim(&self) -> usize {
        28
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> StepResult {
        let mode = if rng.random_bool(0.5) {
            SpawnMode::Large
        } else {
            SpawnMode::Small
        };
        self.reset_with_mode(mode, rng)
    }

    fn step(&mut self, actions: &[usize], _rng: &mut dyn RngCore) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        check_actions(actions, self.cfg.nagents, N_ACTIONS)?;
        let mut rewards = vec![0.0; self.cfg.nagents];
        for k in 0..self.boxes.len() {
            if self.boxes[k].cleared {
                continue;
            }
            let crew = self.attached_to(k);
            let want_power = self.boxes[k].size == BoxSize::Large;
            let first = decode(actions[crew[0]]);
            let agreed = match first {
                Some((d, p))
                    if p == want_power && crew.iter().all(|&i| decode(actions[i]) == first) =>
                {
                    Some(d)
                }
                _ => None,
            };
            let moved = match agreed {
                Some(d) if self.can_shift(k, d) => {
                    let before = self.clearing_distance(&self.boxes[k]);
                    self.boxes[k] = self.boxes[k].shifted(d);
                    let (dr, dc) = CARDINAL[d];
                    for &i in &crew {
                        let p = self.robots[i].pos;
                        self.robots[i].pos = (p.0 + dr, p.1 + dc);
                    }
                    let after = self.clearing_distance(&self.boxes[k]);
                    if after < before {
                        crew.iter()
                            .for_each(|&i| rewards[i] += self.cfg.move_reward);
                    }
                    if after == 0 {
                        self.boxes[k].cleared = true;
                        for &i in &crew {
                            rewards[i] += self.cfg.clear_reward;
                            self.robots[i].attached = None;
                        }
                    }
                    true
                }
                _ => false,
            };
            if !moved {
                for &i in &crew {
                    if actions[i] != STAY {
                        rewards[i] -= self.cfg.exert_penalty;
                    }
                }
            }
        }
        let box_cells: Vec<Cell> = self
            .boxes
            .iter()
            .filter(|b| !b.cleared)
            .flat_map(PushBox::footprint)
            .collect();
        for i in 0..self.robots.len() {
            if self.robots[i].attached.is_some() {
                continue;
            }
            if let Some((d, _)) = decode(actions[i]) {
                let p = self.robots[i].pos;
                let next = (p.0 + CARDINAL[d].0, p.1 + CARDINAL[d].1);
                if in_bounds(next, self.cfg.dim) && !box_cells.contains(&next) {
                    self.robots[i].pos = next;
                }
            }
        }
        self.t += 1;
        let cleared = self.boxes.iter().filter(|b| b.cleared).count();
        let total = self.boxes.len().max(1);
        self.info.ratio_cleared = Some(cleared as f64 / total as f64);
        self.done = cleared == self.boxes.len() || self.t >= self.cfg.max_steps;
        self.info.add_rewards(&rewards);
        Ok(self.result(rewards))
    }

    fn comm_graph(&self) -> CommMask {
        let n = self.robots.len();
        let mut m = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (self.robots[i], self.robots[j]);
                m[i][j] = match (a.attached, b.attached) {
                    (Some((ka, ha)), Some((kb, hb))) => {
                        let ring = self.boxes[ka].size.handles().len();
                        ka == kb && ((ha + 1) % ring == hb || (hb + 1) % ring == ha)
                    }
                    (None, None) => true,
                    _ => (a.pos.0 - b.pos.0).abs() + (a.pos.1 - b.pos.1).abs() == 1,
                };
            }
        }
        m
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn expert_actions(&self) -> Option<Vec<usize>> {
        Some(boxpushing_expert(self))
    }

    fn render(&self) -> String {
        let d = self.d();
        let mut s = String::new();
        for r in 0..d {
            for c in 0..d {
                let robot = self.robots.iter().position(|x| x.pos == (r, c));
                let boxed = self
                    .boxes
                    .iter()
                    .any(|b| !b.cleared && b.cells().contains(&(r, c)));
                let clearing =
                    r < self.w() || c < self.w() || r >= d - self.w() || c >= d - self.w();
                s.push(match (robot, boxed) {
                    (Some(i), _) => char::from_digit(i as u32 % 36, 36).unwrap_or('?'),
                    (None, true) => '#',
                    (None, false) if clearing => ':',
                    _ => '.',
                });
            }
            s.push('\n');
        }
        s
    }
}

/// Scripted expert: every crew pushes its box toward the nearest clearing
/// edge (ties N > E > S > W), power-moving large boxes. Blocked crews fall
/// back to the next-best free direction. Free robots stay.
pub fn boxpushing_expert(env: &BoxPushing) -> Vec<usize> {
    let mut actions = vec![STAY; env.robots.len()];
    for (k, b) in env.boxes.iter().enumerate() {
        if b.cleared || env.clearing_distance(b) == 0 {
            continue;
        }
        let dist = env.clearing_distances(b);
        let mut order = [0usize, 1, 2, 3];
        order.sort_by_key(|&d| dist[d]);
        let Some(d) = order.into_iter().find(|&d| env.can_shift(k, d)) else {
            continue;
        };
        let a = if b.size == BoxSize::Large {
            power(d)
        } else {
            plain(d)
        };
        for i in env.attached_to(k) {
            actions[i] = a;
        }
    }
    actions
}
