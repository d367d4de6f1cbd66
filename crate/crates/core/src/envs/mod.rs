//! Grid environments with environment-masked communication.
//!
//! Every environment exposes per-agent observation vectors of a fixed width,
//! discrete actions, a boolean communication mask (`mask[i][j]`: agent `i`
//! may send to `j`), and a running [`EpisodeInfo`].

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::AttributedGraph;

pub mod boxpushing;
pub mod drone;
pub mod predator;
pub mod trace;
pub mod traffic;

pub use boxpushing::{boxpushing_expert, BoxPushing};
pub use drone::DroneScatter;
pub use predator::PredatorPrey;
pub use traffic::TrafficJunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent}: action {action} is not in 0..{n_actions}")]
    IllegalAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("episode already finished; call reset")]
    Finished,
    #[error("unknown environment key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    TrafficJunction,
    PredatorPrey,
    DroneScatter,
    BoxPushing,
}

impl EnvName {
    pub const ALL: [EnvName; 4] = [
        Self::TrafficJunction,
        Self::PredatorPrey,
        Self::DroneScatter,
        Self::BoxPushing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrafficJunction => "traffic_junction",
            Self::PredatorPrey => "predator_prey",
            Self::DroneScatter => "drone_scatter",
            Self::BoxPushing => "box_pushing",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| EnvError::BadValue {
                key: "env_name".into(),
                value: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Manhattan,
    Euclidean,
}

impl DistanceMetric {
    pub fn between(self, a: Cell, b: Cell) -> f64 {
        let (dr, dc) = (f64::from(a.0 - b.0), f64::from(a.1 - b.1));
        match self {
            Self::Manhattan => dr.abs() + dc.abs(),
            Self::Euclidean => dr.hypot(dc),
        }
    }
}

/// How the pairwise-distance metric summarizes an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseSummary {
    #[default]
    FinalStep,
    MeanOverTime,
}

/// Grid cell as (row, column).
pub type Cell = (i32, i32);

pub(crate) const CARDINAL: [Cell; 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub env_name: EnvName,
    pub dim: usize,
    pub nagents: usize,
    pub vision: usize,
    pub max_steps: usize,
    pub comm_range: usize,
    pub difficulty: String,
    pub add_rate: f64,
    pub find_range: f64,
    pub min_target_distance: f64,
    pub mode: String,
    pub distance_metric: DistanceMetric,
    pub pairwise_summary: PairwiseSummary,
    /// Drone episodes end only once every drone has found the target.
    pub find_all: bool,
    pub time_penalty: f64,
    pub collision_penalty: f64,
    pub step_penalty: f64,
    pub prey_reward: f64,
    pub spread_coeff: f64,
    pub find_reward: f64,
    pub move_reward: f64,
    pub clear_reward: f64,
    pub exert_penalty: f64,
    pub clearing_width: usize,
}

impl EnvConfig {
    pub fn defaults(env_name: EnvName) -> Self {
        let base = Self {
            env_name,
            dim: 6,
            nagents: 5,
            vision: 1,
            max_steps: 20,
            comm_range: 3,
            difficulty: "easy".into(),
            add_rate: 0.3,
            find_range: 3.0,
            min_target_distance: 3.0,
            mode: "cooperative".into(),
            distance_metric: DistanceMetric::Manhattan,
            pairwise_summary: PairwiseSummary::FinalStep,
            find_all: false,
            time_penalty: 0.01,
            collision_penalty: 10.0,
            step_penalty: 0.05,
            prey_reward: 0.25,
            spread_coeff: 0.1,
            find_reward: 100.0,
            move_reward: 10.0,
            clear_reward: 100.0,
            exert_penalty: 1.0,
            clearing_width: 3,
        };
        match env_name {
            EnvName::TrafficJunction => base,
            EnvName::PredatorPrey => Self {
                dim: 10,
                max_steps: 40,
                comm_range: 5,
                ..base
            },
            EnvName::DroneScatter => Self {
                dim: 20,
                nagents: 4,
                comm_range: 10,
                ..base
            },
            EnvName::BoxPushing => Self {
                dim: 12,
                nagents: 10,
                comm_range: 0,
                ..base
            },
        }
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// that do not belong to the environment section.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, EnvError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, EnvError> {
            value.parse().map_err(|_| EnvError::BadValue {
                key: key.into(),
                value: value.into(),
            })
        }
        match key {
            "env_name" => *self = Self::defaults(value.parse()?),
            "dim" => self.dim = num(key, value)?,
            "nagents" => self.nagents = num(key, value)?,
            "vision" => self.vision = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "comm_range" => self.comm_range = num(key, value)?,
            "difficulty" => self.difficulty = value.into(),
            "add_rate" | "add_rate_min" | "add_rate_max" => self.add_rate = num(key, value)?,
            "find_range" => self.find_range = num(key, value)?,
            "min_target_distance" => self.min_target_distance = num(key, value)?,
            "mode" => self.mode = value.into(),
            "distance_metric" => {
                self.distance_metric = match value {
                    "manhattan" => DistanceMetric::Manhattan,
                    "euclidean" => DistanceMetric::Euclidean,
                    _ => {
                        return Err(EnvError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "pairwise_summary" => {
                self.pairwise_summary = match value {
                    "final_step" => PairwiseSummary::FinalStep,
                    "mean_over_time" => PairwiseSummary::MeanOverTime,
                    _ => {
                        return Err(EnvError::BadValue {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "find_all" => self.find_all = num(key, value)?,
            "time_penalty" => self.time_penalty = num(key, value)?,
            "collision_penalty" => self.collision_penalty = num(key, value)?,
            "step_penalty" => self.step_penalty = num(key, value)?,
            "prey_reward" => self.prey_reward = num(key, value)?,
            "spread_coeff" => self.spread_coeff = num(key, value)?,
            "find_reward" => self.find_reward = num(key, value)?,
            "move_reward" => self.move_reward = num(key, value)?,
            "clear_reward" => self.clear_reward = num(key, value)?,
            "exert_penalty" => self.exert_penalty = num(key, value)?,
            "clearing_width" => self.clearing_width = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.dim == 0 || self.dim > 1024 {
            return bad(format!("dim must be in 1..=1024, got {}", self.dim));
        }
        if self.nagents == 0 || self.nagents > 64 {
            return bad(format!("nagents must be in 1..=64, got {}", self.nagents));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if self.vision > 8 {
            return bad(format!("vision {} is too large", self.vision));
        }
        if self.difficulty != "easy" {
            return bad(format!(
                "only the easy difficulty is implemented, got `{}`",
                self.difficulty
            ));
        }
        let reals = [
            self.add_rate,
            self.find_range,
            self.min_target_distance,
            self.time_penalty,
            self.collision_penalty,
            self.step_penalty,
            self.prey_reward,
            self.spread_coeff,
            self.find_reward,
            self.move_reward,
            self.clear_reward,
            self.exert_penalty,
        ];
        if reals.iter().any(|x| !x.is_finite()) {
            return bad("reward and range parameters must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.add_rate) {
            return bad(format!(
                "add_rate must lie in [0, 1], got {}",
                self.add_rate
            ));
        }
        match self.env_name {
            EnvName::TrafficJunction if self.dim < 3 => {
                bad("traffic junction needs dim >= 3".into())
            }
            EnvName::PredatorPrey if self.mode != "cooperative" => bad(format!(
                "only the cooperative mode is implemented, got `{}`",
                self.mode
            )),
            EnvName::DroneScatter => {
                let far = f64::from(self.dim as u32 - 1) * std::f64::consts::SQRT_2;
                if self.min_target_distance > far {
                    bad("min_target_distance cannot be met on this field".into())
                } else {
                    Ok(())
                }
            }
            EnvName::BoxPushing => {
                if self.nagents != 10 {
                    bad("box pushing spawns exactly 10 robots".into())
                } else if self.dim < 2 * self.clearing_width + 4 {
                    bad("box pushing needs a central area of at least 4x4".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Success,
    RatioCleared,
    PairwiseDistance,
    StepsTaken,
    RewardTotal,
    RewardPerAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Max,
    Min,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Self::Success,
        Self::RatioCleared,
        Self::PairwiseDistance,
        Self::StepsTaken,
        Self::RewardTotal,
        Self::RewardPerAgent,
    ];

    pub fn polarity(self) -> Polarity {
        match self {
            Self::StepsTaken => Polarity::Min,
            _ => Polarity::Max,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::RatioCleared => "ratio_cleared",
            Self::PairwiseDistance => "pairwise_distance",
            Self::StepsTaken => "steps_taken",
            Self::RewardTotal => "reward_total",
            Self::RewardPerAgent => "reward_per_agent",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Declared metric set per environment.
pub fn metric_set(env: EnvName) -> &'static [Metric] {
    use Metric::*;
    match env {
        EnvName::TrafficJunction | EnvName::PredatorPrey => &[Success, RewardTotal, RewardPerAgent],
        EnvName::DroneScatter => &[StepsTaken, PairwiseDistance, RewardTotal, RewardPerAgent],
        EnvName::BoxPushing => &[RatioCleared, RewardTotal, RewardPerAgent],
    }
}

/// Running per-episode metrics; fields an environment does not use stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub success: Option<f64>,
    pub steps_taken: Option<f64>,
    pub pairwise_distance: Option<f64>,
    pub ratio_cleared: Option<f64>,
    /// Reward summed over agents and steps.
    pub reward_total: f64,
    pub reward_per_agent: f64,
}

impl EpisodeInfo {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Success => self.success,
            Metric::RatioCleared => self.ratio_cleared,
            Metric::PairwiseDistance => self.pairwise_distance,
            Metric::StepsTaken => self.steps_taken,
            Metric::RewardTotal => Some(self.reward_total),
            Metric::RewardPerAgent => Some(self.reward_per_agent),
        }
    }

    pub(crate) fn add_rewards(&mut self, rewards: &[f64]) {
        let s: f64 = rewards.iter().sum();
        self.reward_total += s;
        self.reward_per_agent += s / rewards.len().max(1) as f64;
    }
}

/// Boolean adjacency; `m[i][j]` means agent `i` may send to agent `j`.
pub type CommMask = Vec<Vec<bool>>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub comm_mask: CommMask,
    /// Agents currently in play. Inactive agents observe zeros and have no edges.
    pub alive: Vec<bool>,
    pub info: EpisodeInfo,
}

pub trait Environment {
    fn config(&self) -> &EnvConfig;
    fn n_agents(&self) -> usize {
        self.config().nagents
    }
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> StepResult;
    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<StepResult, EnvError>;
    fn comm_graph(&self) -> CommMask;
    fn timestep(&self) -> usize;
    /// Scripted actions when the environment provides an expert.
    fn expert_actions(&self) -> Option<Vec<usize>> {
        None
    }
    /// Plain-text picture of the current state.
    fn render(&self) -> String;
}

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>, EnvError> {
    cfg.validate()?;
    Ok(match cfg.env_name {
        EnvName::TrafficJunction => Box::new(TrafficJunction::new(cfg.clone())?),
        EnvName::PredatorPrey => Box::new(PredatorPrey::new(cfg.clone())?),
        EnvName::DroneScatter => Box::new(DroneScatter::new(cfg.clone())?),
        EnvName::BoxPushing => Box::new(BoxPushing::new(cfg.clone())?),
    })
}

pub(crate) fn check_actions(
    actions: &[usize],
    n_agents: usize,
    n_actions: usize,
) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::ActionCount {
            expected: n_agents,
            got: actions.len(),
        });
    }
    match actions.iter().position(|&a| a >= n_actions) {
        Some(agent) => Err(EnvError::IllegalAction {
            agent,
            action: actions[agent],
            n_actions,
        }),
        None => Ok(()),
    }
}

pub fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// Chebyshev-range mask over the alive agents.
pub fn range_mask(positions: &[Cell], alive: &[bool], range: usize) -> CommMask {
    let n = positions.len();
    let r = i32::try_from(range).unwrap_or(i32::MAX);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    i != j && alive[i] && alive[j] && chebyshev(positions[i], positions[j]) <= r
                })
                .collect()
        })
        .collect()
}

/// Structure-only graph with an edge `i -> j` for every allowed send.
pub fn mask_to_graph(mask: &CommMask) -> AttributedGraph {
    let n = mask.len();
    let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| mask[i][j]).map(move |j| (i, j)));
    AttributedGraph::unlabeled(n, edges).expect("masks have no self-loops")
}

pub(crate) fn in_bounds(c: Cell, dim: usize) -> bool {
    let d = dim as i32;
    (0..d).contains(&c.0) && (0..d).contains(&c.1)
}

pub(crate) fn one_hot(k: usize, width: usize) -> impl Iterator<Item = f64> {
    (0..width).map(move |i| if i == k { 1.0 } else { 0.0 })
}

/// Declared metrics read from the final step of one episode trace.
pub fn episode_metrics(env: EnvName, trace: &[StepResult]) -> Result<Vec<(Metric, f64)>, EnvError> {
    let last = trace
        .last()
        .ok_or_else(|| EnvError::Config("empty episode trace".into()))?;
    Ok(metric_set(env)
        .iter()
        .filter_map(|&m| last.info.get(m).map(|v| (m, v)))
        .collect())
}
