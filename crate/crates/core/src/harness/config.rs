//! Flat `key = value` run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::envs::{EnvConfig, EnvName, Metric};
use crate::gdn::{Augmentation, LayerKind, ModelConfig};
use crate::learn::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelStyle {
    Commnet,
    Ic3net,
    Tarmac,
    TIc3net,
    Dgn,
    Random,
}

impl ModelStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Commnet => "commnet",
            Self::Ic3net => "ic3net",
            Self::Tarmac => "tarmac",
            Self::TIc3net => "t-ic3net",
            Self::Dgn => "dgn",
            Self::Random => "random",
        }
    }

    pub fn is_a2c(self) -> bool {
        !matches!(self, Self::Dgn | Self::Random)
    }

    pub fn layer_kind(self) -> Option<LayerKind> {
        match self {
            Self::Commnet => Some(LayerKind::MeanAgg),
            Self::Ic3net => Some(LayerKind::GatedMean),
            Self::Tarmac | Self::TIc3net | Self::Dgn => Some(LayerKind::Attention),
            Self::Random => None,
        }
    }
}

impl fmt::Display for ModelStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelStyle {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "commnet" => Self::Commnet,
            "ic3net" => Self::Ic3net,
            "tarmac" => Self::Tarmac,
            "t-ic3net" | "tarmac_ic3net" | "tarmac-ic3net" => Self::TIc3net,
            "dgn" | "dgn-style" => Self::Dgn,
            "random" => Self::Random,
            _ => return Err(HarnessError::BadValue("model".into(), s.into())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub model: ModelStyle,
    /// 0 for none, 1 for unique ids, anything in between an RNI ratio.
    pub rni: f64,
    pub seed: u64,
    pub num_epochs: usize,
    pub eval_episodes: usize,
    pub greedy_a2c_eval: bool,
    pub imitation: bool,
    pub comm_passes: usize,
    pub hid_size: usize,
    pub qk_hid_size: usize,
    pub value_hid_size: usize,
    pub recurrent: bool,
    /// Training stops after the first evaluation that reaches this value.
    pub stop: Option<(Metric, f64)>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::defaults(EnvName::TrafficJunction),
            train: TrainConfig::default(),
            model: ModelStyle::Commnet,
            rni: 0.0,
            seed: 1,
            num_epochs: 2000,
            eval_episodes: 100,
            greedy_a2c_eval: false,
            imitation: false,
            comm_passes: 4,
            hid_size: 128,
            qk_hid_size: 16,
            value_hid_size: 32,
            recurrent: true,
            stop: None,
            out_dir: None,
        }
    }
}

/// Splits a config file into `(key, value)` pairs. Blank lines and text
/// after `#` are ignored.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HarnessError::Parse {
                line: no + 1,
                msg: "expected `key = value`".into(),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(HarnessError::Parse {
                line: no + 1,
                msg: format!("bad key `{k}`"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String), HarnessError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(HarnessError::Parse {
            line: 0,
            msg: format!("override `{s}` is not key=value"),
        }),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::BadValue(key.into(), value.into()))
}

fn boolean(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "1" | "true" | "True" => Ok(true),
        "0" | "false" | "False" => Ok(false),
        _ => Err(HarnessError::BadValue(key.into(), value.into())),
    }
}

/// Keys that only accept the one value this implementation supports.
const FIXED: &[(&str, &str)] = &[
    ("nprocesses", "1"),
    ("curr_start", "0"),
    ("curr_end", "0"),
    ("nenemies", "1"),
    ("moving_prey", "false"),
    ("no_stay", "false"),
    ("normalize_rewards", "false"),
    ("share_weights", "true"),
    ("env_graph", "true"),
    ("vocab_type", "bool"),
];

fn fixed_matches(value: &str, want: &str) -> bool {
    value.eq_ignore_ascii_case(want)
        || matches!((boolean("", value), boolean("", want)), (Ok(a), Ok(b)) if a == b)
}

impl RunConfig {
    /// Builds a config from pairs; `env_name` is applied first so later keys
    /// override that environment's defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k == "env_name") {
            cfg.set("env_name", v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "env_name") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut pairs = parse_pairs(text)?;
        for o in overrides {
            pairs.push(parse_override(o)?);
        }
        Self::from_pairs(&pairs)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        if self.env.set(key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "model" => self.model = value.parse()?,
            "rni" => self.rni = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "num_epochs" => self.num_epochs = num(key, value)?,
            "eval_episodes" | "num_evals" => self.eval_episodes = num(key, value)?,
            "greedy_a2c_eval" => self.greedy_a2c_eval = boolean(key, value)?,
            "imitation" => self.imitation = boolean(key, value)?,
            "comm_passes" => self.comm_passes = num(key, value)?,
            "hid_size" => self.hid_size = num(key, value)?,
            "qk_hid_size" => self.qk_hid_size = num(key, value)?,
            "value_hid_size" => self.value_hid_size = num(key, value)?,
            "recurrent" => self.recurrent = boolean(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "stop" => {
                self.stop = match value.split_once(">=").or_else(|| value.split_once("<=")) {
                    Some((m, v)) => Some((
                        m.trim()
                            .parse()
                            .map_err(|_| HarnessError::BadValue(key.into(), value.into()))?,
                        num(key, v.trim())?,
                    )),
                    None if value == "none" => None,
                    None => return Err(HarnessError::BadValue(key.into(), value.into())),
                }
            }
            "lrate" => t.lrate = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "value_coeff" => t.value_coeff = num(key, value)?,
            "entr" | "entropy_coeff" => t.entropy_coeff = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epoch_size" => t.epoch_size = num(key, value)?,
            "dgn_batch_size" => t.dgn_batch_size = num(key, value)?,
            "update_interval" => t.update_interval = num(key, value)?,
            "train_steps" => t.train_steps = num(key, value)?,
            "epsilon_start" => t.epsilon_start = num(key, value)?,
            "epsilon_min" => t.epsilon_min = num(key, value)?,
            "epsilon_step" => t.epsilon_step = num(key, value)?,
            "buffer_capacity" => t.buffer_capacity = num(key, value)?,
            "clip_norm" => t.clip_norm = num(key, value)?,
            "detach_gap" => t.detach_gap = num(key, value)?,
            "num_imitation_experiences" => t.num_imitation_experiences = num(key, value)?,
            "num_normal_experiences" => t.num_normal_experiences = num(key, value)?,
            "optimizer" => {
                t.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "rmsprop" => OptimizerKind::Rmsprop,
                    _ => return Err(HarnessError::BadValue(key.into(), value.into())),
                }
            }
            _ => match FIXED.iter().find(|(k, _)| *k == key) {
                Some((_, want)) if fixed_matches(value, want) => {}
                Some(_) => return Err(HarnessError::Unsupported(key.into(), value.into())),
                None => return Err(HarnessError::UnknownKey(key.into())),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        self.train.validate()?;
        self.augmentation().validate()?;
        let bad = |m: &str| Err(HarnessError::Invalid(m.into()));
        if self.rni < 0.0 || self.rni > 1.0 || !self.rni.is_finite() {
            return bad("rni must lie in [0, 1]");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        if self.hid_size == 0 || self.qk_hid_size == 0 || self.value_hid_size == 0 {
            return bad("layer sizes must be positive");
        }
        if self.model != ModelStyle::Random && self.comm_passes == 0 && self.recurrent {
            return bad("recurrent models need at least one comm pass");
        }
        if self.imitation && self.env.env_name != EnvName::BoxPushing {
            return bad("imitation needs an environment with a scripted expert");
        }
        if let Some((m, v)) = self.stop {
            if !crate::envs::metric_set(self.env.env_name).contains(&m) || !v.is_finite() {
                return bad("stop metric must be one of the environment's metrics");
            }
        }
        Ok(())
    }

    pub fn augmentation(&self) -> Augmentation {
        if self.rni == 0.0 {
            Augmentation::None
        } else if self.rni == 1.0 {
            Augmentation::UniqueId {
                max_agents: self.env.nagents,
            }
        } else {
            Augmentation::Rni { ratio: self.rni }
        }
    }

    /// Architecture for this run's preset. `None` for the random policy.
    pub fn model_config(&self, obs_dim: usize, n_actions: usize) -> Option<ModelConfig> {
        let kind = self.model.layer_kind()?;
        let mut c = ModelConfig::new(self.augmentation().output_dim(obs_dim), n_actions, kind);
        c.hidden = self.hid_size;
        c.layers = vec![kind; self.comm_passes];
        c.key_dim = self.qk_hid_size;
        c.value_dim = self.value_hid_size;
        c.gated_attention = self.model == ModelStyle::TIc3net;
        c.value_head = self.model.is_a2c();
        c.recurrent = self.model.is_a2c() && self.recurrent;
        Some(c)
    }

    /// Directory name used when no `out_dir` is configured.
    pub fn run_name(&self) -> String {
        format!(
            "{}_{}_{}_seed{}",
            self.env.env_name,
            self.model,
            self.augmentation().label(),
            self.seed
        )
    }
}
