//! Observation augmentations that break symmetry between agents.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("{agents} agents exceed the one-hot width {max_agents}")]
    TooManyAgents { agents: usize, max_agents: usize },
    #[error("RNI ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("agent {agent} has {got} observation components, expected {expected}")]
    Ragged {
        agent: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Augmentation {
    #[default]
    None,
    /// One-hot agent index of width `max_agents`.
    UniqueId { max_agents: usize },
    /// Uniform `[-1, 1]` noise making up `ratio` of the augmented observation.
    Rni { ratio: f64 },
}

impl Augmentation {
    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            Self::Rni { ratio } if !(ratio > 0.0 && ratio < 1.0) => {
                Err(AugmentError::BadRatio(ratio))
            }
            _ => Ok(()),
        }
    }

    /// Number of appended components for a base observation of width `d`.
    pub fn extra_dim(&self, d: usize) -> usize {
        match *self {
            Self::None => 0,
            Self::UniqueId { max_agents } => max_agents,
            Self::Rni { ratio } => (d as f64 * ratio / (1.0 - ratio)).round() as usize,
        }
    }

    pub fn output_dim(&self, d: usize) -> usize {
        d + self.extra_dim(d)
    }

    /// Short label used in reports: `none`, `uid`, or `rni0.25`.
    pub fn label(&self) -> String {
        match *self {
            Self::None => "none".into(),
            Self::UniqueId { .. } => "uid".into(),
            Self::Rni { ratio } => format!("rni{ratio}"),
        }
    }
}

fn check_shape(obs: &[Vec<f64>]) -> Result<usize, AugmentError> {
    let d = obs.first().map_or(0, Vec::len);
    for (agent, o) in obs.iter().enumerate() {
        if o.len() != d {
            return Err(AugmentError::Ragged {
                agent,
                expected: d,
                got: o.len(),
            });
        }
    }
    Ok(d)
}

/// Appends the configured augmentation to every agent's observation.
/// RNI entries are sampled fresh on each call.
pub fn augment<R: Rng + ?Sized>(
    obs: &[Vec<f64>],
    cfg: &Augmentation,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, AugmentError> {
    cfg.validate()?;
    let d = check_shape(obs)?;
    match *cfg {
        Augmentation::None => Ok(obs.to_vec()),
        Augmentation::UniqueId { max_agents } => {
            if obs.len() > max_agents {
                return Err(AugmentError::TooManyAgents {
                    agents: obs.len(),
                    max_agents,
                });
            }
            Ok(obs
                .iter()
                .enumerate()
                .map(|(i, o)| {
                    let mut v = o.clone();
                    v.extend((0..max_agents).map(|k| if k == i { 1.0 } else { 0.0 }));
                    v
                })
                .collect())
        }
        Augmentation::Rni { .. } => {
            let k = cfg.extra_dim(d);
            Ok(obs
                .iter()
                .map(|o| {
                    let mut v = o.clone();
                    v.extend((0..k).map(|_| rng.random_range(-1.0..=1.0)));
                    v
                })
                .collect())
        }
    }
}

/// Stateful wrapper that can hold RNI noise fixed for a whole episode.
#[derive(Debug, Clone)]
pub struct Augmenter {
    cfg: Augmentation,
    persistent: bool,
    cached: Option<Vec<Vec<f64>>>,
}

impl Augmenter {
    pub fn new(cfg: Augmentation, persistent_noise: bool) -> Result<Self, AugmentError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            persistent: persistent_noise,
            cached: None,
        })
    }

    pub fn config(&self) -> &Augmentation {
        &self.cfg
    }

    pub fn begin_episode(&mut self) {
        self.cached = None;
    }

    pub fn apply<R: Rng + ?Sized>(
        &mut self,
        obs: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>, AugmentError> {
        if !(self.persistent && matches!(self.cfg, Augmentation::Rni { .. })) {
            return augment(obs, &self.cfg, rng);
        }
        let d = check_shape(obs)?;
        let k = self.cfg.extra_dim(d);
        let noise = self.cached.get_or_insert_with(|| {
            (0..obs.len())
                .map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect()
        });
        Ok(obs
            .iter()
            .zip(noise.iter())
            .map(|(o, n)| o.iter().chain(n).copied().collect())
            .collect())
    }
}
