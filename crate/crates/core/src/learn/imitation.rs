//! Interleaving scripted-expert experiences into the agents' stream.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Agent,
    Expert,
}

/// Cycles through `normal` agent experiences followed by `expert` expert
/// experiences. With imitation disabled every slot is an agent slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationSchedule {
    pub normal: usize,
    pub expert: usize,
    pub enabled: bool,
    position: usize,
    agent_count: u64,
    expert_count: u64,
}

impl ImitationSchedule {
    pub fn new(normal: usize, expert: usize, enabled: bool) -> Self {
        Self {
            normal,
            expert,
            enabled: enabled && expert > 0,
            position: 0,
            agent_count: 0,
            expert_count: 0,
        }
    }

    /// Source of the next experience to insert.
    pub fn peek(&self) -> Source {
        if self.enabled && self.position >= self.normal {
            Source::Expert
        } else {
            Source::Agent
        }
    }

    /// Records one insertion from the source [`Self::peek`] returned.
    pub fn advance(&mut self) -> Source {
        let s = self.peek();
        match s {
            Source::Agent => self.agent_count += 1,
            Source::Expert => self.expert_count += 1,
        }
        if self.enabled {
            self.position = (self.position + 1) % (self.normal + self.expert);
        }
        s
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.agent_count, self.expert_count)
    }
}
