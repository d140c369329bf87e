//! The agent loop shared by training, evaluation and the symbolic
//! baselines.
//!
//! Within one step the order is fixed: the short-term buffer holds the
//! current observation, transfer decisions are applied to long-term memory,
//! the pending query is answered (from long-term memory by default), the
//! exploration policy picks a move from both tiers, and the environment
//! advances. The reward of that step is the answer's correctness.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Episode, Move, Query, World};
use crate::error::Result;
use crate::kg::{EntityId, MemoryItem, Vocab};
use crate::memory::{DuplicatePolicy, EvictionPolicy, LongTermStore, ShortTermBuffer, TransferAction, TransferReport};
use crate::policies::{self, QaPolicy, TransferBaseline};
use crate::seed::{self, Rng};

/// Which memory the question-answering policy reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaMemory {
    /// Long-term memory after this step's transfer.
    #[default]
    LongTerm,
    /// Long-term memory and the short-term buffer.
    Combined,
}

/// The fixed non-transfer configuration of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default)]
    pub qa: QaPolicy,
    #[serde(default)]
    pub eviction: EvictionPolicy,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub duplicates: DuplicatePolicy,
    #[serde(default)]
    pub qa_memory: QaMemory,
}

fn default_capacity() -> usize {
    128
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            qa: QaPolicy::Mru,
            eviction: EvictionPolicy::Lru,
            capacity: default_capacity(),
            duplicates: DuplicatePolicy::MultiCopy,
            qa_memory: QaMemory::LongTerm,
        }
    }
}

/// Snapshot of `M_t`: the short-term buffer and the long-term items, both
/// in their stored order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryState {
    pub step: u32,
    pub short: Vec<MemoryItem>,
    pub long: Vec<MemoryItem>,
}

/// Everything that happened in one agent step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub query: Query,
    pub answer: EntityId,
    pub reward: f64,
    pub mv: Move,
    pub transfer: TransferReport,
    pub done: bool,
}

/// An episode together with the agent's memory and policy streams.
#[derive(Debug, Clone)]
pub struct AgentEpisode {
    env: Episode,
    config: AgentConfig,
    short: ShortTermBuffer,
    long: LongTermStore,
    explore_rng: Rng,
    transfer_rng: Rng,
    score: f64,
}

impl AgentEpisode {
    pub fn new(world: Arc<World>, episode_seed: u64, config: AgentConfig) -> Self {
        let env = Episode::reset(world, episode_seed);
        let short = ShortTermBuffer::refresh(env.observation(), 0);
        Self {
            env,
            config,
            short,
            long: LongTermStore::with_duplicates(config.capacity, config.duplicates),
            explore_rng: seed::stream(episode_seed, &[seed::tag("explore")]),
            transfer_rng: seed::stream(episode_seed, &[seed::tag("transfer")]),
            score: 0.0,
        }
    }

    pub fn env(&self) -> &Episode {
        &self.env
    }

    pub fn world(&self) -> &Arc<World> {
        self.env.world()
    }

    pub fn vocab(&self) -> &Vocab {
        self.env.world().vocab()
    }

    pub fn short(&self) -> &ShortTermBuffer {
        &self.short
    }

    pub fn long(&self) -> &LongTermStore {
        &self.long
    }

    pub fn now(&self) -> u32 {
        self.env.state().step
    }

    pub fn is_done(&self) -> bool {
        self.env.is_done()
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn memory_state(&self) -> MemoryState {
        MemoryState {
            step: self.now(),
            short: self.short.items.clone(),
            long: self.long.items(),
        }
    }

    /// Decisions of a symbolic transfer rule for the current buffer.
    pub fn baseline_actions(&mut self, baseline: TransferBaseline) -> Vec<TransferAction> {
        policies::baseline_transfer(&self.short, &self.long, baseline, &mut self.transfer_rng)
    }

    /// Applies `actions`, answers, explores and advances the environment.
    pub fn step(&mut self, actions: &[TransferAction]) -> Result<StepRecord> {
        let now = self.now();
        let transfer =
            self.long
                .apply_transfer(&self.short, actions, self.config.eviction, now)?;
        let query = self.env.query();
        let short = match self.config.qa_memory {
            QaMemory::LongTerm => None,
            QaMemory::Combined => Some(&mut self.short),
        };
        let answer = policies::answer_query(
            short,
            &mut self.long,
            &query,
            self.config.qa,
            now,
        );
        let memory = policies::combined_memory(&self.short, &self.long);
        let current_room = self.world().room_entity(self.env.state().agent_room);
        let (mv, _) = policies::explore_action(&memory, current_room, &mut self.explore_rng);
        let outcome = self.env.step(mv, answer.entity)?;
        self.score += outcome.reward;
        self.short = ShortTermBuffer::refresh(&outcome.observation, now + 1);
        Ok(StepRecord {
            step: now,
            query,
            answer: answer.entity,
            reward: outcome.reward,
            mv,
            transfer,
            done: outcome.done,
        })
    }
}

/// Runs one full episode under a symbolic transfer rule; returns the score.
pub fn run_baseline_episode(
    world: Arc<World>,
    episode_seed: u64,
    config: AgentConfig,
    baseline: TransferBaseline,
) -> Result<f64> {
    let mut ep = AgentEpisode::new(world, episode_seed, config);
    while !ep.is_done() {
        let actions = ep.baseline_actions(baseline);
        ep.step(&actions)?;
    }
    Ok(ep.score())
}
