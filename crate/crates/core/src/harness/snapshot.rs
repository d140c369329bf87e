use std::path::Path;
use std::sync::Arc;

use super::config::ExperimentConfig;
use super::run::TraceRecord;
use crate::env::{QuerySplit, World};
use crate::kg::{EntityId, MemoryItem, Vocab};
use crate::memory::{to_dot, NodeCategory};
use crate::rl::{self, Controller, LearnedPolicy};
use crate::seed;
use crate::{Error, Result};

/// Memory graph and hidden-state picture of one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub dot: String,
    pub birdseye: String,
}

pub fn node_category(world: &World, e: EntityId) -> NodeCategory {
    if e == Vocab::AGENT {
        NodeCategory::Agent
    } else if e == Vocab::WALL {
        NodeCategory::Wall
    } else if world.is_room(e) {
        NodeCategory::Room
    } else if world.is_static_object(e) {
        NodeCategory::StaticObject
    } else if world.is_moving_object(e) {
        NodeCategory::MovingObject
    } else {
        NodeCategory::Other
    }
}

/// Renders the memory (short-term and long-term items) of a traced step
/// as DOT, and its hidden state as a bird's-eye grid.
pub fn render(world: &World, rec: &TraceRecord) -> Result<Snapshot> {
    let vocab = world.vocab();
    let items = rec
        .long
        .iter()
        .chain(&rec.short)
        .map(|r| vocab.item_from_record(r))
        .collect::<Result<Vec<MemoryItem>>>()?;
    let state = world.state_from_record(&rec.hidden)?;
    Ok(Snapshot {
        dot: to_dot(&items, vocab, |e| node_category(world, e)),
        birdseye: world.render_birdseye(&state),
    })
}

/// Picks one step out of a JSONL trace. `seed` may be omitted when the
/// trace holds a single seed.
pub fn find_step(
    text: &str,
    path: &Path,
    seed: Option<u64>,
    episode: usize,
    step: u32,
) -> Result<TraceRecord> {
    let mut steps_seen = 0usize;
    let mut seeds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seeds.contains(&rec.seed) {
            seeds.push(rec.seed);
        }
        if seed.is_some_and(|s| s != rec.seed) || rec.episode != episode {
            continue;
        }
        steps_seen += 1;
        if rec.step == step {
            if seed.is_none() && seeds.len() > 1 {
                break;
            }
            return Ok(rec);
        }
    }
    if seed.is_none() && seeds.len() > 1 {
        return Err(Error::usage(format!("{} holds several seeds; pick one", path.display())));
    }
    Err(Error::usage(format!(
        "step {step} of episode {episode} is out of range: the trace has {steps_seen} steps for it"
    )))
}

/// Replays one evaluation episode and returns the trace of `step`.
pub fn capture(
    cfg: &ExperimentConfig,
    policy: Option<&LearnedPolicy>,
    seed: u64,
    split: QuerySplit,
    episode: usize,
    step: u32,
) -> Result<TraceRecord> {
    let world = Arc::new(World::new(cfg.world.with_split(split))?);
    if step >= world.horizon() {
        return Err(Error::usage(format!(
            "step {step} is out of range: episodes have {} steps",
            world.horizon()
        )));
    }
    let controller = match (cfg.policies.transfer.baseline(), policy) {
        (Some(b), _) => Controller::Baseline(b),
        (None, Some(p)) => Controller::Learned(p),
        (None, None) => return Err(Error::usage("learned transfer needs a checkpoint")),
    };
    let mut rng = seed::stream(seed, &[seed::tag("eval")]);
    let mut found = None;
    rl::run_episode(
        world.clone(),
        rl::episode_seed(seed, split, episode),
        cfg.policies.agent(),
        controller,
        0.0,
        &mut rng,
        episode,
        |t| {
            if t.state.step == step {
                found = Some(TraceRecord::new(seed, t, &world));
            }
        },
    )?;
    found.ok_or_else(|| Error::usage(format!("step {step} was not reached")))
}
