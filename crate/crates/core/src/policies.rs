//! Fixed symbolic policies: question answering, exploration and the
//! baseline transfer rules.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Move, Query};
use crate::error::ParseKindError;
use crate::kg::{Direction, EntityId, MemoryItem, Vocab};
use crate::memory::{LongTermStore, ShortTermBuffer, TransferAction};
use crate::seed::Rng;

/// Annotation used to rank answer candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaPolicy {
    /// Most recently added: `time_added`.
    Mra,
    /// Most recently used: `last_accessed`.
    #[default]
    Mru,
    /// Most frequently used: `num_recalled`.
    Mfu,
}

impl QaPolicy {
    pub const ALL: [QaPolicy; 3] = [QaPolicy::Mra, QaPolicy::Mru, QaPolicy::Mfu];

    pub fn key(self, item: &MemoryItem) -> u32 {
        let a = &item.annotations;
        match self {
            QaPolicy::Mra => a.time_added,
            QaPolicy::Mru => a.last_accessed,
            QaPolicy::Mfu => a.num_recalled,
        }
    }
}

impl FromStr for QaPolicy {
    type Err = ParseKindError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mra" => Ok(QaPolicy::Mra),
            "mru" => Ok(QaPolicy::Mru),
            "mfu" => Ok(QaPolicy::Mfu),
            _ => Err(ParseKindError::new("qa policy", s)),
        }
    }
}

/// Symbolic transfer rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransferBaseline {
    /// Keep every short-term item.
    Always,
    /// Keep items whose triple is not yet in long-term memory.
    NovelOnly,
    /// Keep each item independently with probability `p`.
    Random { p: f64 },
}

impl TransferBaseline {
    pub fn name(&self) -> String {
        match self {
            TransferBaseline::Always => "always".into(),
            TransferBaseline::NovelOnly => "novel".into(),
            TransferBaseline::Random { p } => format!("random({p})"),
        }
    }
}

/// Memory seen by the symbolic policies: long-term items in insertion order
/// followed by the short-term buffer. Position in this list is the
/// insertion-order tie-break.
pub fn combined_memory(short: &ShortTermBuffer, long: &LongTermStore) -> Vec<MemoryItem> {
    long.entries()
        .iter()
        .map(|e| e.item)
        .chain(short.items.iter().copied())
        .collect()
}

/// Index of the best `(head, at_location, ?)` candidate in `memory`.
///
/// Ranking is by the policy key, then `time_added`, then position, all
/// descending.
pub fn best_candidate(memory: &[MemoryItem], head: EntityId, policy: QaPolicy) -> Option<usize> {
    memory
        .iter()
        .enumerate()
        .filter(|(_, m)| m.triple.head == head && m.triple.relation == Vocab::AT_LOCATION)
        .max_by_key(|&(i, m)| (policy.key(m), m.annotations.time_added, i))
        .map(|(i, _)| i)
}

/// Answer and the item used to produce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Answer {
    pub entity: EntityId,
    pub recalled: Option<MemoryItem>,
}

/// Answers `query` from long-term memory, plus the short-term buffer when
/// one is given, and records the recall on the chosen item.
///
/// When the chosen item comes from the short-term buffer and the same
/// triple is also stored long-term, the newest long-term copy is touched too.
pub fn answer_query(
    short: Option<&mut ShortTermBuffer>,
    long: &mut LongTermStore,
    query: &Query,
    policy: QaPolicy,
    now: u32,
) -> Answer {
    let memory = match &short {
        Some(short) => combined_memory(short, long),
        None => long.items(),
    };
    let Some(i) = best_candidate(&memory, query.head, policy) else {
        return Answer {
            entity: Vocab::UNKNOWN,
            recalled: None,
        };
    };
    let chosen = memory[i];
    if i < long.len() {
        long.touch_entry(i, now);
    } else if let Some(short) = short {
        short.items[i - long.len()].annotations.touch_on_recall(now);
        long.touch_on_recall(&chosen.triple, now);
    }
    Answer {
        entity: chosen.triple.tail,
        recalled: Some(chosen),
    }
}

/// Room-adjacency map reconstructed from remembered direction triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryMap {
    /// Resolved target of each remembered `(room, direction)`; may be the wall.
    pub links: HashMap<(EntityId, Direction), EntityId>,
    /// Rooms the agent remembers being in, with the latest `last_accessed`.
    pub visited: HashMap<EntityId, u32>,
}

impl MemoryMap {
    /// Conflicting links for one `(room, direction)` are resolved by the
    /// largest `(last_accessed, time_added, position)`.
    pub fn build(memory: &[MemoryItem]) -> Self {
        type Rank = (u32, u32, usize);
        let mut best: HashMap<(EntityId, Direction), (Rank, EntityId)> = HashMap::new();
        let mut visited: HashMap<EntityId, u32> = HashMap::new();
        for (i, m) in memory.iter().enumerate() {
            let t = m.triple;
            let a = m.annotations;
            if let Some(d) = Direction::from_relation(t.relation) {
                let rank = (a.last_accessed, a.time_added, i);
                let slot = best.entry((t.head, d)).or_insert((rank, t.tail));
                if rank > slot.0 {
                    *slot = (rank, t.tail);
                }
            } else if t.head == Vocab::AGENT && t.relation == Vocab::AT_LOCATION {
                let v = visited.entry(t.tail).or_insert(a.last_accessed);
                *v = (*v).max(a.last_accessed);
            }
        }
        Self {
            links: best.into_iter().map(|(k, (_, v))| (k, v)).collect(),
            visited,
        }
    }

    /// Rooms reachable from `room` in one move, in direction order.
    pub fn open_neighbors(&self, room: EntityId) -> impl Iterator<Item = (Direction, EntityId)> + '_ {
        Direction::ALL.into_iter().filter_map(move |d| {
            self.links
                .get(&(room, d))
                .copied()
                .filter(|&n| n != Vocab::WALL)
                .map(|n| (d, n))
        })
    }

    /// Breadth-first distances from `from` over open links.
    pub fn distances(&self, from: EntityId) -> HashMap<EntityId, usize> {
        let mut dist = HashMap::from([(from, 0usize)]);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for (_, v) in self.open_neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Why [`explore_action`] chose its move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExploreReason {
    /// First move towards the nearest unvisited room.
    Frontier { target: EntityId, distance: usize },
    /// Every reachable room is visited: step to the stalest neighbour.
    Revisit { neighbor: EntityId },
    /// No usable map edge from the current room.
    Random,
}

/// Exploration move from memory alone.
///
/// The target is the nearest reachable unvisited room (ties: smallest
/// entity id); the move is the first direction, in `north, south, east,
/// west` order, whose neighbour is one step closer to the target.
pub fn explore_action(
    memory: &[MemoryItem],
    current_room: EntityId,
    rng: &mut Rng,
) -> (Move, ExploreReason) {
    let map = MemoryMap::build(memory);
    let dist = map.distances(current_room);
    let target = dist
        .iter()
        .filter(|&(&room, &d)| d > 0 && !map.visited.contains_key(&room))
        .map(|(&room, &d)| (d, room))
        .min();
    if let Some((distance, target)) = target {
        for (d, n) in map.open_neighbors(current_room) {
            if map.distances(n).get(&target) == Some(&(distance - 1)) {
                return (d.into(), ExploreReason::Frontier { target, distance });
            }
        }
        unreachable!("a shortest path starts at some open neighbour");
    }
    let stalest = map
        .open_neighbors(current_room)
        .enumerate()
        .min_by_key(|&(k, (_, n))| (map.visited.get(&n).copied(), k))
        .map(|(_, dn)| dn);
    if let Some((d, neighbor)) = stalest {
        return (d.into(), ExploreReason::Revisit { neighbor });
    }
    let not_walls: Vec<Direction> = Direction::ALL
        .into_iter()
        .filter(|&d| map.links.get(&(current_room, d)) != Some(&Vocab::WALL))
        .collect();
    let pool: &[Direction] = if not_walls.is_empty() {
        &Direction::ALL
    } else {
        &not_walls
    };
    let d = pool[rng.random_range(0..pool.len())];
    (d.into(), ExploreReason::Random)
}

/// Keep/drop decisions of a symbolic baseline.
pub fn baseline_transfer(
    short: &ShortTermBuffer,
    long: &LongTermStore,
    baseline: TransferBaseline,
    rng: &mut Rng,
) -> Vec<TransferAction> {
    let keep_if = |b: bool| {
        if b {
            TransferAction::Keep
        } else {
            TransferAction::Drop
        }
    };
    match baseline {
        TransferBaseline::Always => vec![TransferAction::Keep; short.len()],
        TransferBaseline::NovelOnly => short
            .items
            .iter()
            .map(|m| keep_if(!long.contains(&m.triple)))
            .collect(),
        TransferBaseline::Random { p } => short
            .items
            .iter()
            .map(|_| keep_if(rng.random_bool(p.clamp(0.0, 1.0))))
            .collect(),
    }
}

/// Rooms mentioned anywhere in memory, for diagnostics.
pub fn remembered_rooms(memory: &[MemoryItem]) -> BTreeSet<EntityId> {
    let mut rooms = BTreeSet::new();
    for m in memory {
        let t = m.triple;
        if Direction::from_relation(t.relation).is_some() {
            rooms.insert(t.head);
            if t.tail != Vocab::WALL {
                rooms.insert(t.tail);
            }
        } else if t.relation == Vocab::AT_LOCATION {
            rooms.insert(t.tail);
        }
    }
    rooms
}
