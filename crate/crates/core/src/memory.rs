//! Two-tier memory: a short-term buffer rebuilt every step and a
//! capacity-limited long-term store.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, ParseKindError, Result};
use crate::kg::{EntityId, ItemRecord, MemoryItem, Triple, Vocab};

/// Per-item transfer decision. The discriminant is the action index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferAction {
    Drop = 0,
    Keep = 1,
}

impl TransferAction {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            TransferAction::Drop
        } else {
            TransferAction::Keep
        }
    }

    pub fn is_keep(self) -> bool {
        self == TransferAction::Keep
    }
}

/// Which item leaves the long-term store when it overflows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    /// Oldest insertion.
    Fifo,
    /// Smallest `last_accessed`.
    #[default]
    Lru,
    /// Smallest `num_recalled`.
    Lfu,
}

impl EvictionPolicy {
    pub const ALL: [EvictionPolicy; 3] =
        [EvictionPolicy::Fifo, EvictionPolicy::Lru, EvictionPolicy::Lfu];

    pub fn as_str(self) -> &'static str {
        match self {
            EvictionPolicy::Fifo => "fifo",
            EvictionPolicy::Lru => "lru",
            EvictionPolicy::Lfu => "lfu",
        }
    }
}

impl FromStr for EvictionPolicy {
    type Err = ParseKindError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(EvictionPolicy::Fifo),
            "lru" => Ok(EvictionPolicy::Lru),
            "lfu" => Ok(EvictionPolicy::Lfu),
            _ => Err(ParseKindError::new("eviction policy", s)),
        }
    }
}

/// How the long-term store treats a kept triple that is already stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    /// Every kept item becomes its own entry with its own annotations.
    #[default]
    MultiCopy,
    /// At most one entry per triple; keeping a stored triple refreshes it.
    Merge,
}

impl DuplicatePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DuplicatePolicy::MultiCopy => "multi_copy",
            DuplicatePolicy::Merge => "merge",
        }
    }
}

impl FromStr for DuplicatePolicy {
    type Err = ParseKindError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "multi_copy" => Ok(DuplicatePolicy::MultiCopy),
            "merge" => Ok(DuplicatePolicy::Merge),
            _ => Err(ParseKindError::new("duplicate policy", s)),
        }
    }
}

/// The current step's observed triples as fresh memory items.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShortTermBuffer {
    pub items: Vec<MemoryItem>,
    pub step: u32,
}

impl ShortTermBuffer {
    /// One fresh item per observation triple, in observation order.
    pub fn refresh(obs: &Observation, now: u32) -> Self {
        Self {
            items: obs
                .triples
                .iter()
                .map(|&t| MemoryItem::fresh(t, now))
                .collect(),
            step: now,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A long-term item together with its insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredItem {
    pub item: MemoryItem,
    pub inserted: u64,
}

/// What one [`LongTermStore::apply_transfer`] call did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferReport {
    pub inserted: usize,
    pub refreshed: usize,
    pub evicted: Vec<MemoryItem>,
}

/// Capacity-limited store of annotated items, kept in insertion order.
///
/// With [`DuplicatePolicy::Merge`] it holds at most one item per triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongTermStore {
    capacity: usize,
    duplicates: DuplicatePolicy,
    entries: Vec<StoredItem>,
    insertion_counter: u64,
}

impl LongTermStore {
    /// A merging store.
    pub fn new(capacity: usize) -> Self {
        Self::with_duplicates(capacity, DuplicatePolicy::Merge)
    }

    pub fn with_duplicates(capacity: usize, duplicates: DuplicatePolicy) -> Self {
        Self {
            capacity,
            duplicates,
            entries: Vec::with_capacity(capacity + 1),
            insertion_counter: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn duplicates(&self) -> DuplicatePolicy {
        self.duplicates
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoredItem] {
        &self.entries
    }

    pub fn items(&self) -> Vec<MemoryItem> {
        self.entries.iter().map(|e| e.item).collect()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.position(triple).is_some()
    }

    /// The newest entry holding `triple`.
    pub fn get(&self, triple: &Triple) -> Option<&StoredItem> {
        self.position(triple).map(|i| &self.entries[i])
    }

    /// Number of entries holding `triple`.
    pub fn copies(&self, triple: &Triple) -> usize {
        self.entries.iter().filter(|e| e.item.triple == *triple).count()
    }

    fn position(&self, triple: &Triple) -> Option<usize> {
        self.entries.iter().rposition(|e| e.item.triple == *triple)
    }

    /// Inserts `item`. A merging store instead refreshes `last_accessed` of
    /// the stored copy. Evicts one item if the insertion overflows.
    pub fn keep(
        &mut self,
        item: MemoryItem,
        eviction: EvictionPolicy,
        now: u32,
        report: &mut TransferReport,
    ) -> Result<()> {
        if let Some(i) = self
            .position(&item.triple)
            .filter(|_| self.duplicates == DuplicatePolicy::Merge) {
            let ann = &mut self.entries[i].item.annotations;
            ann.last_accessed = ann.last_accessed.max(now);
            report.refreshed += 1;
            return Ok(());
        }
        self.entries.push(StoredItem {
            item,
            inserted: self.insertion_counter,
        });
        self.insertion_counter += 1;
        report.inserted += 1;
        if self.entries.len() > self.capacity {
            report.evicted.push(self.evict_one(eviction)?);
        }
        Ok(())
    }

    /// Applies one keep/drop decision per short-term item.
    pub fn apply_transfer(
        &mut self,
        short: &ShortTermBuffer,
        actions: &[TransferAction],
        eviction: EvictionPolicy,
        now: u32,
    ) -> Result<TransferReport> {
        if actions.len() != short.items.len() {
            return Err(Error::usage(format!(
                "{} transfer actions for {} short-term items",
                actions.len(),
                short.items.len()
            )));
        }
        let mut report = TransferReport::default();
        for (item, action) in short.items.iter().zip(actions) {
            if action.is_keep() {
                self.keep(*item, eviction, now, &mut report)?;
            }
        }
        Ok(report)
    }

    /// Index of the item `policy` would evict; ties go to the oldest insertion.
    pub fn eviction_candidate(&self, policy: EvictionPolicy) -> Option<usize> {
        let key = |e: &StoredItem| -> (u64, u64) {
            let a = &e.item.annotations;
            let primary = match policy {
                EvictionPolicy::Fifo => e.inserted,
                EvictionPolicy::Lru => u64::from(a.last_accessed),
                EvictionPolicy::Lfu => u64::from(a.num_recalled),
            };
            (primary, e.inserted)
        };
        self.entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| key(e))
            .map(|(i, _)| i)
    }

    /// Removes and returns the item selected by `policy`.
    pub fn evict_one(&mut self, policy: EvictionPolicy) -> Result<MemoryItem> {
        let i = self
            .eviction_candidate(policy)
            .ok_or_else(|| Error::usage("cannot evict from an empty store"))?;
        Ok(self.entries.remove(i).item)
    }

    /// Records a recall of the newest copy of `triple`. Returns false if
    /// it is not stored.
    pub fn touch_on_recall(&mut self, triple: &Triple, now: u32) -> bool {
        match self.position(triple) {
            Some(i) => {
                self.touch_entry(i, now);
                true
            }
            None => false,
        }
    }

    /// Records a recall of the entry at `index`.
    pub fn touch_entry(&mut self, index: usize, now: u32) {
        self.entries[index].item.annotations.touch_on_recall(now);
    }

    /// One JSON item per line, in insertion order.
    pub fn to_jsonl(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let rec = vocab.item_record(&e.item);
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a store from JSONL lines, in file order.
    pub fn from_jsonl(
        text: &str,
        capacity: usize,
        duplicates: DuplicatePolicy,
        vocab: &Vocab,
    ) -> Result<Self> {
        let mut store = LongTermStore::with_duplicates(capacity, duplicates);
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: "<store>".into(),
                line: n + 1,
                message,
            };
            let rec: ItemRecord =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let item = vocab
                .item_from_record(&rec)
                .map_err(|e| parse_err(e.to_string()))?;
            if duplicates == DuplicatePolicy::Merge && store.contains(&item.triple) {
                return Err(parse_err("duplicate triple".into()));
            }
            store.entries.push(StoredItem {
                item,
                inserted: store.insertion_counter,
            });
            store.insertion_counter += 1;
        }
        if store.len() > capacity {
            return Err(Error::usage(format!(
                "{} items exceed capacity {capacity}",
                store.len()
            )));
        }
        Ok(store)
    }
}

/// Node category used to colour memory graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeCategory {
    Agent,
    Room,
    StaticObject,
    MovingObject,
    Wall,
    Other,
}

impl NodeCategory {
    pub fn color(self) -> &'static str {
        match self {
            NodeCategory::Agent => "#c9a0dc",
            NodeCategory::Room => "#fff59d",
            NodeCategory::StaticObject => "#90caf9",
            NodeCategory::MovingObject => "#a5d6a7",
            NodeCategory::Wall => "#bdbdbd",
            NodeCategory::Other => "#ffffff",
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders memory items as a Graphviz digraph.
///
/// Items sharing a triple are collapsed into one edge whose label carries
/// the multiplicity as `relation (N)`; the tooltip lists each copy's
/// annotations.
pub fn to_dot(
    items: &[MemoryItem],
    vocab: &Vocab,
    category: impl Fn(EntityId) -> NodeCategory,
) -> String {
    let mut groups: Vec<(Triple, Vec<&MemoryItem>)> = Vec::new();
    for item in items {
        match groups.iter_mut().find(|(t, _)| *t == item.triple) {
            Some((_, members)) => members.push(item),
            None => groups.push((item.triple, vec![item])),
        }
    }
    let mut nodes: Vec<EntityId> = groups
        .iter()
        .flat_map(|(t, _)| [t.head, t.tail])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();

    let mut out = String::from("digraph memory {\n  rankdir=LR;\n  node [style=filled, shape=ellipse];\n");
    for n in nodes {
        let label = dot_escape(vocab.entity_label(n));
        let _ = writeln!(
            out,
            "  \"{label}\" [label=\"{label}\", fillcolor=\"{}\"];",
            category(n).color()
        );
    }
    for (t, members) in groups {
        let rel = vocab.relation_label(t.relation);
        let label = if members.len() > 1 {
            format!("{rel} ({})", members.len())
        } else {
            rel.to_owned()
        };
        let tooltip = members
            .iter()
            .map(|m| {
                let a = m.annotations;
                format!(
                    "time_added={} last_accessed={} num_recalled={}",
                    a.time_added, a.last_accessed, a.num_recalled
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [label=\"{}\", tooltip=\"{}\"];",
            dot_escape(vocab.entity_label(t.head)),
            dot_escape(vocab.entity_label(t.tail)),
            dot_escape(&label),
            dot_escape(&tooltip)
        );
    }
    out.push_str("}\n");
    out
}
