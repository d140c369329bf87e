//! Symbolic vocabulary, triples, temporal annotations and the graph view
//! handed to the encoders.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of an entity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

/// Dense index of a relation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective label <-> dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `label`, assigning the next free id on first use.
    pub fn intern(&mut self, label: &str) -> Result<u32> {
        if label.is_empty() {
            return Err(Error::usage("cannot intern an empty label"));
        }
        if let Some(&id) = self.index.get(label) {
            return Ok(id);
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        Ok(id)
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// The four compass relations linking rooms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    /// Fixed iteration order used wherever directions are enumerated.
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }

    pub fn relation(self) -> RelationId {
        match self {
            Direction::North => Vocab::NORTH,
            Direction::South => Vocab::SOUTH,
            Direction::East => Vocab::EAST,
            Direction::West => Vocab::WEST,
        }
    }

    pub fn from_relation(rel: RelationId) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.relation() == rel)
    }

    /// Row/column offset on the grid; row 0 is the northern edge.
    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }
}

/// Entity and relation interners for one run.
///
/// The core symbols are interned first so their ids are fixed constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entities: Interner,
    relations: Interner,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub const AGENT: EntityId = EntityId(0);
    pub const WALL: EntityId = EntityId(1);
    /// Answer given when memory holds no candidate; never a query truth.
    pub const UNKNOWN: EntityId = EntityId(2);

    pub const AT_LOCATION: RelationId = RelationId(0);
    pub const NORTH: RelationId = RelationId(1);
    pub const SOUTH: RelationId = RelationId(2);
    pub const EAST: RelationId = RelationId(3);
    pub const WEST: RelationId = RelationId(4);

    pub fn new() -> Self {
        let mut entities = Interner::new();
        let mut relations = Interner::new();
        for label in ["agent", "wall", "unknown"] {
            entities.intern(label).expect("non-empty");
        }
        for label in ["at_location", "north", "south", "east", "west"] {
            relations.intern(label).expect("non-empty");
        }
        Self {
            entities,
            relations,
        }
    }

    /// Rebuilds a vocabulary from label lists, checking the core symbols.
    pub fn from_labels(entities: &[String], relations: &[String]) -> Result<Self> {
        let mut vocab = Vocab::new();
        for (i, label) in entities.iter().enumerate() {
            let id = vocab.entity(label)?;
            if id.index() != i {
                return Err(Error::Vocabulary(format!(
                    "entity `{label}` expected at index {i}, found {}",
                    id.0
                )));
            }
        }
        for (i, label) in relations.iter().enumerate() {
            let id = vocab.relation(label)?;
            if id.index() != i {
                return Err(Error::Vocabulary(format!(
                    "relation `{label}` expected at index {i}, found {}",
                    id.0
                )));
            }
        }
        Ok(vocab)
    }

    pub fn entity(&mut self, label: &str) -> Result<EntityId> {
        self.entities.intern(label).map(EntityId)
    }

    pub fn relation(&mut self, label: &str) -> Result<RelationId> {
        self.relations.intern(label).map(RelationId)
    }

    pub fn entity_id(&self, label: &str) -> Result<EntityId> {
        self.entities
            .get(label)
            .map(EntityId)
            .ok_or_else(|| Error::Vocabulary(format!("unknown entity `{label}`")))
    }

    pub fn relation_id(&self, label: &str) -> Result<RelationId> {
        self.relations
            .get(label)
            .map(RelationId)
            .ok_or_else(|| Error::Vocabulary(format!("unknown relation `{label}`")))
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).unwrap_or("<invalid>")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).unwrap_or("<invalid>")
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_labels(&self) -> &[String] {
        self.entities.labels()
    }

    pub fn relation_labels(&self) -> &[String] {
        self.relations.labels()
    }

    pub fn contains_entity(&self, id: EntityId) -> bool {
        id.index() < self.entities.len()
    }

    pub fn contains_relation(&self, id: RelationId) -> bool {
        id.index() < self.relations.len()
    }

    pub fn triple_record(&self, t: &Triple) -> TripleRecord {
        TripleRecord {
            h: self.entity_label(t.head).to_owned(),
            r: self.relation_label(t.relation).to_owned(),
            t: self.entity_label(t.tail).to_owned(),
        }
    }

    pub fn triple_from_record(&self, rec: &TripleRecord) -> Result<Triple> {
        Ok(Triple::new(
            self.entity_id(&rec.h)?,
            self.relation_id(&rec.r)?,
            self.entity_id(&rec.t)?,
        ))
    }

    pub fn item_record(&self, item: &MemoryItem) -> ItemRecord {
        let TripleRecord { h, r, t } = self.triple_record(&item.triple);
        ItemRecord {
            h,
            r,
            t,
            ann: item.annotations,
        }
    }

    pub fn item_from_record(&self, rec: &ItemRecord) -> Result<MemoryItem> {
        Ok(MemoryItem {
            triple: Triple::new(
                self.entity_id(&rec.h)?,
                self.relation_id(&rec.r)?,
                self.entity_id(&rec.t)?,
            ),
            annotations: rec.ann,
        })
    }

    pub fn display<'a>(&'a self, t: &'a Triple) -> TripleDisplay<'a> {
        TripleDisplay { vocab: self, t }
    }
}

/// `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

pub struct TripleDisplay<'a> {
    vocab: &'a Vocab,
    t: &'a Triple,
}

impl fmt::Display for TripleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.vocab.entity_label(self.t.head),
            self.vocab.relation_label(self.t.relation),
            self.vocab.entity_label(self.t.tail)
        )
    }
}

/// Step-indexed bookkeeping attached to every memory item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalAnnotations {
    pub time_added: u32,
    pub last_accessed: u32,
    pub num_recalled: u32,
}

impl TemporalAnnotations {
    pub fn fresh(now: u32) -> Self {
        Self {
            time_added: now,
            last_accessed: now,
            num_recalled: 0,
        }
    }

    /// Marks the item as used to answer a query at `now`.
    pub fn touch_on_recall(&mut self, now: u32) {
        self.num_recalled += 1;
        self.last_accessed = self.last_accessed.max(now);
    }
}

/// A triple plus its temporal annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryItem {
    pub triple: Triple,
    pub annotations: TemporalAnnotations,
}

impl MemoryItem {
    pub fn fresh(triple: Triple, now: u32) -> Self {
        Self {
            triple,
            annotations: TemporalAnnotations::fresh(now),
        }
    }
}

/// Label form of a triple: `{"h": .., "r": .., "t": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripleRecord {
    pub h: String,
    pub r: String,
    pub t: String,
}

/// Label form of a memory item, the JSON wire format for triples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub h: String,
    pub r: String,
    pub t: String,
    pub ann: TemporalAnnotations,
}

/// Cap applied to `num_recalled` before normalization.
pub const RECALL_CAP: u32 = 10;

/// Which memory tier an edge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ShortTerm,
    LongTerm,
}

/// Which memory tiers feed the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    StmOnly,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub triple: Triple,
    /// `(age, recency, recall)`, each in `[0, 1]`.
    pub features: [f64; 3],
    pub source: Source,
}

/// Memory state converted to a graph: nodes, typed edges and per-edge
/// annotation features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphView {
    /// Sorted, deduplicated edge endpoints.
    pub nodes: Vec<EntityId>,
    pub edges: Vec<GraphEdge>,
}

impl GraphView {
    /// Position of `entity` in `nodes`.
    pub fn node_index(&self, entity: EntityId) -> Option<usize> {
        self.nodes.binary_search(&entity).ok()
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.edges.iter().filter(|e| e.source == source).count()
    }
}

/// Normalized `(age, recency, recall)` features of an annotation bundle.
pub fn annotation_features(ann: &TemporalAnnotations, now: u32, horizon: u32) -> [f64; 3] {
    let h = f64::from(horizon.max(1));
    let age = f64::from(now.saturating_sub(ann.time_added)) / h;
    let recency = f64::from(now.saturating_sub(ann.last_accessed)) / h;
    let recall = f64::from(ann.num_recalled.min(RECALL_CAP)) / f64::from(RECALL_CAP);
    [age.min(1.0), recency.min(1.0), recall]
}

/// Builds the encoder input graph from the two memory tiers.
///
/// Short-term edges come first, in buffer order, followed by long-term
/// edges when `mode` is [`ContextMode::Full`].
pub fn build_graph_view(
    short: &[MemoryItem],
    long: &[MemoryItem],
    mode: ContextMode,
    now: u32,
    horizon: u32,
) -> GraphView {
    let long_part: &[MemoryItem] = match mode {
        ContextMode::StmOnly => &[],
        ContextMode::Full => long,
    };
    let edges: Vec<GraphEdge> = short
        .iter()
        .map(|m| (m, Source::ShortTerm))
        .chain(long_part.iter().map(|m| (m, Source::LongTerm)))
        .map(|(m, source)| GraphEdge {
            triple: m.triple,
            features: annotation_features(&m.annotations, now, horizon),
            source,
        })
        .collect();
    let mut nodes: Vec<EntityId> = edges
        .iter()
        .flat_map(|e| [e.triple.head, e.triple.tail])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    GraphView { nodes, edges }
}
