//! Partially observable room-grid world.
//!
//! The hidden state is a square grid of named rooms, inner walls that open
//! and close on fixed periodic schedules, static objects, objects that
//! wander on lazy random walks, and the agent. Each step the agent sees
//! only the triples induced by its current room and is asked where one
//! object currently is. Reward is 1 for a correct answer and 0 otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, Triple, TripleRecord, Vocab};
use crate::seed::{self, Rng};

/// Maximum number of objects that may share a room.
pub const ROOM_SLOTS: usize = 4;

const ROOM_NAMES: &[&str] = &[
    "playroom", "studio", "living", "kitchen", "bedroom", "office", "library", "bathroom",
    "garage", "hall", "attic", "cellar", "pantry", "den", "nursery", "foyer", "gym", "laundry",
    "lounge", "parlor", "porch", "study", "closet", "workshop", "gallery", "sunroom",
    "conservatory", "ballroom", "chapel", "vault", "armory", "observatory", "greenhouse",
    "theater", "billiard", "dining", "mudroom", "loft", "solarium", "scullery",
];

const STATIC_NAMES: &[&str] = &[
    "table", "chair", "desk", "bed", "sofa", "lamp", "shelf", "piano", "fridge", "stove",
    "wardrobe", "mirror", "clock", "rug", "bench", "cabinet", "couch", "dresser", "sink",
    "bathtub", "painting", "plant", "television", "radio", "stool", "chest", "vase", "toilet",
];

const MOVING_NAMES: &[&str] = &[
    "john", "william", "mary", "alice", "bob", "carol", "dave", "eve", "frank", "grace",
    "heidi", "ivan", "judy", "mallory", "oscar", "peggy", "rupert", "sybil", "trent", "victor",
    "walter", "zoe", "cat", "dog", "parrot", "hamster", "robot", "ball",
];

/// Which query schedule an episode uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySplit {
    Train,
    Test,
}

impl QuerySplit {
    pub fn label(self) -> &'static str {
        match self {
            QuerySplit::Train => "train",
            QuerySplit::Test => "test",
        }
    }
}

fn default_split() -> QuerySplit {
    QuerySplit::Train
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub grid_length: u32,
    pub num_static_objects: u32,
    pub num_moving_objects: u32,
    pub num_inner_walls: u32,
    pub horizon: u32,
    pub world_seed: u64,
    #[serde(default = "default_split")]
    pub query_split: QuerySplit,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grid_length: 7,
            num_static_objects: 18,
            num_moving_objects: 18,
            num_inner_walls: 36,
            horizon: 100,
            world_seed: 0,
            query_split: QuerySplit::Train,
        }
    }
}

impl WorldConfig {
    /// The reduced world used for desk-scale experiments: 5x5 grid, 8 static
    /// and 8 moving objects, 12 walls.
    pub fn reduced() -> Self {
        Self {
            grid_length: 5,
            num_static_objects: 8,
            num_moving_objects: 8,
            num_inner_walls: 12,
            ..Self::default()
        }
    }

    pub fn num_rooms(&self) -> usize {
        (self.grid_length as usize).pow(2)
    }

    pub fn num_objects(&self) -> usize {
        (self.num_static_objects + self.num_moving_objects) as usize
    }

    pub fn interior_edges(&self) -> usize {
        let n = self.grid_length as usize;
        2 * n * n.saturating_sub(1)
    }

    pub fn with_split(&self, split: QuerySplit) -> Self {
        Self {
            query_split: split,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_length < 2 {
            return Err(Error::config("world.grid_length", "must be at least 2"));
        }
        if self.horizon == 0 {
            return Err(Error::config("world.horizon", "must be positive"));
        }
        if self.num_objects() > self.num_rooms() * ROOM_SLOTS {
            return Err(Error::config(
                "world.num_moving_objects",
                format!(
                    "{} objects do not fit in {} rooms with {ROOM_SLOTS} slots each",
                    self.num_objects(),
                    self.num_rooms()
                ),
            ));
        }
        if self.num_inner_walls as usize > self.interior_edges() {
            return Err(Error::config(
                "world.num_inner_walls",
                format!(
                    "{} walls exceed the {} interior edges of the grid",
                    self.num_inner_walls,
                    self.interior_edges()
                ),
            ));
        }
        Ok(())
    }
}

/// A periodically closing inner wall between two adjacent rooms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WallSchedule {
    /// Western or northern room of the pair.
    pub a: usize,
    /// Eastern or southern room of the pair.
    pub b: usize,
    pub period: u32,
    pub closed_span: u32,
    pub phase: u32,
}

impl WallSchedule {
    /// Closed iff `(t + phase) mod period < closed_span`.
    pub fn is_closed(&self, t: u32) -> bool {
        (t + self.phase) % self.period < self.closed_span
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Passage {
    Boundary,
    Open,
    Wall(usize),
}

/// Static layout of a world: a pure function of the world seed.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    vocab: Vocab,
    rooms: Vec<EntityId>,
    objects: Vec<EntityId>,
    num_static: usize,
    start_rooms: Vec<usize>,
    walls: Vec<WallSchedule>,
    passages: Vec<[Passage; 4]>,
}

fn pick_names(pool: &[&str], prefix: &str, n: usize, rng: &mut Rng) -> Vec<String> {
    let mut names: Vec<String> = pool.iter().map(|s| s.to_string()).collect();
    names.shuffle(rng);
    names.truncate(n);
    let overflow = n.saturating_sub(names.len());
    let start = names.len();
    names.extend((0..overflow).map(|i| format!("{prefix}_{}", start + i)));
    names
}

fn dir_slot(d: Direction) -> usize {
    match d {
        Direction::North => 0,
        Direction::South => 1,
        Direction::East => 2,
        Direction::West => 3,
    }
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid_length as usize;
        let num_rooms = config.num_rooms();
        let mut rng = seed::stream(config.world_seed, &[seed::tag("layout")]);

        let mut vocab = Vocab::new();
        let room_names = pick_names(ROOM_NAMES, "room", num_rooms, &mut rng);
        let static_names = pick_names(
            STATIC_NAMES,
            "static",
            config.num_static_objects as usize,
            &mut rng,
        );
        let moving_names = pick_names(
            MOVING_NAMES,
            "moving",
            config.num_moving_objects as usize,
            &mut rng,
        );
        let rooms = room_names
            .iter()
            .map(|s| vocab.entity(s))
            .collect::<Result<Vec<_>>>()?;
        let objects = static_names
            .iter()
            .chain(&moving_names)
            .map(|s| vocab.entity(s))
            .collect::<Result<Vec<_>>>()?;

        // Interior edges in a fixed order, then a seeded choice of walls.
        let mut edges = Vec::with_capacity(config.interior_edges());
        for r in 0..n {
            for c in 0..n {
                let cell = r * n + c;
                if c + 1 < n {
                    edges.push((cell, cell + 1, Direction::East));
                }
                if r + 1 < n {
                    edges.push((cell, cell + n, Direction::South));
                }
            }
        }
        edges.shuffle(&mut rng);
        edges.truncate(config.num_inner_walls as usize);
        edges.sort_unstable_by_key(|&(a, b, _)| (a, b));

        let mut passages = vec![[Passage::Open; 4]; num_rooms];
        for (cell, slots) in passages.iter_mut().enumerate() {
            let (r, c) = (cell / n, cell % n);
            if r == 0 {
                slots[dir_slot(Direction::North)] = Passage::Boundary;
            }
            if r + 1 == n {
                slots[dir_slot(Direction::South)] = Passage::Boundary;
            }
            if c == 0 {
                slots[dir_slot(Direction::West)] = Passage::Boundary;
            }
            if c + 1 == n {
                slots[dir_slot(Direction::East)] = Passage::Boundary;
            }
        }
        let mut walls = Vec::with_capacity(edges.len());
        for (a, b, dir) in edges {
            let period = [4u32, 6, 8, 10][rng.random_range(0..4)];
            let phase = rng.random_range(0..period);
            let idx = walls.len();
            walls.push(WallSchedule {
                a,
                b,
                period,
                closed_span: period / 2,
                phase,
            });
            let back = if dir == Direction::East {
                Direction::West
            } else {
                Direction::North
            };
            passages[a][dir_slot(dir)] = Passage::Wall(idx);
            passages[b][dir_slot(back)] = Passage::Wall(idx);
        }

        let mut occupancy = vec![0usize; num_rooms];
        let mut start_rooms = Vec::with_capacity(objects.len());
        for _ in 0..objects.len() {
            let free: Vec<usize> = (0..num_rooms)
                .filter(|&r| occupancy[r] < ROOM_SLOTS)
                .collect();
            let room = free[rng.random_range(0..free.len())];
            occupancy[room] += 1;
            start_rooms.push(room);
        }

        Ok(Self {
            num_static: config.num_static_objects as usize,
            config,
            vocab,
            rooms,
            objects,
            start_rooms,
            walls,
            passages,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn grid_length(&self) -> usize {
        self.config.grid_length as usize
    }

    pub fn horizon(&self) -> u32 {
        self.config.horizon
    }

    pub fn num_rooms(&self) -> usize {
        self.rooms.len()
    }

    pub fn room_entity(&self, cell: usize) -> EntityId {
        self.rooms[cell]
    }

    pub fn room_cell(&self, entity: EntityId) -> Option<usize> {
        self.rooms.iter().position(|&r| r == entity)
    }

    pub fn rooms(&self) -> &[EntityId] {
        &self.rooms
    }

    /// All objects, static ones first.
    pub fn objects(&self) -> &[EntityId] {
        &self.objects
    }

    pub fn is_moving(&self, object_index: usize) -> bool {
        object_index >= self.num_static
    }

    pub fn is_room(&self, e: EntityId) -> bool {
        self.rooms.contains(&e)
    }

    pub fn is_static_object(&self, e: EntityId) -> bool {
        self.objects[..self.num_static].contains(&e)
    }

    pub fn is_moving_object(&self, e: EntityId) -> bool {
        self.objects[self.num_static..].contains(&e)
    }

    pub fn walls(&self) -> &[WallSchedule] {
        &self.walls
    }

    /// Cell reached from `cell` going `dir`, ignoring walls.
    pub fn neighbor(&self, cell: usize, dir: Direction) -> Option<usize> {
        let n = self.grid_length() as i64;
        let (dr, dc) = dir.offset();
        let (r, c) = ((cell as i64) / n + dr, (cell as i64) % n + dc);
        (0..n)
            .contains(&r)
            .then_some(())
            .filter(|_| (0..n).contains(&c))
            .map(|_| (r * n + c) as usize)
    }

    /// Whether the passage from `cell` towards `dir` is open at step `t`.
    pub fn is_open(&self, cell: usize, dir: Direction, t: u32) -> bool {
        match self.passages[cell][dir_slot(dir)] {
            Passage::Boundary => false,
            Passage::Open => true,
            Passage::Wall(w) => !self.walls[w].is_closed(t),
        }
    }

    /// Index of the inner wall on this side of `cell`, if any.
    pub fn wall_index(&self, cell: usize, dir: Direction) -> Option<usize> {
        match self.passages[cell][dir_slot(dir)] {
            Passage::Wall(w) => Some(w),
            _ => None,
        }
    }

    pub fn wall_states(&self, t: u32) -> Vec<bool> {
        self.walls.iter().map(|w| w.is_closed(t)).collect()
    }

    /// Where the agent starts every episode: the north-west corner.
    pub fn start_cell(&self) -> usize {
        0
    }

    pub fn initial_state(&self) -> HiddenState {
        HiddenState {
            step: 0,
            agent_room: self.start_cell(),
            object_rooms: self.start_rooms.clone(),
            wall_closed: self.wall_states(0),
        }
    }

    /// Triples visible from the agent's room, in canonical (unshuffled) order.
    pub fn observe(&self, state: &HiddenState) -> Vec<Triple> {
        let cell = state.agent_room;
        let room = self.rooms[cell];
        let mut triples = Vec::with_capacity(5 + ROOM_SLOTS);
        triples.push(Triple::new(Vocab::AGENT, Vocab::AT_LOCATION, room));
        for d in Direction::ALL {
            let tail = match self.neighbor(cell, d) {
                Some(next) if self.is_open(cell, d, state.step) => self.rooms[next],
                _ => Vocab::WALL,
            };
            triples.push(Triple::new(room, d.relation(), tail));
        }
        for (i, &obj_room) in state.object_rooms.iter().enumerate() {
            if obj_room == cell {
                triples.push(Triple::new(self.objects[i], Vocab::AT_LOCATION, room));
            }
        }
        triples
    }

    /// ASCII bird's-eye view of a hidden state.
    ///
    /// Each room is a three-character cell: `@` marks the agent and the digit
    /// counts objects in the room. Closed walls are drawn as `|` and `---`.
    /// A legend below lists room names and room contents.
    pub fn render_birdseye(&self, state: &HiddenState) -> String {
        let n = self.grid_length();
        let closed = |cell: usize, d: Direction| match self.passages[cell][dir_slot(d)] {
            Passage::Boundary => true,
            Passage::Open => false,
            Passage::Wall(w) => state.wall_closed[w],
        };
        let mut counts = vec![0usize; n * n];
        for &r in &state.object_rooms {
            counts[r] += 1;
        }
        let mut out = String::new();
        out.push('+');
        for _ in 0..n {
            out.push_str("---+");
        }
        out.push('\n');
        for r in 0..n {
            out.push('|');
            for c in 0..n {
                let cell = r * n + c;
                out.push(if state.agent_room == cell { '@' } else { ' ' });
                match counts[cell] {
                    0 => out.push('.'),
                    k => out.push_str(&k.to_string()),
                }
                out.push(' ');
                out.push(if closed(cell, Direction::East) { '|' } else { ' ' });
            }
            out.push('\n');
            out.push('+');
            for c in 0..n {
                let cell = r * n + c;
                out.push_str(if closed(cell, Direction::South) {
                    "---"
                } else {
                    "   "
                });
                out.push('+');
            }
            out.push('\n');
        }
        out.push_str(&format!("step {}\n", state.step));
        for cell in 0..n * n {
            let mut line = format!(
                "({},{}) {}",
                cell / n,
                cell % n,
                self.vocab.entity_label(self.rooms[cell])
            );
            if state.agent_room == cell {
                line.push_str(" [agent]");
            }
            let here: Vec<&str> = state
                .object_rooms
                .iter()
                .enumerate()
                .filter(|&(_, &room)| room == cell)
                .map(|(i, _)| self.vocab.entity_label(self.objects[i]))
                .collect();
            if !here.is_empty() {
                let _ = write!(line, ": {}", here.join(", "));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn state_record(&self, state: &HiddenState) -> HiddenStateRecord {
        let label = |e: EntityId| self.vocab.entity_label(e).to_owned();
        HiddenStateRecord {
            step: state.step,
            agent_room: label(self.rooms[state.agent_room]),
            object_rooms: state
                .object_rooms
                .iter()
                .enumerate()
                .map(|(i, &r)| (label(self.objects[i]), label(self.rooms[r])))
                .collect(),
            closed_walls: self
                .walls
                .iter()
                .zip(&state.wall_closed)
                .filter(|(_, &c)| c)
                .map(|(w, _)| [label(self.rooms[w.a]), label(self.rooms[w.b])])
                .collect(),
        }
    }

    pub fn state_from_record(&self, rec: &HiddenStateRecord) -> Result<HiddenState> {
        let cell_of = |label: &str| -> Result<usize> {
            let e = self.vocab.entity_id(label)?;
            self.room_cell(e)
                .ok_or_else(|| Error::Vocabulary(format!("`{label}` is not a room")))
        };
        let mut object_rooms = Vec::with_capacity(self.objects.len());
        for &obj in &self.objects {
            let label = self.vocab.entity_label(obj);
            let room = rec.object_rooms.get(label).ok_or_else(|| {
                Error::Vocabulary(format!("hidden state has no room for `{label}`"))
            })?;
            object_rooms.push(cell_of(room)?);
        }
        let mut wall_closed = vec![false; self.walls.len()];
        for [a, b] in &rec.closed_walls {
            let (a, b) = (cell_of(a)?, cell_of(b)?);
            let w = self
                .walls
                .iter()
                .position(|w| (w.a, w.b) == (a, b))
                .ok_or_else(|| Error::Vocabulary("closed wall not in layout".into()))?;
            wall_closed[w] = true;
        }
        Ok(HiddenState {
            step: rec.step,
            agent_room: cell_of(&rec.agent_room)?,
            object_rooms,
            wall_closed,
        })
    }
}

/// Full simulator state. Hidden from the agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HiddenState {
    pub step: u32,
    /// Grid cell of the agent.
    pub agent_room: usize,
    /// Grid cell of every object, indexed like [`World::objects`].
    pub object_rooms: Vec<usize>,
    /// Closed flag of every inner wall, indexed like [`World::walls`].
    pub wall_closed: Vec<bool>,
}

/// Label form of a hidden state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenStateRecord {
    pub step: u32,
    pub agent_room: String,
    pub object_rooms: BTreeMap<String, String>,
    pub closed_walls: Vec<[String; 2]>,
}

/// Local observation: the current room's induced triples, shuffled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub triples: Vec<Triple>,
}

/// `(object, at_location, ?)` with the hidden answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub truth: EntityId,
}

impl Query {
    pub fn record(&self, vocab: &Vocab) -> QueryRecord {
        QueryRecord {
            head: vocab.entity_label(self.head).to_owned(),
            relation: "at_location".to_owned(),
            truth: vocab.entity_label(self.truth).to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub head: String,
    pub relation: String,
    pub truth: String,
}

/// Environment action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    North,
    South,
    East,
    West,
    Stay,
}

impl Move {
    pub fn direction(self) -> Option<Direction> {
        match self {
            Move::North => Some(Direction::North),
            Move::South => Some(Direction::South),
            Move::East => Some(Direction::East),
            Move::West => Some(Direction::West),
            Move::Stay => None,
        }
    }
}

impl From<Direction> for Move {
    fn from(d: Direction) -> Self {
        match d {
            Direction::North => Move::North,
            Direction::South => Move::South,
            Direction::East => Move::East,
            Direction::West => Move::West,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub query: Query,
    pub reward: f64,
    pub done: bool,
}

/// One running episode over a shared [`World`].
#[derive(Debug, Clone)]
pub struct Episode {
    world: Arc<World>,
    state: HiddenState,
    shuffle_rng: Rng,
    move_rng: Rng,
    query_order: Vec<usize>,
    observation: Observation,
    query: Query,
    done: bool,
}

impl Episode {
    /// Starts an episode. Layout comes from the world; shuffles and object
    /// walks from `episode_seed`; the query schedule from `episode_seed` and
    /// the world's query split.
    pub fn reset(world: Arc<World>, episode_seed: u64) -> Self {
        let split = world.config.query_split;
        let shuffle_rng = seed::stream(episode_seed, &[seed::tag("shuffle")]);
        let move_rng = seed::stream(episode_seed, &[seed::tag("moves")]);
        let mut query_rng = seed::stream(
            episode_seed,
            &[seed::tag("queries"), seed::tag(split.label())],
        );
        let mut query_order: Vec<usize> = (0..world.objects.len()).collect();
        query_order.shuffle(&mut query_rng);
        let state = world.initial_state();
        let mut ep = Self {
            world,
            state,
            shuffle_rng,
            move_rng,
            query_order,
            observation: Observation {
                triples: Vec::new(),
            },
            query: Query {
                head: Vocab::UNKNOWN,
                truth: Vocab::UNKNOWN,
            },
            done: false,
        };
        ep.emit();
        ep
    }

    fn emit(&mut self) {
        let mut triples = self.world.observe(&self.state);
        triples.shuffle(&mut self.shuffle_rng);
        self.observation = Observation { triples };
        if !self.query_order.is_empty() {
            let k = self.query_order[self.state.step as usize % self.query_order.len()];
            self.query = Query {
                head: self.world.objects[k],
                truth: self.world.rooms[self.state.object_rooms[k]],
            };
        }
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn state(&self) -> &HiddenState {
        &self.state
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn query(&self) -> Query {
        self.query
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Answers the pending query, applies the move, advances walls and
    /// objects, and emits the next observation and query.
    pub fn step(&mut self, mv: Move, answer: EntityId) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::usage("episode already finished"));
        }
        let world = Arc::clone(&self.world);
        let reward = if answer == self.query.truth && answer != Vocab::UNKNOWN {
            1.0
        } else {
            0.0
        };
        let t = self.state.step;
        if let Some(dir) = mv.direction() {
            if world.is_open(self.state.agent_room, dir, t) {
                self.state.agent_room = world
                    .neighbor(self.state.agent_room, dir)
                    .expect("open passage has a neighbor");
            }
        }
        let next_t = t + 1;
        self.state.wall_closed = world.wall_states(next_t);

        let mut occupancy = vec![0usize; world.num_rooms()];
        for &r in &self.state.object_rooms {
            occupancy[r] += 1;
        }
        for i in world.num_static..world.objects.len() {
            let here = self.state.object_rooms[i];
            let wants_move = self.move_rng.random_bool(0.5);
            let options: Vec<usize> = Direction::ALL
                .into_iter()
                .filter(|&d| world.is_open(here, d, next_t))
                .filter_map(|d| world.neighbor(here, d))
                .filter(|&r| occupancy[r] < ROOM_SLOTS)
                .collect();
            let pick = self.move_rng.random_range(0..options.len().max(1));
            if wants_move && !options.is_empty() {
                let to = options[pick];
                occupancy[here] -= 1;
                occupancy[to] += 1;
                self.state.object_rooms[i] = to;
            }
        }
        self.state.step = next_t;
        self.done = next_t >= world.config.horizon;
        self.emit();
        Ok(StepOutcome {
            observation: self.observation.clone(),
            query: self.query,
            reward,
            done: self.done,
        })
    }
}

/// Label form of an observation, for traces.
pub fn observation_records(vocab: &Vocab, obs: &Observation) -> Vec<TripleRecord> {
    obs.triples.iter().map(|t| vocab.triple_record(t)).collect()
}
