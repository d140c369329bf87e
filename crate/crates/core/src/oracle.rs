//! Slow, independent reference implementations used by the test suites and
//! the `selfcheck` command.
//!
//! Nothing here shares code with the implementations it checks beyond the
//! plain data types.

use rand::Rng as _;

use crate::env::Move;
use crate::kg::{
    ContextMode, Direction, EntityId, GraphView, MemoryItem, RelationId, TemporalAnnotations,
    Triple, Vocab,
};
use crate::memory::{EvictionPolicy, StoredItem};
use crate::neural::{HeadMode, ParameterSet, QForward};
use crate::policies::QaPolicy;
use crate::seed::Rng;

/// Index the eviction rule should pick: exhaustive scan for the smallest
/// policy key, ties to the smallest insertion number.
pub fn eviction_index(entries: &[StoredItem], policy: EvictionPolicy) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let key = |s: &StoredItem| match policy {
            EvictionPolicy::Fifo => s.inserted,
            EvictionPolicy::Lru => u64::from(s.item.annotations.last_accessed),
            EvictionPolicy::Lfu => u64::from(s.item.annotations.num_recalled),
        };
        let (ke, kb) = (key(e), key(&entries[b]));
        if ke < kb || (ke == kb && e.inserted < entries[b].inserted) {
            best = Some(i);
        }
    }
    best
}

/// Index the answer rule should pick: every candidate is compared pairwise
/// by policy key, then `time_added`, then position.
pub fn answer_index(memory: &[MemoryItem], head: EntityId, policy: QaPolicy) -> Option<usize> {
    let candidates: Vec<usize> = (0..memory.len())
        .filter(|&i| memory[i].triple.head == head && memory[i].triple.relation == Vocab::AT_LOCATION)
        .collect();
    let key = |i: usize| {
        let a = memory[i].annotations;
        let k = match policy {
            QaPolicy::Mra => a.time_added,
            QaPolicy::Mru => a.last_accessed,
            QaPolicy::Mfu => a.num_recalled,
        };
        (k, a.time_added, i)
    };
    candidates
        .iter()
        .copied()
        .find(|&i| candidates.iter().all(|&j| key(j) <= key(i)))
}

/// Exploration move recomputed with a linear-scan link table and
/// all-pairs shortest paths. The random fallback draws from `rng` exactly
/// as the policy does.
pub fn explore_move(memory: &[MemoryItem], current: EntityId, rng: &mut Rng) -> Move {
    let mut rooms: Vec<EntityId> = vec![current];
    let link = |room: EntityId, dir: Direction| -> Option<EntityId> {
        let mut best: Option<(u32, u32, usize, EntityId)> = None;
        for (i, m) in memory.iter().enumerate() {
            if m.triple.head == room && m.triple.relation == dir.relation() {
                let cand = (m.annotations.last_accessed, m.annotations.time_added, i, m.triple.tail);
                if best.is_none_or(|b| (cand.0, cand.1, cand.2) > (b.0, b.1, b.2)) {
                    best = Some(cand);
                }
            }
        }
        best.map(|b| b.3)
    };
    for m in memory {
        if Direction::from_relation(m.triple.relation).is_some() {
            rooms.extend([m.triple.head, m.triple.tail]);
        }
        if m.triple.head == Vocab::AGENT && m.triple.relation == Vocab::AT_LOCATION {
            rooms.push(m.triple.tail);
        }
    }
    rooms.retain(|&r| r != Vocab::WALL);
    rooms.sort_unstable();
    rooms.dedup();
    let n = rooms.len();
    let idx = |e: EntityId| rooms.binary_search(&e).ok();
    let mut neighbors: Vec<Vec<(Direction, usize)>> = vec![Vec::new(); n];
    for (i, &room) in rooms.iter().enumerate() {
        for dir in Direction::ALL {
            if let Some(t) = link(room, dir).filter(|&t| t != Vocab::WALL) {
                neighbors[i].push((dir, idx(t).expect("linked rooms are collected")));
            }
        }
    }
    const INF: usize = usize::MAX / 4;
    let mut dist = vec![vec![INF; n]; n];
    for i in 0..n {
        dist[i][i] = 0;
        for &(_, j) in &neighbors[i] {
            dist[i][j] = dist[i][j].min(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if dist[i][k] + dist[k][j] < dist[i][j] {
                    dist[i][j] = dist[i][k] + dist[k][j];
                }
            }
        }
    }
    let visited_at = |room: EntityId| {
        memory
            .iter()
            .filter(|m| m.triple.head == Vocab::AGENT && m.triple.relation == Vocab::AT_LOCATION)
            .filter(|m| m.triple.tail == room)
            .map(|m| m.annotations.last_accessed)
            .max()
    };
    let c = idx(current).expect("current room is collected");
    let mut target: Option<(usize, EntityId, usize)> = None;
    for (j, &room) in rooms.iter().enumerate() {
        let dj = dist[c][j];
        if dj == 0 || dj >= INF || visited_at(room).is_some() {
            continue;
        }
        if target.is_none_or(|(d, r, _)| (dj, room) < (d, r)) {
            target = Some((dj, room, j));
        }
    }
    if let Some((d, _, t)) = target {
        for &(dir, nb) in &neighbors[c] {
            if dist[nb][t] == d - 1 {
                return dir.into();
            }
        }
        unreachable!("a shortest path leaves through some neighbour");
    }
    let mut revisit: Option<(Option<u32>, usize, Direction)> = None;
    for (k, &(dir, nb)) in neighbors[c].iter().enumerate() {
        let key = visited_at(rooms[nb]);
        if revisit.is_none_or(|(bk, bi, _)| (key, k) < (bk, bi)) {
            revisit = Some((key, k, dir));
        }
    }
    if let Some((_, _, dir)) = revisit {
        return dir.into();
    }
    let pool: Vec<Direction> = Direction::ALL
        .into_iter()
        .filter(|&d| link(current, d) != Some(Vocab::WALL))
        .collect();
    let pool = if pool.is_empty() { Direction::ALL.to_vec() } else { pool };
    pool[rng.random_range(0..pool.len())].into()
}

/// Central finite differences of `f` with respect to every parameter.
pub fn numeric_gradient(
    params: &ParameterSet,
    eps: f64,
    mut f: impl FnMut(&ParameterSet) -> f64,
) -> Vec<f64> {
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let x = params.values()[i];
        probe.values_mut()[i] = x + eps;
        let up = f(&probe);
        probe.values_mut()[i] = x - eps;
        let down = f(&probe);
        probe.values_mut()[i] = x;
        *g = (up - down) / (2.0 * eps);
    }
    grad
}

/// Relative error with a floor on the denominator, so that coordinates
/// whose true gradient is zero compare on an absolute scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor used by the gradient checks.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// A small random memory graph with at most `max_nodes` entities.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub num_entities: usize,
    pub num_relations: usize,
    pub graph: GraphView,
    pub items: Vec<MemoryItem>,
}

/// Builds a random graph over at most `max_nodes` of `num_entities`
/// entities, with `items` drawn from its edges.
pub fn tiny_instance(rng: &mut Rng, num_entities: usize, num_relations: usize, max_nodes: usize) -> TinyInstance {
    let pool_size = max_nodes.min(num_entities).max(2);
    let mut pool: Vec<u32> = (0..num_entities as u32).collect();
    for i in 0..pool_size {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(pool_size);
    let num_edges = rng.random_range(1..=2 * pool_size);
    let mut items = Vec::with_capacity(num_edges);
    for _ in 0..num_edges {
        let h = pool[rng.random_range(0..pool_size)];
        let t = pool[rng.random_range(0..pool_size)];
        let r = rng.random_range(0..num_relations as u32);
        let added = rng.random_range(0..50);
        items.push(MemoryItem {
            triple: Triple::new(EntityId(h), RelationId(r), EntityId(t)),
            annotations: TemporalAnnotations {
                time_added: added,
                last_accessed: added + rng.random_range(0..20),
                num_recalled: rng.random_range(0..12),
            },
        });
    }
    let split = rng.random_range(1..=items.len());
    let graph = crate::kg::build_graph_view(&items[..split], &items[split..], ContextMode::Full, 70, 100);
    TinyInstance {
        num_entities,
        num_relations,
        graph,
        items: items[..split].to_vec(),
    }
}

/// Squared-error objective `Σ (q - c)²` over every output entry, and its
/// gradient with respect to the outputs.
pub fn quadratic_objective(q: &QForward, targets: &[[f64; 2]]) -> (f64, Vec<[f64; 2]>) {
    let mut loss = 0.0;
    let mut dq = Vec::with_capacity(q.rows().len());
    for (row, c) in q.rows().iter().zip(targets) {
        loss += (row[0] - c[0]).powi(2) + (row[1] - c[1]).powi(2);
        dq.push([2.0 * (row[0] - c[0]), 2.0 * (row[1] - c[1])]);
    }
    (loss, dq)
}

/// Outcome of one analytic-versus-numeric gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    /// Smallest distance of any ReLU input from its kink.
    pub kink_margin: f64,
}

/// Compares the analytic gradient of the quadratic objective with central
/// differences at step `eps`, over every parameter coordinate.
pub fn check_gradients(
    params: &ParameterSet,
    instance: &TinyInstance,
    mode: HeadMode,
    targets: &[[f64; 2]],
    eps: f64,
) -> crate::Result<GradientReport> {
    let q = crate::neural::q_values(&instance.graph, &instance.items, params, mode)?;
    let (_, dq) = quadratic_objective(&q, targets);
    let mut analytic = params.zeros_like();
    q.backward(params, &dq, &mut analytic);
    let numeric = numeric_gradient(params, eps, |p| {
        let q = crate::neural::q_values(&instance.graph, &instance.items, p, mode)
            .expect("same instance evaluates");
        quadratic_objective(&q, targets).0
    });
    let mut report = GradientReport {
        coordinates: analytic.len(),
        max_relative_error: 0.0,
        worst_index: 0,
        kink_margin: q.min_abs_preactivation(),
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(*a, *n, GRADIENT_FLOOR);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
