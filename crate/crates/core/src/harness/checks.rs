//! The acceptance checks, sized by the caller. `selfcheck` and the
//! acceptance test both run these.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng as _;

use crate::agent::{AgentConfig, MemoryState};
use crate::env::{QuerySplit, World, WorldConfig};
use crate::kg::{
    Direction, EntityId, MemoryItem, RelationId, Source, TemporalAnnotations, Triple, Vocab,
};
use crate::memory::{DuplicatePolicy, EvictionPolicy, LongTermStore, ShortTermBuffer, StoredItem, TransferAction};
use crate::neural::{q_values, EncoderConfig, EncoderKind, HeadMode, ParameterSet};
use crate::oracle;
use crate::policies::{answer_query, explore_action, QaPolicy, TransferBaseline};
use crate::rl::{
    self, bootstrap, matched_len, td_batch, td_loss, td_target, Controller, LearnedPolicy,
    TdTerms, TrainerConfig, TransferMode, Transition,
};
use crate::seed::{self, Rng};
use crate::Result;

use super::analysis::{analyze, Category};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub criterion: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(criterion: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        criterion,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

const CAPACITIES: [usize; 4] = [1, 4, 32, 128];
const EVICTIONS: [EvictionPolicy; 3] = [EvictionPolicy::Fifo, EvictionPolicy::Lru, EvictionPolicy::Lfu];

/// Plain re-statement of the long-term store used as the reference model.
struct StoreModel {
    capacity: usize,
    merge: bool,
    entries: Vec<StoredItem>,
    counter: u64,
}

impl StoreModel {
    fn keep(&mut self, item: MemoryItem, policy: EvictionPolicy, now: u32, evicted: &mut Vec<MemoryItem>) {
        if self.merge {
            if let Some(e) = self.entries.iter_mut().rev().find(|e| e.item.triple == item.triple) {
                e.item.annotations.last_accessed = e.item.annotations.last_accessed.max(now);
                return;
            }
        }
        self.entries.push(StoredItem {
            item,
            inserted: self.counter,
        });
        self.counter += 1;
        if self.entries.len() > self.capacity {
            let i = oracle::eviction_index(&self.entries, policy).expect("non-empty");
            evicted.push(self.entries.remove(i).item);
        }
    }

    fn touch(&mut self, triple: &Triple, now: u32) {
        if let Some(e) = self.entries.iter_mut().rev().find(|e| e.item.triple == *triple) {
            e.item.annotations.touch_on_recall(now);
        }
    }
}

fn small_triple(rng: &mut Rng) -> Triple {
    Triple::new(
        EntityId(rng.random_range(0..6)),
        RelationId(rng.random_range(0..5)),
        EntityId(rng.random_range(0..6)),
    )
}

/// Criterion 1: random transfer sequences never overflow the store and
/// every eviction matches the brute-force argmin.
pub fn memory_invariants(sequences: usize, seed: u64) -> CheckOutcome {
    timed(1, "memory invariants", || {
        let mut evictions = 0usize;
        for s in 0..sequences {
            let mut rng = seed::stream(seed, &[seed::tag("memory-check"), s as u64]);
            let capacity = CAPACITIES[s % CAPACITIES.len()];
            let policy = EVICTIONS[rng.random_range(0..EVICTIONS.len())];
            let dup = if rng.random_bool(0.5) { DuplicatePolicy::Merge } else { DuplicatePolicy::MultiCopy };
            let mut store = LongTermStore::with_duplicates(capacity, dup);
            let mut model = StoreModel {
                capacity,
                merge: dup == DuplicatePolicy::Merge,
                entries: Vec::new(),
                counter: 0,
            };
            let steps = rng.random_range(1..=40);
            for now in 0..steps {
                for _ in 0..rng.random_range(0..3) {
                    let t = small_triple(&mut rng);
                    store.touch_on_recall(&t, now);
                    model.touch(&t, now);
                }
                let n = rng.random_range(0..=8);
                let short = ShortTermBuffer {
                    items: (0..n).map(|_| MemoryItem::fresh(small_triple(&mut rng), now)).collect(),
                    step: now,
                };
                let actions: Vec<TransferAction> = (0..n)
                    .map(|_| TransferAction::from_index(usize::from(rng.random_bool(0.7))))
                    .collect();
                let report = store.apply_transfer(&short, &actions, policy, now)?;
                let mut expected = Vec::new();
                for (item, a) in short.items.iter().zip(&actions) {
                    if a.is_keep() {
                        model.keep(*item, policy, now, &mut expected);
                    }
                }
                evictions += expected.len();
                if store.len() > capacity {
                    return Ok((false, format!("sequence {s}: {} items in a store of capacity {capacity}", store.len())));
                }
                if report.evicted != expected || store.entries() != model.entries.as_slice() {
                    return Ok((false, format!("sequence {s} step {now}: {policy:?} eviction differs from the oracle")));
                }
            }
        }
        Ok((true, format!("{sequences} sequences, {evictions} evictions match the oracle")))
    })
}

/// A random memory over a small world-like vocabulary: rooms `3..3+rooms`
/// and objects after them.
pub fn random_memory(rng: &mut Rng, rooms: u32, objects: u32, n: usize) -> Vec<MemoryItem> {
    let room = |rng: &mut Rng| EntityId(3 + rng.random_range(0..rooms));
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let triple = if u < 0.2 {
                Triple::new(Vocab::AGENT, Vocab::AT_LOCATION, room(rng))
            } else if u < 0.5 {
                let obj = EntityId(3 + rooms + rng.random_range(0..objects));
                Triple::new(obj, Vocab::AT_LOCATION, room(rng))
            } else {
                let dir = Direction::ALL[rng.random_range(0..4)];
                let tail = if rng.random_bool(0.3) { Vocab::WALL } else { room(rng) };
                Triple::new(room(rng), dir.relation(), tail)
            };
            let added = rng.random_range(0..30);
            MemoryItem {
                triple,
                annotations: TemporalAnnotations {
                    time_added: added,
                    last_accessed: added + rng.random_range(0..10),
                    num_recalled: rng.random_range(0..5),
                },
            }
        })
        .collect()
}

/// Criterion 2: question answering and exploration agree with the
/// exhaustive-scan and all-pairs oracles on random memories.
pub fn policy_oracles(states: usize, seed: u64) -> CheckOutcome {
    timed(2, "policy oracles", || {
        let (rooms, objects) = (9, 4);
        for s in 0..states {
            let mut rng = seed::stream(seed, &[seed::tag("policy-check"), s as u64]);
            let n = rng.random_range(0..60);
            let memory = random_memory(&mut rng, rooms, objects, n);
            let head = if rng.random_bool(0.2) {
                Vocab::AGENT
            } else {
                EntityId(3 + rooms + rng.random_range(0..objects))
            };
            for policy in [QaPolicy::Mra, QaPolicy::Mru, QaPolicy::Mfu] {
                let mut long = LongTermStore::with_duplicates(n.max(1), DuplicatePolicy::MultiCopy);
                let mut report = Default::default();
                for m in &memory {
                    long.keep(*m, EvictionPolicy::Fifo, 0, &mut report)?;
                }
                let query = crate::env::Query { head, truth: Vocab::UNKNOWN };
                let answer = answer_query(None, &mut long, &query, policy, 99);
                let expected = oracle::answer_index(&memory, head, policy);
                let want = expected.map_or(Vocab::UNKNOWN, |i| memory[i].triple.tail);
                let touched_ok = match expected {
                    None => long.items() == memory,
                    Some(i) => {
                        let mut ann = memory[i].annotations;
                        ann.touch_on_recall(99);
                        long.entries()[i].item.annotations == ann
                    }
                };
                if answer.entity != want || !touched_ok {
                    return Ok((false, format!("state {s}: {policy:?} answer differs from the oracle")));
                }
            }
            let current = EntityId(3 + rng.random_range(0..rooms));
            let draw = rng.random::<u64>();
            let mut a = seed::stream(draw, &[]);
            let mut b = seed::stream(draw, &[]);
            let (mv, _) = explore_action(&memory, current, &mut a);
            let mv_oracle = oracle::explore_move(&memory, current, &mut b);
            if mv != mv_oracle || a.random::<u64>() != b.random::<u64>() {
                return Ok((false, format!("state {s}: exploration {mv:?} vs oracle {mv_oracle:?}")));
            }
        }
        Ok((true, format!("{states} states, 3 answer policies and exploration match")))
    })
}

fn item(h: u32, r: u32, t: u32) -> MemoryItem {
    MemoryItem::fresh(Triple::new(EntityId(h), RelationId(r), EntityId(t)), 0)
}

fn state(step: u32, short: Vec<MemoryItem>, long: Vec<MemoryItem>) -> Arc<MemoryState> {
    Arc::new(MemoryState { step, short, long })
}

/// Criterion 3: hand-built TD batches give the expected targets, pair
/// counts and losses exactly.
pub fn td_correctness() -> CheckOutcome {
    timed(3, "td correctness", || {
        let mut failures = Vec::new();
        let mut expect = |ok: bool, what: &str| {
            if !ok {
                failures.push(what.to_owned());
            }
        };
        expect(td_target(1.0, true, 0.95, 7.0) == 1.0, "terminal target");
        expect(td_target(0.0, false, 0.95, bootstrap([0.0, 2.0], [0.0, 2.0], true)) == 1.9, "y = 1.9");
        expect(matched_len(5, 3) == 3 && matched_len(3, 5) == 3 && matched_len(0, 4) == 0, "min rule");
        expect(
            td_loss(&[TdTerms { q: vec![0.5], y: vec![0.5] }]) == Some(0.0),
            "zero loss",
        );
        expect(
            td_loss(&[TdTerms { q: vec![1.0, -1.0], y: vec![0.0, 0.0] }]) == Some(1.0),
            "loss of errors 1 and -1",
        );
        expect(td_loss(&[TdTerms { q: vec![], y: vec![] }]).is_none(), "empty batch skipped");

        let (ne, nr, horizon) = (12, 5, 100);
        let online = ParameterSet::init(EncoderConfig::new(EncoderKind::Gcn), ne, nr, 1)?;
        let target = ParameterSet::init(EncoderConfig::new(EncoderKind::Gcn), ne, nr, 2)?;
        let s0 = state(3, vec![item(0, 0, 3), item(5, 0, 3), item(3, 1, 4), item(3, 2, 1), item(6, 0, 3)], vec![item(4, 3, 3)]);
        let s1 = state(4, vec![item(0, 0, 4), item(4, 4, 3), item(7, 0, 4)], vec![item(0, 0, 3)]);
        let acts = |n: usize| (0..n).map(|i| TransferAction::from_index(i % 2)).collect::<Vec<_>>();
        let live = Transition { state: s0.clone(), actions: acts(5), reward: 1.0, next: s1.clone(), done: false };
        let terminal = Transition { state: s0.clone(), actions: acts(5), reward: 1.0, next: s1.clone(), done: true };
        let empty = Transition { state: s1.clone(), actions: acts(3), reward: 0.0, next: state(5, vec![], vec![]), done: false };
        let batch = [&live, &terminal, &empty];
        for mode in [TransferMode::LocalStm, TransferMode::LocalFull] {
            let mut cfg = TrainerConfig { mode, double_dqn: false, ..TrainerConfig::default() };
            let mut rng = seed::stream(0, &[]);
            let plain = td_batch(&batch, &online, &target, mode, &cfg, horizon, &mut rng)?;
            let q_now = q_values(&rl::graph_view(mode, &s0, horizon), &s0.short, &online, HeadMode::Local)?;
            let q_next = q_values(&rl::graph_view(mode, &s1, horizon), &s1.short, &target, HeadMode::Local)?;
            let lens: Vec<usize> = plain.iter().map(|(t, _)| t.len()).collect();
            expect(lens == [3, 3, 0], "matched pair counts 3, 3, 0");
            for j in 0..3 {
                let a = live.actions[j].index();
                let best = q_next.value(j, 0).max(q_next.value(j, 1));
                expect(plain[0].0.q[j] == q_now.value(j, a), "online value of the taken action");
                expect(plain[0].0.y[j] == 1.0 + cfg.gamma * best, "max-form target");
                expect(plain[1].0.y[j] == 1.0, "terminal target in a batch");
            }
            cfg.double_dqn = true;
            let same = td_batch(&batch, &online, &online, mode, &cfg, horizon, &mut rng)?;
            cfg.double_dqn = false;
            let max_form = td_batch(&batch, &online, &online, mode, &cfg, horizon, &mut rng)?;
            let strip = |v: &[(TdTerms, Option<_>)]| v.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
            expect(strip(&same) == strip(&max_form), "double equals max when online = target");
        }
        if failures.is_empty() {
            Ok((true, "targets, pair counts, losses and the double/max identity are exact".into()))
        } else {
            Ok((false, failures.join("; ")))
        }
    })
}

/// Criterion 4: central differences at `eps = 1e-5` against the analytic
/// gradient, for every encoder and head mode, `instances` each.
pub fn gradient_checks(instances: usize) -> CheckOutcome {
    timed(4, "gradient checks", || {
        let (ne, nr) = (12, 5);
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for kind in EncoderKind::ALL {
            for mode in [HeadMode::Local, HeadMode::Global] {
                let mut checked = 0;
                let mut s = 0u64;
                while checked < instances {
                    s += 1;
                    let mut rng = seed::stream(s, &[seed::tag("gradcheck")]);
                    let inst = oracle::tiny_instance(&mut rng, ne, nr, 6);
                    let p = ParameterSet::init(EncoderConfig::new(kind), ne, nr, s)?;
                    let rows = if mode == HeadMode::Local { inst.items.len() } else { 1 };
                    let targets: Vec<[f64; 2]> = (0..rows)
                        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                        .collect();
                    let report = oracle::check_gradients(&p, &inst, mode, &targets, 1e-5)?;
                    if report.kink_margin < 1e-5 {
                        skipped += 1;
                        continue;
                    }
                    worst = worst.max(report.max_relative_error);
                    if report.max_relative_error >= 1e-4 {
                        return Ok((false, format!("{kind} {mode:?} instance {s}: relative error {:.2e}", report.max_relative_error)));
                    }
                    checked += 1;
                }
            }
        }
        Ok((
            true,
            format!("3 encoders x 2 heads x {instances} instances, max relative error {worst:.2e}, {skipped} kink-adjacent instances redrawn"),
        ))
    })
}

/// A short training run on the reduced world, for determinism checks.
pub fn smoke_trainer(iterations: usize) -> TrainerConfig {
    TrainerConfig {
        total_iterations: iterations,
        warm_start: iterations / 4,
        batch_size: 8,
        seeds: vec![0],
        ..TrainerConfig::default()
    }
}

/// Criterion 5: two identical training runs give byte-identical metrics
/// and decision logs.
pub fn determinism(iterations: usize, seed: u64) -> CheckOutcome {
    timed(5, "determinism", || {
        let world = WorldConfig::reduced();
        let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
        let cfg = smoke_trainer(iterations);
        let run = || rl::train(&cfg, EncoderConfig::default(), &world, agent, seed);
        let (a, b) = (run()?, run()?);
        let same_metrics = rl::metrics_csv(&a.metrics) == rl::metrics_csv(&b.metrics);
        let same_decisions = rl::decisions_jsonl(&a.decisions) == rl::decisions_jsonl(&b.decisions);
        let same_params = a.policy.params.values().iter().map(|v| v.to_bits()).eq(b.policy.params.values().iter().map(|v| v.to_bits()));
        Ok((
            same_metrics && same_decisions && same_params,
            format!(
                "{iterations} iterations, {} updates: metrics {}, decisions {}, parameters {}",
                a.updates,
                if same_metrics { "identical" } else { "differ" },
                if same_decisions { "identical" } else { "differ" },
                if same_params { "identical" } else { "differ" },
            ),
        ))
    })
}

/// Settings of the reduced-scale experiments.
#[derive(Debug, Clone)]
pub struct ReducedSetup {
    pub world: WorldConfig,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    pub episodes: usize,
}

impl Default for ReducedSetup {
    fn default() -> Self {
        Self {
            world: WorldConfig::reduced(),
            agent: AgentConfig { capacity: 32, ..AgentConfig::default() },
            seeds: vec![0, 5, 10],
            episodes: 100,
        }
    }
}

impl ReducedSetup {
    pub fn baseline_mean(&self, baseline: TransferBaseline) -> Result<f64> {
        let controllers: Vec<(u64, Controller<'_>)> =
            self.seeds.iter().map(|&s| (s, Controller::Baseline(baseline))).collect();
        let report = rl::evaluate(&controllers, &self.world, self.agent, QuerySplit::Test, self.episodes, |_, _| {})?;
        Ok(report.mean)
    }
}

/// Criterion 6: on the test split, Novel-Only >= Always >= Random(0.5) and
/// Novel-Only beats Random by at least two points.
pub fn baseline_ordering(setup: &ReducedSetup) -> CheckOutcome {
    timed(6, "baseline ordering", || {
        let novel = setup.baseline_mean(TransferBaseline::NovelOnly)?;
        let always = setup.baseline_mean(TransferBaseline::Always)?;
        let random = setup.baseline_mean(TransferBaseline::Random { p: 0.5 })?;
        let passed = novel >= always && always >= random && novel - random >= 2.0;
        Ok((passed, format!("novel {novel:.3}, always {always:.3}, random {random:.3}, novel - random {:.3}", novel - random)))
    })
}

/// Trainer used for the reduced-scale learning check.
pub fn reduced_trainer(seeds: Vec<u64>) -> TrainerConfig {
    TrainerConfig {
        total_iterations: 5_000,
        epsilon_decay_iters: 2_500,
        optimizer: rl::OptimizerKind::Adam,
        lr: 1e-4,
        mode: TransferMode::LocalStm,
        seeds,
        ..TrainerConfig::default()
    }
}

/// Criterion 7: a GCN + Local-STM policy trained for 5,000 iterations per
/// seed scores at least 15% above Random(0.5) and no more than one point
/// below Always on the test split.
pub fn learning_signal(setup: &ReducedSetup, trainer: &TrainerConfig) -> CheckOutcome {
    timed(7, "learning signal", || {
        let encoder = EncoderConfig::new(EncoderKind::Gcn);
        let outcomes: Vec<Result<rl::TrainOutcome>> = std::thread::scope(|s| {
            let handles: Vec<_> = setup
                .seeds
                .iter()
                .map(|&seed| s.spawn(move || rl::train(trainer, encoder, &setup.world, setup.agent, seed)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        let policies: Vec<LearnedPolicy> = outcomes
            .into_iter()
            .map(|o| o.map(|o| o.policy))
            .collect::<Result<_>>()?;
        let controllers: Vec<(u64, Controller<'_>)> = setup
            .seeds
            .iter()
            .zip(&policies)
            .map(|(&s, p)| (s, Controller::Learned(p)))
            .collect();
        let learned = rl::evaluate(&controllers, &setup.world, setup.agent, QuerySplit::Test, setup.episodes, |_, _| {})?;
        let always = setup.baseline_mean(TransferBaseline::Always)?;
        let random = setup.baseline_mean(TransferBaseline::Random { p: 0.5 })?;
        let gain = learned.mean / random - 1.0;
        let passed = gain >= 0.15 && learned.mean >= always - 1.0;
        Ok((
            passed,
            format!(
                "learned {:.3} ± {:.3}, random {random:.3} (gain {:+.1}%), always {always:.3}",
                learned.mean,
                learned.std,
                gain * 100.0
            ),
        ))
    })
}

/// A decision record with only the fields the analysis reads.
pub fn synthetic_decision(episode: usize, step: u32, h: &str, r: &str, t: &str, keep: bool, query: &str) -> rl::DecisionRecord {
    rl::DecisionRecord {
        episode,
        step,
        triple: crate::kg::TripleRecord { h: h.into(), r: r.into(), t: t.into() },
        action: u8::from(keep),
        q_drop: 0.0,
        q_keep: 0.0,
        epsilon: 0.0,
        query: Some(query.into()),
    }
}

/// Reference decision counts as a synthetic log: 100 agent-location
/// items (98 kept), 60 locations of the queried object (58 kept) and 400
/// direction links (68 kept), spread over 112 steps of five items.
pub fn reference_counts_log() -> Vec<rl::DecisionRecord> {
    let mut groups: Vec<(&str, &str, &str, usize, usize)> = vec![
        ("agent", "at_location", "room_0_0", 98, 2),
        ("cat", "at_location", "room_1_0", 58, 2),
        ("room_0_0", "north", "wall", 68, 332),
    ];
    let mut out = Vec::new();
    for (h, r, t, keep, drop) in groups.drain(..) {
        for k in 0..keep + drop {
            out.push((h, r, t, k < keep));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, (h, r, t, keep))| synthetic_decision(0, (i / 5) as u32, h, r, t, keep, "cat"))
        .collect()
}

/// Criterion 8: the decision-log analysis reproduces a fixed set of counts.
pub fn analytics_fidelity() -> CheckOutcome {
    timed(8, "analytics fidelity", || {
        let s = analyze(&reference_counts_log(), 10)?;
        let cat = |c: Category| {
            let kd = s.per_category[&c];
            (kd.keep, kd.drop)
        };
        let passed = s.total == 560
            && s.keeps == 224
            && s.keep_rate == 0.40
            && cat(Category::AgentLocation) == (98, 2)
            && cat(Category::QueryObjectLocation) == (58, 2)
            && cat(Category::DirectionLink) == (68, 332);
        Ok((
            passed,
            format!(
                "keep_rate {:.2}, agent-location {:?}, query-object location {:?}, direction links {:?}",
                s.keep_rate,
                cat(Category::AgentLocation),
                cat(Category::QueryObjectLocation),
                cat(Category::DirectionLink)
            ),
        ))
    })
}

/// Criterion 9: the default schedule starts at 1.0, reaches 0.01 at
/// iteration 10,000 and never increases.
pub fn epsilon_schedule() -> CheckOutcome {
    timed(9, "epsilon schedule", || {
        let cfg = TrainerConfig::default();
        let monotone = (0..20_000).all(|i| cfg.epsilon_at(i + 1) <= cfg.epsilon_at(i));
        let passed = cfg.epsilon_at(0) == 1.0 && cfg.epsilon_at(10_000) == 0.01 && cfg.epsilon_at(50_000) == 0.01 && monotone;
        Ok((
            passed,
            format!(
                "eps(0) = {}, eps(10000) = {}, monotone {monotone}",
                cfg.epsilon_at(0),
                cfg.epsilon_at(10_000)
            ),
        ))
    })
}

/// Criterion 10: over full episodes with an untrained policy, Global modes
/// give every item of a step the same action and STM modes feed the
/// encoder no long-term edge.
pub fn mode_contracts(seed: u64) -> CheckOutcome {
    timed(10, "mode contracts", || {
        let world = Arc::new(World::new(WorldConfig::reduced())?);
        let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
        let mut notes = Vec::new();
        let mut passed = true;
        for mode in [TransferMode::LocalFull, TransferMode::LocalStm, TransferMode::GlobalFull, TransferMode::GlobalStm] {
            let params = ParameterSet::for_vocab(EncoderConfig::default(), world.vocab(), seed)?;
            let policy = LearnedPolicy { mode, params };
            let mut rng = seed::stream(seed, &[seed::tag("mode-check")]);
            let (mut mixed_steps, mut long_edges, mut steps) = (0usize, 0usize, 0usize);
            rl::run_episode(
                world.clone(),
                rl::episode_seed(seed, QuerySplit::Test, 0),
                agent,
                Controller::Learned(&policy),
                0.5,
                &mut rng,
                0,
                |t| {
                    steps += 1;
                    if t.actions.windows(2).any(|w| w[0] != w[1]) {
                        mixed_steps += 1;
                    }
                    long_edges += t.graph.map_or(0, |g| g.count_source(Source::LongTerm));
                },
            )?;
            let ok = match mode {
                TransferMode::GlobalFull | TransferMode::GlobalStm if mixed_steps > 0 => false,
                TransferMode::LocalStm | TransferMode::GlobalStm if long_edges > 0 => false,
                _ => true,
            };
            passed &= ok;
            notes.push(format!("{mode}: {steps} steps, {mixed_steps} mixed, {long_edges} long-term edges"));
        }
        Ok((passed, notes.join("; ")))
    })
}
