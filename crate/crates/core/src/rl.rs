//! Per-item deep Q-learning of the transfer policy.
//!
//! Every short-term item gets its own keep/drop value. Consecutive
//! short-term sets differ in size, so temporal-difference terms pair items
//! index-wise up to the shorter length.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentEpisode, MemoryState, StepRecord};
use crate::env::{HiddenState, QuerySplit, World, WorldConfig};
use crate::error::{Error, ParseKindError, Result};
use crate::kg::{build_graph_view, ContextMode, GraphView, TripleRecord, Vocab};
use crate::memory::TransferAction;
use crate::neural::{q_values, Checkpoint, EncoderConfig, HeadMode, ParameterSet, QForward};
use crate::policies::TransferBaseline;
use crate::seed::{self, Rng};

/// Head type and encoder context of a learned transfer policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    LocalFull,
    #[default]
    LocalStm,
    GlobalFull,
    GlobalStm,
}

impl TransferMode {
    pub const ALL: [TransferMode; 4] = [
        TransferMode::LocalFull,
        TransferMode::LocalStm,
        TransferMode::GlobalFull,
        TransferMode::GlobalStm,
    ];

    pub fn head(self) -> HeadMode {
        match self {
            TransferMode::LocalFull | TransferMode::LocalStm => HeadMode::Local,
            TransferMode::GlobalFull | TransferMode::GlobalStm => HeadMode::Global,
        }
    }

    pub fn context(self) -> ContextMode {
        match self {
            TransferMode::LocalFull | TransferMode::GlobalFull => ContextMode::Full,
            TransferMode::LocalStm | TransferMode::GlobalStm => ContextMode::StmOnly,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::LocalFull => "local_full",
            TransferMode::LocalStm => "local_stm",
            TransferMode::GlobalFull => "global_full",
            TransferMode::GlobalStm => "global_stm",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferMode {
    type Err = ParseKindError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TransferMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| ParseKindError::new("transfer mode", s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lr: f64,
    pub target_update_interval: usize,
    pub total_iterations: usize,
    pub epsilon_max: f64,
    pub epsilon_min: f64,
    pub epsilon_decay_iters: usize,
    pub double_dqn: bool,
    pub grad_clip_value: f64,
    pub seeds: Vec<u64>,
    pub mode: TransferMode,
    pub replay_capacity: usize,
    pub warm_start: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Re-permute next-state items before index-wise matching.
    pub reshuffle_matching: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lr: 1e-4,
            target_update_interval: 50,
            total_iterations: 20_000,
            epsilon_max: 1.0,
            epsilon_min: 0.01,
            epsilon_decay_iters: 10_000,
            double_dqn: true,
            grad_clip_value: 10.0,
            seeds: vec![0, 5, 10, 15, 20],
            mode: TransferMode::LocalStm,
            replay_capacity: 20_000,
            warm_start: 2_000,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            reshuffle_matching: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("lr", self.lr),
            ("epsilon_max", self.epsilon_max),
            ("epsilon_min", self.epsilon_min),
            ("grad_clip_value", self.grad_clip_value),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("trainer.{key}"), "must be positive"));
            }
        }
        let counts = [
            ("target_update_interval", self.target_update_interval),
            ("total_iterations", self.total_iterations),
            ("epsilon_decay_iters", self.epsilon_decay_iters),
            ("replay_capacity", self.replay_capacity),
            ("warm_start", self.warm_start),
            ("batch_size", self.batch_size),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("trainer.{key}"), "must be positive"));
            }
        }
        if self.gamma > 1.0 {
            return Err(Error::config("trainer.gamma", "must not exceed 1"));
        }
        if self.epsilon_min > self.epsilon_max || self.epsilon_max > 1.0 {
            return Err(Error::config(
                "trainer.epsilon_min",
                "need 0 < epsilon_min <= epsilon_max <= 1",
            ));
        }
        if self.warm_start > self.replay_capacity {
            return Err(Error::config("trainer.warm_start", "exceeds replay_capacity"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("trainer.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_max` to `epsilon_min`, then constant.
    pub fn epsilon_at(&self, iteration: usize) -> f64 {
        if iteration >= self.epsilon_decay_iters {
            return self.epsilon_min;
        }
        let frac = iteration as f64 / self.epsilon_decay_iters as f64;
        self.epsilon_max + (self.epsilon_min - self.epsilon_max) * frac
    }
}

/// Per-item epsilon-greedy decisions for `n` items.
///
/// Local rows are decided independently; a global row is decided once and
/// applied to every item. Ties go to drop.
pub fn select_actions(
    q: &[[f64; 2]],
    n: usize,
    head: HeadMode,
    epsilon: f64,
    rng: &mut Rng,
) -> Vec<TransferAction> {
    let mut decide = |row: &[f64; 2]| {
        if rng.random::<f64>() < epsilon {
            TransferAction::from_index(usize::from(rng.random_bool(0.5)))
        } else {
            TransferAction::from_index(usize::from(row[1] > row[0]))
        }
    };
    match head {
        HeadMode::Local => {
            assert_eq!(q.len(), n, "one Q row per item");
            q.iter().map(decide).collect()
        }
        HeadMode::Global => {
            if n == 0 {
                return Vec::new();
            }
            vec![decide(&q[0]); n]
        }
    }
}

/// One stored step: `M_t`, the decisions on its short-term items, the
/// step reward and `M_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<MemoryState>,
    pub actions: Vec<TransferAction>,
    pub reward: f64,
    pub next: Arc<MemoryState>,
    pub done: bool,
}

/// Bounded FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    warm_start: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, warm_start: usize) -> Self {
        Self {
            capacity,
            warm_start,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.items.len() >= self.warm_start
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.actions.len() != t.state.short.len() {
            return Err(Error::usage(format!(
                "{} actions for {} short-term items",
                t.actions.len(),
                t.state.short.len()
            )));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform sample of distinct transitions; `None` before warm start.
    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Option<Vec<&Transition>> {
        if !self.is_warm() || self.items.is_empty() {
            return None;
        }
        let k = batch.min(self.items.len());
        Some(
            index::sample(rng, self.items.len(), k)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

/// Number of matched item pairs between consecutive short-term sets.
pub fn matched_len(n: usize, n_next: usize) -> usize {
    n.min(n_next)
}

/// Bootstrap value of one next-state item: the target network's value of
/// the online network's greedy action, or the target network's maximum.
pub fn bootstrap(online_next: [f64; 2], target_next: [f64; 2], double_dqn: bool) -> f64 {
    if double_dqn {
        let a = usize::from(online_next[1] > online_next[0]);
        target_next[a]
    } else {
        target_next[0].max(target_next[1])
    }
}

pub fn td_target(reward: f64, done: bool, gamma: f64, bootstrap: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * bootstrap
    }
}

/// The matched TD terms of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TdTerms {
    /// Online values of the taken actions on the first `ℓ` items.
    pub q: Vec<f64>,
    pub y: Vec<f64>,
}

impl TdTerms {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Mean over transitions with `ℓ > 0` of `(1/ℓ) Σ (q - y)²`; `None` when
/// every transition is empty.
pub fn td_loss(terms: &[TdTerms]) -> Option<f64> {
    let used: Vec<&TdTerms> = terms.iter().filter(|t| !t.is_empty()).collect();
    if used.is_empty() {
        return None;
    }
    let total: f64 = used
        .iter()
        .map(|t| {
            let sq: f64 = t.q.iter().zip(&t.y).map(|(q, y)| (q - y).powi(2)).sum();
            sq / t.len() as f64
        })
        .sum();
    Some(total / used.len() as f64)
}

/// A learned transfer policy: encoder parameters plus head mode and context.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    pub mode: TransferMode,
    pub params: ParameterSet,
}

impl LearnedPolicy {
    pub fn graph_view(&self, state: &MemoryState, horizon: u32) -> GraphView {
        graph_view(self.mode, state, horizon)
    }

    pub fn q(&self, state: &MemoryState, horizon: u32) -> Result<QForward> {
        q_for(&self.params, self.mode, state, horizon)
    }
}

pub fn graph_view(mode: TransferMode, state: &MemoryState, horizon: u32) -> GraphView {
    build_graph_view(&state.short, &state.long, mode.context(), state.step, horizon)
}

fn q_for(params: &ParameterSet, mode: TransferMode, state: &MemoryState, horizon: u32) -> Result<QForward> {
    let graph = graph_view(mode, state, horizon);
    q_values(&graph, &state.short, params, mode.head())
}

/// TD terms of every transition in `batch`, with the online forward passes
/// kept for backpropagation.
pub fn td_batch(
    batch: &[&Transition],
    online: &ParameterSet,
    target: &ParameterSet,
    mode: TransferMode,
    cfg: &TrainerConfig,
    horizon: u32,
    rng: &mut Rng,
) -> Result<Vec<(TdTerms, Option<QForward>)>> {
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        let n = t.state.short.len();
        let n_next = t.next.short.len();
        let l = matched_len(n, n_next);
        if l == 0 {
            out.push((TdTerms { q: vec![], y: vec![] }, None));
            continue;
        }
        let fwd = q_for(online, mode, &t.state, horizon)?;
        let mut order: Vec<usize> = (0..n_next).collect();
        if cfg.reshuffle_matching {
            for i in (1..n_next).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
        }
        let (next_online, next_target) = if t.done {
            (None, None)
        } else {
            let tq = q_for(target, mode, &t.next, horizon)?;
            let oq = if cfg.double_dqn {
                Some(q_for(online, mode, &t.next, horizon)?)
            } else {
                None
            };
            (oq, Some(tq))
        };
        let mut terms = TdTerms {
            q: Vec::with_capacity(l),
            y: Vec::with_capacity(l),
        };
        for (j, &k) in order.iter().enumerate().take(l) {
            terms.q.push(fwd.value(j, t.actions[j].index()));
            let boot = match &next_target {
                None => 0.0,
                Some(tq) => {
                    let tv = row_of(tq, k);
                    let ov = next_online.as_ref().map_or(tv, |o| row_of(o, k));
                    bootstrap(ov, tv, cfg.double_dqn)
                }
            };
            terms.y.push(td_target(t.reward, t.done, cfg.gamma, boot));
        }
        out.push((terms, Some(fwd)));
    }
    Ok(out)
}

fn row_of(q: &QForward, i: usize) -> [f64; 2] {
    [q.value(i, 0), q.value(i, 1)]
}

/// Loss of a TD batch and its parameter gradient.
pub fn loss_and_gradient(
    batch: &[&Transition],
    terms: &[(TdTerms, Option<QForward>)],
    params: &ParameterSet,
) -> Option<(f64, Vec<f64>)> {
    let plain: Vec<TdTerms> = terms.iter().map(|(t, _)| t.clone()).collect();
    let loss = td_loss(&plain)?;
    let used = plain.iter().filter(|t| !t.is_empty()).count() as f64;
    let mut grad = params.zeros_like();
    for (tr, (t, fwd)) in batch.iter().zip(terms) {
        let Some(fwd) = fwd else { continue };
        let l = t.len() as f64;
        let mut dq = vec![[0.0; 2]; fwd.rows().len()];
        for j in 0..t.len() {
            let g = 2.0 * (t.q[j] - t.y[j]) / (l * used);
            let a = tr.actions[j].index();
            match fwd.mode() {
                HeadMode::Local => dq[j][a] += g,
                HeadMode::Global => dq[0][a] += g,
            }
        }
        fwd.backward(params, &dq, &mut grad);
    }
    Some((loss, grad))
}

/// Clamps every coordinate to `[-clip, clip]`.
pub fn clip_gradient(grad: &mut [f64], clip: f64) {
    for g in grad {
        *g = g.clamp(-clip, clip);
    }
}

/// Plain gradient descent or Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainerConfig, len: usize) -> Self {
        let moments = if cfg.optimizer == OptimizerKind::Adam { len } else { 0 };
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grad: &[f64]) {
        let values = params.values_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (x, g) in values.iter_mut().zip(grad) {
                    *x -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t = self.t.saturating_add(1);
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..values.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    values[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
    }
}

/// One row of the training metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub episode: usize,
    pub loss: Option<f64>,
    pub epsilon: f64,
    /// Set on the last step of an episode.
    pub episode_score: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,episode,loss,epsilon,episode_score";

impl MetricRow {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.iteration,
            self.episode,
            opt(self.loss),
            self.epsilon,
            opt(self.episode_score)
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// One transfer decision, as written to the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub episode: usize,
    pub step: u32,
    pub triple: TripleRecord,
    pub action: u8,
    pub q_drop: f64,
    pub q_keep: f64,
    pub epsilon: f64,
    /// Object asked about at this step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

pub fn decisions_jsonl(records: &[DecisionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    out
}

/// What an episode step exposes to observers.
#[derive(Debug)]
pub struct StepTrace<'a> {
    pub episode: usize,
    /// Simulator state before the step.
    pub hidden: &'a HiddenState,
    /// Memory before the step's transfer.
    pub state: &'a MemoryState,
    /// Encoder input; learned controllers only.
    pub graph: Option<&'a GraphView>,
    pub q: Option<&'a [[f64; 2]]>,
    pub actions: &'a [TransferAction],
    pub epsilon: f64,
    pub record: &'a StepRecord,
}

/// Who makes the transfer decisions in an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Learned(&'a LearnedPolicy),
    Baseline(TransferBaseline),
}

/// Episode seed of the `k`-th episode of run seed `seed` on `split`.
pub fn episode_seed(seed: u64, split: QuerySplit, k: usize) -> u64 {
    seed::derive(seed, &[seed::tag("episode"), seed::tag(split.label()), k as u64])
}

/// Runs one episode, reporting every step to `observe`; returns the score.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    world: Arc<World>,
    ep_seed: u64,
    agent: AgentConfig,
    controller: Controller<'_>,
    epsilon: f64,
    rng: &mut Rng,
    episode: usize,
    mut observe: impl FnMut(&StepTrace<'_>),
) -> Result<f64> {
    let horizon = world.horizon();
    let mut ep = AgentEpisode::new(world, ep_seed, agent);
    while !ep.is_done() {
        let state = ep.memory_state();
        let hidden = ep.env().state().clone();
        let (graph, q, actions) = match controller {
            Controller::Learned(policy) => {
                let graph = policy.graph_view(&state, horizon);
                let fwd = q_values(&graph, &state.short, &policy.params, policy.mode.head())?;
                let actions =
                    select_actions(fwd.rows(), state.short.len(), policy.mode.head(), epsilon, rng);
                (Some(graph), Some(fwd.rows().to_vec()), actions)
            }
            Controller::Baseline(b) => (None, None, ep.baseline_actions(b)),
        };
        let record = ep.step(&actions)?;
        observe(&StepTrace {
            episode,
            hidden: &hidden,
            state: &state,
            graph: graph.as_ref(),
            q: q.as_deref(),
            actions: &actions,
            epsilon,
            record: &record,
        });
    }
    Ok(ep.score())
}

/// Decision-log records of one step.
pub fn step_decisions(trace: &StepTrace<'_>, vocab: &Vocab) -> Vec<DecisionRecord> {
    trace
        .state
        .short
        .iter()
        .zip(trace.actions)
        .enumerate()
        .map(|(i, (item, a))| {
            let row = trace.q.map_or([f64::NAN; 2], |q| if q.len() == 1 { q[0] } else { q[i] });
            DecisionRecord {
                episode: trace.episode,
                step: trace.state.step,
                triple: vocab.triple_record(&item.triple),
                action: a.index() as u8,
                q_drop: row[0],
                q_keep: row[1],
                epsilon: trace.epsilon,
                query: Some(vocab.entity_label(trace.record.query.head).to_owned()),
            }
        })
        .collect()
}

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub policy: LearnedPolicy,
    pub metrics: Vec<MetricRow>,
    pub decisions: Vec<DecisionRecord>,
    pub episode_scores: Vec<f64>,
    pub updates: usize,
    /// Matched-pair count of every transition used in every update.
    pub td_pair_counts: Vec<usize>,
}

/// Trains one transfer policy with run seed `seed`.
///
/// Each environment step is one iteration: act, store the transition,
/// then update. Updates start after `warm_start` steps.
pub fn train(
    cfg: &TrainerConfig,
    encoder: EncoderConfig,
    world: &WorldConfig,
    agent: AgentConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let world = Arc::new(World::new(world.with_split(QuerySplit::Train))?);
    let horizon = world.horizon();
    let mut online = ParameterSet::for_vocab(encoder, world.vocab(), seed)?;
    let mut target = online.clone();
    let mut opt = Optimizer::new(cfg, online.len());
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, cfg.warm_start);
    let mut act_rng = seed::stream(seed, &[seed::tag("epsilon")]);
    let mut replay_rng = seed::stream(seed, &[seed::tag("replay")]);
    let head = cfg.mode.head();

    let mut metrics = Vec::with_capacity(cfg.total_iterations);
    let mut decisions = Vec::new();
    let mut episode_scores = Vec::new();
    let mut td_pair_counts = Vec::new();
    let mut updates = 0;
    let mut iteration = 0;
    let mut episode = 0;
    while iteration < cfg.total_iterations {
        let ep_seed = episode_seed(seed, QuerySplit::Train, episode);
        let mut ep = AgentEpisode::new(world.clone(), ep_seed, agent);
        let mut state = Arc::new(ep.memory_state());
        while !ep.is_done() && iteration < cfg.total_iterations {
            let epsilon = cfg.epsilon_at(iteration);
            let fwd = q_for(&online, cfg.mode, &state, horizon)?;
            let actions = select_actions(fwd.rows(), state.short.len(), head, epsilon, &mut act_rng);
            let hidden = ep.env().state().clone();
            let rec = ep.step(&actions)?;
            let next = Arc::new(ep.memory_state());
            decisions.extend(step_decisions(
                &StepTrace {
                    episode,
                    hidden: &hidden,
                    state: &state,
                    graph: None,
                    q: Some(fwd.rows()),
                    actions: &actions,
                    epsilon,
                    record: &rec,
                },
                world.vocab(),
            ));
            replay.push(Transition {
                state: state.clone(),
                actions,
                reward: rec.reward,
                next: next.clone(),
                done: rec.done,
            })?;

            let mut loss = None;
            let batch = if iteration >= cfg.warm_start {
                replay.sample(cfg.batch_size, &mut replay_rng)
            } else {
                None
            };
            if let Some(batch) = batch {
                let terms = td_batch(&batch, &online, &target, cfg.mode, cfg, horizon, &mut replay_rng)?;
                td_pair_counts.extend(terms.iter().map(|(t, _)| t.len()));
                if let Some((l, mut grad)) = loss_and_gradient(&batch, &terms, &online) {
                    clip_gradient(&mut grad, cfg.grad_clip_value);
                    opt.step(&mut online, &grad);
                    updates += 1;
                    loss = Some(l);
                    if updates % cfg.target_update_interval == 0 {
                        target.copy_from(&online);
                    }
                }
            }
            iteration += 1;
            metrics.push(MetricRow {
                iteration,
                episode,
                loss,
                epsilon,
                episode_score: rec.done.then(|| ep.score()),
            });
            state = next;
        }
        if ep.is_done() {
            episode_scores.push(ep.score());
        }
        episode += 1;
    }
    Ok(TrainOutcome {
        seed,
        policy: LearnedPolicy {
            mode: cfg.mode,
            params: online,
        },
        metrics,
        decisions,
        episode_scores,
        updates,
        td_pair_counts,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub mean: f64,
    pub scores: Vec<f64>,
}

/// Greedy evaluation summary: per-seed episode scores and the mean and
/// population standard deviation of the per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: QuerySplit,
    pub per_seed: Vec<SeedScores>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluates one controller per seed over `episodes` episodes each.
pub fn evaluate<'a>(
    controllers: &[(u64, Controller<'a>)],
    world: &WorldConfig,
    agent: AgentConfig,
    split: QuerySplit,
    episodes: usize,
    mut observe: impl FnMut(u64, &StepTrace<'_>),
) -> Result<EvalReport> {
    let world = Arc::new(World::new(world.with_split(split))?);
    let mut per_seed = Vec::with_capacity(controllers.len());
    for &(seed, controller) in controllers {
        let mut rng = seed::stream(seed, &[seed::tag("eval")]);
        let mut scores = Vec::with_capacity(episodes);
        for k in 0..episodes {
            let s = run_episode(
                world.clone(),
                episode_seed(seed, split, k),
                agent,
                controller,
                0.0,
                &mut rng,
                k,
                |t| observe(seed, t),
            )?;
            scores.push(s);
        }
        let (mean, _) = mean_std(&scores);
        per_seed.push(SeedScores { seed, mean, scores });
    }
    let means: Vec<f64> = per_seed.iter().map(|s| s.mean).collect();
    let (mean, std) = mean_std(&means);
    Ok(EvalReport {
        split,
        per_seed,
        mean,
        std,
    })
}

/// Checkpoint of a learned policy: the parameter checkpoint plus its mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub mode: TransferMode,
    #[serde(flatten)]
    pub params: Checkpoint,
}

impl PolicyCheckpoint {
    pub fn new(policy: &LearnedPolicy, vocab: &Vocab) -> Self {
        Self {
            mode: policy.mode,
            params: Checkpoint::new(&policy.params, vocab),
        }
    }

    pub fn into_policy(self, vocab: &Vocab) -> Result<LearnedPolicy> {
        Ok(LearnedPolicy {
            mode: self.mode,
            params: self.params.into_params(vocab)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
