use std::sync::Arc;

use kgmem::agent::{run_baseline_episode, AgentConfig, MemoryState};
use kgmem::env::{QuerySplit, World, WorldConfig};
use kgmem::kg::{EntityId, MemoryItem, RelationId, Triple};
use kgmem::memory::TransferAction::{self, Drop, Keep};
use kgmem::neural::{q_values, EncoderConfig, EncoderKind, HeadMode, ParameterSet};
use kgmem::oracle::numeric_gradient;
use kgmem::policies::TransferBaseline;
use kgmem::rl::*;
use kgmem::seed;

fn item(h: u32, r: u32, t: u32) -> MemoryItem {
    MemoryItem::fresh(Triple::new(EntityId(h), RelationId(r), EntityId(t)), 0)
}

fn short_state(step: u32, n: usize) -> Arc<MemoryState> {
    Arc::new(MemoryState {
        step,
        short: (0..n as u32).map(|i| item(i % 4, i % 5, 4 + i % 3)).collect(),
        long: vec![item(0, 0, 5)],
    })
}

fn transition(n: usize, n_next: usize, reward: f64, done: bool) -> Transition {
    Transition {
        state: short_state(1, n),
        actions: (0..n).map(|i| TransferAction::from_index(i % 2)).collect(),
        reward,
        next: short_state(2, n_next),
        done,
    }
}

fn params(seed: u64) -> ParameterSet {
    ParameterSet::init(EncoderConfig::new(EncoderKind::Gcn), 8, 5, seed).unwrap()
}

#[test]
fn epsilon_schedule_examples() {
    let cfg = TrainerConfig::default();
    assert_eq!(cfg.epsilon_at(0), 1.0);
    assert!((cfg.epsilon_at(5_000) - 0.505).abs() < 1e-12);
    assert_eq!(cfg.epsilon_at(10_000), 0.01);
    assert_eq!(cfg.epsilon_at(1_000_000), 0.01);
}

#[test]
fn greedy_actions_take_the_argmax_and_ties_drop() {
    let mut rng = seed::stream(0, &[]);
    let q = [[1.0, 3.0], [5.0, 2.0], [4.0, 4.0]];
    assert_eq!(select_actions(&q, 3, HeadMode::Local, 0.0, &mut rng), [Keep, Drop, Drop]);
    assert_eq!(select_actions(&[[0.0, 1.0]], 4, HeadMode::Global, 0.0, &mut rng), [Keep; 4]);
    assert!(select_actions(&[[0.0, 1.0]], 0, HeadMode::Global, 0.0, &mut rng).is_empty());
}

#[test]
fn fully_random_actions_keep_half_the_items() {
    let mut rng = seed::stream(7, &[]);
    let q = vec![[0.0, 1.0]; 10_000];
    let keeps = select_actions(&q, q.len(), HeadMode::Local, 1.0, &mut rng)
        .iter()
        .filter(|a| a.is_keep())
        .count();
    let frac = keeps as f64 / 10_000.0;
    assert!((frac - 0.5).abs() <= 0.02, "{frac}");
}

#[test]
fn global_exploration_broadcasts_one_draw() {
    let mut rng = seed::stream(3, &[]);
    for _ in 0..200 {
        let a = select_actions(&[[0.3, 0.1]], 6, HeadMode::Global, 1.0, &mut rng);
        assert!(a.iter().all(|x| *x == a[0]));
    }
}

#[test]
fn td_targets_follow_the_examples() {
    assert_eq!(td_target(1.0, true, 0.95, 123.0), 1.0);
    assert_eq!(td_target(0.0, false, 0.95, 2.0), 1.9);
    assert_eq!(bootstrap([0.0, 1.0], [3.0, 2.0], true), 2.0);
    assert_eq!(bootstrap([0.0, 1.0], [3.0, 2.0], false), 3.0);
    assert_eq!(matched_len(5, 3), 3);
}

#[test]
fn matched_pairs_follow_the_min_rule() {
    let (online, target) = (params(1), params(2));
    let cfg = TrainerConfig::default();
    let mut rng = seed::stream(0, &[]);
    let batch = [transition(5, 3, 0.0, false), transition(3, 5, 1.0, false), transition(4, 0, 1.0, false)];
    let refs: Vec<&Transition> = batch.iter().collect();
    let terms = td_batch(&refs, &online, &target, TransferMode::LocalStm, &cfg, 100, &mut rng).unwrap();
    let lens: Vec<usize> = terms.iter().map(|(t, _)| t.len()).collect();
    assert_eq!(lens, [3, 3, 0]);
    assert!(terms[2].1.is_none());
}

#[test]
fn terminal_transitions_ignore_the_next_state() {
    let (online, target) = (params(1), params(2));
    let cfg = TrainerConfig::default();
    let mut rng = seed::stream(0, &[]);
    let t = transition(4, 4, 1.0, true);
    let terms = td_batch(&[&t], &online, &target, TransferMode::LocalFull, &cfg, 100, &mut rng).unwrap();
    assert_eq!(terms[0].0.y, [1.0; 4]);
}

#[test]
fn double_dqn_equals_max_form_when_networks_match() {
    let online = params(4);
    let mut rng = seed::stream(0, &[]);
    let batch = [transition(6, 4, 1.0, false), transition(2, 7, 0.0, false)];
    let refs: Vec<&Transition> = batch.iter().collect();
    for mode in [TransferMode::LocalStm, TransferMode::GlobalFull] {
        let run = |double_dqn: bool, rng: &mut _| {
            let cfg = TrainerConfig { double_dqn, ..TrainerConfig::default() };
            td_batch(&refs, &online, &online, mode, &cfg, 100, rng)
                .unwrap()
                .into_iter()
                .map(|(t, _)| t)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(true, &mut rng), run(false, &mut rng));
    }
}

#[test]
fn loss_examples() {
    assert_eq!(td_loss(&[TdTerms { q: vec![2.0], y: vec![2.0] }]), Some(0.0));
    assert_eq!(td_loss(&[TdTerms { q: vec![1.0, -1.0], y: vec![0.0, 0.0] }]), Some(1.0));
    assert_eq!(td_loss(&[TdTerms { q: vec![], y: vec![] }]), None);
    // Empty transitions do not dilute the mean.
    let mixed = [TdTerms { q: vec![3.0], y: vec![1.0] }, TdTerms { q: vec![], y: vec![] }];
    assert_eq!(td_loss(&mixed), Some(4.0));
}

#[test]
fn loss_gradient_matches_finite_differences_with_fixed_targets() {
    let online = params(5);
    let target = params(6);
    let mut rng = seed::stream(0, &[]);
    let batch = [transition(3, 2, 1.0, false), transition(2, 3, 0.0, true)];
    let refs: Vec<&Transition> = batch.iter().collect();
    for mode in [TransferMode::LocalFull, TransferMode::GlobalStm] {
        let cfg = TrainerConfig { mode, ..TrainerConfig::default() };
        let terms = td_batch(&refs, &online, &target, mode, &cfg, 100, &mut rng).unwrap();
        let (loss, grad) = loss_and_gradient(&refs, &terms, &online).unwrap();
        let ys: Vec<Vec<f64>> = terms.iter().map(|(t, _)| t.y.clone()).collect();
        let recompute = |p: &ParameterSet| {
            let per: Vec<TdTerms> = refs
                .iter()
                .zip(&ys)
                .map(|(t, y)| {
                    let g = graph_view(mode, &t.state, 100);
                    let q = q_values(&g, &t.state.short, p, mode.head()).unwrap();
                    let qs = (0..y.len()).map(|j| q.value(j, t.actions[j].index())).collect();
                    TdTerms { q: qs, y: y.clone() }
                })
                .collect();
            td_loss(&per).unwrap()
        };
        assert!((recompute(&online) - loss).abs() < 1e-12);
        let numeric = numeric_gradient(&online, 1e-6, recompute);
        for (a, n) in grad.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
        }
    }
}

#[test]
fn gradient_clipping_is_per_coordinate() {
    let mut g = vec![-25.0, -10.0, 0.5, 10.0, 11.0];
    clip_gradient(&mut g, 10.0);
    assert_eq!(g, [-10.0, -10.0, 0.5, 10.0, 10.0]);
}

#[test]
fn replay_buffer_is_a_bounded_fifo_with_distinct_samples() {
    let mut buf = ReplayBuffer::new(5, 3);
    let mut rng = seed::stream(0, &[]);
    for i in 0..2 {
        buf.push(transition(2, 2, i as f64, false)).unwrap();
    }
    assert!(!buf.is_warm());
    assert!(buf.sample(2, &mut rng).is_none());
    for i in 2..9 {
        buf.push(transition(2, 2, i as f64, false)).unwrap();
    }
    assert_eq!(buf.len(), 5);
    let sample = buf.sample(5, &mut rng).unwrap();
    let mut rewards: Vec<f64> = sample.iter().map(|t| t.reward).collect();
    rewards.sort_by(f64::total_cmp);
    assert_eq!(rewards, [4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(buf.sample(32, &mut rng).unwrap().len(), 5);

    let mut bad = transition(2, 2, 0.0, false);
    bad.actions.pop();
    assert!(buf.push(bad).is_err());
}

fn smoke() -> (TrainerConfig, WorldConfig, AgentConfig) {
    let cfg = TrainerConfig {
        total_iterations: 260,
        warm_start: 60,
        batch_size: 8,
        target_update_interval: 50,
        ..TrainerConfig::default()
    };
    let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
    (cfg, WorldConfig::reduced(), agent)
}

#[test]
fn updates_start_at_the_warm_start_iteration() {
    let (cfg, world, agent) = smoke();
    let out = train(&cfg, EncoderConfig::default(), &world, agent, 0).unwrap();
    assert_eq!(out.metrics.len(), 260);
    assert_eq!(out.updates, 200);
    for (i, row) in out.metrics.iter().enumerate() {
        assert_eq!(row.loss.is_some(), i >= 60, "iteration index {i}");
        assert_eq!(row.epsilon, cfg.epsilon_at(i));
    }
    assert_eq!(out.td_pair_counts.len(), 200 * 8);
    // The 100-step episodes end at iterations 100 and 200.
    let ends: Vec<usize> = out.metrics.iter().filter(|m| m.episode_score.is_some()).map(|m| m.iteration).collect();
    assert_eq!(ends, [100, 200]);
    assert_eq!(out.episode_scores.len(), 2);
}

#[test]
fn training_is_bitwise_reproducible() {
    let (cfg, world, agent) = smoke();
    let a = train(&cfg, EncoderConfig::new(EncoderKind::StareLite), &world, agent, 9).unwrap();
    let b = train(&cfg, EncoderConfig::new(EncoderKind::StareLite), &world, agent, 9).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(decisions_jsonl(&a.decisions), decisions_jsonl(&b.decisions));
    let c = train(&cfg, EncoderConfig::new(EncoderKind::StareLite), &world, agent, 10).unwrap();
    assert_ne!(decisions_jsonl(&a.decisions), decisions_jsonl(&c.decisions));
}

#[test]
fn baselines_score_the_same_through_the_evaluation_path() {
    let world = WorldConfig::reduced();
    let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
    let env = Arc::new(World::new(world.with_split(QuerySplit::Test)).unwrap());
    for b in [TransferBaseline::Always, TransferBaseline::NovelOnly, TransferBaseline::Random { p: 0.5 }] {
        let report = evaluate(&[(3, Controller::Baseline(b))], &world, agent, QuerySplit::Test, 4, |_, _| {}).unwrap();
        for k in 0..4 {
            let direct = run_baseline_episode(env.clone(), episode_seed(3, QuerySplit::Test, k), agent, b).unwrap();
            assert_eq!(report.per_seed[0].scores[k], direct);
        }
    }
}

#[test]
fn evaluation_reports_population_statistics_over_seeds() {
    let (mean, std) = mean_std(&[38.0, 40.0, 36.0, 42.0, 39.0]);
    assert_eq!((mean, std), (39.0, 2.0));
    assert_eq!(mean_std(&[17.0]), (17.0, 0.0));

    let world = WorldConfig::reduced();
    let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
    let seeds: Vec<(u64, Controller)> = [0, 5, 10, 15, 20]
        .into_iter()
        .map(|s| (s, Controller::Baseline(TransferBaseline::Always)))
        .collect();
    let r = evaluate(&seeds, &world, agent, QuerySplit::Test, 3, |_, _| {}).unwrap();
    assert_eq!(r.per_seed.len(), 5);
    let means: Vec<f64> = r.per_seed.iter().map(|s| s.mean).collect();
    assert_eq!(mean_std(&means), (r.mean, r.std));
}

#[test]
fn greedy_evaluation_is_repeatable_and_checkpoints_round_trip() {
    let world = WorldConfig::reduced();
    let agent = AgentConfig { capacity: 32, ..AgentConfig::default() };
    let env = World::new(world.clone()).unwrap();
    let policy = LearnedPolicy {
        mode: TransferMode::GlobalFull,
        params: ParameterSet::for_vocab(EncoderConfig::new(EncoderKind::Rgcn), env.vocab(), 2).unwrap(),
    };
    let text = PolicyCheckpoint::new(&policy, env.vocab()).to_json();
    let back = PolicyCheckpoint::from_json(&text).unwrap().into_policy(env.vocab()).unwrap();
    assert_eq!(back, policy);
    let eval = |p: &LearnedPolicy| evaluate(&[(1, Controller::Learned(p))], &world, agent, QuerySplit::Train, 2, |_, _| {}).unwrap();
    assert_eq!(eval(&policy), eval(&back));

    let other = World::new(WorldConfig::default()).unwrap();
    assert!(PolicyCheckpoint::from_json(&text).unwrap().into_policy(other.vocab()).is_err());
}
