use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TransferSpec};
use crate::env::{HiddenStateRecord, Move, QueryRecord, QuerySplit, World};
use crate::kg::ItemRecord;
use crate::neural::ParameterSet;
use crate::rl::{self, Controller, EvalReport, LearnedPolicy, PolicyCheckpoint, StepTrace};
use crate::{Error, Result};

/// What `train` leaves next to its artifacts. The embedded config and the
/// seed list are enough to rebuild every file bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub parameter_count: usize,
    pub wall_clock_secs: f64,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub iterations: usize,
    pub episodes: usize,
    pub updates: usize,
    pub wall_clock_secs: f64,
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.json"))
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn decisions_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("decisions_seed{seed}.jsonl"))
}

pub fn scores_path(dir: &Path, split: QuerySplit) -> PathBuf {
    dir.join(format!("scores_{}.csv", split.label()))
}

pub fn eval_decisions_path(dir: &Path, split: QuerySplit, seed: u64) -> PathBuf {
    dir.join(format!("eval_decisions_{}_seed{seed}.jsonl", split.label()))
}

pub fn trace_path(dir: &Path, split: QuerySplit, seed: u64) -> PathBuf {
    dir.join(format!("trace_{}_seed{seed}.jsonl", split.label()))
}

/// Trains one policy per seed, in parallel, and writes the checkpoint,
/// metrics CSV and decision log of each seed plus `manifest.json`.
pub fn train_run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let trainer = match (cfg.policies.transfer, cfg.effective_trainer()) {
        (TransferSpec::Learned { .. }, Some(t)) => t,
        _ => {
            return Err(Error::config(
                "policies.transfer",
                "train needs learned transfer; evaluate baselines with eval",
            ))
        }
    };
    let encoder = cfg.encoder.expect("validated with learned transfer");
    let dir = cfg.ensure_output_dir()?;
    let world = World::new(cfg.world.clone())?;
    let parameter_count = ParameterSet::for_vocab(encoder, world.vocab(), 0)?.len();
    super::write(&dir.join("config.json"), cfg.to_json())?;

    let start = Instant::now();
    let agent = cfg.policies.agent();
    let seeds = cfg.seeds();
    let results: Vec<Result<SeedRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (trainer, world) = (&trainer, &world);
                s.spawn(move || -> Result<SeedRun> {
                    let t0 = Instant::now();
                    let out = rl::train(trainer, encoder, &cfg.world, agent, seed)?;
                    let vocab = world.vocab();
                    super::write(&checkpoint_path(dir, seed), PolicyCheckpoint::new(&out.policy, vocab).to_json())?;
                    super::write(&metrics_path(dir, seed), rl::metrics_csv(&out.metrics))?;
                    super::write(&decisions_path(dir, seed), rl::decisions_jsonl(&out.decisions))?;
                    Ok(SeedRun {
                        seed,
                        iterations: out.metrics.len(),
                        episodes: out.episode_scores.len(),
                        updates: out.updates,
                        wall_clock_secs: t0.elapsed().as_secs_f64(),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        variant: cfg.variant_name(),
        config: cfg.clone(),
        seeds,
        parameter_count,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        runs,
    };
    super::write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )?;
    Ok(manifest)
}

/// One traced agent step in label form: the hidden state and memory
/// before the step, and what the step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seed: u64,
    pub episode: usize,
    pub step: u32,
    pub hidden: HiddenStateRecord,
    pub short: Vec<ItemRecord>,
    pub long: Vec<ItemRecord>,
    pub query: QueryRecord,
    pub answer: String,
    pub reward: f64,
    #[serde(rename = "move")]
    pub mv: Move,
    pub actions: Vec<u8>,
}

impl TraceRecord {
    pub fn new(seed: u64, trace: &StepTrace<'_>, world: &World) -> Self {
        let vocab = world.vocab();
        let items = |xs: &[crate::kg::MemoryItem]| xs.iter().map(|m| vocab.item_record(m)).collect();
        TraceRecord {
            seed,
            episode: trace.episode,
            step: trace.state.step,
            hidden: world.state_record(trace.hidden),
            short: items(&trace.state.short),
            long: items(&trace.state.long),
            query: trace.record.query.record(vocab),
            answer: vocab.entity_label(trace.record.answer).to_owned(),
            reward: trace.record.reward,
            mv: trace.record.mv,
            actions: trace.actions.iter().map(|a| a.index() as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    pub splits: Vec<QuerySplit>,
    /// Episodes per seed and split written to the trace files.
    pub trace_episodes: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            splits: vec![QuerySplit::Train, QuerySplit::Test],
            trace_episodes: 0,
        }
    }
}

/// Loads the learned policy of every seed from the output directory.
pub fn load_policies(cfg: &ExperimentConfig, world: &World) -> Result<Vec<(u64, LearnedPolicy)>> {
    cfg.seeds()
        .into_iter()
        .map(|seed| {
            let path = checkpoint_path(&cfg.output.dir, seed);
            let text = super::read_to_string(&path)?;
            let policy = PolicyCheckpoint::from_json(&text)?.into_policy(world.vocab())?;
            Ok((seed, policy))
        })
        .collect()
}

/// Greedy evaluation of every seed on each requested split. Writes
/// `eval_{split}.json` and the per-episode `scores_{split}.csv`, plus
/// decision logs for learned transfer and optional traces.
pub fn eval_run(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    let dir = cfg.ensure_output_dir()?.to_owned();
    let world = World::new(cfg.world.clone())?;
    let policies = match cfg.policies.transfer {
        TransferSpec::Learned { .. } => load_policies(cfg, &world)?,
        _ => Vec::new(),
    };
    let controllers: Vec<(u64, Controller<'_>)> = match cfg.policies.transfer.baseline() {
        Some(b) => cfg.seeds().into_iter().map(|s| (s, Controller::Baseline(b))).collect(),
        None => policies.iter().map(|(s, p)| (*s, Controller::Learned(p))).collect(),
    };
    let seeds: Vec<u64> = controllers.iter().map(|c| c.0).collect();
    let slot = |seed: u64| seeds.iter().position(|&s| s == seed).expect("known seed");
    let learned = !policies.is_empty();
    super::write(&dir.join("config.json"), cfg.to_json())?;

    let mut reports = Vec::with_capacity(opts.splits.len());
    for &split in &opts.splits {
        let split_world = Arc::new(World::new(cfg.world.with_split(split))?);
        let mut decisions = vec![String::new(); seeds.len()];
        let mut traces = vec![String::new(); seeds.len()];
        let report = rl::evaluate(
            &controllers,
            &cfg.world,
            cfg.policies.agent(),
            split,
            cfg.output.eval_episodes,
            |seed, trace| {
                let k = slot(seed);
                if learned {
                    decisions[k].push_str(&rl::decisions_jsonl(&rl::step_decisions(trace, split_world.vocab())));
                }
                if trace.episode < opts.trace_episodes {
                    let rec = TraceRecord::new(seed, trace, &split_world);
                    traces[k].push_str(&serde_json::to_string(&rec).expect("serializable"));
                    traces[k].push('\n');
                }
            },
        )?;
        super::write(
            &dir.join(format!("eval_{}.json", split.label())),
            serde_json::to_string_pretty(&report).expect("serializable"),
        )?;
        super::write(&scores_path(&dir, split), scores_csv(&report))?;
        for (k, &seed) in seeds.iter().enumerate() {
            if learned {
                super::write(&eval_decisions_path(&dir, split, seed), &decisions[k])?;
            }
            if opts.trace_episodes > 0 {
                super::write(&trace_path(&dir, split, seed), &traces[k])?;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}

pub const SCORES_HEADER: &str = "seed,episode,score";

pub fn scores_csv(report: &EvalReport) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for s in &report.per_seed {
        for (k, score) in s.scores.iter().enumerate() {
            let _ = writeln!(out, "{},{k},{score}", s.seed);
        }
    }
    out
}
