use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kgmem::env::{QuerySplit, World};
use kgmem::harness::{self, checks, run, snapshot, ExperimentConfig};
use kgmem::rl::PolicyCheckpoint;

#[derive(Parser)]
#[command(name = "kgmem", version, about = "Train and analyse knowledge-graph memory agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

impl SplitArg {
    fn splits(self) -> Vec<QuerySplit> {
        match self {
            SplitArg::Train => vec![QuerySplit::Train],
            SplitArg::Test => vec![QuerySplit::Test],
            SplitArg::Both => vec![QuerySplit::Train, QuerySplit::Test],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per seed and write checkpoints, metrics and decision logs.
    Train { config: PathBuf },
    /// Evaluate a trained run, or a baseline config, greedily.
    Eval {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        split: SplitArg,
        /// Episodes per seed to write as step traces.
        #[arg(long, default_value_t = 0)]
        trace_episodes: usize,
    },
    /// Tabulate evaluated runs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Keep/drop tables and the keep-rate series of a decision log.
    AnalyzeDecisions {
        log: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Where to write the `step,keep_rate,moving_avg` series.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Print the summary as JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Memory graph (DOT) and bird's-eye view of one step.
    Snapshot {
        /// Read the step from a trace file.
        #[arg(long, conflicts_with = "config")]
        trace: Option<PathBuf>,
        /// Or replay it from a config, using its checkpoint for learned transfer.
        #[arg(long, required_unless_present = "trace")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        #[arg(long)]
        step: u32,
        /// DOT output path; the bird's-eye view goes to stdout.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Run the invariant and oracle checks.
    Selfcheck {
        /// Also run the reduced-scale baseline and learning experiments.
        #[arg(long)]
        full: bool,
    },
}

fn main() -> ExitCode {
    match run_cli(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run_cli(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config } => {
            let cfg = load(&config)?;
            let m = run::train_run(&cfg)?;
            println!(
                "trained {} on seeds {:?}: {} parameters, {:.1}s",
                m.variant, m.seeds, m.parameter_count, m.wall_clock_secs
            );
            println!("artifacts in {}", cfg.output.dir.display());
        }
        Command::Eval { config, split, trace_episodes } => {
            let cfg = load(&config)?;
            let opts = run::EvalOptions {
                splits: split.splits(),
                trace_episodes,
            };
            for r in run::eval_run(&cfg, &opts)? {
                println!(
                    "{} {}: {:.3} ± {:.3} over {} seeds",
                    cfg.variant_name(),
                    r.split.label(),
                    r.mean,
                    r.std,
                    r.per_seed.len()
                );
            }
        }
        Command::Compare { runs, csv } => {
            let summaries = runs
                .iter()
                .map(|d| harness::load_run(d).with_context(|| format!("loading run {}", d.display())))
                .collect::<Result<Vec<_>>>()?;
            let cmp = harness::compare_runs(summaries)?;
            print!("{}", cmp.render());
            if let Some(path) = csv {
                std::fs::write(&path, cmp.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::AnalyzeDecisions { log, window, series, json } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let records = harness::parse_decision_log(&text, &log)?;
            let summary = harness::analyze(&records, window)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", summary.render());
            }
            if let Some(path) = series {
                std::fs::write(&path, summary.series_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Snapshot { trace, config, checkpoint, seed, split, episode, step, dot } => {
            let (world, rec) = if let Some(path) = trace {
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let rec = snapshot::find_step(&text, &path, seed, episode, step)?;
                let cfg_path = path.parent().unwrap_or(Path::new(".")).join("config.json");
                let cfg = load(&cfg_path).context("a trace is read against the config.json beside it")?;
                (World::new(cfg.world.clone())?, rec)
            } else {
                let cfg = load(config.as_deref().expect("required by clap"))?;
                let [split] = split.splits()[..] else {
                    bail!("snapshot replays a single split");
                };
                let seed = seed.unwrap_or_else(|| cfg.seeds()[0]);
                let world = World::new(cfg.world.clone())?;
                let policy = match cfg.policies.transfer.baseline() {
                    Some(_) => None,
                    None => {
                        let path = checkpoint.unwrap_or_else(|| run::checkpoint_path(&cfg.output.dir, seed));
                        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                        Some(PolicyCheckpoint::from_json(&text)?.into_policy(world.vocab())?)
                    }
                };
                let rec = snapshot::capture(&cfg, policy.as_ref(), seed, split, episode, step)?;
                (world, rec)
            };
            let snap = snapshot::render(&world, &rec)?;
            match dot {
                Some(path) => std::fs::write(&path, &snap.dot).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", snap.dot),
            }
            println!("step {} of episode {} (seed {})", rec.step, rec.episode, rec.seed);
            print!("{}", snap.birdseye);
        }
        Command::Selfcheck { full } => {
            let mut outcomes = vec![
                checks::memory_invariants(10_000, 0),
                checks::policy_oracles(1_000, 0),
                checks::td_correctness(),
                checks::gradient_checks(2),
                checks::determinism(200, 0),
                checks::analytics_fidelity(),
                checks::epsilon_schedule(),
                checks::mode_contracts(0),
            ];
            if full {
                let setup = checks::ReducedSetup::default();
                outcomes.push(checks::baseline_ordering(&setup));
                outcomes.push(checks::learning_signal(&setup, &checks::reduced_trainer(setup.seeds.clone())));
            }
            outcomes.sort_by_key(|o| o.criterion);
            for o in &outcomes {
                println!("{o}");
            }
            return Ok(outcomes.iter().all(|o| o.passed));
        }
    }
    Ok(true)
}
