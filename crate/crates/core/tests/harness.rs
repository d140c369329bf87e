use std::fs;
use std::path::Path;

use graphviz_rust::dot_structures::{Graph, Stmt};

use kgmem::env::{QuerySplit, World, WorldConfig};
use kgmem::harness::checks::{reference_counts_log, synthetic_decision};
use kgmem::harness::compare::SplitStats;
use kgmem::harness::run::{self, EvalOptions};
use kgmem::harness::{analyze, compare_runs, load_run, parse_decision_log, snapshot, Category, ExperimentConfig};
use kgmem::kg::{MemoryItem, Triple, Vocab};
use kgmem::memory::to_dot;
use kgmem::rl::{decisions_jsonl, mean_std};
use kgmem::Error;

fn config_json(dir: &Path, transfer: &str, extra: &str) -> String {
    format!(
        r#"{{
  "world": {{"grid_length": 5, "num_static_objects": 8, "num_moving_objects": 8, "num_inner_walls": 12, "horizon": 100, "world_seed": 0}},
  {extra}
  "policies": {{"capacity": 32, "transfer": {transfer}}},
  "output": {{"dir": {:?}, "eval_episodes": 3}}
}}"#,
        dir.display().to_string()
    )
}

fn learned(dir: &Path) -> ExperimentConfig {
    let extra = r#""trainer": {"total_iterations": 150, "warm_start": 50, "batch_size": 4, "seeds": [1, 2]}, "encoder": {"kind": "rgcn"},"#;
    ExperimentConfig::from_json(&config_json(dir, r#"{"kind": "learned", "mode": "global_stm"}"#, extra)).unwrap()
}

fn baseline(dir: &Path, transfer: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&config_json(dir, transfer, r#""seeds": [1, 2],"#)).unwrap()
}

fn config_key(err: Error) -> String {
    match err {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let good = config_json(dir.path(), r#"{"kind": "always"}"#, "");
    assert!(ExperimentConfig::from_json(&good).is_ok());

    let missing = good.replace(r#""grid_length": 5, "#, "");
    assert_eq!(config_key(ExperimentConfig::from_json(&missing).unwrap_err()), "world.grid_length");
    let wrong_type = good.replace(r#""capacity": 32"#, r#""capacity": "lots""#);
    assert_eq!(config_key(ExperimentConfig::from_json(&wrong_type).unwrap_err()), "policies.capacity");
    let unknown = good.replace(r#""eval_episodes": 3"#, r#""eval_episodes": 3, "colour": 1"#);
    assert_eq!(config_key(ExperimentConfig::from_json(&unknown).unwrap_err()), "output.colour");
    let bad_p = config_json(dir.path(), r#"{"kind": "random", "p": 1.5}"#, "");
    assert_eq!(config_key(ExperimentConfig::from_json(&bad_p).unwrap_err()), "policies.transfer.p");
    let no_trainer = config_json(dir.path(), r#"{"kind": "learned"}"#, r#""encoder": {"kind": "gcn"},"#);
    assert_eq!(config_key(ExperimentConfig::from_json(&no_trainer).unwrap_err()), "trainer");
    let no_encoder = config_json(dir.path(), r#"{"kind": "learned"}"#, r#""trainer": {},"#);
    assert_eq!(config_key(ExperimentConfig::from_json(&no_encoder).unwrap_err()), "encoder");
    let bad_world = good.replace(r#""grid_length": 5"#, r#""grid_length": 1"#);
    assert_eq!(config_key(ExperimentConfig::from_json(&bad_world).unwrap_err()), "world.grid_length");
}

#[test]
fn unwritable_output_directories_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "").unwrap();
    let cfg = baseline(&file.join("run"), r#"{"kind": "always"}"#);
    assert!(matches!(cfg.ensure_output_dir(), Err(Error::Io { .. })));
    assert!(run::eval_run(&cfg, &EvalOptions::default()).is_err());
}

#[test]
fn training_twice_gives_identical_files_and_a_complete_manifest() {
    let root = tempfile::tempdir().unwrap();
    let a = learned(&root.path().join("a"));
    let b = learned(&root.path().join("b"));
    let ma = run::train_run(&a).unwrap();
    run::train_run(&b).unwrap();
    for seed in [1, 2] {
        for path in [run::metrics_path, run::decisions_path, run::checkpoint_path] {
            let fa = fs::read(path(&a.output.dir, seed)).unwrap();
            let fb = fs::read(path(&b.output.dir, seed)).unwrap();
            assert_eq!(fa, fb);
        }
    }
    let world = World::new(a.world.clone()).unwrap();
    let expected = kgmem::neural::ParameterSet::for_vocab(a.encoder.unwrap(), world.vocab(), 0).unwrap().len();
    assert_eq!(ma.parameter_count, expected);
    assert_eq!(ma.seeds, [1, 2]);
    assert!(ma.wall_clock_secs > 0.0);
    assert_eq!(ma.runs.iter().map(|r| r.iterations).collect::<Vec<_>>(), [150, 150]);

    // Rebuilding from the manifest alone reproduces the outputs.
    let text = fs::read_to_string(a.output.dir.join("manifest.json")).unwrap();
    let manifest: run::Manifest = serde_json::from_str(&text).unwrap();
    let mut again = manifest.config;
    again.output.dir = root.path().join("c");
    run::train_run(&again).unwrap();
    assert_eq!(
        fs::read(run::metrics_path(&again.output.dir, 2)).unwrap(),
        fs::read(run::metrics_path(&a.output.dir, 2)).unwrap()
    );
}

#[test]
fn train_refuses_baseline_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = baseline(dir.path(), r#"{"kind": "novel_only"}"#);
    assert_eq!(config_key(run::train_run(&cfg).unwrap_err()), "policies.transfer");
}

#[test]
fn compare_statistics_match_a_recomputation_from_the_raw_scores() {
    let root = tempfile::tempdir().unwrap();
    let novel = baseline(&root.path().join("novel"), r#"{"kind": "novel"}"#);
    let random = baseline(&root.path().join("random"), r#"{"kind": "random", "p": 0.5}"#);
    let learned_cfg = learned(&root.path().join("learned"));
    run::train_run(&learned_cfg).unwrap();
    for cfg in [&novel, &random, &learned_cfg] {
        run::eval_run(cfg, &EvalOptions::default()).unwrap();
    }
    let runs: Vec<_> = [&novel, &random, &learned_cfg].iter().map(|c| load_run(&c.output.dir).unwrap()).collect();
    for (r, cfg) in runs.iter().zip([&novel, &random, &learned_cfg]) {
        let report: kgmem::rl::EvalReport =
            serde_json::from_str(&fs::read_to_string(cfg.output.dir.join("eval_test.json")).unwrap()).unwrap();
        let test = r.test.as_ref().unwrap();
        assert_eq!((test.mean, test.std), (report.mean, report.std));
        // Independent pass over the CSV rows.
        let csv = fs::read_to_string(run::scores_path(&cfg.output.dir, QuerySplit::Test)).unwrap();
        let mut per_seed: std::collections::BTreeMap<u64, (f64, f64)> = Default::default();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let e = per_seed.entry(f[0].parse().unwrap()).or_default();
            e.0 += f[2].parse::<f64>().unwrap();
            e.1 += 1.0;
        }
        let means: Vec<f64> = per_seed.values().map(|(s, n)| s / n).collect();
        let (m, s) = mean_std(&means);
        assert!((m - test.mean).abs() < 1e-12 && (s - test.std).abs() < 1e-12);
    }
    assert!(fs::read_to_string(learned_cfg.output.dir.join("eval_decisions_test_seed1.jsonl")).unwrap().lines().count() > 0);
    assert!(!novel.output.dir.join("eval_decisions_test_seed1.jsonl").exists());

    let cmp = compare_runs(runs.clone()).unwrap();
    let text = cmp.render();
    assert!(text.contains("novel") && text.contains("random(0.5)") && text.contains("rgcn + learned(global_stm)"));
    assert!(text.contains("population std"));
    assert_eq!(cmp.to_csv().lines().count(), 1 + 3 * 2);
    assert!(compare_runs(runs[..1].to_vec()).is_err());

    let mut other = runs[1].clone();
    other.world = WorldConfig::default();
    assert!(matches!(compare_runs(vec![runs[0].clone(), other]), Err(Error::Usage(_))));
}

#[test]
fn split_statistics_follow_the_examples() {
    let csv = "seed,episode,score\n0,0,38\n5,0,40\n10,0,36\n15,0,42\n20,0,39\n";
    let s = SplitStats::from_scores_csv(csv, Path::new("x.csv")).unwrap();
    assert_eq!((s.mean, s.std), (39.0, 2.0));
    let one = SplitStats::from_scores_csv("seed,episode,score\n3,0,12\n3,1,14\n", Path::new("y.csv")).unwrap();
    assert_eq!((one.mean, one.std), (13.0, 0.0));
    match SplitStats::from_scores_csv("seed,episode,score\n3,0,12\n3,x\n", Path::new("z.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reference_counts_reproduce_exactly() {
    let log = reference_counts_log();
    let text = decisions_jsonl(&log);
    let parsed = parse_decision_log(&text, Path::new("log.jsonl")).unwrap();
    let s = analyze(&parsed, 10).unwrap();
    assert_eq!((s.total, s.keeps, s.drops), (560, 224, 336));
    assert_eq!(s.keep_rate, 0.40);
    let kd = |c| (s.per_category[&c].keep, s.per_category[&c].drop);
    assert_eq!(kd(Category::AgentLocation), (98, 2));
    assert_eq!(kd(Category::QueryObjectLocation), (58, 2));
    assert_eq!(kd(Category::DirectionLink), (68, 332));
    assert_eq!(kd(Category::ObjectLocation), (0, 0));
    assert_eq!(s.keeps + s.drops, s.total);
    assert!(s.render().contains("direction-links"));
}

#[test]
fn all_keep_logs_keep_every_relation() {
    let log: Vec<_> = (0..40)
        .map(|i| {
            let r = ["at_location", "north", "south", "east", "west"][i % 5];
            synthetic_decision(0, (i / 4) as u32, "room", r, "wall", true, "cat")
        })
        .collect();
    let s = analyze(&log, 3).unwrap();
    assert_eq!(s.keep_rate, 1.0);
    assert!(s.per_relation.values().all(|kd| kd.keep_rate() == 1.0 && kd.drop == 0));
    assert_eq!(s.series.len(), 10);
    assert!(s.series.iter().all(|p| p.keep_rate == 1.0 && p.moving_avg == 1.0));
}

#[test]
fn window_one_moving_average_is_the_raw_series() {
    let log: Vec<_> = (0..30)
        .map(|i| synthetic_decision(i / 10, (i % 10 / 3) as u32, "agent", "at_location", "r", i % 3 == 0 || i % 7 == 0, "cat"))
        .collect();
    let s = analyze(&log, 1).unwrap();
    assert!(s.series.iter().all(|p| p.moving_avg == p.keep_rate));
    let wide = analyze(&log, 4).unwrap();
    let raw: Vec<f64> = wide.series.iter().map(|p| p.keep_rate).collect();
    assert_eq!(wide.series[5].moving_avg, raw[2..=5].iter().sum::<f64>() / 4.0);
    assert!(wide.series_csv().starts_with("step,keep_rate,moving_avg\n"));
    assert!(analyze(&log, 0).is_err());
}

#[test]
fn malformed_log_lines_report_their_line_number() {
    let mut text = decisions_jsonl(&reference_counts_log()[..3]);
    text.push_str("{\"episode\": 0}\n");
    match parse_decision_log(&text, Path::new("d.jsonl")) {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 4);
            assert_eq!(path, Path::new("d.jsonl"));
        }
        other => panic!("{other:?}"),
    }
    let bad_action = decisions_jsonl(&reference_counts_log()[..1]).replace("\"action\":1", "\"action\":7");
    assert!(matches!(parse_decision_log(&bad_action, Path::new("d")), Err(Error::Parse { line: 1, .. })));
}

fn parsed_edges(dot: &str) -> usize {
    let graph = graphviz_rust::parse(dot).expect("DOT parses");
    let Graph::DiGraph { stmts, .. } = graph else { panic!("expected a digraph") };
    stmts.iter().filter(|s| matches!(s, Stmt::Edge(_))).count()
}

#[test]
fn memory_graphs_are_valid_dot_with_collapsed_duplicates() {
    let world = World::new(WorldConfig::reduced()).unwrap();
    let vocab = world.vocab();
    let cat = |e| snapshot::node_category(&world, e);
    assert_eq!(parsed_edges(&to_dot(&[], vocab, cat)), 0);

    let room = world.rooms()[0];
    let obj = world.objects()[0];
    let t1 = Triple::new(Vocab::AGENT, Vocab::AT_LOCATION, room);
    let t2 = Triple::new(obj, Vocab::AT_LOCATION, room);
    let t3 = Triple::new(room, Vocab::NORTH, Vocab::WALL);
    let items = [t1, t2, t1, t3, t1, t2].map(|t| MemoryItem::fresh(t, 2));
    let dot = to_dot(&items, vocab, cat);
    assert_eq!(parsed_edges(&dot), 3);
    assert!(dot.contains("at_location (3)") && dot.contains("at_location (2)"));
}

#[test]
fn snapshots_come_from_traces_or_replays() {
    let root = tempfile::tempdir().unwrap();
    let cfg = baseline(root.path(), r#"{"kind": "always"}"#);
    let opts = EvalOptions {
        splits: vec![QuerySplit::Test],
        trace_episodes: 1,
    };
    run::eval_run(&cfg, &opts).unwrap();
    let path = run::trace_path(root.path(), QuerySplit::Test, 2);
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 100);
    let rec = snapshot::find_step(&text, &path, None, 0, 40).unwrap();
    let replayed = snapshot::capture(&cfg, None, 2, QuerySplit::Test, 0, 40).unwrap();
    assert_eq!(rec, replayed);

    let world = World::new(cfg.world.clone()).unwrap();
    let snap = snapshot::render(&world, &rec).unwrap();
    assert!(parsed_edges(&snap.dot) <= rec.short.len() + rec.long.len());
    assert!(!snap.birdseye.is_empty());

    assert!(matches!(snapshot::find_step(&text, &path, None, 0, 100), Err(Error::Usage(_))));
    assert!(matches!(snapshot::find_step(&text, &path, None, 1, 0), Err(Error::Usage(_))));
    assert!(matches!(snapshot::capture(&cfg, None, 2, QuerySplit::Test, 0, 100), Err(Error::Usage(_))));
    let corrupted = text.replacen("\"seed\"", "\"sed\"", 1);
    assert!(matches!(snapshot::find_step(&corrupted, &path, None, 0, 1), Err(Error::Parse { line: 1, .. })));
}
