use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kgmem::harness::checks::reference_counts_log;
use kgmem::rl::decisions_jsonl;

fn kgmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgmem")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, transfer: &str, extra: &str) -> String {
    let path = dir.join(name);
    let out = dir.join(name.trim_end_matches(".json"));
    fs::write(
        &path,
        format!(
            r#"{{"world": {{"grid_length": 5, "num_static_objects": 8, "num_moving_objects": 8, "num_inner_walls": 12, "horizon": 100, "world_seed": 0}},
{extra}
"policies": {{"capacity": 32, "transfer": {transfer}}},
"output": {{"dir": {:?}, "eval_episodes": 2}}}}"#,
            out.display().to_string()
        ),
    )
    .unwrap();
    path.display().to_string()
}

const TRAINER: &str = r#""trainer": {"total_iterations": 120, "warm_start": 40, "batch_size": 4, "seeds": [3]}, "encoder": {"kind": "gcn"},"#;

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        kgmem::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}

#[test]
fn invalid_configs_fail_with_the_key_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", r#"{"kind": "always"}"#, "");
    let text = fs::read_to_string(&path).unwrap().replace(r#""grid_length": 5, "#, "");
    fs::write(&path, text).unwrap();
    let out = kgmem(&["eval", &path]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("world.grid_length"), "{}", stderr(&out));

    let out = kgmem(&["train", "/nonexistent/cfg.json"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/cfg.json"));
}

#[test]
fn train_eval_compare_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let learned = write_config(dir.path(), "learned.json", r#"{"kind": "learned", "mode": "local_full"}"#, TRAINER);
    let twin = write_config(dir.path(), "twin.json", r#"{"kind": "learned", "mode": "local_full"}"#, TRAINER);
    let novel = write_config(dir.path(), "novel.json", r#"{"kind": "novel_only"}"#, r#""seeds": [3],"#);

    for cfg in [&learned, &twin] {
        let out = kgmem(&["train", cfg]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("parameters"));
    }
    let metrics = |run: &str| fs::read(dir.path().join(run).join("metrics_seed3.csv")).unwrap();
    assert_eq!(metrics("learned"), metrics("twin"));

    for cfg in [&learned, &novel] {
        let out = kgmem(&["eval", cfg, "--trace-episodes", "1"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let csv = dir.path().join("cmp.csv");
    let runs = [dir.path().join("learned"), dir.path().join("novel")];
    let out = kgmem(&["compare", runs[0].to_str().unwrap(), runs[1].to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("gcn + learned(local_full)"));
    assert!(fs::read_to_string(&csv).unwrap().starts_with("variant,split,mean,std_population"));
    assert!(!kgmem(&["compare", runs[0].to_str().unwrap()]).status.success());

    let trace = dir.path().join("learned/trace_test_seed3.jsonl");
    let dot = dir.path().join("m.dot");
    let out = kgmem(&["snapshot", "--trace", trace.to_str().unwrap(), "--step", "12", "--dot", dot.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(&dot).unwrap().starts_with("digraph memory"));
    let out = kgmem(&["snapshot", "--config", &learned, "--step", "12"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = kgmem(&["snapshot", "--trace", trace.to_str().unwrap(), "--step", "100"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("out of range"));

    let log = dir.path().join("learned/decisions_seed3.jsonl");
    let out = kgmem(&["analyze-decisions", log.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["total"].as_u64().unwrap(), summary["keeps"].as_u64().unwrap() + summary["drops"].as_u64().unwrap());
}

#[test]
fn analyze_decisions_reports_tables_series_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("d.jsonl");
    fs::write(&log, decisions_jsonl(&reference_counts_log())).unwrap();
    let series = dir.path().join("s.csv");
    let out = kgmem(&["analyze-decisions", log.to_str().unwrap(), "--window", "1", "--series", series.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("keep_rate 0.40"), "{text}");
    assert!(text.contains("direction-links"));
    assert_eq!(fs::read_to_string(&series).unwrap().lines().count(), 1 + 112);

    fs::write(&log, "{}\n").unwrap();
    let out = kgmem(&["analyze-decisions", log.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("d.jsonl:1:"), "{}", stderr(&out));
}

#[test]
fn selfcheck_passes() {
    let out = kgmem(&["selfcheck"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("[PASS]")).count(), 8);
}
