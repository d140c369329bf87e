use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{scores_path, SCORES_HEADER};
use crate::env::{QuerySplit, WorldConfig};
use crate::rl::mean_std;
use crate::{Error, Result};

/// Seed-level statistics of one split: the mean of each seed's episode
/// scores, then the mean and population standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub seed_means: BTreeMap<u64, f64>,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
}

impl SplitStats {
    /// Statistics from the raw `seed,episode,score` table.
    pub fn from_scores_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SCORES_HEADER => {}
            _ => return Err(bad(1, format!("expected header `{SCORES_HEADER}`"))),
        }
        let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut episodes = 0;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [seed, _episode, score] = fields[..] else {
                return Err(bad(i + 1, format!("expected 3 fields, found {}", fields.len())));
            };
            let seed: u64 = seed.trim().parse().map_err(|e| bad(i + 1, format!("seed: {e}")))?;
            let score: f64 = score.trim().parse().map_err(|e| bad(i + 1, format!("score: {e}")))?;
            by_seed.entry(seed).or_default().push(score);
            episodes += 1;
        }
        if by_seed.is_empty() {
            return Err(bad(1, "no scores".into()));
        }
        let seed_means: BTreeMap<u64, f64> = by_seed.iter().map(|(&s, v)| (s, mean_std(v).0)).collect();
        let means: Vec<f64> = seed_means.values().copied().collect();
        let (mean, std) = mean_std(&means);
        Ok(Self {
            seed_means,
            episodes,
            mean,
            std,
        })
    }
}

/// An evaluated run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub variant: String,
    pub world: WorldConfig,
    pub train: Option<SplitStats>,
    pub test: Option<SplitStats>,
}

/// Reads `config.json` and whichever score tables exist in `dir`.
pub fn load_run(dir: &Path) -> Result<RunSummary> {
    let cfg = ExperimentConfig::load(&dir.join("config.json"))?;
    let split = |s: QuerySplit| -> Result<Option<SplitStats>> {
        let path = scores_path(dir, s);
        if !path.exists() {
            return Ok(None);
        }
        SplitStats::from_scores_csv(&super::read_to_string(&path)?, &path).map(Some)
    };
    let summary = RunSummary {
        dir: dir.to_owned(),
        variant: cfg.variant_name(),
        world: cfg.world.clone(),
        train: split(QuerySplit::Train)?,
        test: split(QuerySplit::Test)?,
    };
    if summary.train.is_none() && summary.test.is_none() {
        return Err(Error::usage(format!("{} has no scores; run eval first", dir.display())));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
}

/// Checks that the runs are comparable: at least two, all on one world.
/// The query split is ignored since evaluation sets it.
pub fn compare_runs(runs: Vec<RunSummary>) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::usage("compare needs at least two runs"));
    }
    let world = |r: &RunSummary| r.world.with_split(QuerySplit::Train);
    let first = &runs[0];
    for r in &runs[1..] {
        if world(r) != world(first) {
            return Err(Error::usage(format!(
                "world configs differ between {} and {}",
                first.dir.display(),
                r.dir.display()
            )));
        }
    }
    Ok(Comparison { runs })
}

fn cell(s: &Option<SplitStats>) -> String {
    match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "-".into(),
    }
}

impl Comparison {
    pub fn render(&self) -> String {
        let width = self.runs.iter().map(|r| r.variant.chars().count()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  {:>17}  {:>17}\n", "variant", "train", "test");
        for r in &self.runs {
            let _ = writeln!(out, "{:<width$}  {:>17}  {:>17}", r.variant, cell(&r.train), cell(&r.test));
        }
        out.push_str("mean ± population std of per-seed mean episode scores\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,split,mean,std_population,seeds,episodes\n");
        for r in &self.runs {
            for (label, s) in [("train", &r.train), ("test", &r.test)] {
                if let Some(s) = s {
                    let _ = writeln!(
                        out,
                        "\"{}\",{label},{},{},{},{}",
                        r.variant.replace('"', "\"\""),
                        s.mean,
                        s.std,
                        s.seed_means.len(),
                        s.episodes
                    );
                }
            }
        }
        out
    }
}
