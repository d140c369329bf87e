use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rl::DecisionRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeepDrop {
    pub keep: usize,
    pub drop: usize,
}

impl KeepDrop {
    pub fn total(&self) -> usize {
        self.keep + self.drop
    }

    pub fn keep_rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.keep as f64 / self.total() as f64
        }
    }

    fn add(&mut self, keep: bool) {
        if keep {
            self.keep += 1;
        } else {
            self.drop += 1;
        }
    }
}

/// Coarse triple categories used in the keep/drop tables.
///
/// `QueryObjectLocation` is the location of the object asked about in the
/// same step; every other object location falls in `ObjectLocation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    AgentLocation,
    ObjectLocation,
    QueryObjectLocation,
    DirectionLink,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::AgentLocation,
        Category::ObjectLocation,
        Category::QueryObjectLocation,
        Category::DirectionLink,
        Category::Other,
    ];

    pub fn of(record: &DecisionRecord) -> Category {
        let t = &record.triple;
        match t.r.as_str() {
            "at_location" if t.h == "agent" => Category::AgentLocation,
            "at_location" if record.query.as_deref() == Some(t.h.as_str()) => {
                Category::QueryObjectLocation
            }
            "at_location" => Category::ObjectLocation,
            "north" | "south" | "east" | "west" => Category::DirectionLink,
            _ => Category::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::AgentLocation => "agent-location",
            Category::ObjectLocation => "object-location",
            Category::QueryObjectLocation => "query-object-location",
            Category::DirectionLink => "direction-links",
            Category::Other => "other",
        }
    }
}

/// One environment step of the keep-rate trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Position of the step in the log, from 0.
    pub step: usize,
    pub keep_rate: f64,
    /// Trailing mean of `keep_rate` over the last `window` steps.
    pub moving_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogSummary {
    pub total: usize,
    pub keeps: usize,
    pub drops: usize,
    pub keep_rate: f64,
    pub per_relation: BTreeMap<String, KeepDrop>,
    pub per_category: BTreeMap<Category, KeepDrop>,
    pub window: usize,
    pub series: Vec<SeriesPoint>,
}

/// Reads a JSONL decision log. `path` only labels errors.
pub fn parse_decision_log(text: &str, path: &Path) -> Result<Vec<DecisionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DecisionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.action > 1 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("action must be 0 or 1, got {}", rec.action),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Tabulates a decision log. Consecutive records sharing `(episode, step)`
/// form one point of the keep-rate series.
pub fn analyze(records: &[DecisionRecord], window: usize) -> Result<DecisionLogSummary> {
    if window == 0 {
        return Err(Error::config("window", "must be positive"));
    }
    let mut all = KeepDrop::default();
    let mut per_relation: BTreeMap<String, KeepDrop> = BTreeMap::new();
    let mut per_category: BTreeMap<Category, KeepDrop> =
        Category::ALL.iter().map(|&c| (c, KeepDrop::default())).collect();
    let mut steps: Vec<KeepDrop> = Vec::new();
    let mut last: Option<(usize, u32)> = None;
    for r in records {
        let keep = r.action == 1;
        all.add(keep);
        per_relation.entry(r.triple.r.clone()).or_default().add(keep);
        per_category.get_mut(&Category::of(r)).expect("all categories").add(keep);
        if last != Some((r.episode, r.step)) {
            steps.push(KeepDrop::default());
            last = Some((r.episode, r.step));
        }
        steps.last_mut().expect("pushed").add(keep);
    }
    let raw: Vec<f64> = steps.iter().map(KeepDrop::keep_rate).collect();
    let series = raw
        .iter()
        .enumerate()
        .map(|(i, &keep_rate)| {
            let from = (i + 1).saturating_sub(window);
            let span = &raw[from..=i];
            SeriesPoint {
                step: i,
                keep_rate,
                moving_avg: span.iter().sum::<f64>() / span.len() as f64,
            }
        })
        .collect();
    Ok(DecisionLogSummary {
        total: all.total(),
        keeps: all.keep,
        drops: all.drop,
        keep_rate: all.keep_rate(),
        per_relation,
        per_category,
        window,
        series,
    })
}

impl DecisionLogSummary {
    pub fn series_csv(&self) -> String {
        let mut out = String::from("step,keep_rate,moving_avg\n");
        for p in &self.series {
            let _ = writeln!(out, "{},{},{}", p.step, p.keep_rate, p.moving_avg);
        }
        out
    }

    /// Keep/drop tables as aligned text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "decisions {}  keeps {}  drops {}  keep_rate {:.2}",
            self.total, self.keeps, self.drops, self.keep_rate
        );
        let row = |out: &mut String, name: &str, kd: &KeepDrop| {
            let _ = writeln!(
                out,
                "  {name:<24} {:>7} {:>7} {:>9.2}",
                kd.keep,
                kd.drop,
                kd.keep_rate()
            );
        };
        let _ = writeln!(out, "\n  {:<24} {:>7} {:>7} {:>9}", "relation", "keep", "drop", "keep_rate");
        for (rel, kd) in &self.per_relation {
            row(&mut out, rel, kd);
        }
        let _ = writeln!(out, "\n  {:<24} {:>7} {:>7} {:>9}", "category", "keep", "drop", "keep_rate");
        for (c, kd) in &self.per_category {
            if kd.total() > 0 {
                row(&mut out, c.label(), kd);
            }
        }
        out
    }
}
