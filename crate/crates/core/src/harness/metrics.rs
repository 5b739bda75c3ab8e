//! Append-only metric logs in `step,split,metric,value` CSV form, and the
//! summary used by the `report` command.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(ModelError::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub split: Split,
    pub metric: String,
    pub value: f64,
}

/// Records in the order they were logged; steps never decrease.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
}

pub const CSV_HEADER: &str = "step,split,metric,value";

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: usize, split: Split, metric: &str, value: f64) {
        if let Some(last) = self.records.last() {
            assert!(step >= last.step, "metric steps must not decrease ({} after {})", step, last.step);
        }
        assert!(!metric.contains(',') && !metric.contains('\n'), "metric names cannot contain commas");
        self.records.push(MetricRecord { step, split, metric: metric.to_string(), value });
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Most recent value of `(split, metric)`.
    pub fn last(&self, split: Split, metric: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.split == split && r.metric == metric).map(|r| r.value)
    }

    pub fn series(&self, split: Split, metric: &str) -> Vec<(usize, f64)> {
        self.records.iter().filter(|r| r.split == split && r.metric == metric).map(|r| (r.step, r.value)).collect()
    }

    /// Reals use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{:?}\n", r.step, r.split, r.metric, r.value));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(ModelError::Invalid(format!("metric log must start with {CSV_HEADER:?}")));
        }
        let mut log = MetricLog::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || ModelError::Invalid(format!("metric log line {}: {line:?}", no + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let step: usize = f[0].parse().map_err(|_| bad())?;
            let value: f64 = f[3].parse().map_err(|_| bad())?;
            if log.records.last().is_some_and(|l| step < l.step) {
                return Err(bad());
            }
            log.records.push(MetricRecord { step, split: f[1].parse()?, metric: f[2].to_string(), value });
        }
        Ok(log)
    }
}

/// Per `(split, metric)`: record count, final value, best (min and max).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub last_step: usize,
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(log: &MetricLog) -> BTreeMap<(Split, String), MetricSummary> {
    let mut out: BTreeMap<(Split, String), MetricSummary> = BTreeMap::new();
    for r in log.records() {
        out.entry((r.split, r.metric.clone()))
            .and_modify(|s| {
                s.count += 1;
                s.last_step = r.step;
                s.last = r.value;
                s.min = s.min.min(r.value);
                s.max = s.max.max(r.value);
            })
            .or_insert(MetricSummary { count: 1, last_step: r.step, last: r.value, min: r.value, max: r.value });
    }
    out
}

/// Fixed-width text table of [`summarize`].
pub fn render_report(log: &MetricLog) -> String {
    let mut out = format!("{:<6} {:<22} {:>6} {:>8} {:>14} {:>14} {:>14}\n", "split", "metric", "count", "step", "last", "min", "max");
    for ((split, metric), s) in summarize(log) {
        out.push_str(&format!(
            "{:<6} {:<22} {:>6} {:>8} {:>14.6} {:>14.6} {:>14.6}\n",
            split.as_str(),
            metric,
            s.count,
            s.last_step,
            s.last,
            s.min,
            s.max
        ));
    }
    out
}
