//! Long-form result tables.
//!
//! One row per `(seed, condition, metric)` cell. Every row carries the hash
//! of the config that produced it, so a CSV file can be matched to its
//! config even after the files are moved around.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

/// Seed label used for median rows.
pub const MEDIAN: &str = "median";

pub const CSV_HEADER: &str = "config_hash,experiment,seed,condition,metric,value";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub seed: String,
    pub condition: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub config_hash: String,
    pub experiment: String,
    pub rows: Vec<ResultRow>,
}

/// Seed label for one `(data seed, model seed)` run.
pub fn seed_label(data_seed: u64, model_seed: u64) -> String {
    format!("d{data_seed}-m{model_seed}")
}

fn check_field(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r', '"']) {
        return Err(Error::InvalidArgument(format!("bad {what} `{s}`")));
    }
    Ok(())
}

impl ResultTable {
    pub fn new(config_hash: impl Into<String>, experiment: impl Into<String>) -> Self {
        ResultTable {
            config_hash: config_hash.into(),
            experiment: experiment.into(),
            rows: Vec::new(),
        }
    }

    /// Appends a cell. Values must lie in `[0, 1]`.
    pub fn push(&mut self, seed: &str, condition: &str, metric: &str, value: f64) -> Result<()> {
        check_field("seed", seed)?;
        check_field("condition", condition)?;
        check_field("metric", metric)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "{condition}/{metric} = {value} is outside [0, 1]"
            )));
        }
        if self.get(seed, condition, metric).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate cell {seed}/{condition}/{metric}"
            )));
        }
        self.rows.push(ResultRow {
            seed: seed.into(),
            condition: condition.into(),
            metric: metric.into(),
            value,
        });
        Ok(())
    }

    pub fn get(&self, seed: &str, condition: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.condition == condition && r.metric == metric)
            .map(|r| r.value)
    }

    /// Per-seed values of one cell, in row order, medians excluded.
    pub fn values(&self, condition: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.seed != MEDIAN && r.condition == condition && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn median(&self, condition: &str, metric: &str) -> Option<f64> {
        self.get(MEDIAN, condition, metric)
            .or_else(|| median(&self.values(condition, metric)))
    }

    /// Distinct `(condition, metric)` pairs in first-seen order.
    pub fn cells(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(c, m)| *c == r.condition && *m == r.metric) {
                out.push((r.condition.clone(), r.metric.clone()));
            }
        }
        out
    }

    /// Appends a median row for every cell that has per-seed rows and no
    /// median yet.
    pub fn add_medians(&mut self) {
        for (condition, metric) in self.cells() {
            if self.get(MEDIAN, &condition, &metric).is_some() {
                continue;
            }
            if let Some(m) = median(&self.values(&condition, &metric)) {
                self.rows.push(ResultRow {
                    seed: MEDIAN.into(),
                    condition,
                    metric,
                    value: m,
                });
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.config_hash, self.experiment, r.seed, r.condition, r.metric, r.value
            )
            .unwrap();
        }
        out
    }

    /// Medians as an aligned text table, one line per cell.
    pub fn summary(&self) -> String {
        let cells = self.cells();
        let width = cells
            .iter()
            .map(|(c, m)| c.len() + m.len() + 1)
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        for (c, m) in cells {
            let values = self.values(&c, &m);
            let med = self.median(&c, &m).unwrap_or(f64::NAN);
            let per_seed: Vec<String> = values.iter().map(|v| format!("{:.4}", v)).collect();
            writeln!(
                out,
                "{:<width$}  {:.4}  [{}]",
                format!("{c} {m}"),
                med,
                per_seed.join(" ")
            )
            .unwrap();
        }
        out
    }

    /// Writes `<experiment>.csv` into `dir` and a `.meta` sidecar holding
    /// the wall-clock time and the config text. The CSV itself depends only
    /// on the config.
    pub fn write(&self, dir: &Path, config_text: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.csv", self.experiment));
        std::fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))?;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = format!(
            "config_hash = {}\nunix_time = {secs}\n\n{config_text}",
            self.config_hash
        );
        let meta_path = dir.join(format!("{}.csv.meta", self.experiment));
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
        Ok(path)
    }
}

/// Median of `values`; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Groups per-seed values by condition for one metric.
pub fn by_condition(table: &ResultTable, metric: &str) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.seed != MEDIAN && r.metric == metric) {
        out.entry(r.condition.clone()).or_default().push(r.value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians_and_csv() {
        let mut t = ResultTable::new("abc", "demo");
        for (s, v) in [("d1-m1", 0.2), ("d2-m2", 0.9), ("d3-m3", 0.5)] {
            t.push(s, "E1", "accuracy", v).unwrap();
        }
        t.push("d1-m1", "E2", "accuracy", 0.25).unwrap();
        t.push("d2-m2", "E2", "accuracy", 0.75).unwrap();
        t.add_medians();
        assert_eq!(t.median("E1", "accuracy"), Some(0.5));
        assert_eq!(t.median("E2", "accuracy"), Some(0.5));
        let csv = t.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("abc,demo,median,E1,accuracy,0.5\n"));
        assert_eq!(csv.lines().count(), 1 + 5 + 2);
        // Adding medians twice changes nothing.
        t.add_medians();
        assert_eq!(t.to_csv(), csv);
    }

    #[test]
    fn rejects_bad_cells() {
        let mut t = ResultTable::new("h", "x");
        assert!(t.push("s", "c", "m", 1.5).is_err());
        assert!(t.push("s", "c", "m", f64::NAN).is_err());
        assert!(t.push("s", "a,b", "m", 0.5).is_err());
        t.push("s", "c", "m", 0.5).unwrap();
        assert!(t.push("s", "c", "m", 0.6).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
