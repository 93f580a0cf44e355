//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Lists are comma
//! separated. Unknown and repeated keys are errors. Command-line flags are
//! applied afterwards as the same key/value pairs and replace file values.
//!
//! ```text
//! kind = ensemble
//! data_seeds = 1, 2, 3
//! temperatures = 0.5, 0.1, 0.05
//! scorer = norm
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::osr::{Aggregation, Scorer};
use crate::supcon::{ReferencePopulation, SimRange, DEFAULT_GRID_POINTS, DEFAULT_TAUS};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "OSRLAB_OUT";
const DEFAULT_OUT: &str = "osrlab-out";
const WHAT: &str = "config";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Classifier accuracy and AUROC on E1 and E2.
    E1e2,
    /// Frozen-layer finetuning on outline shapes.
    Finetune,
    /// Same table as `E1e2`, kept as a separate name for the OSR view.
    ToyOsr,
    /// Gradient-curve simulation.
    Simulate,
    /// SupCon temperature ensemble.
    Ensemble,
    /// Scoring of embedding files produced elsewhere.
    ScoreExternal,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::E1e2,
        ExperimentKind::Finetune,
        ExperimentKind::ToyOsr,
        ExperimentKind::Simulate,
        ExperimentKind::Ensemble,
        ExperimentKind::ScoreExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::E1e2 => "e1e2",
            ExperimentKind::Finetune => "finetune",
            ExperimentKind::ToyOsr => "toy-osr",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Ensemble => "ensemble",
            ExperimentKind::ScoreExternal => "score-external",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub data_seeds: Vec<u64>,
    pub model_seeds: Vec<u64>,
    pub temperatures: Vec<f64>,
    pub scorer: Scorer,
    pub aggregation: Aggregation,
    pub zscore: bool,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub supcon_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub knn_k: usize,
    pub sip_range: SimRange,
    pub sin_range: SimRange,
    pub population: ReferencePopulation,
    pub grid_points: usize,
    pub train_emb: Vec<PathBuf>,
    pub test_emb: Vec<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `kind`, with the output root taken from
    /// [`OUT_ENV`] when set.
    pub fn new(kind: ExperimentKind) -> Self {
        let temperatures = match kind {
            ExperimentKind::Simulate => DEFAULT_TAUS.to_vec(),
            _ => vec![0.5, 0.1, 0.05],
        };
        let out_root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        ExperimentConfig {
            kind,
            data_seeds: vec![1, 2, 3],
            model_seeds: vec![1, 2, 3],
            temperatures,
            scorer: match kind {
                ExperimentKind::ScoreExternal | ExperimentKind::Ensemble => Scorer::Norm,
                _ => Scorer::Msp,
            },
            aggregation: Aggregation::SocSum,
            zscore: false,
            out_dir: out_root,
            epochs: 30,
            finetune_epochs: 30,
            supcon_epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            knn_k: 3,
            sip_range: SimRange::default_positive(),
            sin_range: SimRange::default_negative(),
            population: ReferencePopulation::default(),
            grid_points: DEFAULT_GRID_POINTS,
            train_emb: Vec::new(),
            test_emb: Vec::new(),
        }
    }

    /// Applies `key = value` pairs in order; later pairs win.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, value)
                .map_err(|e| Error::InvalidArgument(format!("`{key}`: {e}")))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "kind" => {
                let kind: ExperimentKind = value.parse()?;
                if kind != self.kind {
                    return Err(Error::InvalidArgument(format!(
                        "kind is {}, cannot change to {}",
                        self.kind.name(),
                        kind.name()
                    )));
                }
            }
            "data_seeds" => self.data_seeds = parse_list(value)?,
            "model_seeds" => self.model_seeds = parse_list(value)?,
            "temperatures" => self.temperatures = parse_list(value)?,
            "scorer" => self.scorer = value.parse()?,
            "aggregation" => self.aggregation = value.parse()?,
            "zscore" => self.zscore = parse_one(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "epochs" => self.epochs = parse_one(value)?,
            "finetune_epochs" => self.finetune_epochs = parse_one(value)?,
            "supcon_epochs" => self.supcon_epochs = parse_one(value)?,
            "learning_rate" => self.learning_rate = parse_one(value)?,
            "batch_size" => self.batch_size = parse_one(value)?,
            "knn_k" => self.knn_k = parse_one(value)?,
            "sip_range" => self.sip_range = value.parse()?,
            "sin_range" => self.sin_range = value.parse()?,
            "population" => self.population = value.parse()?,
            "grid_points" => self.grid_points = parse_one(value)?,
            "train_emb" => self.train_emb = parse_paths(value),
            "test_emb" => self.test_emb = parse_paths(value),
            other => return Err(Error::InvalidArgument(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.data_seeds.is_empty() || self.model_seeds.is_empty() {
            return bad("seed lists must be nonempty".into());
        }
        if self.data_seeds.len() != self.model_seeds.len() {
            return bad(format!(
                "{} data seeds but {} model seeds",
                self.data_seeds.len(),
                self.model_seeds.len()
            ));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("temperature {t} is not positive"));
        }
        if self.temperatures.is_empty() {
            return bad("temperature list is empty".into());
        }
        if self.kind == ExperimentKind::Ensemble && self.temperatures.len() < 2 {
            return bad("the ensemble needs at least two temperatures".into());
        }
        if self.epochs == 0 || self.finetune_epochs == 0 || self.supcon_epochs == 0 {
            return bad("epoch counts must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is not positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.knn_k == 0 || self.grid_points < 2 {
            return bad("batch_size and knn_k must be positive, grid_points at least 2".into());
        }
        if self.kind == ExperimentKind::ScoreExternal {
            if self.test_emb.is_empty() {
                return bad("score-external needs test_emb".into());
            }
            if !self.train_emb.is_empty() && self.train_emb.len() != self.test_emb.len() {
                return bad("train_emb and test_emb must list the same number of files".into());
            }
        }
        Ok(())
    }

    /// Every key in a fixed order with canonical values. Two configs with
    /// equal canonical text run identically.
    pub fn canonical(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let seeds = |s: &[u64]| join(s.iter().map(u64::to_string).collect());
        let paths = |p: &[PathBuf]| join(p.iter().map(|p| p.display().to_string()).collect());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("kind", self.kind.name().into());
        kv("data_seeds", seeds(&self.data_seeds));
        kv("model_seeds", seeds(&self.model_seeds));
        kv("temperatures", join(self.temperatures.iter().map(f64::to_string).collect()));
        kv("scorer", self.scorer.name().into());
        kv("aggregation", self.aggregation.name().into());
        kv("zscore", self.zscore.to_string());
        kv("epochs", self.epochs.to_string());
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("supcon_epochs", self.supcon_epochs.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("knn_k", self.knn_k.to_string());
        kv("sip_range", format!("{}:{}", self.sip_range.lo, self.sip_range.hi));
        kv("sin_range", format!("{}:{}", self.sin_range.lo, self.sin_range.hi));
        kv("population", self.population.to_string());
        kv("grid_points", self.grid_points.to_string());
        kv("train_emb", paths(&self.train_emb));
        kv("test_emb", paths(&self.test_emb));
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`]. The output
    /// directory is excluded, so moving results does not change the hash.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_one<T: FromStr>(value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_one)
        .collect()
}

fn parse_paths(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

/// Splits config text into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(WHAT, line_no, "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(Error::parse(WHAT, line_no, format!("bad key `{key}`")));
        }
        if pairs.iter().any(|(_, k, _)| k == key) {
            return Err(Error::parse(WHAT, line_no, format!("`{key}` given twice")));
        }
        pairs.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a config file. The `kind` key is required.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let pairs = parse_pairs(text)?;
    let kind = pairs
        .iter()
        .find(|(_, k, _)| k == "kind")
        .ok_or_else(|| Error::parse(WHAT, 0, "missing `kind`"))?;
    let kind: ExperimentKind = kind.2.parse().map_err(|e: Error| Error::parse(WHAT, kind.0, e.to_string()))?;
    let mut cfg = ExperimentConfig::new(kind);
    for (line, key, value) in &pairs {
        cfg.apply([(key.as_str(), value.as_str())])
            .map_err(|e| Error::parse(WHAT, *line, e.to_string()))?;
    }
    cfg.validate().map_err(|e| Error::parse(WHAT, 0, e.to_string()))?;
    Ok(cfg)
}
