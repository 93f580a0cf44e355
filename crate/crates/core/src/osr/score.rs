use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::{EmbeddingBatch, GaussianModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scorer {
    /// Maximum softmax probability of logits.
    Msp,
    /// Negated Mahalanobis distance to the nearest class mean.
    Mahalanobis,
    /// L2 norm of the representation.
    Norm,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::Msp, Scorer::Mahalanobis, Scorer::Norm];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::Msp => "msp",
            Scorer::Mahalanobis => "mdist",
            Scorer::Norm => "norm",
        }
    }

    pub fn needs_training_data(self) -> bool {
        self == Scorer::Mahalanobis
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scorer::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scorer `{s}` (msp, mdist, norm)")))
    }
}

/// Per-sample scores where larger means more inlier-like.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub scorer: Scorer,
    /// The raw statistic grows with outlierness and was negated.
    pub negated: bool,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Max softmax probability per row of logits.
pub fn score_msp(logits: ArrayView2<'_, f64>) -> ScoreSet {
    let scores = logits
        .outer_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            1.0 / row.iter().map(|&v| (v - max).exp()).sum::<f64>()
        })
        .collect();
    ScoreSet {
        scores,
        scorer: Scorer::Msp,
        negated: false,
    }
}

pub fn score_mahalanobis(test: &EmbeddingBatch, model: &GaussianModel) -> Result<ScoreSet> {
    if test.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "test width {} but model width {}",
            test.dim(),
            model.dim()
        )));
    }
    let scores = (0..test.len())
        .into_par_iter()
        .map(|i| model.min_distance(test.row(i)).map(|d| -d))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet {
        scores,
        scorer: Scorer::Mahalanobis,
        negated: true,
    })
}

pub fn score_norm(test: &EmbeddingBatch) -> ScoreSet {
    let scores = test.matrix().outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    ScoreSet {
        scores,
        scorer: Scorer::Norm,
        negated: false,
    }
}

/// Scores `test` with `scorer`. For [`Scorer::Msp`] the rows of `test` are
/// logits; [`Scorer::Mahalanobis`] fits its model on `train`.
pub fn score_batch(
    scorer: Scorer,
    train: Option<&EmbeddingBatch>,
    test: &EmbeddingBatch,
) -> Result<ScoreSet> {
    match scorer {
        Scorer::Msp => Ok(score_msp(test.matrix())),
        Scorer::Norm => Ok(score_norm(test)),
        Scorer::Mahalanobis => {
            let train = train.ok_or_else(|| {
                Error::InvalidArgument("the mdist scorer needs training embeddings".into())
            })?;
            score_mahalanobis(test, &GaussianModel::fit(train)?)
        }
    }
}
