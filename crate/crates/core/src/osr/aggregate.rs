use std::fmt;
use std::str::FromStr;

use super::{score_batch, EmbeddingBatch, ScoreSet, Scorer};
use crate::error::{Error, Result};

/// How representations from several models are combined into one score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Aggregation {
    /// Score the concatenated representation.
    RepCat,
    /// Score the mean representation.
    RepSum,
    /// Add per-model scores.
    #[default]
    SocSum,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::RepCat, Aggregation::RepSum, Aggregation::SocSum];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::RepCat => "repcat",
            Aggregation::RepSum => "repsum",
            Aggregation::SocSum => "socsum",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown aggregation `{s}` (repcat, repsum, socsum)"))
            })
    }
}

/// [`aggregate_with`] without score standardization.
pub fn aggregate(
    train: &[EmbeddingBatch],
    test: &[EmbeddingBatch],
    strategy: Aggregation,
    scorer: Scorer,
) -> Result<ScoreSet> {
    aggregate_with(train, test, strategy, scorer, false)
}

/// Combines one batch per model into a single score per test sample.
/// `train` holds the matching training batches and may be empty when the
/// scorer does not need them. With `zscore`, SocSum standardizes each
/// model's scores by the mean and deviation of its training scores before
/// adding.
pub fn aggregate_with(
    train: &[EmbeddingBatch],
    test: &[EmbeddingBatch],
    strategy: Aggregation,
    scorer: Scorer,
    zscore: bool,
) -> Result<ScoreSet> {
    EmbeddingBatch::check_aligned(test)?;
    let have_train = !train.is_empty();
    if have_train {
        if train.len() != test.len() {
            return Err(Error::InvalidArgument(format!(
                "{} training batches for {} test batches",
                train.len(),
                test.len()
            )));
        }
        EmbeddingBatch::check_aligned(train)?;
    } else if scorer.needs_training_data() || (zscore && strategy == Aggregation::SocSum) {
        return Err(Error::InvalidArgument(format!(
            "{scorer} {strategy} needs training embeddings"
        )));
    }

    let combine = |batches: &[EmbeddingBatch]| match strategy {
        Aggregation::RepCat => EmbeddingBatch::concat(batches),
        Aggregation::RepSum => EmbeddingBatch::mean(batches),
        Aggregation::SocSum => unreachable!(),
    };
    match strategy {
        Aggregation::RepCat | Aggregation::RepSum => {
            let train = if have_train { Some(combine(train)?) } else { None };
            score_batch(scorer, train.as_ref(), &combine(test)?)
        }
        Aggregation::SocSum => {
            let mut total = vec![0.0; test[0].len()];
            let mut negated = false;
            for (k, t) in test.iter().enumerate() {
                let tr = train.get(k);
                let s = score_batch(scorer, tr, t)?;
                negated = s.negated;
                let (shift, scale) = if zscore {
                    let reference = score_batch(scorer, tr, tr.expect("checked above"))?;
                    standardizer(&reference.scores)
                } else {
                    (0.0, 1.0)
                };
                for (acc, v) in total.iter_mut().zip(&s.scores) {
                    *acc += (v - shift) / scale;
                }
            }
            Ok(ScoreSet {
                scores: total,
                scorer,
                negated,
            })
        }
    }
}

fn standardizer(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}
