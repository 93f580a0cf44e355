//! Open-set evaluation metrics. Scores are always oriented so that larger
//! means more inlier-like.

mod auroc;
mod oscr;

use crate::error::{Error, Result};

pub use auroc::{auroc, roc_curve, RocPoint};
pub use oscr::{oscr, oscr_curve_csv, EvaluationRecord, OscrPoint};

/// `1 - sqrt(K / (K + U))` as a fraction.
pub fn openness(known: usize, unknown: usize) -> Result<f64> {
    if known == 0 {
        return Err(Error::InvalidArgument("openness needs at least one known class".into()));
    }
    Ok(1.0 - (known as f64 / (known + unknown) as f64).sqrt())
}

/// Fraction of positions where `predictions` equals `labels`.
pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn openness_examples() {
        assert!((openness(6, 4).unwrap() - 0.225403).abs() < 1e-6);
        assert!((openness(4, 50).unwrap() - 0.727834).abs() < 1e-6);
        assert_eq!(openness(3, 0).unwrap(), 0.0);
        assert!(openness(0, 3).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 0], &[1, 1, 1, 1]).unwrap(), 0.5);
        assert!(accuracy::<i32>(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }
}
