use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One test sample: its true label (`None` for an outlier), the predicted
/// known class, and its inlier score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvaluationRecord {
    pub label: Option<i64>,
    pub predicted: Option<i64>,
    pub score: f64,
}

impl EvaluationRecord {
    pub fn inlier(label: i64, predicted: i64, score: f64) -> Self {
        EvaluationRecord { label: Some(label), predicted: Some(predicted), score }
    }

    pub fn outlier(score: f64) -> Self {
        EvaluationRecord { label: None, predicted: None, score }
    }

    fn correct(&self) -> bool {
        self.label.is_some() && self.label == self.predicted
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscrPoint {
    pub threshold: f64,
    pub ccr: f64,
    pub fpr: f64,
}

/// Area under the CCR-versus-FPR curve and the curve itself.
///
/// At threshold θ an inlier counts toward CCR when it is correctly
/// classified and `score >= θ`; an outlier counts toward FPR when
/// `score >= θ`. Thresholds run from +∞ (the origin) through every distinct
/// score, so the last point has FPR = 1. The area is a trapezoid sum.
pub fn oscr(records: &[EvaluationRecord]) -> Result<(f64, Vec<OscrPoint>)> {
    if records.iter().any(|r| r.score.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    if records.iter().any(|r| r.label.is_some() && r.predicted.is_none()) {
        return Err(Error::InvalidArgument("inlier record without a prediction".into()));
    }
    let n_in = records.iter().filter(|r| r.label.is_some()).count();
    let n_out = records.len() - n_in;
    if n_in == 0 || n_out == 0 {
        return Err(Error::InvalidArgument(
            "OSCR needs at least one inlier and one outlier".into(),
        ));
    }

    let mut sorted: Vec<&EvaluationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![OscrPoint { threshold: f64::INFINITY, ccr: 0.0, fpr: 0.0 }];
    let (mut correct, mut false_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let theta = sorted[i].score;
        while i < sorted.len() && sorted[i].score == theta {
            let r = sorted[i];
            if r.label.is_none() {
                false_pos += 1;
            } else if r.correct() {
                correct += 1;
            }
            i += 1;
        }
        points.push(OscrPoint {
            threshold: theta,
            ccr: correct as f64 / n_in as f64,
            fpr: false_pos as f64 / n_out as f64,
        });
    }
    let area = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].ccr + w[0].ccr) / 2.0)
        .sum();
    Ok((area, points))
}

/// `theta,ccr,fpr` rows.
pub fn oscr_curve_csv(points: &[OscrPoint]) -> String {
    let mut out = String::from("theta,ccr,fpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.ccr, p.fpr).unwrap();
    }
    out
}
