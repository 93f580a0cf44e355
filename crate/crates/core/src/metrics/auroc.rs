use crate::error::{Error, Result};

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("no {name} scores")));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("NaN among {name} scores")));
    }
    Ok(())
}

/// Probability that a random inlier outscores a random outlier, ties
/// counting one half. Computed from midranks of the pooled scores.
pub fn auroc(inlier: &[f64], outlier: &[f64]) -> Result<f64> {
    check_scores("inlier", inlier)?;
    check_scores("outlier", outlier)?;
    let mut pooled: Vec<(f64, bool)> = inlier
        .iter()
        .map(|&s| (s, true))
        .chain(outlier.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the inlier rank sum, so tied midranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        // Ranks start+1 ..= end share the midrank (start+1+end)/2.
        let inliers_here = pooled[start..end].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += inliers_here * (start + 1 + end) as u128;
        start = end;
    }
    let n = inlier.len() as u128;
    let m = outlier.len() as u128;
    // 2·U = 2·R - n(n+1); U counts wins plus half the ties.
    let twice_u = twice_rank_sum - n * (n + 1);
    Ok(twice_u as f64 / (2 * n * m) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points for thresholds `score >= θ` at every distinct score, from
/// the strictest (θ = +∞, origin) down.
pub fn roc_curve(inlier: &[f64], outlier: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores("inlier", inlier)?;
    check_scores("outlier", outlier)?;
    let mut thresholds: Vec<f64> = inlier.iter().chain(outlier).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let rate = |set: &[f64], t: f64| set.iter().filter(|&&s| s >= t).count() as f64 / set.len() as f64;
    for t in thresholds {
        points.push(RocPoint { threshold: t, tpr: rate(inlier, t), fpr: rate(outlier, t) });
    }
    Ok(points)
}
