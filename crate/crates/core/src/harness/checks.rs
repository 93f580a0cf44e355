//! Pass/fail checks over experiment outputs. The CLI exits nonzero when any
//! check fails.

use std::fmt;

use super::experiments::{member_name, FREEZE_POINTS};
use super::table::ResultTable;
use crate::supcon::{GradientCurve, PairKind};

pub const E1_MIN_ACCURACY: f64 = 0.98;
pub const E2_ACCURACY_BAND: (f64, f64) = (0.90, 1.0);
/// `(metric, E1 target, E2 target)`.
pub const AUROC_TARGETS: [(&str, f64, f64); 3] = [
    ("auroc_msp", 0.982, 0.991),
    ("auroc_mdist", 0.897, 0.915),
    ("auroc_norm", 0.811, 0.970),
];
pub const AUROC_TOLERANCE: f64 = 0.06;
/// `(freeze point, E1 target, E2 target)` shape accuracies.
pub const FINETUNE_TARGETS: [(&str, f64, f64); 3] = [
    ("conv1", 0.7275, 0.8333),
    ("linear1", 0.64, 0.76),
    ("linear2", 0.62, 0.72),
];
pub const FINETUNE_TOLERANCE: f64 = 0.08;
pub const ENSEMBLE_SLACK: f64 = 0.01;
pub const CURVE_OVERLAP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn med(table: &ResultTable, condition: &str, metric: &str) -> f64 {
    table.median(condition, metric).unwrap_or(f64::NAN)
}

pub fn check_e1e2(table: &ResultTable) -> Vec<Check> {
    let e1 = med(table, "E1", "accuracy");
    let e2 = med(table, "E2", "accuracy");
    let mut out = vec![
        Check::new(
            "E1 accuracy",
            e1 >= E1_MIN_ACCURACY,
            format!("median {e1:.4} >= {E1_MIN_ACCURACY}"),
        ),
        Check::new(
            "E2 accuracy",
            (E2_ACCURACY_BAND.0..=E2_ACCURACY_BAND.1).contains(&e2),
            format!("median {e2:.4} in [{}, {}]", E2_ACCURACY_BAND.0, E2_ACCURACY_BAND.1),
        ),
    ];
    for (metric, t1, t2) in AUROC_TARGETS {
        let a1 = med(table, "E1", metric);
        let a2 = med(table, "E2", metric);
        out.push(Check::new(
            format!("{metric} E2 > E1"),
            a2 > a1,
            format!("median E1 {a1:.4}, E2 {a2:.4}"),
        ));
        for (protocol, value, target) in [("E1", a1, t1), ("E2", a2, t2)] {
            out.push(Check::new(
                format!("{metric} {protocol} near target"),
                (value - target).abs() <= AUROC_TOLERANCE,
                format!("median {value:.4}, target {target} ± {AUROC_TOLERANCE}"),
            ));
        }
    }
    out
}

pub fn check_finetune(table: &ResultTable) -> Vec<Check> {
    let mut out = Vec::new();
    for (freeze, (name, t1, t2)) in FREEZE_POINTS.iter().zip(FINETUNE_TARGETS) {
        debug_assert_eq!(freeze.name(), name);
        let a1 = med(table, &format!("E1/{freeze}"), "shape_accuracy");
        let a2 = med(table, &format!("E2/{freeze}"), "shape_accuracy");
        out.push(Check::new(
            format!("finetune {freeze} E2 > E1"),
            a2 > a1,
            format!("median E1 {a1:.4}, E2 {a2:.4}"),
        ));
        for (protocol, value, target) in [("E1", a1, t1), ("E2", a2, t2)] {
            out.push(Check::new(
                format!("finetune {freeze} {protocol} near target"),
                (value - target).abs() <= FINETUNE_TOLERANCE,
                format!("median {value:.4}, target {target} ± {FINETUNE_TOLERANCE}"),
            ));
        }
    }
    out
}

/// Median AUROC of the all-member combination under `strategy` against the
/// mean single-member AUROC.
pub fn check_ensemble(table: &ResultTable, temperatures: &[f64], metric: &str, strategy: &str) -> Vec<Check> {
    let names: Vec<String> = temperatures.iter().map(|&t| member_name(t)).collect();
    let singles: Vec<f64> = names.iter().flat_map(|n| table.values(n, metric)).collect();
    let mean_single = singles.iter().sum::<f64>() / singles.len().max(1) as f64;
    let all = format!("{}/{strategy}", names.join("+"));
    let agg = med(table, &all, metric);
    vec![Check::new(
        format!("{all} vs singles"),
        agg >= mean_single - ENSEMBLE_SLACK,
        format!("median {agg:.4} >= mean single {mean_single:.4} - {ENSEMBLE_SLACK}"),
    )]
}

pub fn check_simulation(curves: &[GradientCurve]) -> Vec<Check> {
    let mut out = Vec::new();
    let signs_ok = curves.iter().all(|c| match c.kind {
        PairKind::Positive => c.grad.iter().all(|&g| g <= 0.0),
        PairKind::Negative => c.grad.iter().all(|&g| g >= 0.0),
    });
    out.push(Check::new("gradient signs", signs_ok, "positive <= 0, negative >= 0"));
    let monotone = curves
        .iter()
        .filter(|c| c.kind == PairKind::Negative)
        .all(|c| c.grad.windows(2).all(|w| w[1] >= w[0]));
    out.push(Check::new("negative curves nondecreasing", monotone, "in s_in"));
    let find = |tau: f64| {
        curves
            .iter()
            .find(|c| c.kind == PairKind::Negative && c.tau == tau)
    };
    if let (Some(a), Some(b)) = (find(0.01), find(0.005)) {
        let gap = a
            .grad
            .iter()
            .zip(&b.grad)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        out.push(Check::new(
            "tau 0.01 and 0.005 negative curves overlap",
            a.s == b.s && gap <= CURVE_OVERLAP,
            format!("max gap {gap:.3e} <= {CURVE_OVERLAP}"),
        ));
    }
    out
}
