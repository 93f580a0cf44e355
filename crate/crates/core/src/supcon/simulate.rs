//! One-dimensional slices of the SupCon similarity gradients, used to see
//! how temperature reshapes the weight given to easy and hard pairs.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{PairKind, Temperature};
use crate::error::{Error, Result};

pub const DEFAULT_TAUS: [f64; 6] = [1.0, 0.5, 0.1, 0.05, 0.01, 0.005];
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Closed interval sampled on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimRange {
    pub lo: f64,
    pub hi: f64,
}

impl SimRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("empty similarity range [{lo}, {hi}]")));
        }
        Ok(SimRange { lo, hi })
    }

    pub fn default_positive() -> Self {
        SimRange { lo: 0.8, hi: 1.0 }
    }

    pub fn default_negative() -> Self {
        SimRange { lo: 0.0, hi: 0.8 }
    }

    pub fn grid(&self, points: usize) -> Vec<f64> {
        let step = (self.hi - self.lo) / (points - 1) as f64;
        (0..points)
            .map(|k| if k + 1 == points { self.hi } else { self.lo + step * k as f64 })
            .collect()
    }
}

impl FromStr for SimRange {
    type Err = Error;

    /// `lo:hi`, e.g. `0.8:1.0`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("range {s:?} is not lo:hi"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        SimRange::new(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)
    }
}

/// Fixed similarities that complete the softmax denominator around the
/// swept pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePopulation {
    /// Positive similarity present while sweeping a negative pair.
    pub positive: f64,
    pub negatives: Vec<f64>,
}

impl Default for ReferencePopulation {
    fn default() -> Self {
        ReferencePopulation {
            positive: 1.0,
            negatives: vec![0.4; 62],
        }
    }
}

impl fmt::Display for ReferencePopulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pos={}", self.positive)?;
        let mut rest = &self.negatives[..];
        while let Some(&v) = rest.first() {
            let run = rest.iter().take_while(|&&x| x == v).count();
            write!(f, ",neg={v}*{run}")?;
            rest = &rest[run..];
        }
        Ok(())
    }
}

impl FromStr for ReferencePopulation {
    type Err = Error;

    /// Comma-separated `pos=<s>` (exactly once) and `neg=<s>[*<count>]`
    /// items, e.g. `pos=1.0,neg=0.4*62`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("population {s:?}: {why}"));
        let parse_sim = |v: &str| -> Result<f64> {
            let x: f64 = v.trim().parse().map_err(|_| bad("bad similarity"))?;
            if !(-1.0..=1.0).contains(&x) {
                return Err(bad("similarity outside [-1, 1]"));
            }
            Ok(x)
        };
        let mut positive = None;
        let mut negatives = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "pos" if positive.is_none() => positive = Some(parse_sim(value)?),
                "pos" => return Err(bad("pos given twice")),
                "neg" => {
                    let (v, count) = match value.split_once('*') {
                        Some((v, c)) => (v, c.trim().parse().map_err(|_| bad("bad count"))?),
                        None => (value, 1usize),
                    };
                    negatives.extend(std::iter::repeat_n(parse_sim(v)?, count));
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        Ok(ReferencePopulation {
            positive: positive.ok_or_else(|| bad("missing pos"))?,
            negatives,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCurve {
    pub kind: PairKind,
    pub tau: f64,
    pub s: Vec<f64>,
    pub grad: Vec<f64>,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradient of a single-positive anchor's loss with respect to the swept
/// similarity, for every temperature and both pair kinds. Positive curves
/// come first, then negative curves, each in `taus` order.
pub fn simulate_gradient_curves(
    taus: &[f64],
    positive_range: SimRange,
    negative_range: SimRange,
    population: &ReferencePopulation,
    points: usize,
) -> Result<Vec<GradientCurve>> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("no temperatures".into()));
    }
    if points < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 grid points, got {points}")));
    }
    SimRange::new(positive_range.lo, positive_range.hi)?;
    SimRange::new(negative_range.lo, negative_range.hi)?;
    let temps = taus.iter().map(|&t| Temperature::new(t)).collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::with_capacity(2 * taus.len());
    for kind in [PairKind::Positive, PairKind::Negative] {
        let range = match kind {
            PairKind::Positive => positive_range,
            PairKind::Negative => negative_range,
        };
        let s = range.grid(points);
        for tau in &temps {
            let t = tau.value();
            let mut logits: Vec<f64> = Vec::with_capacity(population.negatives.len() + 2);
            let grad = s
                .iter()
                .map(|&x| {
                    // Every other term of the partition function.
                    logits.clear();
                    if kind == PairKind::Negative {
                        logits.push(population.positive / t);
                    }
                    logits.extend(population.negatives.iter().map(|n| n / t));
                    let log_rest = log_sum_exp(&logits);
                    let log_z = log_add_exp(x / t, log_rest);
                    match kind {
                        // softmax - 1 = -rest/Z, which keeps precision when
                        // the softmax rounds to 1.
                        PairKind::Positive => -(log_rest - log_z).exp() / t,
                        PairKind::Negative => (x / t - log_z).exp() / t,
                    }
                })
                .collect();
            curves.push(GradientCurve { kind, tau: t, s: s.clone(), grad });
        }
    }
    Ok(curves)
}

/// `kind,tau,s,grad` rows.
pub fn curves_to_csv(curves: &[GradientCurve]) -> String {
    let mut out = String::from("kind,tau,s,grad\n");
    for c in curves {
        let kind = match c.kind {
            PairKind::Positive => "positive",
            PairKind::Negative => "negative",
        };
        for (s, g) in c.s.iter().zip(&c.grad) {
            writeln!(out, "{kind},{},{s},{g:e}", c.tau).unwrap();
        }
    }
    out
}
