//! Supervised contrastive loss over a batch of embeddings.
//!
//! For anchor `i` with positive set `P(i)` and negative set `N(i)`,
//!
//! ```text
//! L = Σ_i  -1/|P(i)| Σ_{p∈P(i)} log( exp(s_ip/τ) / Z_i ),
//! Z_i = Σ_{p∈P(i)} exp(s_ip/τ) + Σ_{n∈N(i)} exp(s_in/τ)
//! ```
//!
//! where `s_ij = z_i · z_j`. Treating each directed similarity `s_ij` as an
//! independent variable gives
//!
//! ```text
//! dL/ds_ip = (softmax_i(s_ip/τ) - 1/|P(i)|) / τ
//! dL/ds_in =  softmax_i(s_in/τ) / τ
//! ```
//!
//! with the softmax taken over `P(i) ∪ N(i)`. With a single positive the
//! first expression is the familiar `(softmax - 1)/τ`; that bracketed form is
//! reported as [`PairGradient::closed_form`] for every pair.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Contrastive softmax temperature, strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Temperature(tau))
        } else {
            Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {tau}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Index sets of one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorSets {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl AnchorSets {
    /// Every sample is an anchor; positives share its label, negatives do
    /// not.
    pub fn from_labels(labels: &[usize]) -> Vec<AnchorSets> {
        (0..labels.len())
            .map(|i| {
                let (positives, negatives): (Vec<usize>, Vec<usize>) = (0..labels.len())
                    .filter(|&j| j != i)
                    .partition(|&j| labels[j] == labels[i]);
                AnchorSets {
                    anchor: i,
                    positives,
                    negatives,
                }
            })
            .collect()
    }
}

fn validate_anchors(n: usize, anchors: &[AnchorSets]) -> Result<()> {
    for a in anchors {
        if a.anchor >= n {
            return Err(Error::InvalidArgument(format!(
                "anchor {} out of range for {n} samples",
                a.anchor
            )));
        }
        if a.positives.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "anchor {} has no positive pair",
                a.anchor
            )));
        }
        for &j in a.positives.iter().chain(&a.negatives) {
            if j >= n || j == a.anchor {
                return Err(Error::InvalidArgument(format!(
                    "anchor {}: invalid partner index {j}",
                    a.anchor
                )));
            }
        }
        if a.positives.iter().any(|p| a.negatives.contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "anchor {}: positive and negative sets overlap",
                a.anchor
            )));
        }
    }
    Ok(())
}

/// Unit-norm embeddings with labels and per-anchor index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
    anchors: Vec<AnchorSets>,
}

impl ContrastiveBatch {
    /// Standard construction: every sample is an anchor, `P(i)` holds the
    /// other samples with the same label (augmented views included) and
    /// `N(i)` the rest.
    pub fn from_labels(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let anchors = AnchorSets::from_labels(&labels);
        Self::with_anchors(embeddings, labels, anchors)
    }

    /// Construction with explicit index sets, e.g. a single anchor.
    pub fn with_anchors(
        embeddings: Array2<f64>,
        labels: Vec<usize>,
        anchors: Vec<AnchorSets>,
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} embeddings", labels.len())));
        }
        for (i, row) in embeddings.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "embedding {i} has norm {norm}, expected unit length"
                )));
            }
        }
        validate_anchors(n, &anchors)?;
        Ok(ContrastiveBatch {
            embeddings,
            labels,
            anchors,
        })
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn anchors(&self) -> &[AnchorSets] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGradient {
    pub anchor: usize,
    pub other: usize,
    pub kind: PairKind,
    pub similarity: f64,
    /// `exp(s/τ) / Z_anchor`.
    pub softmax: f64,
    /// Exact partial derivative of the loss with respect to `s_{anchor,other}`.
    pub grad: f64,
    /// `(softmax - 1)/τ` for positives, `softmax/τ` for negatives.
    pub closed_form: f64,
}

#[derive(Clone, Debug)]
pub struct SupConGradients {
    pub loss: f64,
    pub pairs: Vec<PairGradient>,
    /// dL/dz, one row per embedding.
    pub embedding_grad: Array2<f64>,
}

/// Loss as a function of a full similarity matrix, where row `i` holds the
/// similarities seen by anchor `i`. Entries are independent variables;
/// symmetry is not assumed.
pub fn supcon_loss_from_similarities(
    sim: &ArrayView2<'_, f64>,
    anchors: &[AnchorSets],
    tau: Temperature,
) -> Result<f64> {
    validate_anchors(sim.nrows().min(sim.ncols()), anchors)?;
    let t = tau.value();
    let mut loss = 0.0;
    for a in anchors {
        let row = sim.row(a.anchor);
        let logits = a.positives.iter().chain(&a.negatives).map(|&j| row[j] / t);
        let log_z = log_sum_exp(logits);
        let mean_pos: f64 =
            a.positives.iter().map(|&p| row[p] / t).sum::<f64>() / a.positives.len() as f64;
        loss += log_z - mean_pos;
    }
    Ok(loss)
}

/// Same loss with similarities taken as dot products of the rows of `z`.
/// Rows are not renormalized.
pub fn supcon_loss_raw(
    z: &ArrayView2<'_, f64>,
    anchors: &[AnchorSets],
    tau: Temperature,
) -> Result<f64> {
    let sim = z.dot(&z.t());
    supcon_loss_from_similarities(&sim.view(), anchors, tau)
}

pub fn supcon_loss(batch: &ContrastiveBatch, tau: Temperature) -> Result<f64> {
    supcon_loss_raw(&batch.embeddings.view(), &batch.anchors, tau)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss, per-pair similarity gradients and embedding gradients for rows of
/// `z` used as-is (no normalization).
pub fn supcon_gradients_raw(
    z: &ArrayView2<'_, f64>,
    anchors: &[AnchorSets],
    tau: Temperature,
) -> Result<SupConGradients> {
    let n = z.nrows();
    validate_anchors(n, anchors)?;
    let t = tau.value();
    let sim = z.dot(&z.t());
    let mut dsim = Array2::<f64>::zeros((n, n));
    let mut pairs = Vec::new();
    let mut loss = 0.0;

    for a in anchors {
        let i = a.anchor;
        let row = sim.row(i);
        let partners = a.positives.iter().chain(&a.negatives);
        let log_z = log_sum_exp(partners.clone().map(|&j| row[j] / t));
        let inv_p = 1.0 / a.positives.len() as f64;
        loss += log_z - a.positives.iter().map(|&p| row[p] / t).sum::<f64>() * inv_p;

        for (kind, set) in [(PairKind::Positive, &a.positives), (PairKind::Negative, &a.negatives)] {
            for &j in set {
                let softmax = (row[j] / t - log_z).exp();
                let (grad, closed_form) = match kind {
                    PairKind::Positive => ((softmax - inv_p) / t, (softmax - 1.0) / t),
                    PairKind::Negative => (softmax / t, softmax / t),
                };
                dsim[[i, j]] += grad;
                pairs.push(PairGradient {
                    anchor: i,
                    other: j,
                    kind,
                    similarity: row[j],
                    softmax,
                    grad,
                    closed_form,
                });
            }
        }
    }

    // s_ij = z_i·z_j, so dL/dz = G z + Gᵀ z.
    let embedding_grad = dsim.dot(z) + dsim.t().dot(z);
    Ok(SupConGradients {
        loss,
        pairs,
        embedding_grad,
    })
}

pub fn supcon_pair_gradients(batch: &ContrastiveBatch, tau: Temperature) -> Result<SupConGradients> {
    supcon_gradients_raw(&batch.embeddings.view(), &batch.anchors, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_anchor_batch() -> ContrastiveBatch {
        // anchor, identical positive, orthogonal negative
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        ContrastiveBatch::with_anchors(
            z,
            vec![0, 0, 1],
            vec![AnchorSets {
                anchor: 0,
                positives: vec![1],
                negatives: vec![2],
            }],
        )
        .unwrap()
    }

    #[test]
    fn identical_positive_without_negatives_has_zero_loss() {
        let z = array![[0.6, 0.8], [0.6, 0.8]];
        let batch = ContrastiveBatch::from_labels(z, vec![3, 3]).unwrap();
        for tau in [0.05, 0.5, 1.0] {
            let loss = supcon_loss(&batch, Temperature::new(tau).unwrap()).unwrap();
            assert!(loss.abs() < 1e-12);
        }
    }

    #[test]
    fn one_positive_one_negative() {
        let loss = supcon_loss(&single_anchor_batch(), Temperature::new(1.0).unwrap()).unwrap();
        // log(1 + e^-1)
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn pair_factors_for_unit_temperature() {
        let g = supcon_pair_gradients(&single_anchor_batch(), Temperature::new(1.0).unwrap()).unwrap();
        let e = std::f64::consts::E;
        let pos = g.pairs.iter().find(|p| p.kind == PairKind::Positive).unwrap();
        let neg = g.pairs.iter().find(|p| p.kind == PairKind::Negative).unwrap();
        assert!((pos.softmax - e / (e + 1.0)).abs() < 1e-12);
        assert!((pos.grad - (e / (e + 1.0) - 1.0)).abs() < 1e-12);
        assert!((neg.grad - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert_eq!(pos.grad, pos.closed_form);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-0.1).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(ContrastiveBatch::from_labels(z.clone(), vec![0, 1]).is_err());
        assert!(ContrastiveBatch::from_labels(array![[2.0, 0.0], [1.0, 0.0]], vec![0, 0]).is_err());
        assert!(ContrastiveBatch::with_anchors(
            z,
            vec![0, 0],
            vec![AnchorSets {
                anchor: 0,
                positives: vec![0],
                negatives: vec![]
            }]
        )
        .is_err());
    }

    #[test]
    fn anchor_sets_follow_labels() {
        let sets = AnchorSets::from_labels(&[0, 1, 0, 1, 0]);
        assert_eq!(sets[0].positives, vec![2, 4]);
        assert_eq!(sets[0].negatives, vec![1, 3]);
        assert_eq!(sets[3].positives, vec![1]);
    }
}
