use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView1;

use super::EmbeddingBatch;
use crate::error::{Error, Result};

/// Ridge added to the pooled covariance, relative to its mean eigenvalue.
pub const RIDGE_EPSILON: f64 = 1e-6;

/// Class means with one shared covariance.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    labels: Vec<i64>,
    means: Vec<DVector<f64>>,
    covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    chol: DMatrix<f64>,
}

impl GaussianModel {
    /// Uses `covariance` as given, without regularization.
    pub fn new(means: Vec<(i64, Vec<f64>)>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = covariance.nrows();
        if means.is_empty() {
            return Err(Error::InvalidArgument("no class means".into()));
        }
        if covariance.ncols() != d || means.iter().any(|(_, m)| m.len() != d) {
            return Err(Error::Shape(format!("means and a {d}x{} covariance disagree", covariance.ncols())));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let chol = covariance.clone().cholesky().ok_or(Error::SingularCovariance)?.l();
        Ok(GaussianModel {
            labels: means.iter().map(|(l, _)| *l).collect(),
            means: means.into_iter().map(|(_, m)| DVector::from_vec(m)).collect(),
            covariance,
            chol,
        })
    }

    /// Class means of labelled rows and their pooled covariance plus a
    /// trace-scaled ridge. Rows labelled as unknown are ignored.
    pub fn fit(train: &EmbeddingBatch) -> Result<Self> {
        let d = train.dim();
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &l) in train.labels().iter().enumerate() {
            if !train.is_outlier(i) {
                groups.entry(l).or_default().push(i);
            }
        }
        if groups.is_empty() {
            return Err(Error::InvalidArgument("no labelled training rows".into()));
        }
        if let Some((l, _)) = groups.iter().find(|(_, rows)| rows.len() < 2) {
            return Err(Error::InvalidArgument(format!(
                "class {l} has fewer than 2 training samples"
            )));
        }

        let mut means = Vec::with_capacity(groups.len());
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut total = 0usize;
        for (&label, rows) in &groups {
            let mut mean = DVector::<f64>::zeros(d);
            for &i in rows {
                mean += to_vector(train.row(i));
            }
            mean /= rows.len() as f64;
            for &i in rows {
                let diff = to_vector(train.row(i)) - &mean;
                cov.ger(1.0, &diff, &diff, 1.0);
            }
            total += rows.len();
            means.push((label, mean.as_slice().to_vec()));
        }
        cov /= total as f64;
        let ridge = RIDGE_EPSILON * cov.trace() / d as f64;
        if !(ridge > 0.0) {
            return Err(Error::SingularCovariance);
        }
        for k in 0..d {
            cov[(k, k)] += ridge;
        }
        GaussianModel::new(means, cov)
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        self.means[k].as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Mahalanobis distance to each class mean, in class order.
    pub fn distances(&self, z: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!("vector of width {}, model of width {}", z.len(), self.dim())));
        }
        let z = to_vector(z);
        Ok(self
            .means
            .iter()
            .map(|m| {
                let y = self
                    .chol
                    .solve_lower_triangular(&(&z - m))
                    .expect("Cholesky factor has a positive diagonal");
                y.norm()
            })
            .collect())
    }

    /// Distance to the nearest class mean.
    pub fn min_distance(&self, z: ArrayView1<'_, f64>) -> Result<f64> {
        Ok(self.distances(z)?.into_iter().fold(f64::INFINITY, f64::min))
    }
}

fn to_vector(v: ArrayView1<'_, f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn identity_model(means: Vec<(i64, Vec<f64>)>) -> GaussianModel {
        let d = means[0].1.len();
        GaussianModel::new(means, DMatrix::identity(d, d)).unwrap()
    }

    #[test]
    fn class_means_of_tight_clusters() {
        let m = array![[1.0, 1.0], [1.0, 1.001], [5.0, -2.0], [5.001, -2.0], [0.0, 0.0]];
        let train = EmbeddingBatch::new(m, vec![3, 3, 7, 7, -1], "t").unwrap();
        let g = GaussianModel::fit(&train).unwrap();
        assert_eq!(g.labels(), &[3, 7]);
        assert!((g.mean(0)[0] - 1.0).abs() < 1e-12 && (g.mean(0)[1] - 1.0005).abs() < 1e-12);
        assert!((g.mean(1)[0] - 5.0005).abs() < 1e-12 && (g.mean(1)[1] + 2.0).abs() < 1e-12);
        assert_eq!(g.min_distance(array![1.0, 1.0005].view()).unwrap(), 0.0);
    }

    #[test]
    fn identity_covariance_gives_euclidean_distance() {
        let g = identity_model(vec![(0, vec![0.0, 0.0]), (1, vec![10.0, 0.0])]);
        assert_eq!(g.min_distance(array![0.0, 2.0].view()).unwrap(), 2.0);
        assert_eq!(g.min_distance(array![10.0, 0.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn larger_axis_variance_shrinks_that_axis() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let g = GaussianModel::new(vec![(0, vec![0.0, 0.0])], cov).unwrap();
        let along_x = g.min_distance(array![1.0, 0.0].view()).unwrap();
        let along_y = g.min_distance(array![0.0, 1.0].view()).unwrap();
        assert!((along_x - 0.5).abs() < 1e-15);
        assert!(along_x < along_y);
    }

    #[test]
    fn failures() {
        let single = EmbeddingBatch::new(array![[1.0], [2.0], [3.0]], vec![0, 0, 1], "t").unwrap();
        assert!(GaussianModel::fit(&single).is_err());
        let flat = EmbeddingBatch::new(array![[1.0], [1.0]], vec![0, 0], "t").unwrap();
        assert!(matches!(GaussianModel::fit(&flat), Err(Error::SingularCovariance)));
        let g = identity_model(vec![(0, vec![0.0, 0.0])]);
        assert!(g.distances(array![1.0].view()).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianModel::new(vec![(0, vec![0.0, 0.0])], bad).is_err());
    }

    /// Explicit inverse instead of triangular solves.
    fn oracle_distance(mean: &[f64], cov: &DMatrix<f64>, z: &[f64]) -> f64 {
        let inv = cov.clone().try_inverse().unwrap();
        let diff = DVector::from_iterator(z.len(), z.iter().zip(mean).map(|(a, b)| a - b));
        (diff.transpose() * inv * &diff)[(0, 0)].sqrt()
    }

    proptest! {
        #[test]
        fn identity_matches_nearest_mean(
            means in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..5),
            z in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let g = identity_model(means.iter().cloned().enumerate().map(|(k, m)| (k as i64, m)).collect());
            let euclid = means
                .iter()
                .map(|m| m.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            let got = g.min_distance(ndarray::ArrayView1::from(&z)).unwrap();
            prop_assert!((got - euclid).abs() <= 1e-10 * euclid.max(1e-300));
        }

        #[test]
        fn fitted_model_matches_explicit_inverse(
            data in prop::collection::vec(-5.0f64..5.0, 36),
            z in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let train = EmbeddingBatch::new(
                Array2::from_shape_vec((12, 3), data).unwrap(),
                (0..12).map(|i| i % 3).collect(),
                "t",
            ).unwrap();
            let g = GaussianModel::fit(&train).unwrap();
            for (k, d) in g.distances(ndarray::ArrayView1::from(&z)).unwrap().into_iter().enumerate() {
                let o = oracle_distance(g.mean(k), g.covariance(), &z);
                prop_assert!((d - o).abs() <= 1e-8 * o.max(1.0));
            }
        }
    }
}
