use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};

use super::EmbeddingBatch;
use crate::error::{Error, Result};

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the `k` Euclidean nearest training rows. Vote ties
/// go to the tied class whose training mean is nearest the query, then to
/// the smallest label.
#[derive(Clone, Debug)]
pub struct KnnClassifier {
    train: EmbeddingBatch,
    k: usize,
    means: BTreeMap<i64, Array1<f64>>,
}

impl KnnClassifier {
    /// Rows labelled as unknown are dropped from `train`.
    pub fn new(train: &EmbeddingBatch, k: usize) -> Result<Self> {
        let train = train.select(|i| !train.is_outlier(i));
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty kNN training set".into()));
        }
        if k == 0 || k > train.len() {
            return Err(Error::InvalidArgument(format!(
                "K = {k} outside 1..={}",
                train.len()
            )));
        }
        let mut sums: BTreeMap<i64, (Array1<f64>, usize)> = BTreeMap::new();
        for (i, &l) in train.labels().iter().enumerate() {
            let e = sums.entry(l).or_insert_with(|| (Array1::zeros(train.dim()), 0));
            e.0 += &train.row(i);
            e.1 += 1;
        }
        let means = sums.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect();
        Ok(KnnClassifier { train, k, means })
    }

    pub fn classify(&self, query: ArrayView1<'_, f64>) -> Result<i64> {
        if query.len() != self.train.dim() {
            return Err(Error::Shape(format!(
                "query width {}, training width {}",
                query.len(),
                self.train.dim()
            )));
        }
        let mut order: Vec<(f64, usize)> = (0..self.train.len())
            .map(|i| (sq_dist(self.train.row(i), query), i))
            .collect();
        order.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
        for &(_, i) in &order[..self.k] {
            *votes.entry(self.train.labels()[i]).or_default() += 1;
        }
        let top = *votes.values().max().expect("k >= 1");
        let label = votes
            .into_iter()
            .filter(|&(_, c)| c == top)
            .map(|(l, _)| (sq_dist(self.means[&l].view(), query), l))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("at least one class")
            .1;
        Ok(label)
    }

    pub fn classify_batch(&self, test: &EmbeddingBatch) -> Result<Vec<i64>> {
        (0..test.len()).map(|i| self.classify(test.row(i))).collect()
    }
}

pub fn knn_classify(train: &EmbeddingBatch, query: ArrayView1<'_, f64>, k: usize) -> Result<i64> {
    KnnClassifier::new(train, k)?.classify(query)
}
