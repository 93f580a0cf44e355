//! Outlier scoring on representation vectors.
//!
//! Every [`ScoreSet`] is oriented so that larger means "more like an
//! inlier"; distance-based scorers are negated on the way out.

mod aggregate;
mod embeddings;
mod gaussian;
mod knn;
mod score;

pub use aggregate::{aggregate, aggregate_with, Aggregation};
pub use embeddings::{format_embeddings, parse_embeddings, read_embeddings, write_embeddings, EmbeddingBatch, UNKNOWN_LABEL};
pub use gaussian::{GaussianModel, RIDGE_EPSILON};
pub use knn::{knn_classify, KnnClassifier};
pub use score::{score_batch, score_mahalanobis, score_msp, score_norm, ScoreSet, Scorer};
