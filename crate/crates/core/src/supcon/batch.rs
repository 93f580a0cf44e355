use ndarray::Array2;
use rand::seq::SliceRandom;

use super::{augment, AugmentPolicy, ContrastiveBatch};
use crate::error::{Error, Result};
use crate::nn::{activations, Layer, ModelParams, Real};
use crate::seed;
use crate::synthdata::{Image, LabeledDataset, Role, Sample};

/// Two augmented views per item, in item order. View `v` of item `k` is
/// seeded from `(seed, k, v)`.
pub fn augmented_views(
    items: &[(&Image, usize)],
    policy: &AugmentPolicy,
    seed: u64,
) -> (Vec<Image>, Vec<usize>) {
    let mut images = Vec::with_capacity(2 * items.len());
    let mut labels = Vec::with_capacity(2 * items.len());
    for (k, &(image, label)) in items.iter().enumerate() {
        for view in 0..2 {
            images.push(augment(image, policy, seed::derive_seed(seed, &[k as u64, view])));
            labels.push(label);
        }
    }
    (images, labels)
}

/// L2-normalized linear2 activations.
pub fn embed_normalized<T: Real>(params: &ModelParams<T>, images: &[&Image]) -> Result<Array2<f64>> {
    let mut z = activations(params, images, Layer::Linear2)?;
    for (i, mut row) in z.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument(format!("embedding {i} is the zero vector")));
        }
        row /= norm;
    }
    Ok(z)
}

/// Samples `batch_size` distinct training images, makes two views of each
/// and embeds them with `params`.
pub fn build_contrastive_batch<T: Real>(
    params: &ModelParams<T>,
    ds: &LabeledDataset,
    batch_size: usize,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<ContrastiveBatch> {
    let mut train: Vec<&Sample> = ds.split(Role::Train).collect();
    if batch_size == 0 || batch_size > train.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} outside 1..={}",
            train.len()
        )));
    }
    train.shuffle(&mut seed::rng_for(seed, &[0]));
    let items: Vec<(&Image, usize)> =
        train[..batch_size].iter().map(|s| (&s.image, s.label)).collect();
    let (views, labels) = augmented_views(&items, policy, seed::derive_seed(seed, &[1]));
    let refs: Vec<&Image> = views.iter().collect();
    ContrastiveBatch::from_labels(embed_normalized(params, &refs)?, labels)
}
