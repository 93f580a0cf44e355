use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayView4, Axis, Zip};
use rand::seq::SliceRandom;

use super::network::{backward, cross_entropy, forward, images_to_batch};
use super::{Gradients, Layer, ModelParams, NetworkConfig, ParamPair, Real, HIDDEN2};
use crate::error::{Error, Result};
use crate::osr::EmbeddingBatch;
use crate::seed;
use crate::supcon::{augmented_views, supcon_gradients_raw, AnchorSets, AugmentPolicy, Temperature};
use crate::synthdata::{Image, LabeledDataset, Role, Sample};

/// Rows per forward pass during inference.
const EVAL_CHUNK: usize = 64;

/// Norms below this are treated as a dead (all-zero) representation.
const MIN_NORM: f64 = 1e-12;

// Seed stream tags.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    /// SupCon on the L2-normalized linear2 output.
    SupCon { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Augmentation applied to both views in SupCon training.
    pub augment: AugmentPolicy,
}

impl TrainConfig {
    /// Adam at 1e-3, batch 32, 30 epochs.
    pub fn classifier(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed,
            loss: LossKind::CrossEntropy,
            augment: AugmentPolicy::default(),
        }
    }

    /// Adam at 1e-3, batch 32 images (64 views), 100 epochs.
    pub fn supcon(temperature: f64, seed: u64) -> Self {
        TrainConfig {
            epochs: 100,
            loss: LossKind::SupCon { temperature },
            ..Self::classifier(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if let LossKind::SupCon { temperature } = self.loss {
            Temperature::new(temperature)?;
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    moments: BTreeMap<Layer, (ParamPair<T>, ParamPair<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: T::of(cfg.learning_rate),
            beta1: T::of(cfg.beta1),
            beta2: T::of(cfg.beta2),
            eps: T::of(cfg.epsilon),
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Updates exactly the layers present in `grads`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let step_size = self.lr / c1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (&layer, g) in &grads.entries {
            let gw = g.weight.as_standard_layout();
            let p = params.layer_mut(layer);
            let (m, v) = self.moments.entry(layer).or_insert_with(|| {
                (
                    ParamPair::zeros(p.weight.nrows(), p.weight.ncols()),
                    ParamPair::zeros(p.weight.nrows(), p.weight.ncols()),
                )
            });
            adam_update(
                p.weight.as_slice_mut().expect("standard layout"),
                m.weight.as_slice_mut().expect("standard layout"),
                v.weight.as_slice_mut().expect("standard layout"),
                gw.as_slice().expect("standard layout"),
                [b1, b2, eps, step_size, c2],
            );
            adam_update(
                p.bias.as_slice_mut().expect("contiguous"),
                m.bias.as_slice_mut().expect("contiguous"),
                v.bias.as_slice_mut().expect("contiguous"),
                g.bias.as_slice().expect("contiguous"),
                [b1, b2, eps, step_size, c2],
            );
        }
    }
}

fn adam_update<T: Real>(p: &mut [T], m: &mut [T], v: &mut [T], g: &[T], consts: [T; 5]) {
    let [b1, b2, eps, step_size, c2] = consts;
    let one = T::one();
    let inv_c2 = one / c2;
    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
    }
}

/// Normalizes each row of `h`; dead rows stay zero.
fn normalize_rows(h: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut z = h.clone();
    let mut norms = Vec::with_capacity(h.nrows());
    for mut row in z.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        norms.push(norm);
        if norm > MIN_NORM {
            row /= norm;
        } else {
            row.fill(0.0);
        }
    }
    (z, norms)
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_gradients<T: Real>(
    params: &ModelParams<T>,
    batch: ArrayView4<'_, T>,
    labels: &[usize],
    loss: LossKind,
) -> Result<(f64, Gradients<T>)> {
    if batch.dim().0 == 0 {
        return Err(Error::InvalidArgument("loss of an empty batch".into()));
    }
    let (logits, cache) = forward(params, batch)?;
    match loss {
        LossKind::CrossEntropy => {
            let (value, grad) = cross_entropy(&logits.view(), labels)?;
            Ok((value, backward(params, &cache, Some(&grad), None)?))
        }
        LossKind::SupCon { temperature } => {
            let tau = Temperature::new(temperature)?;
            if labels.len() != cache.batch_size() {
                return Err(Error::Shape(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    cache.batch_size()
                )));
            }
            let h = cache.activation(Layer::Linear2).mapv(|v| v.as_f64());
            let (z, norms) = normalize_rows(&h);
            let anchors = AnchorSets::from_labels(labels);
            let g = supcon_gradients_raw(&z.view(), &anchors, tau)?;
            // d(h/|h|)/dh applied to dL/dz: (g - z (z·g)) / |h|.
            let mut dh = Array2::<T>::zeros((h.nrows(), HIDDEN2));
            for (i, mut row) in dh.outer_iter_mut().enumerate() {
                if norms[i] <= MIN_NORM {
                    continue;
                }
                let zi = z.row(i);
                let gi = g.embedding_grad.row(i);
                let proj = zi.dot(&gi);
                for k in 0..HIDDEN2 {
                    row[k] = T::of((gi[k] - zi[k] * proj) / norms[i]);
                }
            }
            Ok((g.loss, backward(params, &cache, None, Some(&dh))?))
        }
    }
}

/// Per-split evaluation of a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    /// Fraction of predictions equal to the true label.
    pub accuracy: f64,
    /// Fraction of predictions whose class has the true sample's shape.
    pub shape_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ModelParams<f32>,
    pub epoch_losses: Vec<f64>,
    pub train: Option<Evaluation>,
    pub test: Option<Evaluation>,
}

/// Activations of `layer` for each image, as `f64` rows.
pub fn activations<T: Real>(
    params: &ModelParams<T>,
    images: &[&Image],
    layer: Layer,
) -> Result<Array2<f64>> {
    let width = params.config().activation_width(layer);
    let mut out = Array2::zeros((images.len(), width));
    for (chunk, mut dst) in images
        .chunks(EVAL_CHUNK)
        .zip(out.axis_chunks_iter_mut(Axis(0), EVAL_CHUNK))
    {
        let batch: Array4<T> = images_to_batch(chunk)?;
        let (_, cache) = forward(params, batch.view())?;
        Zip::from(&mut dst)
            .and(&cache.activation(layer))
            .for_each(|d, &s| *d = s.as_f64());
    }
    Ok(out)
}

/// Arg-max class per image.
pub fn predict<T: Real>(params: &ModelParams<T>, images: &[&Image]) -> Result<Vec<usize>> {
    let logits = activations(params, images, Layer::Linear3)?;
    Ok(logits
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect())
}

pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    ds: &LabeledDataset,
    role: Role,
) -> Result<Evaluation> {
    let samples: Vec<&Sample> = ds.split(role).collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples with role {}", role.name())));
    }
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let predictions = predict(params, &images)?;
    let n = samples.len() as f64;
    let correct = samples.iter().zip(&predictions).filter(|(s, &p)| s.label == p).count();
    let same_shape = samples
        .iter()
        .zip(&predictions)
        .filter(|(s, &p)| ds.classes.get(p).is_some_and(|c| c.kind() == s.class.kind()))
        .count();
    Ok(Evaluation {
        predictions,
        accuracy: correct as f64 / n,
        shape_accuracy: same_shape as f64 / n,
    })
}

/// Representation rows for `samples` at `layer`. Outlier samples get label
/// -1.
pub fn extract_representation<T: Real>(
    params: &ModelParams<T>,
    samples: &[&Sample],
    layer: Layer,
    provenance: &str,
) -> Result<EmbeddingBatch> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let matrix = activations(params, &images, layer)?;
    let labels = samples
        .iter()
        .map(|s| if s.role == Role::TestOutlier { -1 } else { s.label as i64 })
        .collect();
    EmbeddingBatch::new(matrix, labels, format!("{provenance} layer={layer}"))
}

struct TrainingSet {
    images: Vec<Image>,
    batch: Array4<f32>,
    labels: Vec<usize>,
}

fn training_set(ds: &LabeledDataset) -> Result<TrainingSet> {
    let samples: Vec<&Sample> = ds.split(Role::Train).collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training samples".into()));
    }
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    Ok(TrainingSet {
        batch: images_to_batch(&images)?,
        images: images.into_iter().cloned().collect(),
        labels: samples.iter().map(|s| s.label).collect(),
    })
}

fn run_epochs(
    params: &mut ModelParams<f32>,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg);
    let trainable = Layer::PARAMETRIC.iter().any(|&l| !params.is_frozen(l));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..set.labels.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng_for(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = match cfg.loss {
                LossKind::CrossEntropy => {
                    let batch = set.batch.select(Axis(0), chunk);
                    let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
                    loss_and_gradients(params, batch.view(), &labels, cfg.loss)?
                }
                LossKind::SupCon { .. } => {
                    let items: Vec<(&Image, usize)> =
                        chunk.iter().map(|&i| (&set.images[i], set.labels[i])).collect();
                    let view_seed =
                        seed::derive_seed(cfg.seed, &[STREAM_AUGMENT, epoch as u64, batch_index as u64]);
                    let (views, labels) = augmented_views(&items, &cfg.augment, view_seed);
                    let refs: Vec<&Image> = views.iter().collect();
                    let batch = images_to_batch::<f32>(&refs)?;
                    loss_and_gradients(params, batch.view(), &labels, cfg.loss)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            if trainable {
                adam.step(params, &grads);
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(epoch_losses)
}

/// Trains a fresh network with cross-entropy on the training split and
/// evaluates it on the training and inlier test splits.
pub fn train_classifier(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::InvalidArgument("train_classifier needs the cross-entropy loss".into()));
    }
    let set = training_set(ds)?;
    let mut params = ModelParams::init(NetworkConfig::new(ds.num_known())?, cfg.seed);
    let epoch_losses = run_epochs(&mut params, &set, cfg)?;
    Ok(TrainReport {
        train: Some(evaluate(&params, ds, Role::Train)?),
        test: Some(evaluate(&params, ds, Role::TestInlier)?),
        params,
        epoch_losses,
    })
}

/// Continues training `params` with every layer up to and including
/// `freeze_until` frozen.
pub fn finetune_frozen(
    params: &ModelParams<f32>,
    freeze_until: Layer,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if params.num_classes() != ds.num_known() {
        return Err(Error::Shape(format!(
            "model has {} outputs, dataset has {} classes",
            params.num_classes(),
            ds.num_known()
        )));
    }
    let mut params = params.clone();
    params.freeze_until(freeze_until)?;
    let set = training_set(ds)?;
    let epoch_losses = run_epochs(&mut params, &set, cfg)?;
    Ok(TrainReport {
        train: Some(evaluate(&params, ds, Role::Train)?),
        test: Some(evaluate(&params, ds, Role::TestInlier)?),
        params,
        epoch_losses,
    })
}

/// Trains a fresh network with SupCon on two augmented views per image.
/// linear3 is never used and stays at its initial value.
pub fn train_supcon(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let LossKind::SupCon { temperature } = cfg.loss else {
        return Err(Error::InvalidArgument("train_supcon needs the SupCon loss".into()));
    };
    Temperature::new(temperature)?;
    let set = training_set(ds)?;
    let mut params = ModelParams::init(NetworkConfig::new(ds.num_known())?, cfg.seed);
    params.set_frozen(Layer::Linear3, true);
    let epoch_losses = run_epochs(&mut params, &set, cfg)?;
    params.set_frozen(Layer::Linear3, false);
    Ok(TrainReport {
        params,
        epoch_losses,
        train: None,
        test: None,
    })
}
