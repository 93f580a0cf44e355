use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis, Zip};

use super::{
    Gradients, Layer, ModelParams, ParamPair, Real, CONV_CHANNELS, CONV_KERNEL, CONV_PADDING,
    FLAT_DIM, HIDDEN1, HIDDEN2, PATCH_LEN, POOLED_SIZE,
};
use crate::error::{Error, Result};
use crate::synthdata::{Image, CHANNELS};

pub const INPUT_SIZE: usize = 64;
const PIXELS: usize = INPUT_SIZE * INPUT_SIZE;

/// Stacks images into an `(n, 64, 64, 3)` batch.
pub fn images_to_batch<T: Real>(images: &[&Image]) -> Result<Array4<T>> {
    let mut batch = Array4::zeros((images.len(), INPUT_SIZE, INPUT_SIZE, CHANNELS));
    for (mut dst, img) in batch.outer_iter_mut().zip(images) {
        if img.height() != INPUT_SIZE || img.width() != INPUT_SIZE {
            return Err(Error::Shape(format!(
                "network input must be {INPUT_SIZE}x{INPUT_SIZE}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let dst = dst.as_slice_mut().expect("fresh array");
        for (d, &s) in dst.iter_mut().zip(img.as_slice()) {
            *d = T::of(f64::from(s));
        }
    }
    Ok(batch)
}

/// Activations kept by [`forward`] for [`backward`] and for representation
/// extraction. Convolution and pooling outputs are stored channel-major:
/// row `i` of `conv` holds image `i` as 10 planes of 64×64.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    n: usize,
    /// Zero-padded input planes, `n × 3 × 68 × 68`.
    padded: Vec<T>,
    conv: Array2<T>,
    pooled: Array2<T>,
    h1: Array2<T>,
    h2: Array2<T>,
    logits: Array2<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn logits(&self) -> ArrayView2<'_, T> {
        self.logits.view()
    }

    /// One row per image. conv1 and pooled rows are in channel, y, x order.
    pub fn activation(&self, layer: Layer) -> ArrayView2<'_, T> {
        match layer {
            Layer::Conv1 => self.conv.view(),
            Layer::AvgPool | Layer::Flatten => self.pooled.view(),
            Layer::Linear1 => self.h1.view(),
            Layer::Linear2 => self.h2.view(),
            Layer::Linear3 => self.logits.view(),
        }
    }
}

const PADDED: usize = INPUT_SIZE + 2 * CONV_PADDING;
const PADDED_PLANE: usize = PADDED * PADDED;
const LANES: usize = 16;

/// Splits HWC images into zero-padded channel planes.
fn pad_planes<T: Real>(batch: &ArrayView4<'_, T>) -> Vec<T> {
    let n = batch.dim().0;
    let mut out = vec![T::zero(); n * CHANNELS * PADDED_PLANE];
    for (img, pixels) in batch.outer_iter().enumerate() {
        for ((y, x, c), &v) in pixels.indexed_iter() {
            let plane = (img * CHANNELS + c) * PADDED_PLANE;
            out[plane + (y + CONV_PADDING) * PADDED + x + CONV_PADDING] = v;
        }
    }
    out
}

/// Weight row of kernel tap `(ky, kx)` on input channel `c`.
fn tap(ky: usize, kx: usize, c: usize) -> usize {
    (ky * CONV_KERNEL + kx) * CHANNELS + c
}

/// 5×5 same-size convolution followed by ReLU.
fn conv_forward<T: Real>(padded: &[T], n: usize, p: &ParamPair<T>) -> Array2<T> {
    let mut conv = Array2::zeros((n, CONV_CHANNELS * PIXELS));
    for (img, mut row) in conv.outer_iter_mut().enumerate() {
        let row = row.as_slice_mut().expect("row-major");
        let input = &padded[img * CHANNELS * PADDED_PLANE..(img + 1) * CHANNELS * PADDED_PLANE];
        for (o, plane) in row.chunks_exact_mut(PIXELS).enumerate() {
            plane.fill(p.bias[o]);
            for c in 0..CHANNELS {
                let src = &input[c * PADDED_PLANE..(c + 1) * PADDED_PLANE];
                for ky in 0..CONV_KERNEL {
                    for kx in 0..CONV_KERNEL {
                        let w = p.weight[[tap(ky, kx, c), o]];
                        for y in 0..INPUT_SIZE {
                            let s = (y + ky) * PADDED + kx;
                            let out = &mut plane[y * INPUT_SIZE..(y + 1) * INPUT_SIZE];
                            for (d, &v) in out.iter_mut().zip(&src[s..s + INPUT_SIZE]) {
                                *d += w * v;
                            }
                        }
                    }
                }
            }
            for v in plane.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
    }
    conv
}

/// Gradient of the conv1 parameters given dL/d(pre-activation output).
fn conv_backward<T: Real>(padded: &[T], dconv: &Array2<T>) -> ParamPair<T> {
    let mut grad = ParamPair::zeros(PATCH_LEN, CONV_CHANNELS);
    for (img, row) in dconv.outer_iter().enumerate() {
        let row = row.as_slice().expect("row-major");
        let input = &padded[img * CHANNELS * PADDED_PLANE..(img + 1) * CHANNELS * PADDED_PLANE];
        for (o, plane) in row.chunks_exact(PIXELS).enumerate() {
            grad.bias[o] += plane.iter().fold(T::zero(), |a, &v| a + v);
            for c in 0..CHANNELS {
                let src = &input[c * PADDED_PLANE..(c + 1) * PADDED_PLANE];
                for ky in 0..CONV_KERNEL {
                    for kx in 0..CONV_KERNEL {
                        // Independent lanes let the reduction vectorize.
                        let mut lanes = [T::zero(); LANES];
                        for y in 0..INPUT_SIZE {
                            let s = (y + ky) * PADDED + kx;
                            let g = &plane[y * INPUT_SIZE..(y + 1) * INPUT_SIZE];
                            for (gc, vc) in g.chunks_exact(LANES).zip(src[s..s + INPUT_SIZE].chunks_exact(LANES)) {
                                for j in 0..LANES {
                                    lanes[j] += gc[j] * vc[j];
                                }
                            }
                        }
                        grad.weight[[tap(ky, kx, c), o]] += lanes.iter().fold(T::zero(), |a, &v| a + v);
                    }
                }
            }
        }
    }
    grad
}

fn affine<T: Real>(input: &ArrayView2<'_, T>, p: &ParamPair<T>) -> Array2<T> {
    let mut out = input.dot(&p.weight);
    out += &p.bias;
    out
}

fn relu_inplace<T: Real>(a: &mut Array2<T>) {
    a.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
fn relu_backward<T: Real>(grad: &mut Array2<T>, activation: &Array2<T>) {
    Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

fn avg_pool<T: Real>(conv: &Array2<T>) -> Array2<T> {
    let mut pooled = Array2::zeros((conv.nrows(), FLAT_DIM));
    let quarter = T::of(0.25);
    for (src, mut dst) in conv.outer_iter().zip(pooled.outer_iter_mut()) {
        let src = src.as_slice().expect("row-major");
        let dst = dst.as_slice_mut().expect("row-major");
        for (o, out) in dst.chunks_exact_mut(POOLED_SIZE * POOLED_SIZE).enumerate() {
            let plane = &src[o * PIXELS..(o + 1) * PIXELS];
            for py in 0..POOLED_SIZE {
                let top = &plane[2 * py * INPUT_SIZE..];
                let bottom = &plane[(2 * py + 1) * INPUT_SIZE..];
                for px in 0..POOLED_SIZE {
                    out[py * POOLED_SIZE + px] = (top[2 * px] + top[2 * px + 1] + bottom[2 * px] + bottom[2 * px + 1]) * quarter;
                }
            }
        }
    }
    pooled
}

fn avg_unpool<T: Real>(dpooled: &Array2<T>) -> Array2<T> {
    let mut dconv = Array2::zeros((dpooled.nrows(), CONV_CHANNELS * PIXELS));
    let quarter = T::of(0.25);
    for (src, mut dst) in dpooled.outer_iter().zip(dconv.outer_iter_mut()) {
        let dst = dst.as_slice_mut().expect("row-major");
        for (i, v) in dst.iter_mut().enumerate() {
            let (o, rest) = (i / PIXELS, i % PIXELS);
            let (y, x) = (rest / INPUT_SIZE, rest % INPUT_SIZE);
            *v = src[o * POOLED_SIZE * POOLED_SIZE + (y / 2) * POOLED_SIZE + x / 2] * quarter;
        }
    }
    dconv
}

/// Runs the network on an `(n, 64, 64, 3)` batch.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    batch: ArrayView4<'_, T>,
) -> Result<(Array2<T>, ForwardCache<T>)> {
    let (n, h, w, c) = batch.dim();
    if (h, w, c) != (INPUT_SIZE, INPUT_SIZE, CHANNELS) {
        return Err(Error::Shape(format!(
            "expected batch (n, {INPUT_SIZE}, {INPUT_SIZE}, {CHANNELS}), got ({n}, {h}, {w}, {c})"
        )));
    }
    let padded = pad_planes(&batch);
    let conv = conv_forward(&padded, n, params.layer(Layer::Conv1));
    let pooled = avg_pool(&conv);
    let mut h1 = affine(&pooled.view(), params.layer(Layer::Linear1));
    relu_inplace(&mut h1);
    let mut h2 = affine(&h1.view(), params.layer(Layer::Linear2));
    relu_inplace(&mut h2);
    let logits = affine(&h2.view(), params.layer(Layer::Linear3));
    let cache = ForwardCache {
        n,
        padded,
        conv,
        pooled,
        h1,
        h2,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

fn dense_grad<T: Real>(input: &Array2<T>, grad_out: &Array2<T>) -> ParamPair<T> {
    ParamPair {
        weight: input.t().dot(grad_out),
        bias: grad_out.sum_axis(Axis(0)),
    }
}

/// Backpropagates upstream gradients through the cached forward pass.
///
/// `grad_logits` is dL/dlogits and `grad_repr` is dL/d(linear2 output after
/// ReLU); either may be absent. Entries are produced for every non-frozen
/// layer, and nothing below the lowest trainable layer is computed.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: Option<&Array2<T>>,
    grad_repr: Option<&Array2<T>>,
) -> Result<Gradients<T>> {
    let n = cache.n;
    let nc = params.num_classes();
    if let Some(g) = grad_logits {
        if g.dim() != (n, nc) {
            return Err(Error::Shape(format!(
                "logit gradient {:?}, expected ({n}, {nc})",
                g.dim()
            )));
        }
    }
    if let Some(g) = grad_repr {
        if g.dim() != (n, HIDDEN2) {
            return Err(Error::Shape(format!(
                "representation gradient {:?}, expected ({n}, {HIDDEN2})",
                g.dim()
            )));
        }
    }

    let trainable = |l: Layer| !params.is_frozen(l);
    let needs_below = |l: Layer| Layer::PARAMETRIC.iter().any(|&p| p < l && trainable(p));
    let mut grads = Gradients::default();

    if trainable(Layer::Linear3) {
        let entry = match grad_logits {
            Some(g) => dense_grad(&cache.h2, g),
            None => ParamPair::zeros(HIDDEN2, nc),
        };
        grads.entries.insert(Layer::Linear3, entry);
    }
    if !needs_below(Layer::Linear3) {
        return Ok(grads);
    }

    let mut dh2 = match grad_logits {
        Some(g) => g.dot(&params.layer(Layer::Linear3).weight.t()),
        None => Array2::zeros((n, HIDDEN2)),
    };
    if let Some(g) = grad_repr {
        dh2 += g;
    }
    relu_backward(&mut dh2, &cache.h2);
    if trainable(Layer::Linear2) {
        grads.entries.insert(Layer::Linear2, dense_grad(&cache.h1, &dh2));
    }
    if !needs_below(Layer::Linear2) {
        return Ok(grads);
    }

    let mut dh1 = dh2.dot(&params.layer(Layer::Linear2).weight.t());
    relu_backward(&mut dh1, &cache.h1);
    if trainable(Layer::Linear1) {
        grads
            .entries
            .insert(Layer::Linear1, dense_grad(&cache.pooled, &dh1));
    }
    if !needs_below(Layer::Linear1) {
        return Ok(grads);
    }

    let dpooled = dh1.dot(&params.layer(Layer::Linear1).weight.t());
    let mut dconv = avg_unpool(&dpooled);
    relu_backward(&mut dconv, &cache.conv);
    grads
        .entries
        .insert(Layer::Conv1, conv_backward(&cache.padded, &dconv));
    debug_assert_eq!(grads.entries[&Layer::Linear1].weight.dim(), (FLAT_DIM, HIDDEN1));
    Ok(grads)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &ArrayView2<'_, T>, labels: &[usize]) -> Result<(f64, Array2<T>)> {
    let (n, nc) = logits.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("cross-entropy of an empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= nc) {
        return Err(Error::InvalidArgument(format!("label {bad} with {nc} classes")));
    }
    let mut grad = Array2::zeros((n, nc));
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for ((row, mut g), &y) in logits.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += (z.ln() + max - row[y].as_f64()) * inv_n;
        for (k, (gk, e)) in g.iter_mut().zip(&exps).enumerate() {
            let target = if k == y { 1.0 } else { 0.0 };
            *gk = T::of((e / z - target) * inv_n);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkConfig;
    use crate::synthdata::{generate_protocol, Protocol};

    fn small_batch(n: usize) -> Array4<f64> {
        let ds = generate_protocol(Protocol::E2, 1);
        let imgs: Vec<&Image> = ds.samples.iter().step_by(37).take(n).map(|s| &s.image).collect();
        images_to_batch(&imgs).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let params = ModelParams::<f64>::zeros(NetworkConfig::new(3).unwrap());
        let batch = Array4::<f64>::zeros((2, 64, 64, 3));
        let (logits, _) = forward(&params, batch.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn activation_shapes() {
        let params = ModelParams::<f64>::init(NetworkConfig::new(3).unwrap(), 1);
        let batch = small_batch(3);
        let (logits, cache) = forward(&params, batch.view()).unwrap();
        assert_eq!(logits.dim(), (3, 3));
        assert_eq!(cache.activation(Layer::Conv1).dim(), (3, 64 * 64 * 10));
        assert_eq!(cache.activation(Layer::AvgPool).dim(), (3, 10240));
        assert_eq!(cache.activation(Layer::Linear1).dim(), (3, 1000));
        assert_eq!(cache.activation(Layer::Linear2).dim(), (3, 20));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let params = ModelParams::<f64>::zeros(NetworkConfig::new(2).unwrap());
        let batch = Array4::<f64>::zeros((1, 32, 32, 3));
        assert!(matches!(forward(&params, batch.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let params = ModelParams::<f64>::init(NetworkConfig::new(2).unwrap(), 4);
        let batch = small_batch(2);
        let (_, cache) = forward(&params, batch.view()).unwrap();
        let conv = cache.activation(Layer::Conv1);
        let p = params.layer(Layer::Conv1);
        for &(img, y, x, c) in &[(0, 0, 0, 0), (1, 31, 40, 3), (0, 63, 63, 9), (1, 2, 61, 5)] {
            let mut acc = p.bias[c];
            for ky in 0..5 {
                for kx in 0..5 {
                    let iy = y as isize + ky as isize - 2;
                    let ix = x as isize + kx as isize - 2;
                    if !(0..64).contains(&iy) || !(0..64).contains(&ix) {
                        continue;
                    }
                    for ch in 0..3 {
                        acc += batch[[img, iy as usize, ix as usize, ch]]
                            * p.weight[[(ky * 5 + kx) * 3 + ch, c]];
                    }
                }
            }
            let expected = acc.max(0.0);
            let got = conv[[img, c * 4096 + y * 64 + x]];
            assert!((expected - got).abs() < 1e-12, "{expected} vs {got}");
        }
    }

    #[test]
    fn forward_is_batch_order_equivariant() {
        let params = ModelParams::<f64>::init(NetworkConfig::new(3).unwrap(), 2);
        let batch = small_batch(4);
        let perm = [2usize, 0, 3, 1];
        let permuted = batch.select(Axis(0), &perm);
        let (a, _) = forward(&params, batch.view()).unwrap();
        let (b, _) = forward(&params, permuted.view()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(b.row(i), a.row(p));
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let logits = Array2::<f64>::zeros((2, 4));
        let (loss, grad) = cross_entropy(&logits.view(), &[1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[[0, 1]] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!(grad.sum_axis(Axis(1)).iter().all(|s| s.abs() < 1e-12));
        assert!(cross_entropy(&Array2::<f64>::zeros((0, 4)).view(), &[]).is_err());
        assert!(cross_entropy(&logits.view(), &[0, 4]).is_err());
    }

    #[test]
    fn frozen_conv1_has_no_gradient_entry() {
        let mut params = ModelParams::<f64>::init(NetworkConfig::new(3).unwrap(), 3);
        params.freeze_until(Layer::Conv1).unwrap();
        let batch = small_batch(2);
        let (logits, cache) = forward(&params, batch.view()).unwrap();
        let (_, g) = cross_entropy(&logits.view(), &[0, 1]).unwrap();
        let grads = backward(&params, &cache, Some(&g), None).unwrap();
        assert!(!grads.contains(Layer::Conv1));
        assert!(grads.contains(Layer::Linear1));
        assert!(grads.contains(Layer::Linear3));
    }

    #[test]
    fn duplicated_sample_contributes_identically() {
        let params = ModelParams::<f64>::init(NetworkConfig::new(3).unwrap(), 3);
        let one = small_batch(1);
        let two = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let run = |b: &Array4<f64>, labels: &[usize]| {
            let (logits, cache) = forward(&params, b.view()).unwrap();
            let (_, g) = cross_entropy(&logits.view(), labels).unwrap();
            backward(&params, &cache, Some(&g), None).unwrap()
        };
        let single = run(&one, &[2]);
        let double = run(&two, &[2, 2]);
        for layer in Layer::PARAMETRIC {
            let a = single.get(layer).unwrap();
            let b = double.get(layer).unwrap();
            let diff = (&a.weight - &b.weight).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(diff < 1e-12, "{layer}: {diff}");
        }
    }
}
