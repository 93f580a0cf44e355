#![allow(dead_code)]

use ndarray::Array4;
use osrlab::nn::{images_to_batch, loss_and_gradients, Layer, LossKind, ModelParams, NetworkConfig};
use osrlab::synthdata::{generate_protocol, Image, Protocol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative errors are taken against at least this magnitude so that
/// coordinates with vanishing gradient compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

/// Four E2 images with two samples per label.
pub fn four_sample_batch() -> (Array4<f64>, Vec<usize>) {
    let ds = generate_protocol(Protocol::E2, 17);
    let pick: Vec<&Image> = [0usize, 1, 100, 101].iter().map(|&i| &ds.samples[i].image).collect();
    let labels = [0usize, 1, 100, 101].iter().map(|&i| ds.samples[i].label).collect();
    (images_to_batch(&pick).unwrap(), labels)
}

/// Compares backprop with central differences on `per_tensor` random
/// coordinates of every weight and bias tensor.
pub fn check_gradients(loss: LossKind, labels: &[usize], per_tensor: usize, seed: u64) -> GradCheck {
    let (batch, _) = four_sample_batch();
    let params = ModelParams::<f64>::init(NetworkConfig::new(3).unwrap(), seed);
    let (_, grads) = loss_and_gradients(&params, batch.view(), labels, loss).unwrap();
    let eval = |p: &ModelParams<f64>| loss_and_gradients(p, batch.view(), labels, loss).unwrap().0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck { max_rel_err: 0.0, checked: 0, worst: String::new() };
    for layer in Layer::PARAMETRIC {
        let analytic = grads.get(layer).unwrap();
        for bias in [false, true] {
            let len = if bias { analytic.bias.len() } else { analytic.weight.len() };
            for _ in 0..per_tensor {
                let k = rng.random_range(0..len);
                let a = if bias { analytic.bias[k] } else { analytic.weight.as_slice().unwrap()[k] };
                let mut p = params.clone();
                let shift = |p: &mut ModelParams<f64>, d: f64| {
                    let pair = p.layer_mut(layer);
                    if bias {
                        pair.bias[k] += d;
                    } else {
                        pair.weight.as_slice_mut().unwrap()[k] += d;
                    }
                };
                shift(&mut p, FD_STEP);
                let up = eval(&p);
                shift(&mut p, -2.0 * FD_STEP);
                let down = eval(&p);
                let n = (up - down) / (2.0 * FD_STEP);
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
                out.checked += 1;
                if rel > out.max_rel_err {
                    out.max_rel_err = rel;
                    out.worst = format!("{layer} {} #{k}: backprop {a:e}, numeric {n:e}", if bias { "bias" } else { "weight" });
                }
            }
        }
    }
    out
}
