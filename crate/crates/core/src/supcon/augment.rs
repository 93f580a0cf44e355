use rand::Rng;

use crate::seed;
use crate::synthdata::Image;

/// Random flip, color jitter and grayscale settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_prob: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_prob: 0.2,
        }
    }
}

impl AugmentPolicy {
    /// Leaves every image untouched.
    pub fn identity() -> Self {
        AugmentPolicy {
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            grayscale_prob: 0.0,
        }
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn clamp_px(p: &mut [f32; 3]) {
    for c in p {
        *c = c.clamp(0.0, 1.0);
    }
}

fn factor<R: Rng>(rng: &mut R, strength: f64) -> Option<f32> {
    (strength > 0.0).then(|| rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength) as f32)
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).min(5);
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Applies a random augmentation drawn from `policy`. Identical seeds give
/// identical outputs.
pub fn augment(image: &Image, policy: &AugmentPolicy, seed: u64) -> Image {
    let mut rng = seed::rng_for(seed, &[]);
    let flip = policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob.min(1.0));
    let brightness = factor(&mut rng, policy.brightness);
    let contrast = factor(&mut rng, policy.contrast);
    let saturation = factor(&mut rng, policy.saturation);
    let hue = (policy.hue > 0.0).then(|| rng.random_range(-policy.hue..=policy.hue) as f32);
    let gray = policy.grayscale_prob > 0.0 && rng.random_bool(policy.grayscale_prob.min(1.0));

    let (h, w) = (image.height(), image.width());
    let mut out = image.clone();
    if flip {
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(y, x, image.pixel(y, w - 1 - x));
            }
        }
    }

    if let Some(f) = brightness {
        for p in out.pixels_mut() {
            p.iter_mut().for_each(|c| *c *= f);
            clamp_px(p);
        }
    }
    if let Some(f) = contrast {
        let mean = out.pixels().map(luma).sum::<f32>() / (h * w) as f32;
        for p in out.pixels_mut() {
            p.iter_mut().for_each(|c| *c = mean + (*c - mean) * f);
            clamp_px(p);
        }
    }
    if let Some(f) = saturation {
        for p in out.pixels_mut() {
            let l = luma(*p);
            p.iter_mut().for_each(|c| *c = l + (*c - l) * f);
            clamp_px(p);
        }
    }
    if let Some(shift) = hue {
        for p in out.pixels_mut() {
            let mut hsv = rgb_to_hsv(*p);
            hsv[0] += shift;
            *p = hsv_to_rgb(hsv);
            clamp_px(p);
        }
    }
    if gray {
        for p in out.pixels_mut() {
            let l = luma(*p).clamp(0.0, 1.0);
            *p = [l; 3];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_protocol, Protocol};
    use proptest::prelude::*;

    fn sample_image() -> Image {
        generate_protocol(Protocol::E2, 4).samples[7].image.clone()
    }

    #[test]
    fn identity_policy_is_noop() {
        let img = sample_image();
        for s in 0..20 {
            assert_eq!(augment(&img, &AugmentPolicy::identity(), s), img);
        }
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let img = sample_image();
        let policy = AugmentPolicy { flip_prob: 1.0, ..AugmentPolicy::identity() };
        let once = augment(&img, &policy, 1);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &policy, 2), img);
    }

    #[test]
    fn forced_grayscale_has_equal_channels() {
        let img = sample_image();
        let policy = AugmentPolicy { grayscale_prob: 1.0, ..AugmentPolicy::default() };
        for s in 0..10 {
            assert!(augment(&img, &policy, s).pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let img = sample_image();
        let p = AugmentPolicy::default();
        assert_eq!(augment(&img, &p, 11), augment(&img, &p, 11));
        assert!((0..10).any(|s| augment(&img, &p, s) != augment(&img, &p, 11)));
    }

    #[test]
    fn hsv_round_trip() {
        for px in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.0, 1.0, 0.4], [0.7, 0.1, 0.6]] {
            let back = hsv_to_rgb(rgb_to_hsv(px));
            for c in 0..3 {
                assert!((back[c] - px[c]).abs() < 1e-6, "{px:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn hue_shift_keeps_red_reddish_for_small_shift() {
        let shifted = hsv_to_rgb({
            let mut h = rgb_to_hsv([1.0, 0.0, 0.0]);
            h[0] += 0.05;
            h
        });
        assert_eq!(shifted[0], 1.0);
        assert!((shifted[1] - 0.3).abs() < 1e-6);
        assert_eq!(shifted[2], 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn preserves_shape_and_range(seed in any::<u64>()) {
            thread_local!(static IMG: Image = sample_image());
            let out = IMG.with(|img| augment(img, &AugmentPolicy::default(), seed));
            prop_assert_eq!((out.height(), out.width()), (64, 64));
            prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
