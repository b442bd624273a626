//! Deterministic synthetic luma images standing in for a natural-image
//! corpus: smooth illumination, flat and shaded objects with hard and soft
//! edges, oriented stripe textures and sensor-like noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::Frame;

/// Renders image `index` of the corpus identified by `seed`.
pub fn synth_image(seed: u64, index: u64, width: usize, height: usize) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    let (wf, hf) = (width as f64, height as f64);
    let mut img = vec![0.0f64; width * height];

    // Illumination: a tilted plane plus two broad waves.
    let base = rng.random_range(70.0..170.0);
    let (gx, gy) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(10.0..30.0),
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / wf,
                rng.random_range(0.5..2.0) * std::f64::consts::TAU / hf,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / wf - 0.5, y as f64 / hf - 0.5);
            let mut val = base + gx * u + gy * v;
            for &(a, fx, fy, ph) in &waves {
                val += a * (fx * x as f64 + fy * y as f64 + ph).sin();
            }
            img[y * width + x] = val;
        }
    }

    // Objects: ellipses and rectangles, some with a linear shading.
    let objects = rng.random_range(4..9);
    for _ in 0..objects {
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range(0.0..hf);
        let rx = rng.random_range(0.05..0.35) * wf;
        let ry = rng.random_range(0.05..0.35) * hf;
        let level = rng.random_range(10.0..245.0);
        let shade = rng.random_range(-0.8..0.8);
        let soft = if rng.random_bool(0.5) { rng.random_range(1.0..4.0) } else { 0.3 };
        let ellipse = rng.random_bool(0.6);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                // signed distance-like measure, negative inside
                let d = if ellipse {
                    ((dx * dx + dy * dy).sqrt() - 1.0) * rx.min(ry)
                } else {
                    (dx.abs().max(dy.abs()) - 1.0) * rx.min(ry)
                };
                let alpha = 1.0 / (1.0 + (d / soft).exp());
                if alpha > 1e-4 {
                    let target = level + shade * (x as f64 - cx);
                    let p = &mut img[y * width + x];
                    *p = *p * (1.0 - alpha) + target * alpha;
                }
            }
        }
    }

    // Textured patches: oriented stripes under a Gaussian window.
    let patches = rng.random_range(1..4);
    for _ in 0..patches {
        let cx = rng.random_range(0.0..wf);
        let cy = rng.random_range(0.0..hf);
        let sigma = rng.random_range(0.08..0.25) * wf.min(hf);
        let amp = rng.random_range(12.0..45.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let period = rng.random_range(3.0..12.0);
        let (c, s) = (theta.cos(), theta.sin());
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                if g > 1e-3 {
                    img[y * width + x] += amp * g * ((dx * c + dy * s) * std::f64::consts::TAU / period).sin();
                }
            }
        }
    }

    let noise = Normal::new(0.0, rng.random_range(1.0..4.0)).expect("valid sigma");
    Frame::from_fn(width, height, |x, y| {
        (img[y * width + x] + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8
    })
}

/// `count` images of one size from the same corpus seed.
pub fn synth_corpus(seed: u64, count: usize, width: usize, height: usize) -> Vec<Frame> {
    (0..count as u64).map(|i| synth_image(seed, i, width, height)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synth_image(1, 0, 64, 48);
        assert_eq!(a, synth_image(1, 0, 64, 48));
        assert_ne!(a, synth_image(1, 1, 64, 48));
        assert_ne!(a, synth_image(2, 0, 64, 48));
        let mean = a.data().iter().map(|&v| v as f64).sum::<f64>() / a.data().len() as f64;
        let var = a.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / a.data().len() as f64;
        assert!(var > 50.0, "variance {var}");
    }
}
