//! Deterministic synthetic test images: smooth gradients, soft-edged
//! shapes, oriented textures and a little blurred noise. Used for the desk
//! corpus so the whole pipeline runs without any external dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::ImagePlane;
use crate::scalar::Scalar;

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Render one synthetic image. The same seed always produces the same image.
pub fn synth_image<T: Scalar>(seed: u64, height: usize, width: usize) -> ImagePlane<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (h, w) = (height as f64, width as f64);
    let diag = (h * h + w * w).sqrt();

    // Smooth base gradient.
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let base = rng.gen_range(0.35..0.65);
    let slope = rng.gen_range(-0.25..0.25);

    // Soft-edged shapes: ellipses and rotated rectangles.
    struct Shape {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        rot: f64,
        delta: f64,
        rect: bool,
        edge: f64,
    }
    let n_shapes = rng.gen_range(4..8);
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            cx: rng.gen_range(0.1 * w..0.9 * w),
            cy: rng.gen_range(0.1 * h..0.9 * h),
            rx: rng.gen_range(0.08 * w..0.35 * w),
            ry: rng.gen_range(0.08 * h..0.35 * h),
            rot: rng.gen_range(0.0..std::f64::consts::PI),
            delta: rng.gen_range(0.18..0.45) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            rect: rng.gen_bool(0.4),
            edge: rng.gen_range(0.6..1.4),
        })
        .collect();

    // Oriented sinusoidal texture.
    let tex_amp = rng.gen_range(0.02..0.06);
    let tex_freq = rng.gen_range(0.25..0.9);
    let tex_theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (tct, tst) = (tex_theta.cos(), tex_theta.sin());
    let tex_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    // Blurred noise.
    let noise_amp = rng.gen_range(0.005..0.02);
    let mut noise = vec![0.0f64; height * width];
    for v in &mut noise {
        *v = rng.gen_range(-1.0..1.0);
    }
    // two passes of 3x3 box blur
    for _ in 0..2 {
        let src = noise.clone();
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                    for dx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                        acc += src[dy * width + dx];
                        cnt += 1.0;
                    }
                }
                noise[y * width + x] = acc / cnt;
            }
        }
    }

    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base + slope * ((xf * ct + yf * st) / diag * 2.0 - 0.5);
            for s in &shapes {
                let dx = xf - s.cx;
                let dy = yf - s.cy;
                let u = dx * s.rot.cos() + dy * s.rot.sin();
                let t = -dx * s.rot.sin() + dy * s.rot.cos();
                // signed "outside-ness" in pixels, roughly
                let d = if s.rect {
                    (u.abs() - s.rx).max(t.abs() - s.ry)
                } else {
                    ((u / s.rx).powi(2) + (t / s.ry).powi(2)).sqrt() * s.rx.min(s.ry)
                        - s.rx.min(s.ry)
                };
                v += s.delta * (1.0 - smoothstep(-s.edge, s.edge, d));
            }
            v += tex_amp * (tex_freq * (xf * tct + yf * tst) + tex_phase).sin();
            v += noise_amp * noise[y * width + x];
            data.push(T::from_f64(v.clamp(0.0, 1.0)));
        }
    }
    ImagePlane {
        height,
        width,
        data,
    }
}

/// The desk corpus: `count` training images of `size x size`, seeds offset
/// from `base_seed`.
pub fn synth_corpus<T: Scalar>(base_seed: u64, count: usize, size: usize) -> Vec<ImagePlane<T>> {
    (0..count)
        .map(|i| synth_image(base_seed + i as u64, size, size))
        .collect()
}
