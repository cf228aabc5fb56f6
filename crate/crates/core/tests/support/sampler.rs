//! Brute-force bilinear reference: a sum of tent weights over every pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viact_core::geometry::bilinear_sample;
use viact_core::{Scalar, Tape, Tensor};

pub fn tent_sample(frame: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let mut acc = 0.0;
    for r in 0..h {
        for c in 0..w {
            let wx = (1.0 - (x - c as f64).abs()).max(0.0);
            let wy = (1.0 - (y - r as f64).abs()).max(0.0);
            acc += frame[r * w + c] * wx * wy;
        }
    }
    acc
}

/// Max |library − reference| over `pairs` random (frame, point) pairs,
/// points drawn slightly past the border to exercise clamping.
pub fn sampler_max_diff<T: Scalar>(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let per_frame = 50;
    for _ in 0..pairs.div_ceil(per_frame) {
        let h = rng.random_range(2..20);
        let w = rng.random_range(2..20);
        let frame: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let pts: Vec<f64> = (0..per_frame)
            .flat_map(|_| {
                [
                    rng.random_range(-1.0..w as f64),
                    rng.random_range(-1.0..h as f64),
                ]
            })
            .collect();
        let tape = Tape::<T>::inference();
        let f = tape.constant(
            Tensor::new(&[1, h, w], frame.iter().map(|&v| T::from_f64(v)).collect()).unwrap(),
        );
        let p = tape.constant(
            Tensor::new(
                &[1, per_frame, 2],
                pts.iter().map(|&v| T::from_f64(v)).collect(),
            )
            .unwrap(),
        );
        let got = bilinear_sample(f, p).unwrap().value().to_f64_vec();
        // reference reads the same (possibly rounded) inputs
        let frame_t: Vec<f64> = frame.iter().map(|&v| T::from_f64(v).as_f64()).collect();
        for (i, g) in got.iter().enumerate() {
            let (x, y) = (
                T::from_f64(pts[2 * i]).as_f64(),
                T::from_f64(pts[2 * i + 1]).as_f64(),
            );
            worst = worst.max((g - tent_sample(&frame_t, h, w, x, y)).abs());
        }
    }
    worst
}

/// Whether sampling at every integer pixel reproduces the frame bit for bit.
pub fn integer_grid_exact(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10).all(|_| {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let frame: Vec<f32> = (0..h * w).map(|_| rng.random()).collect();
        let pts: Vec<f32> = (0..h)
            .flat_map(|r| (0..w).flat_map(move |c| [c as f32, r as f32]))
            .collect();
        let tape = Tape::<f32>::inference();
        let f = tape.constant(Tensor::new(&[1, h, w], frame.clone()).unwrap());
        let p = tape.constant(Tensor::new(&[1, h * w, 2], pts).unwrap());
        bilinear_sample(f, p).unwrap().value().data() == &frame[..]
    })
}
