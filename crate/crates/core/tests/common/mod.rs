//! Synthetic scenes shared by the integration tests.
#![allow(dead_code)]

use lapmap::imageio::{CvdKind, CvdTransform, Image, LUMA_WEIGHTS};
use lapmap::optimize::SolveTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 32;

/// A large island on the left, about 40% of the frame, with a wavy edge
/// and a bump.
pub fn island_mask(w: usize, h: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let yf = y as f64 * 32.0 / h as f64;
            let mut edge = 12.5 + 2.0 * (yf / 3.0).sin();
            if (19.0..26.0).contains(&yf) {
                edge += 3.0;
            }
            m.push((x as f64 * 32.0 / w as f64) < edge);
        }
    }
    m
}

fn luma(c: [f64; 3]) -> f64 {
    LUMA_WEIGHTS.iter().zip(c).map(|(w, v)| w * v).sum()
}

/// Paints `inside`/`outside` over `mask` and adds gray noise of amplitude
/// `noise`.
pub fn paint(w: usize, h: usize, mask: &[bool], inside: [f64; 3], outside: [f64; 3], noise: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |x, y| {
        let c = if mask[y * w + x] { inside } else { outside };
        let n = noise * (2.0 * rng.random::<f64>() - 1.0);
        c.iter().map(|v| (v + n).clamp(0.0, 1.0)).collect()
    })
    .unwrap()
}

/// Red background and a green-cyan island of the same luminance.
pub fn metamer_colors() -> ([f64; 3], [f64; 3]) {
    let outside = [1.0, 0.25, 0.2];
    let y = luma(outside);
    let g = (y - LUMA_WEIGHTS[2] * 0.6) / LUMA_WEIGHTS[1];
    ([0.0, g, 0.6], outside)
}

pub fn metamer_image(w: usize, h: usize, seed: u64) -> (Image, Vec<bool>) {
    let mask = island_mask(w, h);
    let (inside, outside) = metamer_colors();
    (paint(w, h, &mask, inside, outside, 0.004, seed), mask)
}

/// Null vector of a rank-2 3x3 matrix, unit length.
pub fn null_vector(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let mut best = [0.0; 3];
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = cross(m[i], m[j]);
        if c.iter().map(|v| v * v).sum::<f64>() > best.iter().map(|v| v * v).sum::<f64>() {
            best = c;
        }
    }
    let n = best.iter().map(|v| v * v).sum::<f64>().sqrt();
    best.map(|v| v / n)
}

/// Two colors the `kind` observer cannot tell apart, as far apart in RGB
/// as fits inside [0.05, 0.95].
pub fn confusable_colors(kind: CvdKind) -> ([f64; 3], [f64; 3]) {
    let v = null_vector(&CvdTransform::new(kind).matrix);
    let mid = [0.5, 0.5, 0.5];
    let t = 0.45 / v.iter().map(|c| c.abs()).fold(0.0, f64::max);
    let a = [0, 1, 2].map(|i| mid[i] + t * v[i]);
    let b = [0, 1, 2].map(|i| mid[i] - t * v[i]);
    (a, b)
}

/// Consecutive iterations within one penalty round whose cost went up.
pub fn descent_violations(trace: &SolveTrace) -> usize {
    trace
        .iterations
        .windows(2)
        .filter(|p| p[0].round == p[1].round && p[1].cost > p[0].cost)
        .count()
}
