//! Deterministic synthetic digit corpus.
//!
//! Renders ten seven-segment glyphs with per-example affine jitter, stroke
//! width and intensity variation. Stands in for raw MNIST files in
//! self-contained runs and tests: same 28x28 grayscale format, ten classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DigitCorpus;

// Segment endpoints on the 28x28 canvas, (x, y) with y growing downward.
const X_L: f64 = 9.0;
const X_R: f64 = 19.0;
const Y_T: f64 = 6.0;
const Y_M: f64 = 14.0;
const Y_B: f64 = 22.0;

const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((X_L, Y_T), (X_R, Y_T)), // A: top
    ((X_R, Y_T), (X_R, Y_M)), // B: upper right
    ((X_R, Y_M), (X_R, Y_B)), // C: lower right
    ((X_L, Y_B), (X_R, Y_B)), // D: bottom
    ((X_L, Y_M), (X_L, Y_B)), // E: lower left
    ((X_L, Y_T), (X_L, Y_M)), // F: upper left
    ((X_L, Y_M), (X_R, Y_M)), // G: middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 3, 2],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

fn point_segment_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Renders one jittered glyph into a 784-byte buffer.
fn render_digit(digit: usize, rng: &mut ChaCha8Rng, out: &mut [u8]) {
    let theta: f64 = rng.random_range(-0.15..0.15);
    let scale: f64 = rng.random_range(0.85..1.1);
    let dx: f64 = rng.random_range(-2.0..2.0);
    let dy: f64 = rng.random_range(-2.0..2.0);
    let thick: f64 = rng.random_range(1.2..1.8);
    let gain: f64 = rng.random_range(0.72..1.0);
    let (sin, cos) = theta.sin_cos();
    let segs = DIGIT_SEGMENTS[digit];
    for y in 0..28 {
        for x in 0..28 {
            // Inverse-map the pixel into glyph coordinates.
            let px = x as f64 - 13.5 - dx;
            let py = y as f64 - 13.5 - dy;
            let gx = (cos * px + sin * py) / scale + 13.5;
            let gy = (-sin * px + cos * py) / scale + 13.5;
            let mut dist = f64::INFINITY;
            for &s in segs {
                let (a, b) = SEGMENTS[s];
                dist = dist.min(point_segment_dist(gx, gy, a, b));
            }
            let v = (thick - dist).clamp(0.0, 1.0) * gain;
            out[y * 28 + x] = (v * 255.0).round() as u8;
        }
    }
}

/// `n` glyphs with exactly balanced classes (up to remainder), shuffled.
pub fn synthetic_digit_corpus(n: usize, seed: u64) -> DigitCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut digits: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    digits.shuffle(&mut rng);
    let mut images = vec![0u8; n * 784];
    for (i, &d) in digits.iter().enumerate() {
        render_digit(d as usize, &mut rng, &mut images[i * 784..(i + 1) * 784]);
    }
    DigitCorpus { images, labels: digits }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_balanced() {
        let a = synthetic_digit_corpus(100, 42);
        let b = synthetic_digit_corpus(100, 42);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        for d in 0..10u8 {
            assert_eq!(a.labels.iter().filter(|&&l| l == d).count(), 10);
        }
    }

    #[test]
    fn glyphs_have_ink_and_distinct_classes() {
        let c = synthetic_digit_corpus(200, 7);
        for i in 0..200 {
            let mass: u32 = c.image(i).iter().map(|&b| b as u32).sum();
            assert!(mass > 3000, "glyph {i} nearly blank: {mass}");
        }
        // Class prototypes should differ pairwise: compare mean images.
        let mut means = vec![[0f64; 784]; 10];
        let mut counts = [0usize; 10];
        for i in 0..200 {
            let l = c.labels[i] as usize;
            counts[l] += 1;
            for (m, &b) in means[l].iter_mut().zip(c.image(i)) {
                *m += b as f64;
            }
        }
        for (m, &cnt) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= cnt as f64;
            }
        }
        for a in 0..10 {
            for b in (a + 1)..10 {
                let d2: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(d2.sqrt() > 200.0, "classes {a} and {b} look alike: {}", d2.sqrt());
            }
        }
    }
}
