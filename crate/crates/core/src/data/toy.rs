//! Tiny synthetic dataset for smoke tests and determinism checks: 6x6
//! images, two linearly separable classes, three domains that differ only
//! in a nuisance stripe. Holding one domain out still leaves two training
//! domains, so every algorithm (including the pair-based ones) can run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DomainData, MultiDomainDataset};

pub fn toy_dataset(seed: u64) -> MultiDomainDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_domain = 240usize;
    let mut domains = Vec::with_capacity(3);
    for (dom, name) in ["a", "b", "c"].iter().enumerate() {
        let mut pixels = vec![0u8; per_domain * 36];
        let mut labels = vec![0u8; per_domain];
        for i in 0..per_domain {
            let y = (i % 2) as u8;
            labels[i] = y;
            let img = &mut pixels[i * 36..(i + 1) * 36];
            for (p, v) in img.iter_mut().enumerate() {
                *v = (rng.random_range(0.0..0.08f64) * 255.0) as u8;
                let (row, col) = (p / 6, p % 6);
                // Class signal: bright half-band in rows 2-3.
                let class_cols = if y == 0 { 0..3 } else { 3..6 };
                if (2..4).contains(&row) && class_cols.contains(&col) {
                    *v = 230;
                }
                // Domain nuisance: one bright stripe per domain.
                let nuisance = match dom {
                    0 => row == 0,
                    1 => row == 5,
                    _ => col == 0,
                };
                if nuisance {
                    *v = 200;
                }
            }
        }
        domains.push(DomainData::from_bytes(*name, 1, 6, 6, pixels, labels).expect("sizes line up"));
    }
    MultiDomainDataset {
        name: "toy".into(),
        domains,
        num_classes: 2,
        input_shape: (1, 6, 6),
        n_steps: 500,
        checkpoint_freq: 100,
    }
}
