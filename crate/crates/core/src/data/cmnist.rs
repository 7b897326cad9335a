//! Two-channel colored digits with a label-correlated color bit.
//!
//! Construction per domain parameter `d`: the binary label starts as
//! [digit >= 5], flips with probability 0.25, and the color bit is the label
//! flipped with probability `d`. The grayscale digit lands in the channel
//! selected by the color bit; the other channel stays zero. Digits are
//! divided evenly and disjointly among domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shard_indices, DataError, DigitCorpus, DomainData, MultiDomainDataset};

pub const DEFAULT_DOMAIN_PARAMS: &[f64] = &[0.1, 0.2, 0.9];

/// Domain display names: signed percent agreement between color and label.
pub fn domain_names(params: &[f64]) -> Vec<String> {
    params
        .iter()
        .map(|&d| {
            let agree = 1.0 - d;
            if agree >= 0.5 {
                format!("+{:.0}%", agree * 100.0)
            } else {
                format!("-{:.0}%", (1.0 - agree) * 100.0)
            }
        })
        .collect()
}

pub fn generate_colored_mnist(
    corpus: &DigitCorpus,
    domain_params: &[f64],
    label_noise: f64,
    seed: u64,
) -> Result<MultiDomainDataset, DataError> {
    if domain_params.is_empty() || domain_params.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(DataError::Contract(format!("domain params {domain_params:?} must lie in [0, 1]")));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(DataError::Contract(format!("label noise {label_noise} outside [0, 1]")));
    }
    let names = domain_names(domain_params);
    let shards = shard_indices(corpus.len(), domain_params.len(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_10_12);
    let mut domains = Vec::with_capacity(domain_params.len());
    for ((&d, name), shard) in domain_params.iter().zip(names).zip(shards) {
        let n = shard.len();
        let mut pixels = vec![0u8; n * 2 * 784];
        let mut labels = vec![0u8; n];
        for (i, &src) in shard.iter().enumerate() {
            let digit = corpus.labels[src as usize] as usize;
            let mut y = u8::from(digit >= 5);
            if rng.random::<f64>() < label_noise {
                y ^= 1;
            }
            let mut color = y;
            if rng.random::<f64>() < d {
                color ^= 1;
            }
            let img = corpus.image(src as usize);
            let dst = &mut pixels[(i * 2 + color as usize) * 784..][..784];
            dst.copy_from_slice(img);
            labels[i] = y;
        }
        domains.push(DomainData::from_bytes(name, 2, 28, 28, pixels, labels)?);
    }
    Ok(MultiDomainDataset {
        name: "cmnist".into(),
        domains,
        num_classes: 2,
        input_shape: (2, 28, 28),
        n_steps: 5000,
        checkpoint_freq: 100,
    })
}

/// Reads the color bit back out of a generated example.
pub fn color_bit(domain: &DomainData, i: usize) -> u8 {
    let bytes = domain.image_bytes(i);
    let ch0: u32 = bytes[..784].iter().map(|&b| b as u32).sum();
    let ch1: u32 = bytes[784..].iter().map(|&b| b as u32).sum();
    u8::from(ch1 > ch0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::glyphs::synthetic_digit_corpus;

    #[test]
    fn names_follow_agreement_signs() {
        assert_eq!(domain_names(&[0.1, 0.2, 0.9]), vec!["+90%", "+80%", "-90%"]);
    }

    #[test]
    fn zero_flip_means_color_equals_label() {
        let corpus = synthetic_digit_corpus(600, 3);
        let ds = generate_colored_mnist(&corpus, &[0.0], 0.25, 9).unwrap();
        let d = &ds.domains[0];
        for i in 0..d.len() {
            assert_eq!(color_bit(d, i) as usize, d.label(i));
        }
    }

    #[test]
    fn shards_are_disjoint_and_exhaustive() {
        let corpus = synthetic_digit_corpus(700, 3);
        let ds = generate_colored_mnist(&corpus, DEFAULT_DOMAIN_PARAMS, 0.25, 1).unwrap();
        let total: usize = ds.domains.iter().map(|d| d.len()).sum();
        assert_eq!(total, 700);
        let sizes: Vec<usize> = ds.domains.iter().map(|d| d.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.input_shape, (2, 28, 28));
    }

    #[test]
    fn generation_is_pure_in_the_seed() {
        let corpus = synthetic_digit_corpus(300, 5);
        let a = generate_colored_mnist(&corpus, DEFAULT_DOMAIN_PARAMS, 0.25, 11).unwrap();
        let b = generate_colored_mnist(&corpus, DEFAULT_DOMAIN_PARAMS, 0.25, 11).unwrap();
        for (da, db) in a.domains.iter().zip(&b.domains) {
            assert_eq!(da.image_bytes(0), db.image_bytes(0));
            assert_eq!(da.label(0), db.label(0));
        }
    }

    #[test]
    fn flip_rates_match_parameters_roughly() {
        // Tight Monte Carlo bounds live in the acceptance suite; this is a
        // smoke check at small n.
        let corpus = synthetic_digit_corpus(6000, 17);
        let ds = generate_colored_mnist(&corpus, &[0.1, 0.9], 0.25, 23).unwrap();
        for (d, param) in ds.domains.iter().zip([0.1f64, 0.9]) {
            let agree = (0..d.len()).filter(|&i| color_bit(d, i) as usize == d.label(i)).count();
            let p = agree as f64 / d.len() as f64;
            assert!((p - (1.0 - param)).abs() < 0.03, "param {param}: {p}");
        }
    }
}
