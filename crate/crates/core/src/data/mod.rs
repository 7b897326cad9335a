//! Multi-domain dataset model: per-domain example stores, seeded 80/20
//! splits, minibatch sampling, and the dataset registry.
//!
//! Images are kept as 8-bit buffers (the same encoding the IDX cache uses)
//! and materialized into [0, 1] f64 tensors per batch.

pub mod cmnist;
pub mod glyphs;
pub mod idx;
pub mod rmnist;
pub mod toy;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Contract(String),
}

/// One labeled example materialized as an image tensor in [0, 1].
#[derive(Clone, Debug)]
pub struct Example {
    pub image: Tensor,
    pub label: usize,
}

/// Train/validation index split of one domain.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

/// All examples of one domain plus its split, stored as packed bytes.
#[derive(Clone, Debug)]
pub struct DomainData {
    name: String,
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    split: Option<Split>,
}

impl DomainData {
    pub fn from_bytes(
        name: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let stride = channels * height * width;
        if labels.len() * stride != pixels.len() {
            return Err(DataError::Contract(format!(
                "{} labels do not match {} pixel bytes at stride {stride}",
                labels.len(),
                pixels.len()
            )));
        }
        Ok(DomainData { name: name.into(), channels, height, width, pixels, labels, split: None })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let stride = self.channels * self.height * self.width;
        &self.pixels[i * stride..(i + 1) * stride]
    }

    pub fn example(&self, i: usize) -> Example {
        let data = self.image_bytes(i).iter().map(|&b| b as f64 / 255.0).collect();
        let image = Tensor::new(vec![self.channels, self.height, self.width], data)
            .expect("stride checked at construction");
        Example { image, label: self.label(i) }
    }

    /// (B, C, H, W) tensor for the given example indices.
    pub fn batch(&self, indices: &[u32]) -> Tensor {
        let stride = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend(self.image_bytes(i as usize).iter().map(|&b| b as f64 / 255.0));
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("stride checked at construction")
    }

    pub fn batch_labels(&self, indices: &[u32]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i as usize)).collect()
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }
}

/// Seeded 80/20 split: the first `floor(fraction * n)` entries of a seeded
/// permutation become the train split, the rest the validation split.
pub fn split_dataset(domain: &mut DomainData, fraction: f64, seed: u64) -> Result<(), DataError> {
    let n = domain.len();
    if n < 2 {
        return Err(DataError::Contract(format!("cannot split domain '{}' with {n} examples", domain.name)));
    }
    if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(DataError::Contract(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let cut = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let val = perm.split_off(cut);
    domain.split = Some(Split { train: perm, val });
    Ok(())
}

/// Ordered list of domains sharing one task.
#[derive(Clone, Debug)]
pub struct MultiDomainDataset {
    pub name: String,
    pub domains: Vec<DomainData>,
    pub num_classes: usize,
    pub input_shape: (usize, usize, usize),
    /// Default number of gradient updates for one run.
    pub n_steps: u64,
    /// Steps between full accuracy checkpoints.
    pub checkpoint_freq: u64,
}

impl MultiDomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    /// Applies per-domain 80/20 splits with seeds derived from `base_seed`.
    pub fn apply_splits(&mut self, fraction: f64, base_seed: u64) -> Result<(), DataError> {
        for (i, d) in self.domains.iter_mut().enumerate() {
            split_dataset(d, fraction, base_seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b97f4a7c15))?;
        }
        Ok(())
    }
}

/// One training minibatch from a single domain.
#[derive(Clone, Debug)]
pub struct Minibatch {
    pub domain_id: usize,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Draws one minibatch per training domain, uniformly with replacement from
/// each domain's train split.
pub fn sample_minibatches(
    dataset: &MultiDomainDataset,
    train_domain_ids: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Minibatch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Contract("batch_size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(train_domain_ids.len());
    for &id in train_domain_ids {
        let domain = dataset
            .domains
            .get(id)
            .ok_or_else(|| DataError::Contract(format!("domain index {id} out of range")))?;
        let split = domain
            .split()
            .ok_or_else(|| DataError::Contract(format!("domain '{}' has no split", domain.name())))?;
        let indices: Vec<u32> = (0..batch_size)
            .map(|_| split.train[rng.random_range(0..split.train.len())])
            .collect();
        out.push(Minibatch { domain_id: id, images: domain.batch(&indices), labels: domain.batch_labels(&indices) });
    }
    Ok(out)
}

/// Shuffles `0..n` with the given seed and cuts it into `parts` disjoint,
/// exhaustive shards whose sizes differ by at most one.
pub fn shard_indices(n: usize, parts: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let base = n / parts;
    let extra = n % parts;
    let mut shards = Vec::with_capacity(parts);
    let mut at = 0;
    for p in 0..parts {
        let size = base + usize::from(p < extra);
        shards.push(perm[at..at + size].to_vec());
        at += size;
    }
    shards
}

/// Raw grayscale digit source shared by the generators.
#[derive(Clone, Debug)]
pub struct DigitCorpus {
    pub images: Vec<u8>, // n * 28 * 28
    pub labels: Vec<u8>, // 0..=9
}

impl DigitCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * 784..(i + 1) * 784]
    }

    /// Keeps the first `m` digits of a seeded permutation.
    pub fn subsample(&self, m: usize, seed: u64) -> DigitCorpus {
        let m = m.min(self.len());
        let mut perm: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        perm.truncate(m);
        let mut images = Vec::with_capacity(m * 784);
        let mut labels = Vec::with_capacity(m);
        for &i in &perm {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        DigitCorpus { images, labels }
    }
}

pub const DATASET_NAMES: &[&str] = &["cmnist", "rmnist", "cmnist-synth", "rmnist-synth", "toy"];

/// Domain display order per dataset, available without building the data.
pub fn dataset_domain_names(dataset: &str) -> Option<Vec<String>> {
    match dataset {
        "cmnist" | "cmnist-synth" => Some(cmnist::domain_names(cmnist::DEFAULT_DOMAIN_PARAMS)),
        "rmnist" | "rmnist-synth" => Some(rmnist::DEFAULT_ANGLES.iter().map(|a| format!("{a}")).collect()),
        "toy" => Some(vec!["a".into(), "b".into(), "c".into()]),
        _ => None,
    }
}

/// Builds a registered dataset. `data_dir` must point at raw MNIST IDX files
/// for "cmnist"/"rmnist"; the "-synth" variants and "toy" are self-contained.
pub fn build_dataset(
    name: &str,
    data_dir: Option<&Path>,
    max_examples: Option<usize>,
    seed: u64,
) -> Result<MultiDomainDataset, DataError> {
    let corpus = |seed: u64| -> Result<DigitCorpus, DataError> {
        match name {
            "cmnist" | "rmnist" => {
                let dir = data_dir.ok_or_else(|| {
                    DataError::Contract(format!("dataset '{name}' needs --data-dir with MNIST IDX files"))
                })?;
                let full = idx::load_mnist_dir(dir)?;
                Ok(match max_examples {
                    Some(m) => full.subsample(m, seed ^ 0x5b_5b_5b),
                    None => full,
                })
            }
            // The synthetic corpus is rendered at the requested size directly.
            _ => Ok(glyphs::synthetic_digit_corpus(max_examples.unwrap_or(70_000), seed ^ 0x67_1f_9a_11)),
        }
    };
    match name {
        "cmnist" | "cmnist-synth" => {
            cmnist::generate_colored_mnist(&corpus(seed)?, cmnist::DEFAULT_DOMAIN_PARAMS, 0.25, seed)
        }
        "rmnist" | "rmnist-synth" => rmnist::generate_rotated_mnist(&corpus(seed)?, rmnist::DEFAULT_ANGLES, seed),
        "toy" => Ok(toy::toy_dataset(seed)),
        other => Err(DataError::Contract(format!(
            "unknown dataset '{other}'; registered datasets: {}",
            DATASET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_domain(n: usize) -> DomainData {
        let pixels = vec![128u8; n * 4];
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        DomainData::from_bytes("t", 1, 2, 2, pixels, labels).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let mut d = tiny_domain(10);
        split_dataset(&mut d, 0.8, 3).unwrap();
        let s = d.split().unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 2);
    }

    #[test]
    fn split_is_a_disjoint_cover_and_seed_deterministic() {
        let mut a = tiny_domain(23);
        let mut b = tiny_domain(23);
        split_dataset(&mut a, 0.8, 77).unwrap();
        split_dataset(&mut b, 0.8, 77).unwrap();
        let (sa, sb) = (a.split().unwrap(), b.split().unwrap());
        assert_eq!(sa.train, sb.train);
        assert_eq!(sa.val, sb.val);
        let mut all: Vec<u32> = sa.train.iter().chain(&sa.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn splitting_one_example_fails() {
        let mut d = tiny_domain(1);
        assert!(split_dataset(&mut d, 0.8, 0).is_err());
    }

    #[test]
    fn shards_partition_the_input() {
        let shards = shard_indices(70, 3, 5);
        assert_eq!(shards.iter().map(Vec::len).collect::<Vec<_>>(), vec![24, 23, 23]);
        let mut all: Vec<u32> = shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn pixel_255_scales_to_one() {
        let d = DomainData::from_bytes("t", 1, 1, 1, vec![255, 0], vec![0, 1]).unwrap();
        assert_eq!(d.example(0).image.data(), &[1.0]);
        assert_eq!(d.example(1).image.data(), &[0.0]);
    }

    #[test]
    fn sampled_label_histogram_matches_the_split_marginal() {
        use rand::SeedableRng;
        // Colored-digit domain with an asymmetric label marginal on its
        // train split; batch sampling must reproduce it.
        let corpus = super::glyphs::synthetic_digit_corpus(3000, 8);
        let mut ds = super::cmnist::generate_colored_mnist(&corpus, &[0.1], 0.25, 5).unwrap();
        ds.apply_splits(0.8, 6).unwrap();
        let split = ds.domains[0].split().unwrap().clone();
        let marginal = split.train.iter().filter(|&&i| ds.domains[0].label(i as usize) == 1).count() as f64
            / split.train.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ones = 0usize;
        let mut total = 0usize;
        for _ in 0..2500 {
            let mb = sample_minibatches(&ds, &[0], 4, &mut rng).unwrap();
            ones += mb[0].labels.iter().filter(|&&y| y == 1).count();
            total += 4;
        }
        let got = ones as f64 / total as f64;
        assert!((got - marginal).abs() < 0.02, "histogram {got} vs marginal {marginal}");
    }

    #[test]
    fn minibatches_cover_training_domains_only() {
        use rand::SeedableRng;
        let mut d0 = tiny_domain(12);
        let mut d1 = tiny_domain(12);
        split_dataset(&mut d0, 0.8, 1).unwrap();
        split_dataset(&mut d1, 0.8, 2).unwrap();
        let ds = MultiDomainDataset {
            name: "t".into(),
            domains: vec![d0, d1],
            num_classes: 2,
            input_shape: (1, 2, 2),
            n_steps: 10,
            checkpoint_freq: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mb = sample_minibatches(&ds, &[1], 4, &mut rng).unwrap();
        assert_eq!(mb.len(), 1);
        assert_eq!(mb[0].domain_id, 1);
        assert_eq!(mb[0].images.shape(), &[4, 1, 2, 2]);
        assert_eq!(mb[0].labels.len(), 4);
    }
}
