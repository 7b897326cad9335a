//! Inter-domain mixup: train on convex combinations of examples from random
//! domain pairs, with losses interpolated by the same coefficient.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, HParams};

use super::{mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

pub struct Mixup {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    alpha: f64,
    rng: ChaCha8Rng,
    step: u64,
}

impl Mixup {
    pub fn new(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        hparams: &HParams,
        seed: u64,
    ) -> Result<Self, AlgoError> {
        let (mut init_rng, train_rng) = seed_rngs(seed);
        let net = Net::from_hparams(input_shape, num_classes, hparams, &mut init_rng)?;
        let opt = AdamState::new(net.param_values().iter());
        let cfg = AdamConfig {
            lr: get_f64(hparams, "lr")?,
            weight_decay: get_f64(hparams, "weight_decay")?,
            ..AdamConfig::default()
        };
        Ok(Mixup { net, opt, cfg, alpha: get_f64(hparams, "mixup_alpha")?, rng: train_rng, step: 0 })
    }

    /// Cyclic pairing over a seeded shuffle: every domain appears once on the
    /// left, never paired with itself (for two or more domains).
    fn sample_pairs(&mut self, n: usize) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        (0..n).map(|i| (order[i], order[(i + 1) % n])).collect()
    }

    fn sample_lambdas(&mut self, n: usize) -> Result<Vec<f64>, AlgoError> {
        let beta = Beta::new(self.alpha, self.alpha)
            .map_err(|e| AlgoError::Contract(format!("invalid mixup alpha {}: {e}", self.alpha)))?;
        Ok((0..n).map(|_| beta.sample(&mut self.rng)).collect())
    }

    /// One step with explicit pairs and coefficients; the public `update`
    /// samples both. Exposed for targeted tests of the interpolation math.
    pub fn update_with_pairs(
        &mut self,
        minibatches: &[Minibatch],
        pairs: &[(usize, usize)],
        lambdas: &[f64],
    ) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "Mixup")?;
        if pairs.len() != lambdas.len() || pairs.is_empty() {
            return Err(AlgoError::Contract("pairs and lambdas must align and be nonempty".into()));
        }
        let mut tape = Tape::new();
        let ids = self.net.register(&mut tape, true);
        let mut pair_losses = Vec::with_capacity(pairs.len());
        for (&(i, j), &lam) in pairs.iter().zip(lambdas) {
            let (xi, xj) = (&minibatches[i].images, &minibatches[j].images);
            let mixed: Vec<f64> = xi
                .data()
                .iter()
                .zip(xj.data())
                .map(|(&a, &b)| lam * a + (1.0 - lam) * b)
                .collect();
            let x = tape.constant(Tensor::new(xi.shape().to_vec(), mixed)?);
            let feats = self.net.features(&mut tape, &ids, x)?;
            let z = self.net.logits(&mut tape, &ids, feats, true, Some(&mut self.rng))?;
            let ce_i = tape.cross_entropy(z, &minibatches[i].labels)?;
            let ce_j = tape.cross_entropy(z, &minibatches[j].labels)?;
            let left = tape.scale(ce_i, lam)?;
            let loss = if lam == 1.0 {
                // Endpoint: the second term is identically zero; dropping it
                // keeps the graph equal to plain cross-entropy on domain i.
                left
            } else {
                let right = tape.scale(ce_j, 1.0 - lam)?;
                tape.add(left, right)?
            };
            pair_losses.push(loss);
        }
        let objective = mean_chain(&mut tape, &pair_losses)?;
        let grads = tape.backward(objective)?;
        let grad_tensors: Vec<Tensor> = ids.all().iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("loss".into(), tape.value(objective).scalar_value()?);
        Ok(stats)
    }
}

impl Algorithm for Mixup {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "Mixup")?;
        let pairs = self.sample_pairs(minibatches.len());
        let lambdas = self.sample_lambdas(pairs.len())?;
        self.update_with_pairs(minibatches, &pairs, &lambdas)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError> {
        Ok(self.net.predict(inputs)?)
    }

    fn step(&self) -> u64 {
        self.step
    }
}
