//! Empirical risk minimization over all training domains.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, HParams};

use super::{forward_domains, mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

pub struct Erm {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    rng: ChaCha8Rng,
    step: u64,
}

impl Erm {
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
        Ok(Erm { net, opt, cfg, rng: train_rng, step: 0 })
    }
}

impl Algorithm for Erm {
    /// One Adam step on the mean cross-entropy over all examples. Minibatches
    /// are equal-sized, so the mean of per-domain means equals the pooled
    /// mean; the per-domain grouping keeps the reduction order shared with
    /// the regularized algorithms at weight zero.
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 1, "ERM")?;
        let mut tape = crate::autodiff::Tape::new();
        let ids = self.net.register(&mut tape, true);
        let fwd = forward_domains(&mut tape, &self.net, &ids, minibatches, true, &mut self.rng)?;
        let loss = mean_chain(&mut tape, &fwd.ces)?;
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = ids.all().iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("loss".into(), tape.value(loss).scalar_value()?);
        Ok(stats)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError> {
        Ok(self.net.predict(inputs)?)
    }

    fn step(&self) -> u64 {
        self.step
    }
}
