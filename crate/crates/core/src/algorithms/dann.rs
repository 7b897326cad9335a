//! Domain-adversarial training via alternating optimization: a discriminator
//! learns to classify the source domain of each feature vector, and the
//! featurizer is pushed to defeat it. The class-conditional variant
//! reweights the discriminator loss so every class contributes equally.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, get_usize, HParams};
use crate::models::{register_params, Discriminator};

use super::{mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

const DISC_HIDDEN_WIDTH: usize = 256;
const DISC_HIDDEN_DEPTH: usize = 2;

pub struct Dann {
    pub(crate) net: Net,
    disc: Discriminator,
    conditional: bool,
    gen_opt: AdamState,
    disc_opt: AdamState,
    gen_cfg: AdamConfig,
    disc_cfg: AdamConfig,
    lambda: f64,
    d_steps: usize,
    grad_penalty: f64,
    num_classes: usize,
    rng: ChaCha8Rng,
    step: u64,
}

impl Dann {
    pub fn new(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        num_domains: usize,
        conditional: bool,
        hparams: &HParams,
        seed: u64,
    ) -> Result<Self, AlgoError> {
        if num_domains < 2 {
            return Err(AlgoError::Contract(format!(
                "adversarial training needs at least 2 training domains, got {num_domains}"
            )));
        }
        let (mut init_rng, train_rng) = seed_rngs(seed);
        let net = Net::from_hparams(input_shape, num_classes, hparams, &mut init_rng)?;
        let disc = Discriminator::new(
            net.featurizer.feature_dim(),
            num_domains,
            DISC_HIDDEN_WIDTH,
            DISC_HIDDEN_DEPTH,
            &mut init_rng,
        );
        let beta1 = get_f64(hparams, "adam_beta1")?;
        let gen_cfg = AdamConfig {
            lr: get_f64(hparams, "lr_g")?,
            weight_decay: get_f64(hparams, "wd_g")?,
            beta1,
            ..AdamConfig::default()
        };
        let disc_cfg = AdamConfig {
            lr: get_f64(hparams, "lr_d")?,
            weight_decay: get_f64(hparams, "wd_d")?,
            beta1,
            ..AdamConfig::default()
        };
        let gen_opt = AdamState::new(net.param_values().iter());
        let disc_params: Vec<Tensor> = disc.params().iter().map(|p| p.value.clone()).collect();
        let disc_opt = AdamState::new(disc_params.iter());
        Ok(Dann {
            net,
            disc,
            conditional,
            gen_opt,
            disc_opt,
            gen_cfg,
            disc_cfg,
            lambda: get_f64(hparams, "dann_lambda")?,
            d_steps: get_usize(hparams, "d_steps_per_g")?.max(1),
            grad_penalty: get_f64(hparams, "grad_penalty")?,
            num_classes,
            rng: train_rng,
            step: 0,
        })
    }

    /// Per-example weights `1 / (d_tr * p_hat(y))` with the class marginal
    /// estimated on the pooled batch.
    fn class_balance_weights(&self, labels: &[usize], num_domains: usize) -> Vec<f64> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in labels {
            counts[y] += 1;
        }
        let n = labels.len() as f64;
        labels
            .iter()
            .map(|&y| n / (num_domains as f64 * counts[y] as f64))
            .collect()
    }

    fn discriminator_step(
        &mut self,
        minibatches: &[Minibatch],
        domain_labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<f64, AlgoError> {
        let mut tape = Tape::new();
        let net_ids = self.net.register(&mut tape, false);
        let disc_ids = register_params(&mut tape, self.disc.params(), true);
        let mut feats = Vec::with_capacity(minibatches.len());
        for mb in minibatches {
            let x = tape.constant(mb.images.clone());
            feats.push(self.net.features(&mut tape, &net_ids, x)?);
        }
        let pooled = tape.concat(&feats)?;
        let fwd = self.disc.forward(&mut tape, &disc_ids, pooled)?;
        let disc_ce = match weights {
            Some(w) => tape.cross_entropy_weighted(fwd.logits, domain_labels, w)?,
            None => tape.cross_entropy(fwd.logits, domain_labels)?,
        };
        let loss = if self.grad_penalty == 0.0 {
            disc_ce
        } else {
            let pen = self.disc.input_gradient_penalty(&mut tape, &disc_ids, &fwd, domain_labels, weights)?;
            let weighted = tape.scale(pen, self.grad_penalty)?;
            tape.add(disc_ce, weighted)?
        };
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = disc_ids.iter().map(|&id| grads.get(id)).collect();
        let refs = self.disc.params_mut().iter_mut().map(|p| &mut p.value);
        adam_step(refs, &grad_tensors, &mut self.disc_opt, &self.disc_cfg)?;
        Ok(tape.value(disc_ce).scalar_value()?)
    }

    fn generator_step(
        &mut self,
        minibatches: &[Minibatch],
        domain_labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<f64, AlgoError> {
        let mut tape = Tape::new();
        let net_ids = self.net.register(&mut tape, true);
        let mut feats = Vec::with_capacity(minibatches.len());
        let mut ces = Vec::with_capacity(minibatches.len());
        for mb in minibatches {
            let x = tape.constant(mb.images.clone());
            let f = self.net.features(&mut tape, &net_ids, x)?;
            let z = self.net.logits(&mut tape, &net_ids, f, true, Some(&mut self.rng))?;
            ces.push(tape.cross_entropy(z, &mb.labels)?);
            feats.push(f);
        }
        let risk = mean_chain(&mut tape, &ces)?;
        // Zero lambda drops the adversarial term so the step is exactly ERM.
        let gen_loss = if self.lambda == 0.0 {
            risk
        } else {
            let disc_ids = register_params(&mut tape, self.disc.params(), false);
            let pooled = tape.concat(&feats)?;
            let fwd = self.disc.forward(&mut tape, &disc_ids, pooled)?;
            let disc_ce = match weights {
                Some(w) => tape.cross_entropy_weighted(fwd.logits, domain_labels, w)?,
                None => tape.cross_entropy(fwd.logits, domain_labels)?,
            };
            let adversarial = tape.scale(disc_ce, -self.lambda)?;
            tape.add(risk, adversarial)?
        };
        let grads = tape.backward(gen_loss)?;
        let ids = net_ids.all();
        let grad_tensors: Vec<Tensor> = ids.iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.gen_opt, &self.gen_cfg)?;
        Ok(tape.value(gen_loss).scalar_value()?)
    }
}

impl Algorithm for Dann {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "adversarial training")?;
        if minibatches.len() != self.disc.num_domains() {
            return Err(AlgoError::Contract(format!(
                "discriminator was built for {} domains, got {} minibatches",
                self.disc.num_domains(),
                minibatches.len()
            )));
        }
        let domain_labels: Vec<usize> = minibatches
            .iter()
            .enumerate()
            .flat_map(|(m, mb)| std::iter::repeat_n(m, mb.labels.len()))
            .collect();
        let weights = if self.conditional {
            let pooled: Vec<usize> = minibatches.iter().flat_map(|mb| mb.labels.iter().copied()).collect();
            Some(self.class_balance_weights(&pooled, minibatches.len()))
        } else {
            None
        };
        let mut disc_loss = 0.0;
        for _ in 0..self.d_steps {
            disc_loss = self.discriminator_step(minibatches, &domain_labels, weights.as_deref())?;
        }
        let gen_loss = self.generator_step(minibatches, &domain_labels, weights.as_deref())?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("gen_loss".into(), gen_loss);
        stats.insert("disc_loss".into(), disc_loss);
        Ok(stats)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError> {
        Ok(self.net.predict(inputs)?)
    }

    fn step(&self) -> u64 {
        self.step
    }
}
