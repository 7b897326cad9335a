//! Group distributionally robust optimization: exponentiated-gradient
//! reweighting of per-domain losses toward the worst domain.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, HParams};

use super::{forward_domains, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

/// Nonnegative per-domain weights on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct DroWeights(Vec<f64>);

impl DroWeights {
    pub fn uniform(num_domains: usize) -> Self {
        DroWeights(vec![1.0 / num_domains as f64; num_domains])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The exponentiated-gradient recurrence: `q_m <- q_m * exp(eta * loss_m)`
    /// followed by renormalization. Rescaled by the max exponent for
    /// stability; the q values are identical up to rounding.
    pub fn update(&mut self, losses: &[f64], eta: f64) -> Result<(), AlgoError> {
        if losses.len() != self.0.len() {
            return Err(AlgoError::Contract(format!(
                "{} losses for {} domain weights",
                losses.len(),
                self.0.len()
            )));
        }
        if eta <= 0.0 || !eta.is_finite() {
            return Err(AlgoError::Contract(format!("dro eta must be positive, got {eta}")));
        }
        let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (q, &l) in self.0.iter_mut().zip(losses) {
            *q *= (eta * (l - max)).exp();
        }
        let total: f64 = self.0.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(AlgoError::Contract("dro weights degenerated".into()));
        }
        for q in &mut self.0 {
            *q /= total;
        }
        Ok(())
    }

    /// Weighted objective of the recurrence: `sum_m q_m loss_m / d`.
    pub fn objective(&self, losses: &[f64]) -> f64 {
        let dot: f64 = self.0.iter().zip(losses).map(|(q, l)| q * l).sum();
        dot / self.0.len() as f64
    }
}

pub struct Dro {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    eta: f64,
    q: DroWeights,
    rng: ChaCha8Rng,
    step: u64,
}

impl Dro {
    pub fn new(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        num_domains: usize,
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
        Ok(Dro {
            net,
            opt,
            cfg,
            eta: get_f64(hparams, "dro_eta")?,
            q: DroWeights::uniform(num_domains),
            rng: train_rng,
            step: 0,
        })
    }

    pub fn weights(&self) -> &DroWeights {
        &self.q
    }
}

impl Algorithm for Dro {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 1, "DRO")?;
        if minibatches.len() != self.q.as_slice().len() {
            return Err(AlgoError::Contract(format!(
                "DRO was built for {} domains, got {} minibatches",
                self.q.as_slice().len(),
                minibatches.len()
            )));
        }
        let mut tape = Tape::new();
        let ids = self.net.register(&mut tape, true);
        let fwd = forward_domains(&mut tape, &self.net, &ids, minibatches, true, &mut self.rng)?;
        let loss_values: Vec<f64> = fwd
            .ces
            .iter()
            .map(|&ce| tape.value(ce).scalar_value())
            .collect::<Result<_, _>>()?;
        self.q.update(&loss_values, self.eta)?;
        // Weighted objective with the updated q as constants.
        let d = minibatches.len() as f64;
        let mut objective = None;
        for (&ce, &qm) in fwd.ces.iter().zip(self.q.as_slice()) {
            let term = tape.scale(ce, qm)?;
            objective = Some(match objective {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let objective = tape.scale(objective.expect("at least one minibatch"), 1.0 / d)?;
        let grads = tape.backward(objective)?;
        let grad_tensors: Vec<Tensor> = ids.all().iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("loss".into(), tape.value(objective).scalar_value()?);
        Ok(stats)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError> {
        Ok(self.net.predict(inputs)?)
    }

    fn step(&self) -> u64 {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_losses_keep_q_uniform() {
        let mut q = DroWeights::uniform(3);
        q.update(&[0.7, 0.7, 0.7], 0.5).unwrap();
        for &v in q.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    /// Spec-level worked example: q = (1/2, 1/2), losses (ln 2, 0), eta = 1
    /// gives q' = (2/3, 1/3) and objective (2/3 ln 2) / 2.
    #[test]
    fn worked_two_domain_example() {
        let mut q = DroWeights::uniform(2);
        let losses = [2f64.ln(), 0.0];
        q.update(&losses, 1.0).unwrap();
        assert!((q.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        let obj = q.objective(&losses);
        assert!((obj - (2.0 / 3.0) * 2f64.ln() / 2.0).abs() < 1e-15);
        assert!((obj - 0.2310).abs() < 1e-4);
    }

    #[test]
    fn tiny_eta_approaches_uniform_weighting() {
        let mut q = DroWeights::uniform(2);
        q.update(&[1.0, 0.0], 1e-9).unwrap();
        let obj = q.objective(&[1.0, 0.0]);
        // Uniform weighting gives (0.5 * 1 + 0.5 * 0) / 2 = 0.25.
        assert!((obj - 0.25).abs() < 1e-9);
    }

    #[test]
    fn q_stays_on_the_simplex_under_arbitrary_losses() {
        let mut q = DroWeights::uniform(4);
        let seqs = [
            [5.0, 0.0, 0.1, 2.0],
            [0.0, 0.0, 0.0, 0.0],
            [100.0, 1.0, 3.0, 7.0],
            [0.3, 0.2, 0.9, 0.7],
        ];
        for losses in &seqs {
            q.update(losses, 2.0).unwrap();
            let total: f64 = q.as_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(q.as_slice().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn update_moves_weight_toward_the_lossier_domain() {
        use super::super::testutil::{mlp_hparams, tiny_minibatches};
        use crate::hparams::HpValue;
        let mut hp = mlp_hparams("DRO");
        hp.insert("dro_eta".into(), HpValue::Num(1.0));
        let mut alg = Dro::new((1, 4, 4), 2, 2, &hp, 9).unwrap();
        // Domain 1 gets labels uncorrelated with the images: its loss is
        // pinned near ln 2 while domain 0 is driven toward zero.
        let mut mbs = tiny_minibatches(6);
        mbs[1] = mbs[0].clone();
        mbs[1].domain_id = 1;
        for (i, y) in mbs[1].labels.iter_mut().enumerate() {
            *y = (i / 2) % 2;
        }
        for _ in 0..60 {
            alg.update(&mbs, None).unwrap();
        }
        let q = alg.weights().as_slice();
        assert!(q[1] > 0.6, "{q:?}");
    }
}
