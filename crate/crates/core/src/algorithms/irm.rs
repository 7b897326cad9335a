//! Invariant risk minimization: mean risk plus the squared risk gradient in
//! a dummy classifier scale, with penalty-weight annealing.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, get_usize, HParams};

use super::penalties::irm_penalty;
use super::{forward_domains, mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

pub struct Irm {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    lambda: f64,
    anneal_iters: u64,
    rng: ChaCha8Rng,
    step: u64,
}

impl Irm {
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
        Ok(Irm {
            net,
            opt,
            cfg,
            lambda: get_f64(hparams, "irm_lambda")?,
            anneal_iters: get_usize(hparams, "irm_anneal_iters")? as u64,
            rng: train_rng,
            step: 0,
        })
    }

    /// Penalty weight 1 until the annealing step count, then lambda.
    fn effective_lambda(&self) -> f64 {
        if self.step < self.anneal_iters {
            1.0
        } else {
            self.lambda
        }
    }
}

impl Algorithm for Irm {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "IRM")?;
        let lambda_eff = self.effective_lambda();
        let mut tape = Tape::new();
        let ids = self.net.register(&mut tape, true);
        let fwd = forward_domains(&mut tape, &self.net, &ids, minibatches, true, &mut self.rng)?;
        let risk = mean_chain(&mut tape, &fwd.ces)?;
        let mut penalties = Vec::with_capacity(minibatches.len());
        for (z, mb) in fwd.logits.iter().zip(minibatches) {
            penalties.push(irm_penalty(&mut tape, *z, &mb.labels)?);
        }
        let penalty = mean_chain(&mut tape, &penalties)?;
        // At weight zero the term is dropped so the graph reduces to the
        // plain risk, keeping the trajectory equal to ERM's.
        let mut objective = if lambda_eff == 0.0 {
            risk
        } else {
            let weighted = tape.scale(penalty, lambda_eff)?;
            tape.add(risk, weighted)?
        };
        if lambda_eff > 1.0 {
            // Keep the effective learning rate stable once the penalty
            // dominates the objective scale.
            objective = tape.scale(objective, 1.0 / lambda_eff)?;
        }
        let grads = tape.backward(objective)?;
        let grad_tensors: Vec<Tensor> = ids.all().iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("loss".into(), tape.value(risk).scalar_value()?);
        stats.insert("penalty".into(), tape.value(penalty).scalar_value()?);
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
    use super::super::testutil::{mlp_hparams, tiny_minibatches};
    use super::super::Erm;
    use super::*;
    use crate::hparams::HpValue;

    #[test]
    fn lambda_eff_is_one_before_annealing() {
        let mut hp = mlp_hparams("IRM");
        hp.insert("irm_lambda".into(), HpValue::Num(1e4));
        hp.insert("irm_anneal_iters".into(), HpValue::Int(500));
        let alg = Irm::new((1, 4, 4), 2, &hp, 0).unwrap();
        assert_eq!(alg.effective_lambda(), 1.0);
    }

    #[test]
    fn zero_lambda_after_anneal_matches_erm_bitwise() {
        let mut hp = mlp_hparams("IRM");
        hp.insert("irm_lambda".into(), HpValue::Num(0.0));
        hp.insert("irm_anneal_iters".into(), HpValue::Int(0));
        let mut irm = Irm::new((1, 4, 4), 2, &hp, 21).unwrap();
        let mut erm = Erm::new((1, 4, 4), 2, &mlp_hparams("ERM"), 21).unwrap();
        let mbs = tiny_minibatches(4);
        for _ in 0..4 {
            irm.update(&mbs, None).unwrap();
            erm.update(&mbs, None).unwrap();
        }
        assert_eq!(irm.net.param_values(), erm.net.param_values());
    }

    #[test]
    fn needs_two_domains() {
        let hp = mlp_hparams("IRM");
        let mut alg = Irm::new((1, 4, 4), 2, &hp, 0).unwrap();
        let one = vec![tiny_minibatches(4).remove(0)];
        assert!(alg.update(&one, None).is_err());
    }

    /// A two-domain linear toy: the invariant feature agrees with the label
    /// 75% of the time in both domains, while the spurious feature agrees
    /// 95% in domain a but only 35% in domain b (its sign flips). Pooled
    /// ERM exploits the spurious feature; IRM should suppress it.
    #[test]
    fn spurious_feature_shrinks_under_irm() {
        let build = |spurious_agree: f64, domain_id: usize| {
            let n = 80usize;
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let y = i % 2;
                let s = if y == 0 { -1.0 } else { 1.0 };
                // Exact agreement fractions via counted positions.
                let inv_agree = (i / 2) % 4 != 0; // 3/4 of examples
                let spur_agree = ((i / 2) as f64) < spurious_agree * (n as f64 / 2.0);
                let x0 = if inv_agree { s } else { -s };
                let x1 = if spur_agree { s } else { -s };
                data.extend_from_slice(&[x0, x1]);
                labels.push(y);
            }
            Minibatch { domain_id, images: Tensor::new(vec![n, 1, 1, 2], data).unwrap(), labels }
        };
        let mbs = vec![build(0.95, 0), build(0.35, 1)];

        let mut hp = mlp_hparams("IRM");
        hp.insert("irm_lambda".into(), HpValue::Num(1e4));
        hp.insert("irm_anneal_iters".into(), HpValue::Int(50));
        hp.insert("lr".into(), HpValue::Num(3e-3));

        // Reliance on the spurious feature: logit-margin swing when it flips.
        let probe = |alg: &dyn Algorithm| -> f64 {
            let x_pos = Tensor::new(vec![1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
            let x_neg = Tensor::new(vec![1, 1, 1, 2], vec![0.0, -1.0]).unwrap();
            let lp = alg.predict(&x_pos).unwrap();
            let ln = alg.predict(&x_neg).unwrap();
            let margin = |t: &Tensor| t.data()[1] - t.data()[0];
            (margin(&lp) - margin(&ln)).abs()
        };

        let mut irm = Irm::new((1, 1, 2), 2, &hp, 3).unwrap();
        let mut erm = Erm::new((1, 1, 2), 2, &mlp_hparams("ERM"), 3).unwrap();
        for _ in 0..800 {
            irm.update(&mbs, None).unwrap();
            erm.update(&mbs, None).unwrap();
        }
        let (ri, re) = (probe(&irm), probe(&erm));
        assert!(ri < 0.2 * re, "IRM reliance {ri} vs ERM reliance {re}");
    }
}
