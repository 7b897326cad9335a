//! Feature-distribution matching: classification risk plus a pairwise
//! penalty (covariance alignment or kernel MMD) between domain features.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, HParams};

use super::penalties::{coral_penalty, gaussian_mmd, median_heuristic_bandwidths};
use super::{forward_domains, mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    Coral,
    Mmd,
}

pub struct FeatDist {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    kind: PenaltyKind,
    gamma: f64,
    rng: ChaCha8Rng,
    step: u64,
}

impl FeatDist {
    pub fn new(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        kind: PenaltyKind,
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
        Ok(FeatDist { net, opt, cfg, kind, gamma: get_f64(hparams, "mmd_gamma")?, rng: train_rng, step: 0 })
    }
}

impl Algorithm for FeatDist {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "feature-distribution matching")?;
        let mut tape = Tape::new();
        let ids = self.net.register(&mut tape, true);
        let fwd = forward_domains(&mut tape, &self.net, &ids, minibatches, true, &mut self.rng)?;
        let risk = mean_chain(&mut tape, &fwd.ces)?;
        let mut penalty_value = 0.0;
        // Zero weight skips the penalty subgraph so the step is exactly ERM.
        let objective = if self.gamma == 0.0 {
            risk
        } else {
            let mut terms = Vec::new();
            for i in 0..fwd.features.len() {
                for j in (i + 1)..fwd.features.len() {
                    let term = match self.kind {
                        PenaltyKind::Coral => coral_penalty(&mut tape, fwd.features[i], fwd.features[j])?,
                        PenaltyKind::Mmd => {
                            let bw = median_heuristic_bandwidths(
                                tape.value(fwd.features[i]),
                                tape.value(fwd.features[j]),
                            );
                            gaussian_mmd(&mut tape, fwd.features[i], fwd.features[j], &bw)?
                        }
                    };
                    terms.push(term);
                }
            }
            let penalty = mean_chain(&mut tape, &terms)?;
            penalty_value = tape.value(penalty).scalar_value()?;
            let weighted = tape.scale(penalty, self.gamma)?;
            tape.add(risk, weighted)?
        };
        let grads = tape.backward(objective)?;
        let grad_tensors: Vec<Tensor> = ids.all().iter().map(|&id| grads.get(id)).collect();
        adam_step(self.net.param_refs_mut(), &grad_tensors, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("loss".into(), tape.value(risk).scalar_value()?);
        stats.insert("penalty".into(), penalty_value);
        Ok(stats)
    }

    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError> {
        Ok(self.net.predict(inputs)?)
    }

    fn step(&self) -> u64 {
        self.step
    }
}
