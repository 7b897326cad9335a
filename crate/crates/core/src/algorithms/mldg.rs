//! First-order meta-learning across domains: adapt on a meta-train split,
//! evaluate the adapted parameters on a held-out meta-test domain, and
//! combine both gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, GraphError, NodeId, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, HParams};

use super::{mean_chain, require_minibatches, seed_rngs, Algorithm, AlgoError, Net, StepStats};

/// Graph-building closure producing a scalar loss from parameter leaves.
pub type LossBuilder<'a> = dyn FnMut(&mut Tape, &[NodeId]) -> Result<NodeId, GraphError> + 'a;

pub struct MetaStepOutcome {
    pub meta_train_loss: f64,
    pub meta_test_loss: f64,
    /// Combined first-order gradients in parameter order.
    pub grads: Vec<Tensor>,
}

/// One first-order meta step over arbitrary loss builders:
/// `g = dL_S(theta) + beta * dL_T(theta - inner_lr * dL_S(theta))`,
/// treating the adapted parameters' dependence on theta as identity.
pub fn first_order_meta_step(
    params: &[Tensor],
    build_meta_train_loss: &mut LossBuilder,
    build_meta_test_loss: &mut LossBuilder,
    inner_lr: f64,
    beta: f64,
) -> Result<MetaStepOutcome, GraphError> {
    let mut train_tape = Tape::new();
    let train_ids: Vec<NodeId> = params.iter().map(|p| train_tape.leaf(p.clone(), true)).collect();
    let train_loss = build_meta_train_loss(&mut train_tape, &train_ids)?;
    let train_grads = train_tape.backward(train_loss)?;
    let g_train: Vec<Tensor> = train_ids.iter().map(|&id| train_grads.get(id)).collect();

    // Inner SGD step to the adapted parameters.
    let adapted: Vec<Tensor> = params
        .iter()
        .zip(&g_train)
        .map(|(p, g)| {
            let mut a = p.clone();
            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                *av -= inner_lr * gv;
            }
            a
        })
        .collect();

    let mut test_tape = Tape::new();
    let test_ids: Vec<NodeId> = adapted.iter().map(|p| test_tape.leaf(p.clone(), beta != 0.0)).collect();
    let test_loss = build_meta_test_loss(&mut test_tape, &test_ids)?;
    let meta_test_loss = test_tape.value(test_loss).scalar_value()?;

    let grads = if beta == 0.0 {
        g_train
    } else {
        let test_grads = test_tape.backward(test_loss)?;
        g_train
            .into_iter()
            .zip(test_ids.iter().map(|&id| test_grads.get(id)))
            .map(|(mut g, gt)| {
                for (gv, tv) in g.data_mut().iter_mut().zip(gt.data()) {
                    *gv += beta * tv;
                }
                g
            })
            .collect()
    };
    Ok(MetaStepOutcome { meta_train_loss: train_tape.value(train_loss).scalar_value()?, meta_test_loss, grads })
}

pub struct Mldg {
    pub(crate) net: Net,
    opt: AdamState,
    cfg: AdamConfig,
    beta: f64,
    rng: ChaCha8Rng,
    step: u64,
}

impl Mldg {
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
        Ok(Mldg { net, opt, cfg, beta: get_f64(hparams, "mldg_beta")?, rng: train_rng, step: 0 })
    }
}

impl Algorithm for Mldg {
    fn update(&mut self, minibatches: &[Minibatch], _unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError> {
        require_minibatches(minibatches, 2, "MLDG")?;
        let held_out = self.rng.random_range(0..minibatches.len());
        let meta_train: Vec<&Minibatch> =
            minibatches.iter().enumerate().filter(|(i, _)| *i != held_out).map(|(_, m)| m).collect();
        let meta_test = &minibatches[held_out];
        let inner_lr = self.cfg.lr;
        let params = self.net.param_values();
        let net = &self.net;
        let n_f = net.featurizer.params().len();

        let forward_ce = |tape: &mut Tape, ids: &[NodeId], mb: &Minibatch| -> Result<NodeId, GraphError> {
            let net_ids = super::NetIds { f: ids[..n_f].to_vec(), c: ids[n_f..].to_vec() };
            let x = tape.constant(mb.images.clone());
            let feats = net.features(tape, &net_ids, x)?;
            // Dropout is skipped inside the meta step: both loss builders
            // would need independent masks from one stream, which makes the
            // adapted pass diverge from the outer pass for no benefit at
            // these network sizes.
            let z = net.logits(tape, &net_ids, feats, false, None)?;
            tape.cross_entropy(z, &mb.labels)
        };
        let mut build_train = |tape: &mut Tape, ids: &[NodeId]| -> Result<NodeId, GraphError> {
            let ces: Vec<NodeId> =
                meta_train.iter().map(|mb| forward_ce(tape, ids, mb)).collect::<Result<_, _>>()?;
            mean_chain(tape, &ces)
        };
        let mut build_test =
            |tape: &mut Tape, ids: &[NodeId]| -> Result<NodeId, GraphError> { forward_ce(tape, ids, meta_test) };

        let outcome = first_order_meta_step(&params, &mut build_train, &mut build_test, inner_lr, self.beta)?;
        adam_step(self.net.param_refs_mut(), &outcome.grads, &mut self.opt, &self.cfg)?;
        self.step += 1;
        let mut stats = StepStats::new();
        stats.insert("meta_train_loss".into(), outcome.meta_train_loss);
        stats.insert("meta_test_loss".into(), outcome.meta_test_loss);
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

    /// 1-d quadratics: L_S = theta^2, L_T = (theta - 1)^2 at theta = 1 with
    /// inner_lr = 1/4. Adapted theta' = 1/2, first-order total gradient
    /// 2 theta + beta * 2 (theta' - 1) = 2 - beta.
    #[test]
    fn quadratic_meta_gradient_matches_hand_derivation() {
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let params = vec![Tensor::scalar(1.0)];
            let mut train = |tape: &mut Tape, ids: &[NodeId]| {
                let sq = tape.mul(ids[0], ids[0])?;
                tape.sum(sq)
            };
            let mut test = |tape: &mut Tape, ids: &[NodeId]| {
                let one = tape.constant(Tensor::scalar(1.0));
                let diff = tape.sub(ids[0], one)?;
                let sq = tape.mul(diff, diff)?;
                tape.sum(sq)
            };
            let out = first_order_meta_step(&params, &mut train, &mut test, 0.25, beta).unwrap();
            let g = out.grads[0].data()[0];
            assert!((g - (2.0 - beta)).abs() < 1e-12, "beta={beta}: {g}");
            assert!((out.meta_train_loss - 1.0).abs() < 1e-12);
            assert!((out.meta_test_loss - 0.25).abs() < 1e-12);
        }
    }

    /// inner_lr = 0 keeps theta' = theta: joint training gradient.
    #[test]
    fn zero_inner_lr_is_joint_training() {
        let params = vec![Tensor::scalar(3.0)];
        let mut train = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let mut test = |tape: &mut Tape, ids: &[NodeId]| {
            let sc = tape.scale(ids[0], 4.0)?;
            tape.sum(sc)
        };
        let out = first_order_meta_step(&params, &mut train, &mut test, 0.0, 1.5).unwrap();
        // d(theta^2) + 1.5 * d(4 theta) = 2*3 + 6 = 12.
        assert!((out.grads[0].data()[0] - 12.0).abs() < 1e-12);
    }

    /// At beta = 0 one MLDG step equals an ERM step on the meta-train
    /// domains, bit for bit. The held-out domain is seed-dependent, so the
    /// step must match ERM on exactly one of the two single-domain subsets.
    #[test]
    fn beta_zero_single_step_is_an_erm_step_on_the_meta_train_subset() {
        use super::super::testutil::{mlp_hparams, tiny_minibatches};
        use super::super::Erm;
        use crate::hparams::HpValue;
        let mut hp = mlp_hparams("MLDG");
        hp.insert("mldg_beta".into(), HpValue::Num(0.0));
        let mbs = tiny_minibatches(4);
        let mut mldg = Mldg::new((1, 4, 4), 2, &hp, 41).unwrap();
        mldg.update(&mbs, None).unwrap();
        let got = mldg.net.param_values();
        let erm_hp = mlp_hparams("ERM");
        let mut matches = 0;
        for s in 0..2 {
            let mut erm = Erm::new((1, 4, 4), 2, &erm_hp, 41).unwrap();
            erm.update(std::slice::from_ref(&mbs[s]), None).unwrap();
            if erm.net.param_values() == got {
                matches += 1;
            }
        }
        assert_eq!(matches, 1);
    }

    #[test]
    fn beta_zero_reduces_to_meta_train_gradients() {
        let params = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let mut train = |tape: &mut Tape, ids: &[NodeId]| {
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        };
        let mut test = |tape: &mut Tape, ids: &[NodeId]| tape.sum(ids[0]);
        let out = first_order_meta_step(&params, &mut train, &mut test, 0.1, 0.0).unwrap();
        assert_eq!(out.grads[0].data(), &[2.0, -4.0]);
    }
}
