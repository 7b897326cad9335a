//! The multi-environment training algorithms behind one contract:
//! construct from (input shape, classes, training-domain count, hparams,
//! seed), `update` one gradient step over one minibatch per training domain,
//! `predict` logits for a batch.

mod dann;
mod dro;
mod erm;
mod featdist;
mod irm;
mod mixup;
mod mldg;
pub mod penalties;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{GraphError, NodeId, Tape, Tensor};
use crate::data::Minibatch;
use crate::hparams::{get_f64, get_str, get_usize, HParamError, HParams};
use crate::models::{self, Classifier, Featurizer};

pub use dann::Dann;
pub use dro::{Dro, DroWeights};
pub use erm::Erm;
pub use featdist::{FeatDist, PenaltyKind};
pub use irm::Irm;
pub use mixup::Mixup;
pub use mldg::{first_order_meta_step, MetaStepOutcome, Mldg};

pub const ALGORITHM_NAMES: &[&str] = &["ERM", "IRM", "DRO", "Mixup", "MLDG", "CORAL", "MMD", "DANN", "CDANN"];

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("unknown algorithm '{name}'; valid: {}", ALGORITHM_NAMES.join(", "))]
    UnknownAlgorithm { name: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    HParam(#[from] HParamError),
    #[error("{0}")]
    Contract(String),
}

/// Named scalars returned by one update step.
pub type StepStats = BTreeMap<String, f64>;

/// One gradient-based learner. `update` advances the step counter by exactly
/// one; `predict` is side-effect-free. The `unlabeled` argument is reserved
/// for adaptation settings that see unlabeled test-domain batches; none of
/// the built-in algorithms consume it.
pub trait Algorithm: Send {
    fn update(&mut self, minibatches: &[Minibatch], unlabeled: Option<&[Tensor]>) -> Result<StepStats, AlgoError>;
    fn predict(&self, inputs: &Tensor) -> Result<Tensor, AlgoError>;
    fn step(&self) -> u64;
}

/// Featurizer/classifier pair shared by every algorithm.
pub(crate) struct Net {
    pub featurizer: Featurizer,
    pub classifier: Classifier,
}

impl Net {
    pub fn from_hparams(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        hp: &HParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AlgoError> {
        let (c, h, w) = input_shape;
        let featurizer = match get_str(hp, "featurizer")? {
            "convnet" => models::build_mnist_convnet(c, rng)?,
            "mlp" => {
                let width = get_usize(hp, "mlp_width")?;
                let depth = get_usize(hp, "mlp_depth")?;
                models::build_mlp_featurizer(c * h * w, width, depth, rng)?
            }
            other => return Err(AlgoError::Contract(format!("unknown featurizer '{other}'"))),
        };
        let dropout = get_f64(hp, "dropout")?;
        let classifier = Classifier::new(featurizer.feature_dim(), num_classes, dropout, rng);
        Ok(Net { featurizer, classifier })
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.featurizer
            .params()
            .iter()
            .chain(self.classifier.params())
            .map(|p| p.value.clone())
            .collect()
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Tensor> {
        self.featurizer
            .params_mut()
            .iter_mut()
            .chain(self.classifier.params_mut())
            .map(|p| &mut p.value)
            .collect()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> NetIds {
        let f = models::register_params(tape, self.featurizer.params(), trainable);
        let c = models::register_params(tape, self.classifier.params(), trainable);
        NetIds { f, c }
    }

    pub fn features(&self, tape: &mut Tape, ids: &NetIds, x: NodeId) -> Result<NodeId, GraphError> {
        self.featurizer.forward(tape, &ids.f, x)
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        ids: &NetIds,
        features: NodeId,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, GraphError> {
        self.classifier.forward(tape, &ids.c, features, train, rng)
    }

    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor, GraphError> {
        models::predict(&self.featurizer, &self.classifier, inputs)
    }
}

pub(crate) struct NetIds {
    pub f: Vec<NodeId>,
    pub c: Vec<NodeId>,
}

impl NetIds {
    /// Gradient extraction order matching `Net::param_refs_mut`.
    pub fn all(&self) -> Vec<NodeId> {
        self.f.iter().chain(&self.c).copied().collect()
    }
}

/// Left-fold mean of scalar nodes: `(x0 + x1 + ...) / n`.
pub(crate) fn mean_chain(tape: &mut Tape, parts: &[NodeId]) -> Result<NodeId, GraphError> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    if parts.len() > 1 {
        acc = tape.scale(acc, 1.0 / parts.len() as f64)?;
    }
    Ok(acc)
}

/// Per-domain cross-entropies plus features and logits, in minibatch order.
pub(crate) struct DomainForward {
    pub features: Vec<NodeId>,
    pub logits: Vec<NodeId>,
    pub ces: Vec<NodeId>,
}

pub(crate) fn forward_domains(
    tape: &mut Tape,
    net: &Net,
    ids: &NetIds,
    minibatches: &[Minibatch],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<DomainForward, GraphError> {
    let mut features = Vec::with_capacity(minibatches.len());
    let mut logits = Vec::with_capacity(minibatches.len());
    let mut ces = Vec::with_capacity(minibatches.len());
    for mb in minibatches {
        let x = tape.constant(mb.images.clone());
        let feats = net.features(tape, ids, x)?;
        let z = net.logits(tape, ids, feats, train, Some(rng))?;
        let ce = tape.cross_entropy(z, &mb.labels)?;
        features.push(feats);
        logits.push(z);
        ces.push(ce);
    }
    Ok(DomainForward { features, logits, ces })
}

pub(crate) fn require_minibatches(minibatches: &[Minibatch], least: usize, who: &str) -> Result<(), AlgoError> {
    if minibatches.len() < least {
        return Err(AlgoError::Contract(format!(
            "{who} needs at least {least} training minibatches, got {}",
            minibatches.len()
        )));
    }
    let first = minibatches[0].labels.len();
    if minibatches.iter().any(|m| m.labels.len() != first) {
        return Err(AlgoError::Contract(format!("{who} expects equal-sized minibatches")));
    }
    Ok(())
}

/// Split one construction seed into independent init and training streams.
pub(crate) fn seed_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let train = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64_5f75_7064);
    (init, train)
}

/// Instantiates a registered algorithm by name.
pub fn make_algorithm(
    name: &str,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    num_domains: usize,
    hparams: &HParams,
    seed: u64,
) -> Result<Box<dyn Algorithm>, AlgoError> {
    match name {
        "ERM" => Ok(Box::new(Erm::new(input_shape, num_classes, hparams, seed)?)),
        "IRM" => Ok(Box::new(Irm::new(input_shape, num_classes, hparams, seed)?)),
        "DRO" => Ok(Box::new(Dro::new(input_shape, num_classes, num_domains, hparams, seed)?)),
        "Mixup" => Ok(Box::new(Mixup::new(input_shape, num_classes, hparams, seed)?)),
        "MLDG" => Ok(Box::new(Mldg::new(input_shape, num_classes, hparams, seed)?)),
        "CORAL" => Ok(Box::new(FeatDist::new(input_shape, num_classes, PenaltyKind::Coral, hparams, seed)?)),
        "MMD" => Ok(Box::new(FeatDist::new(input_shape, num_classes, PenaltyKind::Mmd, hparams, seed)?)),
        "DANN" => Ok(Box::new(Dann::new(input_shape, num_classes, num_domains, false, hparams, seed)?)),
        "CDANN" => Ok(Box::new(Dann::new(input_shape, num_classes, num_domains, true, hparams, seed)?)),
        other => Err(AlgoError::UnknownAlgorithm { name: other.into() }),
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::{mlp_hparams, tiny_minibatches};
    use super::*;
    use crate::hparams::HpValue;

    #[test]
    fn unknown_name_lists_valid_algorithms() {
        let hp = mlp_hparams("ERM");
        let err = match make_algorithm("Adam", (1, 4, 4), 2, 2, &hp, 0) {
            Err(e) => e,
            Ok(_) => panic!("unknown algorithm accepted"),
        };
        let msg = err.to_string();
        assert!(msg.contains("Adam") && msg.contains("MLDG") && msg.contains("CDANN"), "{msg}");
    }

    #[test]
    fn all_nine_names_construct_and_run_three_updates() {
        let minibatches = tiny_minibatches(6);
        for &name in ALGORITHM_NAMES {
            let hp = mlp_hparams(name);
            let mut alg = make_algorithm(name, (1, 4, 4), 2, 2, &hp, 7).unwrap();
            for step in 1..=3u64 {
                let stats = alg.update(&minibatches, None).unwrap();
                assert_eq!(alg.step(), step, "{name}");
                assert!(stats.values().all(|v| v.is_finite()), "{name}: {stats:?}");
            }
            let logits = alg.predict(&minibatches[0].images).unwrap();
            assert_eq!(logits.shape(), &[6, 2], "{name}");
        }
    }

    #[test]
    fn predict_is_unchanged_by_zero_learning_rate_updates() {
        let minibatches = tiny_minibatches(4);
        for &name in ALGORITHM_NAMES {
            let mut hp = mlp_hparams(name);
            for key in ["lr", "lr_g", "lr_d"] {
                if hp.contains_key(key) {
                    hp.insert(key.into(), HpValue::Num(0.0));
                }
            }
            let mut alg = make_algorithm(name, (1, 4, 4), 2, 2, &hp, 3).unwrap();
            let before = alg.predict(&minibatches[0].images).unwrap();
            alg.update(&minibatches, None).unwrap();
            let after = alg.predict(&minibatches[0].images).unwrap();
            assert_eq!(before, after, "{name}");
        }
    }
}
