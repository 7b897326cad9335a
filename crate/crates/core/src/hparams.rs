//! Hyperparameter defaults and random-search distributions.
//!
//! Trial 0 always returns the default column; trials >= 1 draw from the
//! random distributions in a fixed per-algorithm key order, so a trial seed
//! reproduces the same assignment everywhere.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::ALGORITHM_NAMES;

#[derive(Debug, Error)]
pub enum HParamError {
    #[error("unknown algorithm '{name}'; valid: {}", ALGORITHM_NAMES.join(", "))]
    UnknownAlgorithm { name: String },
    #[error("hyperparameter '{key}' is missing")]
    Missing { key: String },
    #[error("hyperparameter '{key}' has the wrong type")]
    WrongType { key: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(u64),
    Num(f64),
    Text(String),
}

pub type HParams = BTreeMap<String, HpValue>;

pub fn get_f64(hp: &HParams, key: &str) -> Result<f64, HParamError> {
    match hp.get(key) {
        Some(HpValue::Num(v)) => Ok(*v),
        Some(HpValue::Int(v)) => Ok(*v as f64),
        Some(HpValue::Text(_)) => Err(HParamError::WrongType { key: key.into() }),
        None => Err(HParamError::Missing { key: key.into() }),
    }
}

pub fn get_usize(hp: &HParams, key: &str) -> Result<usize, HParamError> {
    match hp.get(key) {
        Some(HpValue::Int(v)) => Ok(*v as usize),
        Some(HpValue::Num(v)) if v.fract() == 0.0 && *v >= 0.0 => Ok(*v as usize),
        Some(_) => Err(HParamError::WrongType { key: key.into() }),
        None => Err(HParamError::Missing { key: key.into() }),
    }
}

pub fn get_str<'a>(hp: &'a HParams, key: &str) -> Result<&'a str, HParamError> {
    match hp.get(key) {
        Some(HpValue::Text(s)) => Ok(s),
        Some(_) => Err(HParamError::WrongType { key: key.into() }),
        None => Err(HParamError::Missing { key: key.into() }),
    }
}

/// Which default/distribution column applies: the small-image networks or the
/// large pretrained ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFamily {
    Mnist,
    Resnet,
}

enum Dist {
    /// Constant in both the default and random column.
    Fixed(f64),
    /// 10^Uniform(lo, hi).
    Log10 { lo: f64, hi: f64 },
    /// round(10^Uniform(lo, hi)) as an integer.
    Log10Int { lo: f64, hi: f64 },
    /// round(2^Uniform(lo, hi)) as an integer.
    Pow2Int { lo: f64, hi: f64 },
    /// Uniform choice from a fixed list.
    Choice(&'static [f64]),
}

enum Default_ {
    Num(f64),
    Int(u64),
}

struct Knob {
    key: &'static str,
    default: Default_,
    dist: Dist,
}

fn knob_num(key: &'static str, default: f64, dist: Dist) -> Knob {
    Knob { key, default: Default_::Num(default), dist }
}

fn knob_int(key: &'static str, default: u64, dist: Dist) -> Knob {
    Knob { key, default: Default_::Int(default), dist }
}

fn common_knobs(family: DatasetFamily) -> Vec<Knob> {
    match family {
        DatasetFamily::Mnist => vec![
            knob_num("lr", 1e-3, Dist::Log10 { lo: -4.5, hi: -3.5 }),
            knob_int("batch_size", 64, Dist::Pow2Int { lo: 3.0, hi: 9.0 }),
            knob_num("weight_decay", 0.0, Dist::Fixed(0.0)),
            knob_num("dropout", 0.0, Dist::Choice(&[0.0, 0.1, 0.5])),
        ],
        DatasetFamily::Resnet => vec![
            knob_num("lr", 5e-5, Dist::Log10 { lo: -5.0, hi: -3.5 }),
            knob_int("batch_size", 32, Dist::Pow2Int { lo: 3.0, hi: 5.5 }),
            knob_num("weight_decay", 0.0, Dist::Log10 { lo: -6.0, hi: -2.0 }),
            knob_num("dropout", 0.0, Dist::Choice(&[0.0, 0.1, 0.5])),
        ],
    }
}

fn adversarial_knobs(family: DatasetFamily) -> Vec<Knob> {
    let (lr_default, lr_lo, lr_hi) = match family {
        DatasetFamily::Mnist => (1e-3, -4.5, -2.5),
        DatasetFamily::Resnet => (5e-5, -5.0, -3.5),
    };
    let wd_g = match family {
        DatasetFamily::Mnist => Dist::Fixed(0.0),
        DatasetFamily::Resnet => Dist::Log10 { lo: -6.0, hi: -2.0 },
    };
    let batch = match family {
        DatasetFamily::Mnist => knob_int("batch_size", 64, Dist::Pow2Int { lo: 3.0, hi: 9.0 }),
        DatasetFamily::Resnet => knob_int("batch_size", 32, Dist::Pow2Int { lo: 3.0, hi: 5.5 }),
    };
    vec![
        batch,
        knob_num("dropout", 0.0, Dist::Choice(&[0.0, 0.1, 0.5])),
        knob_num("dann_lambda", 1.0, Dist::Log10 { lo: -2.0, hi: 2.0 }),
        knob_num("lr_g", lr_default, Dist::Log10 { lo: lr_lo, hi: lr_hi }),
        knob_num("wd_g", 0.0, wd_g),
        knob_num("lr_d", lr_default, Dist::Log10 { lo: lr_lo, hi: lr_hi }),
        knob_num("wd_d", 0.0, Dist::Log10 { lo: -6.0, hi: -2.0 }),
        knob_int("d_steps_per_g", 1, Dist::Pow2Int { lo: 0.0, hi: 3.0 }),
        knob_num("grad_penalty", 0.0, Dist::Log10 { lo: -2.0, hi: 1.0 }),
        knob_num("adam_beta1", 0.5, Dist::Choice(&[0.0, 0.5])),
    ]
}

fn algorithm_knobs(algorithm: &str, family: DatasetFamily) -> Result<Vec<Knob>, HParamError> {
    let mut knobs = match algorithm {
        "DANN" | "CDANN" => adversarial_knobs(family),
        _ => common_knobs(family),
    };
    match algorithm {
        "ERM" | "DANN" | "CDANN" => {}
        "IRM" => {
            knobs.push(knob_num("irm_lambda", 100.0, Dist::Log10 { lo: -1.0, hi: 5.0 }));
            knobs.push(knob_int("irm_anneal_iters", 500, Dist::Log10Int { lo: 0.0, hi: 4.0 }));
        }
        "DRO" => knobs.push(knob_num("dro_eta", 0.01, Dist::Log10 { lo: -1.0, hi: 1.0 })),
        "Mixup" => knobs.push(knob_num("mixup_alpha", 0.2, Dist::Log10 { lo: 0.0, hi: 4.0 })),
        "MLDG" => knobs.push(knob_num("mldg_beta", 1.0, Dist::Log10 { lo: -1.0, hi: 1.0 })),
        "MMD" | "CORAL" => knobs.push(knob_num("mmd_gamma", 1.0, Dist::Log10 { lo: -1.0, hi: 1.0 })),
        name => return Err(HParamError::UnknownAlgorithm { name: name.into() }),
    }
    Ok(knobs)
}

/// Architecture knobs with fixed defaults (never sampled).
fn push_model_defaults(hp: &mut HParams) {
    hp.insert("featurizer".into(), HpValue::Text("convnet".into()));
    hp.insert("mlp_width".into(), HpValue::Int(256));
    hp.insert("mlp_depth".into(), HpValue::Int(2));
}

/// Samples one hyperparameter assignment. Trial 0 is the default column.
pub fn sample_hparams(
    algorithm: &str,
    family: DatasetFamily,
    trial: usize,
    trial_seed: u64,
) -> Result<HParams, HParamError> {
    let knobs = algorithm_knobs(algorithm, family)?;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut hp = HParams::new();
    for knob in &knobs {
        let value = if trial == 0 {
            match knob.default {
                Default_::Num(v) => HpValue::Num(v),
                Default_::Int(v) => HpValue::Int(v),
            }
        } else {
            match &knob.dist {
                Dist::Fixed(v) => HpValue::Num(*v),
                Dist::Log10 { lo, hi } => HpValue::Num(10f64.powf(rng.random_range(*lo..*hi))),
                Dist::Log10Int { lo, hi } => HpValue::Int(10f64.powf(rng.random_range(*lo..*hi)).round() as u64),
                Dist::Pow2Int { lo, hi } => HpValue::Int(2f64.powf(rng.random_range(*lo..*hi)).round() as u64),
                Dist::Choice(options) => HpValue::Num(options[rng.random_range(0..options.len())]),
            }
        };
        hp.insert(knob.key.to_string(), value);
    }
    push_model_defaults(&mut hp);
    Ok(hp)
}

/// Applies override entries on top of a sampled assignment.
pub fn apply_overrides(hp: &mut HParams, overrides: &HParams) {
    for (k, v) in overrides {
        hp.insert(k.clone(), v.clone());
    }
}
