use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use dgbench_core::algorithms::{make_algorithm, ALGORITHM_NAMES};
use dgbench_core::data::{sample_minibatches, toy::toy_dataset};
use dgbench_core::hparams::{sample_hparams, DatasetFamily, HpValue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One full update step per algorithm on the toy dataset with the MLP
/// featurizer: measures tape construction, backward, and the Adam step.
fn bench_updates(c: &mut Criterion) {
    let mut ds = toy_dataset(0);
    ds.apply_splits(0.8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let minibatches = sample_minibatches(&ds, &[0, 1], 32, &mut rng).unwrap();
    for &name in ALGORITHM_NAMES {
        let mut hp = sample_hparams(name, DatasetFamily::Mnist, 0, 0).unwrap();
        hp.insert("featurizer".into(), HpValue::Text("mlp".into()));
        hp.insert("mlp_width".into(), HpValue::Int(64));
        hp.insert("mlp_depth".into(), HpValue::Int(2));
        let mut alg = make_algorithm(name, ds.input_shape, ds.num_classes, 2, &hp, 3).unwrap();
        c.bench_function(&format!("update {name} mlp64x2 batch32"), |bench| {
            bench.iter(|| black_box(alg.update(&minibatches, None).unwrap()))
        });
    }
}

criterion_group!(benches, bench_updates);
criterion_main!(benches);
