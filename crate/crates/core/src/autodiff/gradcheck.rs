//! Finite-difference oracle for the tape ops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::GraphError;

/// Builds the op under test from leaves registered in `points` order.
pub type OpBuilder<'a> = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, GraphError> + 'a;

/// Compares analytic gradients against central finite differences.
///
/// The op output is contracted with a fixed random cotangent to obtain a
/// scalar, so the whole Jacobian action is exercised. Returns the maximum
/// over all input coordinates of `|analytic - numeric| / (|analytic| + |numeric| + 1e-8)`.
pub fn finite_difference_check(
    build: &OpBuilder,
    points: &[Tensor],
    step: f64,
) -> Result<f64, GraphError> {
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId), GraphError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &ids)?;
        let cotangent = fixed_cotangent(tape.value(out).shape());
        let r = tape.constant(cotangent);
        let prod = tape.mul(out, r)?;
        let loss = tape.sum(prod)?;
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = eval(points)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get(id)).collect();

    let loss_at = |inputs: &[Tensor]| -> Result<f64, GraphError> {
        let (tape, _, loss) = eval(inputs)?;
        tape.value(loss).scalar_value()
    };

    let mut worst = 0.0f64;
    for (pi, point) in points.iter().enumerate() {
        for j in 0..point.numel() {
            let mut plus = points.to_vec();
            plus[pi].data_mut()[j] += step;
            let mut minus = points.to_vec();
            minus[pi].data_mut()[j] -= step;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * step);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Worst finite-difference error for every op kind at `points` random
/// evaluation points each. ReLU inputs are kept away from the kink; dropout
/// uses a mask fixed across rebuilds.
pub fn check_all_ops(seed: u64, points: usize) -> Result<Vec<(String, f64)>, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut run_h = |name: &str,
                     rng: &mut ChaCha8Rng,
                     make_inputs: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
                     build: &OpBuilder,
                     step: f64|
     -> Result<(), GraphError> {
        let mut worst = 0.0f64;
        for _ in 0..points {
            let inputs = make_inputs(rng);
            worst = worst.max(finite_difference_check(build, &inputs, step)?);
        }
        results.push((name.to_string(), worst));
        Ok(())
    };

    let uni = |shape: &'static [usize]| {
        move |rng: &mut ChaCha8Rng| vec![Tensor::rand_uniform(shape, -1.0, 1.0, rng)]
    };
    // Magnitudes >= 0.2 so a 1e-3 central difference never crosses zero.
    let off_kink = |shape: &'static [usize]| {
        move |rng: &mut ChaCha8Rng| {
            let mut t = Tensor::rand_uniform(shape, 0.2, 1.2, rng);
            for v in t.data_mut() {
                if rng.random::<f64>() < 0.5 {
                    *v = -*v;
                }
            }
            vec![t]
        }
    };

    run_h("matmul", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[4, 2], -1.0, 1.0, rng)]
    }, &|t, ids| t.matmul(ids[0], ids[1]), 1e-3)?;
    run_h("add_bias_rows", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 5], -1.0, 1.0, rng), Tensor::rand_uniform(&[5], -1.0, 1.0, rng)]
    }, &|t, ids| t.add_bias(ids[0], ids[1]), 1e-3)?;
    run_h("add_bias_channels", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[3], -1.0, 1.0, rng)]
    }, &|t, ids| t.add_bias(ids[0], ids[1]), 1e-3)?;
    run_h("conv2d_stride1", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[2, 3, 6, 6], -1.0, 1.0, rng), Tensor::rand_uniform(&[4, 3, 3, 3], -1.0, 1.0, rng)]
    }, &|t, ids| t.conv2d(ids[0], ids[1], 1), 1e-3)?;
    run_h("conv2d_stride2", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[2, 2, 7, 7], -1.0, 1.0, rng), Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, rng)]
    }, &|t, ids| t.conv2d(ids[0], ids[1], 2), 1e-3)?;
    run_h("relu", &mut rng, &off_kink(&[4, 6]), &|t, ids| t.relu(ids[0]), 1e-3)?;
    run_h("group_norm", &mut rng, &|rng| {
        vec![
            Tensor::rand_uniform(&[2, 8, 4, 4], -1.0, 1.0, rng),
            Tensor::rand_uniform(&[8], 0.5, 1.5, rng),
            Tensor::rand_uniform(&[8], -0.5, 0.5, rng),
        ]
    }, &|t, ids| t.group_norm(ids[0], ids[1], ids[2], 8, 1e-5), 1e-4)?;
    run_h("global_avg_pool", &mut rng, &uni(&[2, 3, 4, 4]), &|t, ids| t.global_avg_pool(ids[0]), 1e-3)?;
    run_h("dropout", &mut rng, &uni(&[4, 6]), &|t, ids| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(42);
        t.dropout(ids[0], 0.3, &mut mask_rng)
    }, 1e-3)?;
    run_h("add", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng)]
    }, &|t, ids| t.add(ids[0], ids[1]), 1e-3)?;
    run_h("sub", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng)]
    }, &|t, ids| t.sub(ids[0], ids[1]), 1e-3)?;
    run_h("mul", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng)]
    }, &|t, ids| t.mul(ids[0], ids[1]), 1e-3)?;
    run_h("scale", &mut rng, &uni(&[2, 5]), &|t, ids| t.scale(ids[0], -1.7), 1e-3)?;
    run_h("exp", &mut rng, &uni(&[3, 3]), &|t, ids| t.exp(ids[0]), 1e-3)?;
    run_h("log_softmax", &mut rng, &uni(&[4, 5]), &|t, ids| t.log_softmax(ids[0]), 1e-3)?;
    run_h("cross_entropy", &mut rng, &uni(&[5, 4]), &|t, ids| t.cross_entropy(ids[0], &[0, 3, 1, 2, 2]), 1e-3)?;
    run_h("cross_entropy_weighted", &mut rng, &uni(&[4, 3]), &|t, ids| {
        t.cross_entropy_weighted(ids[0], &[0, 2, 1, 1], &[0.5, 1.5, 0.25, 1.0])
    }, 1e-3)?;
    run_h("mean", &mut rng, &uni(&[3, 4]), &|t, ids| t.mean(ids[0]), 1e-3)?;
    run_h("sum", &mut rng, &uni(&[3, 4]), &|t, ids| t.sum(ids[0]), 1e-3)?;
    run_h("concat", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[2, 3], -1.0, 1.0, rng), Tensor::rand_uniform(&[4, 3], -1.0, 1.0, rng)]
    }, &|t, ids| t.concat(ids), 1e-3)?;
    run_h("sq_frob_norm", &mut rng, &uni(&[3, 4]), &|t, ids| t.sq_frob_norm(ids[0]), 1e-3)?;
    run_h("transpose", &mut rng, &uni(&[3, 5]), &|t, ids| t.transpose(ids[0]), 1e-3)?;
    run_h("col_mean", &mut rng, &uni(&[4, 3]), &|t, ids| t.col_mean(ids[0]), 1e-3)?;
    run_h("sub_row_vec", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[4, 3], -1.0, 1.0, rng), Tensor::rand_uniform(&[3], -1.0, 1.0, rng)]
    }, &|t, ids| t.sub_row_vec(ids[0], ids[1]), 1e-3)?;
    run_h("pairwise_sq_dist", &mut rng, &|rng| {
        vec![Tensor::rand_uniform(&[3, 4], -1.0, 1.0, rng), Tensor::rand_uniform(&[5, 4], -1.0, 1.0, rng)]
    }, &|t, ids| t.pairwise_sq_dist(ids[0], ids[1]), 1e-3)?;
    run_h("reshape", &mut rng, &uni(&[2, 6]), &|t, ids| t.reshape(ids[0], vec![3, 4]), 1e-3)?;
    Ok(results)
}

/// Deterministic cotangent in (0.25, 1.25); avoids zeros that would mask errors.
fn fixed_cotangent(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c07a);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| 0.25 + rng.random::<f64>()).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data computed together")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_gradient_is_consistent() {
        let build = |tape: &mut Tape, ids: &[NodeId]| tape.exp(ids[0]);
        let point = vec![Tensor::from_vec(vec![0.3, -0.7, 1.1])];
        let err = finite_difference_check(&build, &point, 1e-3).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn reports_a_mismatched_derivative() {
        // relu right at a kink: the numeric two-sided slope is 0.5 while the
        // analytic rule says 0, so the checker must flag it.
        let build = |tape: &mut Tape, ids: &[NodeId]| tape.relu(ids[0]);
        let point = vec![Tensor::from_vec(vec![0.0])];
        let err = finite_difference_check(&build, &point, 1e-3).unwrap();
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn matmul_passes_at_random_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let build = |tape: &mut Tape, ids: &[NodeId]| tape.matmul(ids[0], ids[1]);
        let err = finite_difference_check(&build, &[a, b], 1e-3).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[cfg(test)]
mod all_ops_tests {
    use super::*;

    #[test]
    fn every_op_passes_at_ten_random_points() {
        for (name, err) in check_all_ops(2024, 10).unwrap() {
            assert!(err < 1e-4, "{name}: max relative error {err}");
        }
    }
}
