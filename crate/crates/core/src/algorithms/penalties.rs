//! Differentiable distribution-matching and invariance penalties, built from
//! tape ops so gradients flow to the featurizer.

use crate::autodiff::{GraphError, NodeId, Tape, Tensor};

/// Multipliers applied to the median-squared-distance heuristic to obtain
/// the Gaussian kernel bandwidths.
pub const MMD_BANDWIDTH_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Mean + covariance alignment: `||mu_x - mu_y||^2 + ||C_x - C_y||_F^2`,
/// covariances with 1/(n-1) normalization.
pub fn coral_penalty(tape: &mut Tape, x: NodeId, y: NodeId) -> Result<NodeId, GraphError> {
    for id in [x, y] {
        let rows = tape.value(id).shape()[0];
        if rows < 2 {
            return Err(GraphError::Contract(format!(
                "coral penalty needs batches of at least 2 rows, got {rows}"
            )));
        }
    }
    let cov = |tape: &mut Tape, id: NodeId| -> Result<(NodeId, NodeId), GraphError> {
        let n = tape.value(id).shape()[0];
        let mu = tape.col_mean(id)?;
        let centered = tape.sub_row_vec(id, mu)?;
        let ct = tape.transpose(centered)?;
        let prod = tape.matmul(ct, centered)?;
        let cov = tape.scale(prod, 1.0 / (n as f64 - 1.0))?;
        Ok((mu, cov))
    };
    let (mu_x, cov_x) = cov(tape, x)?;
    let (mu_y, cov_y) = cov(tape, y)?;
    let dmu = tape.sub(mu_x, mu_y)?;
    let mean_term = tape.sq_frob_norm(dmu)?;
    let dcov = tape.sub(cov_x, cov_y)?;
    let cov_term = tape.sq_frob_norm(dcov)?;
    tape.add(mean_term, cov_term)
}

/// Kernel bandwidths sigma^2 from the median pairwise squared distance over
/// the pooled rows of both batches (off-diagonal pairs only).
pub fn median_heuristic_bandwidths(x: &Tensor, y: &Tensor) -> Vec<f64> {
    let d = x.shape()[1];
    let rows: Vec<&[f64]> = x
        .data()
        .chunks(d)
        .chain(y.data().chunks(d))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d2: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let median = if dists.is_empty() {
        1.0
    } else if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    let median = median.max(1e-12);
    MMD_BANDWIDTH_MULTIPLIERS.iter().map(|m| m * median).collect()
}

/// Biased squared MMD with a sum of Gaussian kernels exp(-d^2 / (2 sigma^2)),
/// averaged over the given bandwidths (sigma^2 values).
pub fn gaussian_mmd(
    tape: &mut Tape,
    x: NodeId,
    y: NodeId,
    bandwidths: &[f64],
) -> Result<NodeId, GraphError> {
    if bandwidths.is_empty() {
        return Err(GraphError::Contract("gaussian_mmd needs at least one bandwidth".into()));
    }
    let dxx = tape.pairwise_sq_dist(x, x)?;
    let dyy = tape.pairwise_sq_dist(y, y)?;
    let dxy = tape.pairwise_sq_dist(x, y)?;
    let mut terms = Vec::with_capacity(bandwidths.len());
    for &sigma_sq in bandwidths {
        if sigma_sq <= 0.0 {
            return Err(GraphError::Contract(format!("bandwidth {sigma_sq} must be positive")));
        }
        let kernel_mean = |tape: &mut Tape, d2: NodeId| -> Result<NodeId, GraphError> {
            let scaled = tape.scale(d2, -1.0 / (2.0 * sigma_sq))?;
            let k = tape.exp(scaled)?;
            tape.mean(k)
        };
        let kxx = kernel_mean(tape, dxx)?;
        let kyy = kernel_mean(tape, dyy)?;
        let kxy = kernel_mean(tape, dxy)?;
        let sum = tape.add(kxx, kyy)?;
        let twice = tape.scale(kxy, 2.0)?;
        terms.push(tape.sub(sum, twice)?);
    }
    super::mean_chain(tape, &terms)
}

/// Squared gradient of the mean risk with respect to a scalar classifier
/// multiplier fixed at 1. In closed form the gradient is
/// `mean_i (<softmax(z_i), z_i> - z_{i, y_i})`, an expression in the logits
/// that stays differentiable, so one backward pass through it matches
/// differentiating through the risk gradient.
pub fn irm_penalty(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId, GraphError> {
    let shape = tape.value(logits).shape().to_vec();
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(GraphError::Contract(format!("{} labels for {n} logit rows", labels.len())));
    }
    let log_probs = tape.log_softmax(logits)?;
    let probs = tape.exp(log_probs)?;
    let pz = tape.mul(probs, logits)?;
    let expected = tape.sum(pz)?;
    let mut onehot = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * k + y] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(vec![n, k], onehot)?);
    let zy = tape.mul(onehot, logits)?;
    let picked = tape.sum(zy)?;
    let diff = tape.sub(expected, picked)?;
    let grad = tape.scale(diff, 1.0 / n as f64)?;
    tape.mul(grad, grad)
}
