//! Network constructors: the small ConvNet featurizer, an MLP featurizer for
//! fast CPU runs, the linear classifier, and the domain discriminator used by
//! the adversarial algorithms.
//!
//! Constructors are pure functions of the init RNG: weights use
//! Kaiming-uniform fan-in, biases start at zero, and norm affines at (1, 0).

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GraphError, NodeId, Tape, Tensor};

const GROUP_NORM_GROUPS: usize = 8;
const GROUP_NORM_EPS: f64 = 1e-5;

/// Named trainable tensor.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param { name: name.into(), value }
    }
}

fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Registers parameter tensors on a tape in declaration order.
pub fn register_params(tape: &mut Tape, params: &[Param], trainable: bool) -> Vec<NodeId> {
    params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect()
}

#[derive(Clone, Debug)]
enum FeaturizerKind {
    /// Four 3x3 conv blocks (ReLU then 8-group norm), stride 2 on the second,
    /// global average pooling down to 128 features.
    ConvNet,
    Mlp { depth: usize },
}

/// Graph-building featurizer: maps (batch, C, H, W) inputs to (batch, F).
#[derive(Clone, Debug)]
pub struct Featurizer {
    kind: FeaturizerKind,
    params: Vec<Param>,
    feature_dim: usize,
}

impl Featurizer {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Appends the featurizer to `tape`. `ids` must come from
    /// `register_params` over `self.params()` in order.
    pub fn forward(&self, tape: &mut Tape, ids: &[NodeId], x: NodeId) -> Result<NodeId, GraphError> {
        if ids.len() != self.params.len() {
            return Err(GraphError::Contract(format!(
                "featurizer has {} params, got {} node ids",
                self.params.len(),
                ids.len()
            )));
        }
        match self.kind {
            FeaturizerKind::ConvNet => {
                let mut h = x;
                for block in 0..4 {
                    let stride = if block == 1 { 2 } else { 1 };
                    let base = block * 4;
                    h = tape.conv2d(h, ids[base], stride)?;
                    h = tape.add_bias(h, ids[base + 1])?;
                    h = tape.relu(h)?;
                    h = tape.group_norm(h, ids[base + 2], ids[base + 3], GROUP_NORM_GROUPS, GROUP_NORM_EPS)?;
                }
                tape.global_avg_pool(h)
            }
            FeaturizerKind::Mlp { depth, .. } => {
                let shape = tape.value(x).shape().to_vec();
                let batch = shape[0];
                let flat: usize = shape[1..].iter().product();
                let mut h = tape.reshape(x, vec![batch, flat])?;
                for layer in 0..depth {
                    h = tape.matmul(h, ids[layer * 2])?;
                    h = tape.add_bias(h, ids[layer * 2 + 1])?;
                    h = tape.relu(h)?;
                }
                Ok(h)
            }
        }
    }
}

/// The 28x28 ConvNet: Conv(d->64), Conv(64->128, stride 2), Conv(128->128),
/// Conv(128->128), each followed by ReLU and GroupNorm(8), then global
/// average pooling to a 128-wide feature vector.
pub fn build_mnist_convnet(in_channels: usize, rng: &mut ChaCha8Rng) -> Result<Featurizer, GraphError> {
    if !(1..=2).contains(&in_channels) {
        return Err(GraphError::Contract(format!("convnet expects 1 or 2 input channels, got {in_channels}")));
    }
    let widths = [(in_channels, 64usize), (64, 128), (128, 128), (128, 128)];
    let mut params = Vec::new();
    for (i, &(c_in, c_out)) in widths.iter().enumerate() {
        let n = i + 1;
        params.push(Param::new(format!("conv{n}.weight"), kaiming_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng)));
        params.push(Param::new(format!("conv{n}.bias"), Tensor::zeros(&[c_out])));
        params.push(Param::new(format!("gn{n}.scale"), Tensor::full(&[c_out], 1.0)));
        params.push(Param::new(format!("gn{n}.shift"), Tensor::zeros(&[c_out])));
    }
    Ok(Featurizer { kind: FeaturizerKind::ConvNet, params, feature_dim: 128 })
}

/// Plain ReLU MLP over flattened inputs; `depth` hidden layers of `width`.
pub fn build_mlp_featurizer(
    input_dim: usize,
    width: usize,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Featurizer, GraphError> {
    if width == 0 || depth == 0 {
        return Err(GraphError::Contract(format!("mlp featurizer needs width >= 1 and depth >= 1, got {width}x{depth}")));
    }
    let mut params = Vec::new();
    let mut d_in = input_dim;
    for layer in 1..=depth {
        params.push(Param::new(format!("fc{layer}.weight"), kaiming_uniform(&[d_in, width], d_in, rng)));
        params.push(Param::new(format!("fc{layer}.bias"), Tensor::zeros(&[width])));
        d_in = width;
    }
    Ok(Featurizer { kind: FeaturizerKind::Mlp { depth }, params, feature_dim: width })
}

/// Linear head F -> K with optional dropout on its input at train time.
#[derive(Clone, Debug)]
pub struct Classifier {
    params: Vec<Param>,
    pub dropout: f64,
    num_classes: usize,
}

impl Classifier {
    pub fn new(feature_dim: usize, num_classes: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let params = vec![
            Param::new("classifier.weight", kaiming_uniform(&[feature_dim, num_classes], feature_dim, rng)),
            Param::new("classifier.bias", Tensor::zeros(&[num_classes])),
        ];
        Classifier { params, dropout, num_classes }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        features: NodeId,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, GraphError> {
        let h = match (train, rng) {
            (true, Some(rng)) if self.dropout > 0.0 => tape.dropout(features, self.dropout, rng)?,
            _ => features,
        };
        let z = tape.matmul(h, ids[0])?;
        tape.add_bias(z, ids[1])
    }
}

/// Result of a discriminator forward pass; keeps what the input-gradient
/// expression needs (pre-activation nodes, in layer order).
pub struct DiscForward {
    pub logits: NodeId,
    preacts: Vec<NodeId>,
}

/// MLP over features predicting the source domain of each example.
#[derive(Clone, Debug)]
pub struct Discriminator {
    params: Vec<Param>,
    hidden_depth: usize,
    num_domains: usize,
}

impl Discriminator {
    pub fn new(
        feature_dim: usize,
        num_domains: usize,
        hidden_width: usize,
        hidden_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut params = Vec::new();
        let mut d_in = feature_dim;
        for layer in 1..=hidden_depth {
            params.push(Param::new(format!("disc{layer}.weight"), kaiming_uniform(&[d_in, hidden_width], d_in, rng)));
            params.push(Param::new(format!("disc{layer}.bias"), Tensor::zeros(&[hidden_width])));
            d_in = hidden_width;
        }
        params.push(Param::new("disc_out.weight", kaiming_uniform(&[d_in, num_domains], d_in, rng)));
        params.push(Param::new("disc_out.bias", Tensor::zeros(&[num_domains])));
        Discriminator { params, hidden_depth, num_domains }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn forward(&self, tape: &mut Tape, ids: &[NodeId], features: NodeId) -> Result<DiscForward, GraphError> {
        let mut h = features;
        let mut preacts = Vec::new();
        for layer in 0..self.hidden_depth {
            let z = tape.matmul(h, ids[layer * 2])?;
            let a = tape.add_bias(z, ids[layer * 2 + 1])?;
            preacts.push(a);
            h = tape.relu(a)?;
        }
        let z = tape.matmul(h, ids[self.hidden_depth * 2])?;
        let logits = tape.add_bias(z, ids[self.hidden_depth * 2 + 1])?;
        Ok(DiscForward { logits, preacts })
    }

    /// Builds `mean_i || d(w_i * nll_i)/d(features_i) ||^2` as a differentiable
    /// expression in the discriminator weights. ReLU masks are constants of
    /// the current activations, matching a create-graph backward through the
    /// network, whose second derivative at the kinks is zero anyway.
    pub fn input_gradient_penalty(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        fwd: &DiscForward,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<NodeId, GraphError> {
        let shape = tape.value(fwd.logits).shape().to_vec();
        let (n, k) = (shape[0], shape[1]);
        let mut onehot = vec![0.0; n * k];
        for (i, &y) in labels.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let onehot = tape.constant(Tensor::new(vec![n, k], onehot)?);
        let log_probs = tape.log_softmax(fwd.logits)?;
        let probs = tape.exp(log_probs)?;
        let mut g = tape.sub(probs, onehot)?;
        if let Some(w) = weights {
            let mut wmat = vec![0.0; n * k];
            for (i, &wi) in w.iter().enumerate() {
                for j in 0..k {
                    wmat[i * k + j] = wi;
                }
            }
            let wmat = tape.constant(Tensor::new(vec![n, k], wmat)?);
            g = tape.mul(g, wmat)?;
        }
        // Chain back through the linear layers, masking at each ReLU.
        let wt = tape.transpose(ids[self.hidden_depth * 2])?;
        g = tape.matmul(g, wt)?;
        for layer in (0..self.hidden_depth).rev() {
            let mask: Vec<f64> = tape.value(fwd.preacts[layer]).data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
            let mshape = tape.value(fwd.preacts[layer]).shape().to_vec();
            let mask = tape.constant(Tensor::new(mshape, mask)?);
            g = tape.mul(g, mask)?;
            let wt = tape.transpose(ids[layer * 2])?;
            g = tape.matmul(g, wt)?;
        }
        let sq = tape.sq_frob_norm(g)?;
        tape.scale(sq, 1.0 / n as f64)
    }
}

/// Evaluation-mode logits for a batch: dropout off, no gradients retained.
pub fn predict(featurizer: &Featurizer, classifier: &Classifier, batch: &Tensor) -> Result<Tensor, GraphError> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.clone());
    let fids = register_params(&mut tape, featurizer.params(), false);
    let cids = register_params(&mut tape, classifier.params(), false);
    let feats = featurizer.forward(&mut tape, &fids, x)?;
    let logits = classifier.forward(&mut tape, &cids, feats, false, None)?;
    Ok(tape.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn convnet_parameter_count_matches_layer_arithmetic() {
        // Summed layer by layer, independently of the constructor:
        // conv weights + biases, plus one (scale, shift) pair per normed layer.
        #[allow(clippy::identity_op)] // written as the layer-by-layer sum
        let expected: usize = (64 * 1 * 9 + 64)
            + (128 * 64 * 9 + 128)
            + 2 * (128 * 128 * 9 + 128)
            + (2 * 64 + 3 * 2 * 128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_mnist_convnet(1, &mut rng).unwrap();
        assert_eq!(net.num_params(), expected);
        assert_eq!(net.params()[0].value.shape(), &[64, 1, 3, 3]);
    }

    #[test]
    fn convnet_maps_28x28_to_128_features() {
        for c in [1usize, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let net = build_mnist_convnet(c, &mut rng).unwrap();
            assert_eq!(net.feature_dim(), 128);
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::full(&[3, c, 28, 28], 0.5));
            let ids = register_params(&mut tape, net.params(), false);
            let out = net.forward(&mut tape, &ids, x).unwrap();
            assert_eq!(tape.value(out).shape(), &[3, 128]);
        }
    }

    /// The conv stack's spatial chain on 28x28 inputs: 28 -> 14 -> 14 -> 14,
    /// pooling to 128 features. Verified by scanning the tape's node shapes.
    #[test]
    fn convnet_spatial_chain_28_14_14_14() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = build_mnist_convnet(1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 28, 28], 0.3));
        let ids = register_params(&mut tape, net.params(), false);
        let out = net.forward(&mut tape, &ids, x).unwrap();
        let shapes: Vec<Vec<usize>> =
            (0..tape.len()).map(|i| tape.value(crate::autodiff::NodeId(i)).shape().to_vec()).collect();
        let conv_outputs: Vec<&Vec<usize>> =
            shapes.iter().filter(|s| s.len() == 4 && s[0] == 1 && s[1] >= 64).collect();
        // conv1 block at 28x28, conv2-4 blocks at 14x14 (4 nodes per block:
        // conv, bias, relu, norm).
        assert_eq!(conv_outputs.len(), 16, "{conv_outputs:?}");
        for s in &conv_outputs[..4] {
            assert_eq!(&s[1..], &[64, 28, 28]);
        }
        for s in &conv_outputs[4..] {
            assert_eq!(&s[1..], &[128, 14, 14]);
        }
        assert_eq!(tape.value(out).shape(), &[1, 128]);
    }

    #[test]
    fn convnet_rejects_other_channel_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_mnist_convnet(3, &mut rng).is_err());
    }

    #[test]
    fn mlp_shapes_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = build_mlp_featurizer(4, 8, 1, &mut rng).unwrap();
        assert_eq!(net.num_params(), 4 * 8 + 8);
        for p in net.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 1, 2, 2], 0.7));
        let ids = register_params(&mut tape, net.params(), false);
        let out = net.forward(&mut tape, &ids, x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_gradient_reaches_first_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = build_mlp_featurizer(6, 5, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::rand_uniform(&[4, 1, 2, 3], 0.0, 1.0, &mut rng));
        let ids = register_params(&mut tape, net.params(), true);
        let out = net.forward(&mut tape, &ids, x).unwrap();
        let loss = tape.sq_frob_norm(out).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(ids[0]);
        assert!(g.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn constructors_are_pure_in_the_seed() {
        let a = build_mnist_convnet(2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_mnist_convnet(2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value, pb.value);
        }
    }

    #[test]
    fn predict_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = build_mlp_featurizer(9, 7, 1, &mut rng).unwrap();
        let c = Classifier::new(7, 3, 0.5, &mut rng);
        let batch = Tensor::rand_uniform(&[1, 1, 3, 3], 0.0, 1.0, &mut rng);
        let a = predict(&f, &c, &batch).unwrap();
        let b = predict(&f, &c, &batch).unwrap();
        assert_eq!(a.shape(), &[1, 3]);
        assert_eq!(a, b); // dropout is off in eval mode
    }

    #[test]
    fn zeroed_net_has_uniform_softmax_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = build_mlp_featurizer(4, 6, 1, &mut rng).unwrap();
        let mut c = Classifier::new(6, 5, 0.0, &mut rng);
        for p in c.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let batch = Tensor::rand_uniform(&[2, 1, 2, 2], 0.0, 1.0, &mut rng);
        let logits = predict(&f, &c, &batch).unwrap();
        // All-zero logits: cross-entropy to any label is ln K.
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let ce = tape.cross_entropy(l, &[0, 4]).unwrap();
        let got = tape.value(ce).scalar_value().unwrap();
        assert!((got - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_forward_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = Discriminator::new(10, 3, 16, 2, &mut rng);
        let mut tape = Tape::new();
        let feats = tape.constant(Tensor::rand_uniform(&[5, 10], -1.0, 1.0, &mut rng));
        let ids = register_params(&mut tape, d.params(), false);
        let fwd = d.forward(&mut tape, &ids, feats).unwrap();
        assert_eq!(tape.value(fwd.logits).shape(), &[5, 3]);
    }

    /// Depth-0 discriminator is a plain linear map, so the input gradient of
    /// the per-example nll is W (softmax - onehot)_i and the penalty has a
    /// closed form we can evaluate by hand.
    #[test]
    fn linear_discriminator_gradient_penalty_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Discriminator::new(3, 2, 8, 0, &mut rng);
        let w = d.params()[0].value.clone(); // (3, 2)
        let feats_t = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let labels = [0usize, 1, 0, 1];

        let mut tape = Tape::new();
        let feats = tape.constant(feats_t.clone());
        let ids = register_params(&mut tape, d.params(), true);
        let fwd = d.forward(&mut tape, &ids, feats).unwrap();
        let pen = d.input_gradient_penalty(&mut tape, &ids, &fwd, &labels, None).unwrap();
        let got = tape.value(pen).scalar_value().unwrap();

        // Hand computation from first principles.
        let logits = tape.value(fwd.logits).clone();
        let mut expected = 0.0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..4 {
            let row = &logits.data()[i * 2..(i + 1) * 2];
            let max = row[0].max(row[1]);
            let z: f64 = (row[0] - max).exp() + (row[1] - max).exp();
            let p = [(row[0] - max).exp() / z, (row[1] - max).exp() / z];
            let diff = [p[0] - if labels[i] == 0 { 1.0 } else { 0.0 }, p[1] - if labels[i] == 1 { 1.0 } else { 0.0 }];
            for t in 0..3 {
                let gt = w.data()[t * 2] * diff[0] + w.data()[t * 2 + 1] * diff[1];
                expected += gt * gt;
            }
        }
        expected /= 4.0;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}
