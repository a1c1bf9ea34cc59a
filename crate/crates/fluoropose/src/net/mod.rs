//! A small trainable convolutional regressor with manual forward and
//! backward passes.
//!
//! The design space is deliberately narrow: VGG-style blocks of 3x3
//! convolutions with channel doubling, a pooling choice, optional
//! dropout/batch-norm regularization, and a funnel of fully connected
//! layers ending in either a coordinate-regression head or a single
//! direct-output node. Training is plain mini-batch MSE with either
//! Nesterov-momentum SGD or Adam, single-threaded for bit
//! reproducibility.

pub mod layers;
pub mod tensor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, Mode, Pool2x2, Relu};
use tensor::Tensor;

/// Spatial down-sampling flavor between blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Max,
    Average,
    /// No pooling layer; the last convolution of each block uses stride 2.
    StridedLast,
}

/// Regularization applied inside the convolutional blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvReg {
    None,
    /// 20% dropout after each block.
    Dropout20,
    /// Batch normalization after the last convolution of each block.
    BatchNormPerBlock,
    /// Batch normalization after every convolution.
    BatchNormPerLayer,
}

/// Regularization applied to the hidden fully connected layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FcReg {
    None,
    Dropout20,
    BatchNorm,
    BatchNormDropout5,
    BatchNormDropout10,
}

/// Output head: keypoint-coordinate regression or one direct value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    /// Regress `outputs` normalized coordinates (12 for six keypoints,
    /// 4 for two endpoints).
    Indirect { outputs: usize },
    /// Regress a single raw value (e.g. an angle in degrees).
    Direct,
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Indirect { outputs } => outputs,
            Head::Direct => 1,
        }
    }
}

/// Architecture description; the constructor validates it against the
/// supported design space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvNetConfig {
    /// Input shape (channels, height, width).
    pub input: [usize; 3],
    /// Number of convolution blocks (2 or 3).
    pub blocks: usize,
    /// Convolutions per block (2 or 3).
    pub layers_per_block: usize,
    /// Channels of the first block; doubled per block. 32 at full scale,
    /// smaller for quick experiments.
    pub base_channels: usize,
    pub pooling: Pooling,
    pub conv_reg: ConvReg,
    /// Number of fully connected layers including the output layer;
    /// valid pairs with the node factor: (4, 2) and (3, 4).
    pub fc_layers: usize,
    /// Divisor applied to the node count of each successive FC layer.
    pub fc_node_factor: usize,
    pub fc_reg: FcReg,
    pub head: Head,
}

impl ConvNetConfig {
    /// The small network used for the rectangle comparison: four
    /// convolutions (2 blocks x 2 layers) and three fully connected
    /// layers.
    pub fn simplified(input: [usize; 3], base_channels: usize, head: Head) -> Self {
        Self {
            input,
            blocks: 2,
            layers_per_block: 2,
            base_channels,
            pooling: Pooling::Max,
            conv_reg: ConvReg::None,
            fc_layers: 3,
            fc_node_factor: 4,
            fc_reg: FcReg::None,
            head,
        }
    }

    /// The 13-weight-layer configuration (9 convolutions + 4 FC).
    pub fn full(input: [usize; 3], head: Head) -> Self {
        Self {
            input,
            blocks: 3,
            layers_per_block: 3,
            base_channels: 32,
            pooling: Pooling::Max,
            conv_reg: ConvReg::BatchNormPerBlock,
            fc_layers: 4,
            fc_node_factor: 2,
            fc_reg: FcReg::BatchNorm,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = matches!(self.blocks, 2 | 3)
            && matches!(self.layers_per_block, 2 | 3)
            && matches!(
                (self.fc_layers, self.fc_node_factor),
                (4, 2) | (3, 4)
            )
            && self.base_channels >= 1
            && self.input.iter().all(|&d| d >= 1)
            && self.head.output_dim() >= 1;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "network configuration outside the supported design space: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }
}

/// The assembled network.
pub struct ConvNet {
    pub config: ConvNetConfig,
    pub seed: u64,
    layers: Vec<Box<dyn Layer>>,
    dropout_rng: ChaCha8Rng,
}

impl ConvNet {
    /// Build a network with He-initialized weights.
    pub fn new(config: ConvNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);

        let mut layers: Vec<Box<dyn Layer>> = Vec::new();
        let [mut c, mut h, mut w] = config.input;
        for b in 0..config.blocks {
            let out_c = config.base_channels << b;
            for l in 0..config.layers_per_block {
                let last = l == config.layers_per_block - 1;
                let stride = if config.pooling == Pooling::StridedLast && last {
                    2
                } else {
                    1
                };
                let conv = Conv2d::new(c, out_c, stride, &mut init_rng);
                let (oh, ow) = conv.out_hw(h, w);
                layers.push(Box::new(conv));
                c = out_c;
                (h, w) = (oh, ow);
                if config.conv_reg == ConvReg::BatchNormPerLayer
                    || (config.conv_reg == ConvReg::BatchNormPerBlock && last)
                {
                    layers.push(Box::new(BatchNorm::new(c)));
                }
                layers.push(Box::new(Relu::default()));
            }
            if config.pooling != Pooling::StridedLast {
                if h < 2 || w < 2 {
                    return Err(Error::ShapeMismatch(format!(
                        "feature map {h}x{w} too small to pool in block {b}"
                    )));
                }
                layers.push(Box::new(Pool2x2::new(config.pooling == Pooling::Average)));
                h /= 2;
                w /= 2;
            }
            if config.conv_reg == ConvReg::Dropout20 {
                layers.push(Box::new(Dropout::new(0.2)));
            }
        }
        layers.push(Box::new(Flatten::default()));
        let mut features = c * h * w;
        let out_dim = config.output_dim();
        for _ in 0..config.fc_layers.saturating_sub(1) {
            let next = (features / config.fc_node_factor).max(out_dim).max(2);
            layers.push(Box::new(Dense::new(features, next, &mut init_rng)));
            features = next;
            match config.fc_reg {
                FcReg::None | FcReg::Dropout20 => {}
                _ => layers.push(Box::new(BatchNorm::new(features))),
            }
            layers.push(Box::new(Relu::default()));
            let p = match config.fc_reg {
                FcReg::Dropout20 => 0.2,
                FcReg::BatchNormDropout5 => 0.05,
                FcReg::BatchNormDropout10 => 0.10,
                _ => 0.0,
            };
            if p > 0.0 {
                layers.push(Box::new(Dropout::new(p)));
            }
        }
        layers.push(Box::new(Dense::new(features, out_dim, &mut init_rng)));

        Ok(Self {
            config,
            seed,
            layers,
            dropout_rng,
        })
    }

    /// Reset the dropout stream (used to freeze masks for gradient
    /// verification).
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        self.dropout_rng.set_stream(1);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape;
        if [c, h, w] != self.config.input {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} does not match configured {:?}",
                [c, h, w],
                self.config.input
            )));
        }
        Ok(())
    }

    fn run(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut t = x.clone();
        for layer in &mut self.layers {
            t = layer.forward(t, mode, &mut self.dropout_rng);
        }
        Ok(t)
    }

    /// Deterministic inference pass (dropout off, batch-norm running
    /// statistics).
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.run(x, Mode::Eval)
    }

    /// Training pass (dropout active, batch statistics).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.run(x, Mode::Train)
    }

    /// Propagate a loss gradient back through the net, filling parameter
    /// gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, loss_grad: Tensor) -> Tensor {
        let mut g = loss_grad;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    /// All parameter buffers paired with their gradients, in a stable
    /// order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_and_grads())
            .collect()
    }

    /// Every buffer a save/load round trip must preserve (trainable
    /// parameters plus normalization statistics), labeled by layer name,
    /// in a stable order.
    pub fn state_buffers(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let name = l.name();
                l.state_buffers().into_iter().map(move |b| (name, b))
            })
            .collect()
    }

    /// Parameter buffers in the same stable order (weight export).
    pub fn param_buffers(&mut self) -> Vec<Vec<f64>> {
        self.params_and_grads()
            .into_iter()
            .map(|(p, _)| p.to_vec())
            .collect()
    }

    /// Overwrite parameters from buffers produced by
    /// [`ConvNet::param_buffers`].
    pub fn load_param_buffers(&mut self, buffers: &[Vec<f64>]) -> Result<()> {
        let mut pairs = self.params_and_grads();
        if pairs.len() != buffers.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter buffers, got {}",
                pairs.len(),
                buffers.len()
            )));
        }
        for ((p, _), src) in pairs.iter_mut().zip(buffers) {
            if p.len() != src.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter buffer length {} != {}",
                    src.len(),
                    p.len()
                )));
            }
            p.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn num_params(&mut self) -> usize {
        self.params_and_grads().iter().map(|(p, _)| p.len()).sum()
    }

    /// Hash of the discrete decisions (ReLU active sets, pooling argmax)
    /// of the most recent forward pass.
    pub fn active_set_signature(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for layer in &self.layers {
            layer.hash_active_set(&mut h);
        }
        h.finish()
    }

    pub fn layer_names(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.name()).collect()
    }
}

/// Mean squared error over every output of every sample, plus its
/// gradient w.r.t. the predictions.
pub fn mse_loss(pred: &Tensor, targets: &[f64]) -> (f64, Tensor) {
    assert_eq!(pred.len(), targets.len(), "prediction/target mismatch");
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape);
    let mut loss = 0.0;
    for i in 0..pred.len() {
        let d = pred.data[i] - targets[i];
        loss += d * d;
        grad.data[i] = 2.0 * d / n;
    }
    (loss / n, grad)
}

/// Gradient-descent flavors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    SgdNesterov { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::SgdNesterov { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate() < 0.0 {
            return Err(Error::InvalidParameter(
                "learning rate must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state (momenta).
struct OptimizerState {
    v: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    t: usize,
}

impl OptimizerState {
    fn new() -> Self {
        Self {
            v: Vec::new(),
            m: Vec::new(),
            t: 0,
        }
    }

    fn step(&mut self, opt: &Optimizer, pairs: &mut [(&mut [f64], &[f64])]) {
        if self.v.is_empty() {
            self.v = pairs.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.m = pairs.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        match *opt {
            Optimizer::SgdNesterov { lr, momentum } => {
                for (i, (p, g)) in pairs.iter_mut().enumerate() {
                    let v = &mut self.v[i];
                    for j in 0..p.len() {
                        v[j] = momentum * v[j] + g[j];
                        p[j] -= lr * (g[j] + momentum * v[j]);
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, (p, g)) in pairs.iter_mut().enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Training hyperparameters; the loss is always mean squared error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// In-memory regression dataset: batched inputs plus flat targets.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub inputs: Tensor,
    /// Row-major (sample, output) target values.
    pub targets: Vec<f64>,
    pub target_dim: usize,
}

impl RegressionDataset {
    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }
}

/// Loss history of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training MSE per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Mini-batch training, single-threaded and reproducible under a fixed
/// seed. Aborts with a diagnostic if the loss turns non-finite.
pub fn train(
    net: &mut ConvNet,
    cfg: &TrainConfig,
    data: &RegressionDataset,
) -> Result<TrainReport> {
    cfg.optimizer.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if data.target_dim != net.config.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "target dim {} != network output dim {}",
            data.target_dim,
            net.config.output_dim()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParameter(
            "batch size and epochs must be positive".into(),
        ));
    }
    let n = data.len();
    let sample_len = data.inputs.sample_len();
    let [_, c, h, w] = data.inputs.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = OptimizerState::new();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = Tensor::zeros([chunk.len(), c, h, w]);
            let mut y = Vec::with_capacity(chunk.len() * data.target_dim);
            for (bi, &si) in chunk.iter().enumerate() {
                x.data[bi * sample_len..(bi + 1) * sample_len]
                    .copy_from_slice(data.inputs.sample(si));
                y.extend_from_slice(data.target(si));
            }
            let pred = net.forward_train(&x)?;
            let (loss, grad) = mse_loss(&pred, &y);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            net.backward(grad);
            let mut pairs = net.params_and_grads();
            state.step(&cfg.optimizer, &mut pairs);
            sum += loss;
            batches += 1;
        }
        epoch_loss.push(sum / batches.max(1) as f64);
    }
    Ok(TrainReport { epoch_loss })
}

/// Outcome of a finite-difference gradient verification.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Maximum relative error over all checked parameters, with relative
    /// error `|a - b| / max(|a|, |b|, 1e-6)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters excluded because the `±h` perturbation changed a ReLU
    /// active set or pooling argmax — the loss is not differentiable
    /// there, so a finite difference estimates nothing.
    pub skipped_at_kinks: usize,
}

/// Verify analytic gradients against central finite differences on a
/// given batch. Dropout masks are frozen by reseeding the dropout stream
/// before every evaluation; parameters whose perturbation crosses a
/// ReLU/pooling kink are excluded (and counted).
pub fn finite_difference_check(
    net: &mut ConvNet,
    x: &Tensor,
    targets: &[f64],
    h: f64,
    mask_seed: u64,
) -> Result<GradCheck> {
    net.reseed_dropout(mask_seed);
    let pred = net.forward_train(x)?;
    let base_sig = net.active_set_signature();
    let (_, grad) = mse_loss(&pred, targets);
    net.backward(grad);
    let analytic: Vec<Vec<f64>> = net
        .params_and_grads()
        .iter()
        .map(|(_, g)| g.to_vec())
        .collect();

    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_at_kinks: 0,
    };
    for (bi, buf) in analytic.iter().enumerate() {
        for (j, &a) in buf.iter().enumerate() {
            let orig = net.params_and_grads()[bi].0[j];
            net.params_and_grads()[bi].0[j] = orig + h;
            net.reseed_dropout(mask_seed);
            let lp = mse_loss(&net.forward_train(x)?, targets).0;
            let sig_p = net.active_set_signature();
            net.params_and_grads()[bi].0[j] = orig - h;
            net.reseed_dropout(mask_seed);
            let lm = mse_loss(&net.forward_train(x)?, targets).0;
            let sig_m = net.active_set_signature();
            net.params_and_grads()[bi].0[j] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                out.skipped_at_kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use layers::Mode;
    use rand::Rng;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(shape, data)
    }

    fn tiny_config(pooling: Pooling, conv_reg: ConvReg, fc_reg: FcReg) -> ConvNetConfig {
        ConvNetConfig {
            input: [1, 8, 10],
            blocks: 2,
            layers_per_block: 2,
            base_channels: 2,
            pooling,
            conv_reg,
            fc_layers: 3,
            fc_node_factor: 4,
            fc_reg,
            head: Head::Indirect { outputs: 4 },
        }
    }

    #[test]
    fn config_space_is_enforced() {
        let mut bad = tiny_config(Pooling::Max, ConvReg::None, FcReg::None);
        bad.blocks = 4;
        assert!(ConvNet::new(bad, 0).is_err());
        let mut bad2 = tiny_config(Pooling::Max, ConvReg::None, FcReg::None);
        bad2.fc_layers = 4; // with factor 4: not an allowed pair
        assert!(ConvNet::new(bad2, 0).is_err());
        assert!(ConvNet::new(tiny_config(Pooling::Max, ConvReg::None, FcReg::None), 0).is_ok());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net =
            ConvNet::new(tiny_config(Pooling::Max, ConvReg::None, FcReg::None), 1).unwrap();
        for (p, _) in net.params_and_grads() {
            p.fill(0.0);
        }
        let x = random_tensor([2, 1, 8, 10], 5);
        let y = net.forward(&x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_positive_homogeneity_in_hidden_layer() {
        // One hidden dense layer with zero biases: scaling its weights by
        // c > 0 scales the (pre-activation) output by exactly c.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut l1 = Dense::new(6, 5, &mut rng);
        let mut l2 = Dense::new(5, 3, &mut rng);
        l1.b.fill(0.0);
        l2.b.fill(0.0);
        let x = random_tensor([4, 6, 1, 1], 9);
        let mut relu = Relu::default();
        let run = |l1: &mut Dense, l2: &mut Dense, relu: &mut Relu, x: &Tensor| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let t = l1.forward(x.clone(), Mode::Eval, &mut r);
            let t = relu.forward(t, Mode::Eval, &mut r);
            l2.forward(t, Mode::Eval, &mut r)
        };
        let base = run(&mut l1, &mut l2, &mut relu, &x);
        let c = 2.5;
        for w in &mut l1.w {
            *w *= c;
        }
        let scaled = run(&mut l1, &mut l2, &mut relu, &x);
        for (s, b) in scaled.data.iter().zip(&base.data) {
            assert_relative_eq!(*s, c * b, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    /// Direct nested-loop reference forward for the regularization-free
    /// simplified architecture (independent of the im2col path).
    fn naive_forward(net: &mut ConvNet, x: &Tensor) -> Vec<f64> {
        let cfg = net.config;
        assert_eq!(cfg.conv_reg, ConvReg::None);
        assert_eq!(cfg.fc_reg, FcReg::None);
        assert_eq!(cfg.pooling, Pooling::Max);
        let params = net.param_buffers();
        let mut pi = 0;
        let mut next = || {
            pi += 1;
            params[pi - 1].clone()
        };

        let [mut c, mut h, mut w] = cfg.input;
        assert_eq!(x.shape, [1, c, h, w]);
        let mut act = x.data.clone();
        for b in 0..cfg.blocks {
            let out_c = cfg.base_channels << b;
            for _ in 0..cfg.layers_per_block {
                let wgt = next();
                let bias = next();
                let mut out = vec![0.0; out_c * h * w];
                for co in 0..out_c {
                    for oy in 0..h {
                        for ox in 0..w {
                            let mut acc = bias[co];
                            for ci in 0..c {
                                for ky in 0..3usize {
                                    for kx in 0..3usize {
                                        let iy = oy as i64 + ky as i64 - 1;
                                        let ix = ox as i64 + kx as i64 - 1;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                            continue;
                                        }
                                        acc += wgt[(co * c + ci) * 9 + ky * 3 + kx]
                                            * act[(ci * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            out[(co * h + oy) * w + ox] = acc;
                        }
                    }
                }
                act = out.iter().map(|&v| v.max(0.0)).collect();
                c = out_c;
            }
            // Max pool 2x2.
            let (oh, ow) = (h / 2, w / 2);
            let mut out = vec![0.0; c * oh * ow];
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                best =
                                    best.max(act[(ci * h + 2 * oy + dy) * w + 2 * ox + dx]);
                            }
                        }
                        out[(ci * oh + oy) * ow + ox] = best;
                    }
                }
            }
            act = out;
            (h, w) = (oh, ow);
        }
        let mut features = c * h * w;
        let out_dim = cfg.output_dim();
        for fi in 0..cfg.fc_layers {
            let last = fi == cfg.fc_layers - 1;
            let nf = if last {
                out_dim
            } else {
                (features / cfg.fc_node_factor).max(out_dim).max(2)
            };
            let wgt = next();
            let bias = next();
            let mut out = vec![0.0; nf];
            for (o, ov) in out.iter_mut().enumerate() {
                let mut acc = bias[o];
                for (i, &av) in act.iter().enumerate() {
                    acc += wgt[o * features + i] * av;
                }
                *ov = if last { acc } else { acc.max(0.0) };
            }
            act = out;
            features = nf;
        }
        assert_eq!(pi, params.len(), "reference consumed all weights");
        act
    }

    #[test]
    fn forward_matches_direct_convolution_reference_on_patch_input() {
        let cfg = ConvNetConfig::simplified([1, 48, 92], 2, Head::Indirect { outputs: 12 });
        let mut net = ConvNet::new(cfg, 7).unwrap();
        let x = random_tensor([1, 1, 48, 92], 13);
        let fast = net.forward(&x).unwrap();
        let slow = naive_forward(&mut net, &x);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.data.iter().zip(&slow) {
            assert!(
                (a - b).abs() / a.abs().max(b.abs()).max(1e-9) < 1e-5,
                "im2col {a} vs direct {b}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_layer_type() {
        // Four configs jointly cover conv (stride 1 and 2), max and
        // average pooling, batch norm per block/layer and on FC, dropout
        // on conv and FC paths, dense and flatten.
        let cases = [
            tiny_config(Pooling::Max, ConvReg::None, FcReg::None),
            tiny_config(Pooling::Average, ConvReg::Dropout20, FcReg::Dropout20),
            tiny_config(
                Pooling::StridedLast,
                ConvReg::BatchNormPerLayer,
                FcReg::BatchNormDropout10,
            ),
            tiny_config(Pooling::Max, ConvReg::BatchNormPerBlock, FcReg::BatchNorm),
        ];
        for (i, cfg) in cases.into_iter().enumerate() {
            let mut net = ConvNet::new(cfg, 100 + i as u64).unwrap();
            let x = random_tensor([3, 1, 8, 10], 200 + i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
            let targets: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let check =
                finite_difference_check(&mut net, &x, &targets, 1e-4, 400 + i as u64).unwrap();
            assert!(
                check.max_rel_error < 1e-4,
                "config {i} ({:?} {:?} {:?}): max rel grad error {} over {} params",
                cfg.pooling,
                cfg.conv_reg,
                cfg.fc_reg,
                check.max_rel_error,
                check.checked
            );
            assert!(
                check.skipped_at_kinks * 10 < check.checked,
                "config {i}: too many kink exclusions ({}/{})",
                check.skipped_at_kinks,
                check.checked
            );
        }
    }

    #[test]
    fn zero_loss_batch_gives_zero_gradients() {
        let mut net =
            ConvNet::new(tiny_config(Pooling::Max, ConvReg::None, FcReg::None), 3).unwrap();
        let x = random_tensor([2, 1, 8, 10], 31);
        let pred = net.forward_train(&x).unwrap();
        let (loss, grad) = mse_loss(&pred, &pred.data);
        assert_eq!(loss, 0.0);
        net.backward(grad);
        for (_, g) in net.params_and_grads() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let mut net =
            ConvNet::new(tiny_config(Pooling::Max, ConvReg::None, FcReg::None), 4).unwrap();
        let xa = random_tensor([1, 1, 8, 10], 41);
        let xb = random_tensor([1, 1, 8, 10], 42);
        let (ta, tb) = (vec![0.3, -0.2, 0.9, 0.0], vec![-0.5, 0.1, 0.2, 0.7]);

        let grads_for = |net: &mut ConvNet, x: &Tensor, t: &[f64]| -> Vec<Vec<f64>> {
            let pred = net.forward_train(x).unwrap();
            let (_, g) = mse_loss(&pred, t);
            net.backward(g);
            net.params_and_grads()
                .iter()
                .map(|(_, g)| g.to_vec())
                .collect()
        };
        let ga = grads_for(&mut net, &xa, &ta);
        let gb = grads_for(&mut net, &xb, &tb);

        let mut xab = Tensor::zeros([2, 1, 8, 10]);
        xab.data[..80].copy_from_slice(&xa.data);
        xab.data[80..].copy_from_slice(&xb.data);
        let tab: Vec<f64> = ta.iter().chain(&tb).copied().collect();
        let gab = grads_for(&mut net, &xab, &tab);

        for (bi, buf) in gab.iter().enumerate() {
            for (j, &g) in buf.iter().enumerate() {
                let want = 0.5 * (ga[bi][j] + gb[bi][j]);
                assert_relative_eq!(g, want, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> RegressionDataset {
        // Learnable mapping: target = (mean pixel, max-region indicator,
        // two fixed linear probes). Easy for a tiny net to fit.
        let inputs = random_tensor([n, 1, 8, 10], seed);
        let mut targets = Vec::with_capacity(n * 4);
        for s in 0..n {
            let px = inputs.sample(s);
            let mean = px.iter().sum::<f64>() / px.len() as f64;
            let left: f64 = px[..40].iter().sum::<f64>() / 40.0;
            let right: f64 = px[40..].iter().sum::<f64>() / 40.0;
            targets.extend_from_slice(&[mean, left, right, left - right]);
        }
        RegressionDataset {
            inputs,
            targets,
            target_dim: 4,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = tiny_config(Pooling::Max, ConvReg::None, FcReg::None);
        let mut net = ConvNet::new(cfg, 5).unwrap();
        let before = net.param_buffers();
        let data = toy_dataset(8, 51);
        train(
            &mut net,
            &TrainConfig {
                optimizer: Optimizer::SgdNesterov { lr: 0.0, momentum: 0.9 },
                batch_size: 4,
                epochs: 3,
                seed: 1,
            },
            &data,
        )
        .unwrap();
        assert_eq!(before, net.param_buffers());
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let cfg = tiny_config(Pooling::Max, ConvReg::None, FcReg::None);
        let data = toy_dataset(16, 61);
        let tc = TrainConfig {
            optimizer: Optimizer::adam(3e-3),
            batch_size: 8,
            epochs: 40,
            seed: 9,
        };
        let mut net1 = ConvNet::new(cfg, 6).unwrap();
        let report1 = train(&mut net1, &tc, &data).unwrap();
        let mut net2 = ConvNet::new(cfg, 6).unwrap();
        let report2 = train(&mut net2, &tc, &data).unwrap();
        assert_eq!(net1.param_buffers(), net2.param_buffers());
        assert_eq!(report1.epoch_loss, report2.epoch_loss);
        let (first, last) = (report1.epoch_loss[0], *report1.epoch_loss.last().unwrap());
        assert!(
            last < first / 10.0,
            "loss should drop 10x: {first} -> {last}"
        );
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = tiny_config(Pooling::Max, ConvReg::None, FcReg::None);
        let mut net = ConvNet::new(cfg, 8).unwrap();
        let data = toy_dataset(8, 71);
        let err = train(
            &mut net,
            &TrainConfig {
                optimizer: Optimizer::SgdNesterov { lr: 1e9, momentum: 0.9 },
                batch_size: 4,
                epochs: 50,
                seed: 2,
            },
            &data,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "got {err:?}");
    }

    #[test]
    fn batch_norm_standardizes_training_batches() {
        let mut bn = BatchNorm::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor([16, 3, 4, 4], 81);
        let y = bn.forward(x, Mode::Train, &mut rng);
        for c in 0..3 {
            let mut vals = Vec::new();
            for s in 0..16 {
                for i in 0..16 {
                    vals.push(y.at(s, c, i / 4, i % 4));
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "channel {c} mean {m}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn dropout_train_scales_and_eval_is_identity() {
        let mut d = Dropout::new(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_vec([1, 1, 100, 100], vec![1.0; 10_000]);
        let y = d.forward(x.clone(), Mode::Train, &mut rng);
        let zeros = y.data.iter().filter(|&&v| v == 0.0).count();
        let kept = y.data.iter().filter(|&&v| v != 0.0).count();
        assert!(
            (zeros as f64 / 10_000.0 - 0.5).abs() < 0.03,
            "zeroed fraction {zeros}"
        );
        assert!(y.data.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
        assert!(kept > 0);
        let ye = d.forward(x.clone(), Mode::Eval, &mut rng);
        assert_eq!(ye.data, x.data);
    }

    #[test]
    fn strided_last_downsamples_like_pooling() {
        let cfg = tiny_config(Pooling::StridedLast, ConvReg::None, FcReg::None);
        let mut net = ConvNet::new(cfg, 11).unwrap();
        let x = random_tensor([1, 1, 8, 10], 90);
        // 8x10 -> stride-2 conv -> 4x5 -> stride-2 conv -> 2x3.
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape, [1, 4, 1, 1]);
        assert!(net.layer_names().iter().all(|&n| n != "maxpool2x2"));
    }
}
