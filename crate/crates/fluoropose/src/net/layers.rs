//! The layer zoo: 3x3 convolution (im2col), ReLU, 2x2 pooling,
//! batch normalization, dropout, flatten and dense, each with a manual
//! backward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Tensor};

/// Forward-pass mode: training enables dropout and batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One differentiable stage of the network.
///
/// `backward` consumes the gradient w.r.t. the last `forward` output and
/// returns the gradient w.r.t. its input, storing parameter gradients
/// internally (overwritten per call).
pub trait Layer {
    fn forward(&mut self, x: Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor;
    fn backward(&mut self, grad: Tensor) -> Tensor;
    /// Mutable parameter buffers paired with their gradients.
    fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        Vec::new()
    }
    /// Every buffer that must survive a save/load round trip: the
    /// trainable parameters plus any inference-time statistics.
    fn state_buffers(&mut self) -> Vec<&mut Vec<f64>> {
        Vec::new()
    }
    /// Hash the discrete decisions of the last forward pass (ReLU active
    /// set, pooling argmax). Finite-difference gradient checks are valid
    /// only while these stay constant under the perturbation.
    fn hash_active_set(&self, _hasher: &mut std::collections::hash_map::DefaultHasher) {}
    fn name(&self) -> &'static str;
}

/// 3x3 convolution, padding 1, stride 1 or 2, lowered onto im2col.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Weights, (out_channels) x (in_channels * 9), row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
    cached_input: Option<Tensor>,
}

const K: usize = 3;
const PAD: i64 = 1;

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
        let fan_in = in_channels * K * K;
        let init = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let w = (0..out_channels * fan_in)
            .map(|_| init.sample(rng))
            .collect();
        Self {
            in_channels,
            out_channels,
            stride,
            w,
            b: vec![0.0; out_channels],
            dw: vec![0.0; out_channels * fan_in],
            db: vec![0.0; out_channels],
            cached_input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * PAD as usize - K) / self.stride + 1,
            (w + 2 * PAD as usize - K) / self.stride + 1,
        )
    }

    /// Unfold one padded sample into a (in_c*9) x (out_h*out_w) matrix.
    fn im2col(&self, x: &Tensor, n: usize, cols: &mut [f64]) {
        let [_, c, h, w] = x.shape;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        cols.fill(0.0);
        for ci in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (ci * K + ky) * K + kx;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as i64 + ky as i64 - PAD;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as i64 + kx as i64 - PAD;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            dst[oy * ow + ox] = x.at(n, ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix gradient back onto one input sample.
    fn col2im_acc(&self, cols: &[f64], dx: &mut Tensor, n: usize) {
        let [_, c, h, w] = dx.shape;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        for ci in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (ci * K + ky) * K + kx;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as i64 + ky as i64 - PAD;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as i64 + kx as i64 - PAD;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            *dx.at_mut(n, ci, iy as usize, ix as usize) += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Tensor, _mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let k9 = self.in_channels * K * K;
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        let mut cols = vec![0.0; k9 * ohw];
        for s in 0..n {
            self.im2col(&x, s, &mut cols);
            let dst =
                &mut out.data[s * self.out_channels * ohw..(s + 1) * self.out_channels * ohw];
            for (co, chunk) in dst.chunks_mut(ohw).enumerate() {
                chunk.fill(self.b[co]);
            }
            matmul_acc(&self.w, &cols, self.out_channels, k9, ohw, dst);
        }
        self.cached_input = Some(x);
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.cached_input.take().expect("backward before forward");
        let [n, _, h, w] = x.shape;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let k9 = self.in_channels * K * K;
        self.dw.fill(0.0);
        self.db.fill(0.0);
        let mut dx = Tensor::zeros(x.shape);
        let mut cols = vec![0.0; k9 * ohw];
        let mut dcols = vec![0.0; k9 * ohw];
        for s in 0..n {
            let g = &grad.data[s * self.out_channels * ohw..(s + 1) * self.out_channels * ohw];
            for (co, chunk) in g.chunks(ohw).enumerate() {
                self.db[co] += chunk.iter().sum::<f64>();
            }
            self.im2col(&x, s, &mut cols);
            // dW += g * cols^T; dcols = W^T * g.
            matmul_a_bt_acc(g, &cols, self.out_channels, ohw, k9, &mut self.dw);
            dcols.fill(0.0);
            matmul_at_b_acc(&self.w, g, self.out_channels, k9, ohw, &mut dcols);
            self.col2im_acc(&dcols, &mut dx, s);
        }
        self.cached_input = Some(x);
        dx
    }

    fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        vec![(&mut self.w, &self.dw), (&mut self.b, &self.db)]
    }

    fn state_buffers(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.w, &mut self.b]
    }

    fn name(&self) -> &'static str {
        "conv3x3"
    }
}

/// Elementwise max(0, x).
#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Layer for Relu {
    fn forward(&mut self, mut x: Tensor, _mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        for v in &mut x.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        x
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        for (g, &keep) in grad.data.iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
        grad
    }

    fn hash_active_set(&self, hasher: &mut std::collections::hash_map::DefaultHasher) {
        use std::hash::Hash;
        self.mask.hash(hasher);
    }

    fn name(&self) -> &'static str {
        "relu"
    }
}

/// 2x2 window pooling with stride 2 (floor semantics on odd sizes).
pub struct Pool2x2 {
    pub average: bool,
    in_shape: [usize; 4],
    argmax: Vec<usize>,
}

impl Pool2x2 {
    pub fn new(average: bool) -> Self {
        Self {
            average,
            in_shape: [0; 4],
            argmax: Vec::new(),
        }
    }
}

impl Layer for Pool2x2 {
    fn forward(&mut self, x: Tensor, _mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        let [n, c, h, w] = x.shape;
        let (oh, ow) = (h / 2, w / 2);
        assert!(oh > 0 && ow > 0, "input too small to pool");
        self.in_shape = x.shape;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        if self.average {
            for s in 0..n {
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let sum = x.at(s, ci, 2 * oy, 2 * ox)
                                + x.at(s, ci, 2 * oy, 2 * ox + 1)
                                + x.at(s, ci, 2 * oy + 1, 2 * ox)
                                + x.at(s, ci, 2 * oy + 1, 2 * ox + 1);
                            *out.at_mut(s, ci, oy, ox) = sum / 4.0;
                        }
                    }
                }
            }
        } else {
            self.argmax = vec![0; out.len()];
            let mut oi = 0;
            for s in 0..n {
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_at = 0;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                                    let v = x.at(s, ci, iy, ix);
                                    if v > best {
                                        best = v;
                                        best_at = ((s * c + ci) * h + iy) * w + ix;
                                    }
                                }
                            }
                            *out.at_mut(s, ci, oy, ox) = best;
                            self.argmax[oi] = best_at;
                            oi += 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut dx = Tensor::zeros(self.in_shape);
        if self.average {
            let [n, c, _, _] = self.in_shape;
            let [_, _, oh, ow] = grad.shape;
            for s in 0..n {
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = grad.at(s, ci, oy, ox) / 4.0;
                            for dy in 0..2 {
                                for dx_ in 0..2 {
                                    *dx.at_mut(s, ci, 2 * oy + dy, 2 * ox + dx_) += g;
                                }
                            }
                        }
                    }
                }
            }
        } else {
            for (g, &at) in grad.data.iter().zip(&self.argmax) {
                dx.data[at] += g;
            }
        }
        dx
    }

    fn hash_active_set(&self, hasher: &mut std::collections::hash_map::DefaultHasher) {
        use std::hash::Hash;
        if !self.average {
            self.argmax.hash(hasher);
        }
    }

    fn name(&self) -> &'static str {
        if self.average {
            "avgpool2x2"
        } else {
            "maxpool2x2"
        }
    }
}

/// Per-channel batch normalization (channels = features for dense input).
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    dgamma: Vec<f64>,
    dbeta: Vec<f64>,
    cached_xhat: Option<Tensor>,
    cached_inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
            dgamma: vec![0.0; channels],
            dbeta: vec![0.0; channels],
            cached_xhat: None,
            cached_inv_std: vec![0.0; channels],
        }
    }

    fn for_each_channel(shape: [usize; 4], c: usize, mut f: impl FnMut(usize)) {
        let [n, cs, h, w] = shape;
        debug_assert!(c < cs);
        for s in 0..n {
            let base = (s * cs + c) * h * w;
            for i in 0..h * w {
                f(base + i);
            }
        }
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, mut x: Tensor, mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.channels, "batch-norm channel mismatch");
        let m = (n * h * w) as f64;
        match mode {
            Mode::Train => {
                let mut xhat = Tensor::zeros(x.shape);
                for ci in 0..c {
                    let mut mean = 0.0;
                    Self::for_each_channel(x.shape, ci, |i| mean += x.data[i]);
                    mean /= m;
                    let mut var = 0.0;
                    Self::for_each_channel(x.shape, ci, |i| {
                        let d = x.data[i] - mean;
                        var += d * d;
                    });
                    var /= m;
                    let inv_std = 1.0 / (var + self.eps).sqrt();
                    self.cached_inv_std[ci] = inv_std;
                    self.running_mean[ci] =
                        self.momentum * self.running_mean[ci] + (1.0 - self.momentum) * mean;
                    self.running_var[ci] =
                        self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var;
                    let (g, b) = (self.gamma[ci], self.beta[ci]);
                    Self::for_each_channel(x.shape, ci, |i| {
                        let xh = (x.data[i] - mean) * inv_std;
                        xhat.data[i] = xh;
                        x.data[i] = g * xh + b;
                    });
                }
                self.cached_xhat = Some(xhat);
                x
            }
            Mode::Eval => {
                for ci in 0..c {
                    let inv_std = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                    let (mean, g, b) = (self.running_mean[ci], self.gamma[ci], self.beta[ci]);
                    Self::for_each_channel(x.shape, ci, |i| {
                        x.data[i] = g * (x.data[i] - mean) * inv_std + b;
                    });
                }
                x
            }
        }
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let xhat = self.cached_xhat.take().expect("backward before forward");
        let [n, c, h, w] = grad.shape;
        let m = (n * h * w) as f64;
        let mut dx = Tensor::zeros(grad.shape);
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            Self::for_each_channel(grad.shape, ci, |i| {
                sum_dy += grad.data[i];
                sum_dy_xhat += grad.data[i] * xhat.data[i];
            });
            self.dbeta[ci] = sum_dy;
            self.dgamma[ci] = sum_dy_xhat;
            let scale = self.gamma[ci] * self.cached_inv_std[ci] / m;
            Self::for_each_channel(grad.shape, ci, |i| {
                dx.data[i] =
                    scale * (m * grad.data[i] - sum_dy - xhat.data[i] * sum_dy_xhat);
            });
        }
        self.cached_xhat = Some(xhat);
        dx
    }

    fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        vec![
            (&mut self.gamma, &self.dgamma),
            (&mut self.beta, &self.dbeta),
        ]
    }

    fn state_buffers(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }

    fn name(&self) -> &'static str {
        "batch-norm"
    }
}

/// Inverted dropout: active in training mode only.
pub struct Dropout {
    pub p: f64,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Self { p, mask: Vec::new() }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, mut x: Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor {
        match mode {
            Mode::Eval => {
                self.mask.clear();
                x
            }
            Mode::Train => {
                let keep = 1.0 / (1.0 - self.p);
                self.mask = x
                    .data
                    .iter()
                    .map(|_| {
                        if rng.random_range(0.0..1.0) < self.p {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                for (v, &m) in x.data.iter_mut().zip(&self.mask) {
                    *v *= m;
                }
                x
            }
        }
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        if !self.mask.is_empty() {
            for (g, &m) in grad.data.iter_mut().zip(&self.mask) {
                *g *= m;
            }
        }
        grad
    }

    fn name(&self) -> &'static str {
        "dropout"
    }
}

/// Reshape (n, c, h, w) -> (n, c*h*w, 1, 1).
#[derive(Default)]
pub struct Flatten {
    in_shape: [usize; 4],
}

impl Layer for Flatten {
    fn forward(&mut self, x: Tensor, _mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        self.in_shape = x.shape;
        x.flattened()
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        grad.shape = self.in_shape;
        grad
    }

    fn name(&self) -> &'static str {
        "flatten"
    }
}

/// Fully connected layer on (n, features, 1, 1) tensors.
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// Weights, (out_features) x (in_features), row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let init = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).unwrap();
        let w = (0..out_features * in_features)
            .map(|_| init.sample(rng))
            .collect();
        Self {
            in_features,
            out_features,
            w,
            b: vec![0.0; out_features],
            dw: vec![0.0; out_features * in_features],
            db: vec![0.0; out_features],
            cached_input: None,
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: Tensor, _mode: Mode, _rng: &mut ChaCha8Rng) -> Tensor {
        let n = x.batch();
        assert_eq!(x.sample_len(), self.in_features, "dense input mismatch");
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        for s in 0..n {
            out.data[s * self.out_features..(s + 1) * self.out_features]
                .copy_from_slice(&self.b);
        }
        matmul_a_bt_acc(
            &x.data,
            &self.w,
            n,
            self.in_features,
            self.out_features,
            &mut out.data,
        );
        self.cached_input = Some(x);
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.cached_input.take().expect("backward before forward");
        let n = grad.batch();
        self.dw.fill(0.0);
        self.db.fill(0.0);
        for s in 0..n {
            for (db, g) in self.db.iter_mut().zip(
                grad.data[s * self.out_features..(s + 1) * self.out_features].iter(),
            ) {
                *db += g;
            }
        }
        // dW = grad^T * x; dX = grad * W.
        matmul_at_b_acc(
            &grad.data,
            &x.data,
            n,
            self.out_features,
            self.in_features,
            &mut self.dw,
        );
        let mut dx = Tensor::zeros(x.shape);
        matmul_acc(
            &grad.data,
            &self.w,
            n,
            self.out_features,
            self.in_features,
            &mut dx.data,
        );
        self.cached_input = Some(x);
        dx
    }

    fn params_and_grads(&mut self) -> Vec<(&mut [f64], &[f64])> {
        vec![(&mut self.w, &self.dw), (&mut self.b, &self.db)]
    }

    fn state_buffers(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.w, &mut self.b]
    }

    fn name(&self) -> &'static str {
        "dense"
    }
}
