//! Minimal explicit-backward neural-network kernels on `ndarray`.
//!
//! Everything the nets need and nothing more: 2-D convolution via
//! im2col + GEMM, batch normalization, ReLU, 2x2 max pooling, nearest
//! upsampling, global average pooling, a linear head, and AdamW with
//! decoupled weight decay and per-group learning rates. Backward passes
//! are hand-derived, which keeps training deterministic and lets
//! Grad-CAM capture intermediate gradients without a framework.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Activations are NCHW.
pub type Tensor = Array4<f32>;

/// One learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    /// Discriminative-LR group (0 = earliest layers, G-1 = head).
    pub group: usize,
    /// Weight decay applies to conv/linear weights, not biases or norms.
    pub decay: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>, decay: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            group: 0,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// He-normal initialization for a weight of the given shape and fan-in.
fn he_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        // Box-Muller on two uniform draws keeps the stream dependency-free
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std) as f32
    })
}

fn shape_err(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Error {
    Error::Shape {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution, square kernel, symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f32>,
    in_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            he_init(&[out_c, fan_in], fan_in, rng),
            true,
        );
        let bias = Param::new(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_c])), false);
        Self {
            weight,
            bias,
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Tensor) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut cols = Array2::<f32>::zeros((c * k * k, n * oh * ow));
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let col = (ni * oh + ohi) * ow + owi;
                    let r0 = (ohi * self.stride) as isize - self.pad as isize;
                    let c0 = (owi * self.stride) as isize - self.pad as isize;
                    for ci in 0..c {
                        for kr in 0..k {
                            let rr = r0 + kr as isize;
                            if rr < 0 || rr as usize >= h {
                                continue;
                            }
                            for kc in 0..k {
                                let cc = c0 + kc as isize;
                                if cc < 0 || cc as usize >= w {
                                    continue;
                                }
                                let row = (ci * k + kr) * k + kc;
                                cols[[row, col]] = x[[ni, ci, rr as usize, cc as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &Array2<f32>, dim: (usize, usize, usize, usize)) -> Tensor {
        let (n, c, h, w) = dim;
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut gx = Tensor::zeros(dim);
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let col = (ni * oh + ohi) * ow + owi;
                    let r0 = (ohi * self.stride) as isize - self.pad as isize;
                    let c0 = (owi * self.stride) as isize - self.pad as isize;
                    for ci in 0..c {
                        for kr in 0..k {
                            let rr = r0 + kr as isize;
                            if rr < 0 || rr as usize >= h {
                                continue;
                            }
                            for kc in 0..k {
                                let cc = c0 + kc as isize;
                                if cc < 0 || cc as usize >= w {
                                    continue;
                                }
                                let row = (ci * k + kr) * k + kc;
                                gx[[ni, ci, rr as usize, cc as usize]] += gcols[[row, col]];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dim();
        if c != self.in_c {
            return Err(shape_err(self.in_c, c));
        }
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(shape_err(format!(">= {0}x{0} input", self.kernel), (h, w)));
        }
        let (oh, ow) = self.out_size(h, w);
        let cols = self.im2col(x);
        let wmat = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("conv weight is 2-D");
        let mut out_mat = wmat.dot(&cols); // (out_c, n*oh*ow)
        let bias = &self.bias.value;
        for (oc, mut row) in out_mat.axis_iter_mut(Axis(0)).enumerate() {
            row += bias[[oc]];
        }
        let mut out = Tensor::zeros((n, self.out_c, oh, ow));
        for ni in 0..n {
            for oc in 0..self.out_c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        out[[ni, oc, ohi, owi]] = out_mat[[oc, (ni * oh + ohi) * ow + owi]];
                    }
                }
            }
        }
        if train {
            self.cache = Some(ConvCache {
                cols,
                in_dim: (n, c, h, w),
            });
        } else {
            self.cache = None;
        }
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("forward(train) before backward");
        let (n, _, oh, ow) = gout.dim();
        let mut gout_mat = Array2::<f32>::zeros((self.out_c, n * oh * ow));
        for ni in 0..n {
            for oc in 0..self.out_c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        gout_mat[[oc, (ni * oh + ohi) * ow + owi]] = gout[[ni, oc, ohi, owi]];
                    }
                }
            }
        }
        let gw = gout_mat.dot(&cache.cols.t());
        self.weight.grad.scaled_add(1.0, &gw.into_dyn());
        let gb = gout_mat.sum_axis(Axis(1));
        self.bias.grad.scaled_add(1.0, &gb.into_dyn());

        let wmat = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("conv weight is 2-D");
        let gcols = wmat.t().dot(&gout_mat);
        self.col2im(&gcols, cache.in_dim)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
    channels: usize,
    cache: Option<BnCache>,
}

/// Forward mode for batch normalization: `Train` uses batch statistics
/// and updates running stats, `Eval` uses running stats without caching,
/// `Capture` uses running stats but caches enough to backpropagate the
/// (linear) eval-mode map — the mode Grad-CAM needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
    Capture,
}

#[derive(Debug, Clone)]
enum BnCache {
    Train { xhat: Tensor, inv_std: Array1<f32> },
    Capture { inv_std: Array1<f32> },
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::from_elem(IxDyn(&[channels]), 1.0),
                false,
            ),
            beta: Param::new(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[channels])), false),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let (n, c, h, w) = x.dim();
        if c != self.channels {
            return Err(shape_err(self.channels, c));
        }
        let m = (n * h * w) as f32;
        let mut out = Tensor::zeros(x.raw_dim());
        if mode == BnMode::Train {
            let mut xhat = Tensor::zeros(x.raw_dim());
            let mut inv_std = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let slice = x.index_axis(Axis(1), ci);
                let mean = slice.sum() / m;
                let var = slice.mapv(|v| (v - mean).powi(2)).sum() / m;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ci] = istd;
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var;
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                for ni in 0..n {
                    for hi in 0..h {
                        for wi in 0..w {
                            let xh = (x[[ni, ci, hi, wi]] - mean) * istd;
                            xhat[[ni, ci, hi, wi]] = xh;
                            out[[ni, ci, hi, wi]] = g * xh + b;
                        }
                    }
                }
            }
            self.cache = Some(BnCache::Train { xhat, inv_std });
        } else {
            let mut inv_std = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let mean = self.running_mean[ci];
                let istd = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                inv_std[ci] = istd;
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                for ni in 0..n {
                    for hi in 0..h {
                        for wi in 0..w {
                            out[[ni, ci, hi, wi]] = g * (x[[ni, ci, hi, wi]] - mean) * istd + b;
                        }
                    }
                }
            }
            self.cache = match mode {
                BnMode::Capture => Some(BnCache::Capture { inv_std }),
                _ => None,
            };
        }
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let (n, c, h, w) = gout.dim();
        match self.cache.as_ref().expect("forward(train|capture) before backward") {
            BnCache::Train { xhat, inv_std } => {
                let m = (n * h * w) as f32;
                let mut gx = Tensor::zeros(gout.raw_dim());
                for ci in 0..c {
                    let g = self.gamma.value[[ci]];
                    let istd = inv_std[ci];
                    let mut sum_dy = 0.0f32;
                    let mut sum_dy_xhat = 0.0f32;
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                let dy = gout[[ni, ci, hi, wi]];
                                sum_dy += dy;
                                sum_dy_xhat += dy * xhat[[ni, ci, hi, wi]];
                            }
                        }
                    }
                    self.beta.grad[[ci]] += sum_dy;
                    self.gamma.grad[[ci]] += sum_dy_xhat;
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                let dy = gout[[ni, ci, hi, wi]];
                                let xh = xhat[[ni, ci, hi, wi]];
                                gx[[ni, ci, hi, wi]] =
                                    g * istd / m * (m * dy - sum_dy - xh * sum_dy_xhat);
                            }
                        }
                    }
                }
                gx
            }
            // eval-statistics map is affine per channel: dx = dy * gamma * istd
            BnCache::Capture { inv_std } => {
                let mut gx = Tensor::zeros(gout.raw_dim());
                for ci in 0..c {
                    let scale = self.gamma.value[[ci]] * inv_std[ci];
                    for ni in 0..n {
                        for hi in 0..h {
                            for wi in 0..w {
                                gx[[ni, ci, hi, wi]] = gout[[ni, ci, hi, wi]] * scale;
                            }
                        }
                    }
                }
                gx
            }
        }
    }

    /// Non-learnable state that checkpoints must carry.
    pub fn state_tensors(&self, name: &str) -> Vec<(String, ArrayD<f32>)> {
        vec![
            (
                format!("{name}.running_mean"),
                self.running_mean.clone().into_dyn(),
            ),
            (
                format!("{name}.running_var"),
                self.running_var.clone().into_dyn(),
            ),
        ]
    }

    pub fn load_state(&mut self, name: &str, map: &HashMap<String, ArrayD<f32>>) -> Result<()> {
        let fetch = |key: String| -> Result<Array1<f32>> {
            map.get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| Error::Checkpoint(format!("tensor {key} has wrong rank")))
        };
        self.running_mean = fetch(format!("{name}.running_mean"))?;
        self.running_var = fetch(format!("{name}.running_var"))?;
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------
// Elementwise / pooling / upsampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Tensor>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let out = x.mapv(|v| v.max(0.0));
        self.mask = train.then(|| x.mapv(|v| f32::from(v > 0.0)));
        out
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        gout * self.mask.as_ref().expect("forward(train) before backward")
    }
}

/// 2x2 max pooling, stride 2; requires even spatial dims.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<Array4<u8>>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("even spatial dims", (h, w)));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros((n, c, oh, ow));
        let mut argmax = Array4::<u8>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut idx = 0u8;
                        for k in 0..4u8 {
                            let v = x[[
                                ni,
                                ci,
                                2 * ohi + (k / 2) as usize,
                                2 * owi + (k % 2) as usize,
                            ]];
                            if v > best {
                                best = v;
                                idx = k;
                            }
                        }
                        out[[ni, ci, ohi, owi]] = best;
                        argmax[[ni, ci, ohi, owi]] = idx;
                    }
                }
            }
        }
        if train {
            self.argmax = Some(argmax);
            self.in_dim = (n, c, h, w);
        } else {
            self.argmax = None;
        }
        Ok(out)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let argmax = self.argmax.as_ref().expect("forward(train) before backward");
        let mut gx = Tensor::zeros(self.in_dim);
        let (n, c, oh, ow) = gout.dim();
        for ni in 0..n {
            for ci in 0..c {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let k = argmax[[ni, ci, ohi, owi]];
                        gx[[
                            ni,
                            ci,
                            2 * ohi + (k / 2) as usize,
                            2 * owi + (k % 2) as usize,
                        ]] += gout[[ni, ci, ohi, owi]];
                    }
                }
            }
        }
        gx
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dim();
    Tensor::from_shape_fn((n, c, 2 * h, 2 * w), |(ni, ci, hi, wi)| {
        x[[ni, ci, hi / 2, wi / 2]]
    })
}

/// Backward of nearest 2x upsampling: sum each 2x2 block.
pub fn upsample2_backward(gout: &Tensor) -> Tensor {
    let (n, c, h2, w2) = gout.dim();
    let mut gx = Tensor::zeros((n, c, h2 / 2, w2 / 2));
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h2 {
                for wi in 0..w2 {
                    gx[[ni, ci, hi / 2, wi / 2]] += gout[[ni, ci, hi, wi]];
                }
            }
        }
    }
    gx
}

/// Concatenate along the channel axis (U-Net skip connections).
pub fn cat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, ca, ha, wa) = a.dim();
    let (nb, cb, hb, wb) = b.dim();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(shape_err((na, ha, wa), (nb, hb, wb)));
    }
    let mut out = Tensor::zeros((na, ca + cb, ha, wa));
    out.slice_mut(ndarray::s![.., ..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![.., ca.., .., ..]).assign(b);
    Ok(out)
}

/// Split a channel-concatenated gradient back into its two halves.
pub fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    (
        g.slice(ndarray::s![.., ..ca, .., ..]).to_owned(),
        g.slice(ndarray::s![.., ca.., .., ..]).to_owned(),
    )
}

/// Global average pooling (N,C,H,W) -> (N,C).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_dim: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Tensor) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        self.in_dim = (n, c, h, w);
        let m = (h * w) as f32;
        Array2::from_shape_fn((n, c), |(ni, ci)| {
            x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum() / m
        })
    }

    pub fn backward(&self, gout: &Array2<f32>) -> Tensor {
        let (n, c, h, w) = self.in_dim;
        let m = (h * w) as f32;
        Tensor::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| gout[[ni, ci]] / m)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (in, out)
    pub bias: Param,   // (out)
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(name: &str, in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                he_init(&[in_f, out_f], in_f, rng),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[out_f])), false),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear weight is 2-D");
        let mut out = x.dot(&w);
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col += self.bias.value[[j]];
        }
        self.cache = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, gout: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.as_ref().expect("forward(train) before backward");
        let gw = x.t().dot(gout);
        self.weight.grad.scaled_add(1.0, &gw.into_dyn());
        let gb = gout.sum_axis(Axis(0));
        self.bias.grad.scaled_add(1.0, &gb.into_dyn());
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear weight is 2-D");
        gout.dot(&w.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay; learning rate chosen per parameter
/// group so discriminative LRs plug in directly.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    state: HashMap<String, (ArrayD<f32>, ArrayD<f32>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            state: HashMap::new(),
        }
    }

    /// One update over `params` with `group_lrs[param.group]` as each
    /// parameter's learning rate. A zero group LR freezes that group
    /// entirely (no moment updates, no decay).
    pub fn step(&mut self, params: Vec<&mut Param>, group_lrs: &[f64]) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params {
            let lr = *group_lrs.get(p.group).ok_or_else(|| {
                Error::Config(format!("parameter {} in unknown LR group {}", p.name, p.group))
            })?;
            if lr == 0.0 {
                continue;
            }
            let (m, v) = self
                .state
                .entry(p.name.clone())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
            ndarray::Zip::from(m.view_mut())
                .and(&p.grad)
                .for_each(|mi, &g| *mi = b1 * *mi + (1.0 - b1) * g);
            ndarray::Zip::from(v.view_mut())
                .and(&p.grad)
                .for_each(|vi, &g| *vi = b2 * *vi + (1.0 - b2) * g * g);
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut p.value)
                .and(m.view())
                .and(v.view())
                .for_each(|x, &mi, &vi| {
                    let mhat = mi as f64 / bc1;
                    let vhat = vi as f64 / bc2;
                    *x -= (lr * (mhat / (vhat.sqrt() + self.eps) + wd * *x as f64)) as f32;
                });
        }
        Ok(())
    }
}
