use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::tensor::{sc, Scalar, Tensor};
use super::{Ctx, NnError, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Elementwise activation; caches its input (or output, for sigmoid).
#[derive(Debug, Clone)]
pub struct ActivationLayer<T> {
    pub kind: Activation,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ActivationLayer<T> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let y = match self.kind {
            Activation::LeakyRelu { alpha } => {
                let a: T = sc(alpha);
                x.map(|v| if v > T::zero() { v } else { a * v })
            }
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
        };
        if train {
            self.cache = Some(match self.kind {
                Activation::Sigmoid => y.clone(),
                _ => x.clone(),
            });
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cached = self
            .cache
            .take()
            .ok_or_else(|| NnError::Shape("activation backward without forward".into()))?;
        let mut dx = dy.clone();
        match self.kind {
            Activation::LeakyRelu { alpha } => {
                let a: T = sc(alpha);
                for (g, &x) in dx.data_mut().iter_mut().zip(cached.data()) {
                    if x <= T::zero() {
                        *g *= a;
                    }
                }
            }
            Activation::Relu => {
                for (g, &x) in dx.data_mut().iter_mut().zip(cached.data()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in dx.data_mut().iter_mut().zip(cached.data()) {
                    *g *= y * (T::one() - y);
                }
            }
        }
        Ok(dx)
    }
}

/// Per-channel batch normalization over every axis except axis 1.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
        let shape = x.shape();
        let c = self.gamma.value.len();
        if shape.len() < 2 || shape[1] != c {
            return Err(NnError::Shape(format!(
                "batch norm over {c} channels got input {shape:?}"
            )));
        }
        Ok((shape[0], c, shape[2..].iter().product()))
    }

    /// Normalized activations before scale and shift, from batch statistics.
    #[allow(clippy::type_complexity)]
    pub fn normalize_batch(
        &self,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<T>, Vec<T>, Vec<T>), NnError> {
        let (b, c, s) = self.layout(x)?;
        let n = (b * s) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        let d = x.data();
        for bi in 0..b {
            for (ci, m) in mean.iter_mut().enumerate() {
                let base = (bi * c + ci) * s;
                *m += d[base..base + s].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                var[ci] += d[base..base + s]
                    .iter()
                    .map(|v| {
                        let e = v.to_f64().unwrap() - mean[ci];
                        e * e
                    })
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<T> = var.iter().map(|v| sc(1.0 / (v + self.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| sc(m)).collect();
        let mut xhat = x.clone();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                for v in &mut xhat.data_mut()[base..base + s] {
                    *v = (*v - mean_t[ci]) * inv_std[ci];
                }
            }
        }
        let var_t = var.iter().map(|&v| sc(v)).collect();
        Ok((xhat, inv_std, mean_t, var_t))
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let (b, c, s) = self.layout(x)?;
        let (xhat, inv_std) = if train {
            let (xhat, inv_std, mean, var) = self.normalize_batch(x)?;
            let n = (b * s) as f64;
            let mom: T = sc(self.momentum);
            let unbias: T = sc(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            for ci in 0..c {
                let rm = &mut self.running_mean.data_mut()[ci];
                *rm = (T::one() - mom) * *rm + mom * mean[ci];
                let rv = &mut self.running_var.data_mut()[ci];
                *rv = (T::one() - mom) * *rv + mom * var[ci] * unbias;
            }
            (xhat, inv_std)
        } else {
            let eps: T = sc(self.eps);
            let inv_std: Vec<T> = self
                .running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let mut xhat = x.clone();
            for bi in 0..b {
                for (ci, &is) in inv_std.iter().enumerate() {
                    let base = (bi * c + ci) * s;
                    let mu = self.running_mean.data()[ci];
                    for v in &mut xhat.data_mut()[base..base + s] {
                        *v = (*v - mu) * is;
                    }
                }
            }
            (xhat, inv_std)
        };
        let mut y = xhat.clone();
        let (g, be) = (self.gamma.value.data(), self.beta.value.data());
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                for v in &mut y.data_mut()[base..base + s] {
                    *v = g[ci] * *v + be[ci];
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            train,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::Shape("batch norm backward without forward".into()))?;
        let (b, c, s) = self.layout(dy)?;
        let n: T = sc((b * s) as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                for k in base..base + s {
                    sum_dy[ci] += dy.data()[k];
                    sum_dy_xhat[ci] += dy.data()[k] * cache.xhat.data()[k];
                }
            }
        }
        for ci in 0..c {
            self.gamma.grad.data_mut()[ci] += sum_dy_xhat[ci];
            self.beta.grad.data_mut()[ci] += sum_dy[ci];
        }
        let g = self.gamma.value.data();
        let mut dx = dy.clone();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let scale = g[ci] * cache.inv_std[ci];
                for k in base..base + s {
                    dx.data_mut()[k] = if cache.train {
                        scale / n * (n * dy.data()[k] - sum_dy[ci] - cache.xhat.data()[k] * sum_dy_xhat[ci])
                    } else {
                        scale * dy.data()[k]
                    };
                }
            }
        }
        Ok(dx)
    }
}

/// Non-overlapping max pooling (stride equals the window), floor mode.
#[derive(Debug, Clone)]
pub struct MaxPool<T> {
    pub window: (usize, usize),
    cache: Option<(Vec<usize>, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool<T> {
    pub fn new(window: (usize, usize)) -> Self {
        Self {
            window,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let [b, c, h, w] = <[usize; 4]>::try_from(input)
            .map_err(|_| NnError::Shape(format!("max pool expects rank 4, got {input:?}")))?;
        let (oh, ow) = (h / self.window.0, w / self.window.1);
        if oh == 0 || ow == 0 {
            return Err(NnError::Shape(format!(
                "pool window {:?} larger than input {h}x{w}",
                self.window
            )));
        }
        Ok(vec![b, c, oh, ow])
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let out_shape = self.output_shape(x.shape())?;
        let [b, c, h, w] = x.dims4("max pool")?;
        let (oh, ow) = (out_shape[2], out_shape[3]);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for z in 0..ow {
                    let mut best = base + y * self.window.0 * w + z * self.window.1;
                    for i in 0..self.window.0 {
                        for j in 0..self.window.1 {
                            let k = base + (y * self.window.0 + i) * w + z * self.window.1 + j;
                            if x.data()[k] > x.data()[best] {
                                best = k;
                            }
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
        if train {
            self.cache = Some((argmax, x.shape().to_vec()));
        }
        Tensor::from_vec(&out_shape, out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (argmax, shape) = self
            .cache
            .take()
            .ok_or_else(|| NnError::Shape("max pool backward without forward".into()))?;
        let mut dx = Tensor::zeros(&shape);
        for (&k, &g) in argmax.iter().zip(dy.data()) {
            dx.data_mut()[k] += g;
        }
        Ok(dx)
    }
}

/// Inverted dropout: kept units are scaled by `1/(1-p)` in training mode.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        Ok(Self { p, mask: None })
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Tensor<T> {
        if !ctx.train || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let scale: T = sc(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if ctx.rng.random::<f64>() < self.p {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match self.mask.take() {
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                dx
            }
            None => dy.clone(),
        }
    }
}

/// Fully connected layer, `y = x·Wᵀ + b`, with an optional L2 penalty
/// `λ·‖W‖²` whose gradient `2λW` is added in `backward`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub l2: f64,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, l2: f64) -> Result<Self, NnError> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[0]] {
            return Err(NnError::Shape(format!(
                "dense weight {:?} / bias {:?}",
                ws,
                bias.shape()
            )));
        }
        if l2 < 0.0 {
            return Err(NnError::Config(format!("negative L2 coefficient {l2}")));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            l2,
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn penalty(&self) -> f64 {
        self.l2 * self.weight.value.sum_sq().to_f64().unwrap()
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>, NnError> {
        let [b, inputs] = x.dims2("dense")?;
        let (units, expected) = (self.weight.value.shape()[0], self.weight.value.shape()[1]);
        if inputs != expected {
            return Err(NnError::Shape(format!(
                "dense layer expects {expected} inputs, got {inputs}"
            )));
        }
        let w = self.weight.value.data();
        let mut y = Vec::with_capacity(b * units);
        for row in x.data().chunks(inputs) {
            for u in 0..units {
                y.push(self.bias.value.data()[u] + super::tensor::dot(&w[u * inputs..(u + 1) * inputs], row));
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        Tensor::from_vec(&[b, units], y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| NnError::Shape("dense backward without forward".into()))?;
        let [b, inputs] = x.dims2("dense")?;
        let units = self.units();
        let w = self.weight.value.data();
        let mut dx = Tensor::zeros(&[b, inputs]);
        {
            let gw = self.weight.grad.data_mut();
            let gb = self.bias.grad.data_mut();
            for s in 0..b {
                let xs = &x.data()[s * inputs..(s + 1) * inputs];
                let dxs = &mut dx.data_mut()[s * inputs..(s + 1) * inputs];
                for u in 0..units {
                    let g = dy.data()[s * units + u];
                    gb[u] += g;
                    super::tensor::axpy(&mut gw[u * inputs..(u + 1) * inputs], g, xs);
                    super::tensor::axpy(dxs, g, &w[u * inputs..(u + 1) * inputs]);
                }
            }
            if self.l2 > 0.0 {
                let two_l2: T = sc(2.0 * self.l2);
                for (g, &wv) in gw.iter_mut().zip(w) {
                    *g += two_l2 * wv;
                }
            }
        }
        Ok(dx)
    }
}

/// One layer of a sequential stack.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Act(ActivationLayer<T>),
    MaxPool(MaxPool<T>),
    Dropout(Dropout<T>),
    Dense(Dense<T>),
    Flatten(Option<Vec<usize>>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>, NnError> {
        let train = ctx.train;
        match self {
            Layer::Conv(l) => l.forward(x, train),
            Layer::BatchNorm(l) => l.forward(x, train),
            Layer::Act(l) => Ok(l.forward(x, train)),
            Layer::MaxPool(l) => l.forward(x, train),
            Layer::Dropout(l) => Ok(l.forward(x, ctx)),
            Layer::Dense(l) => l.forward(x, train),
            Layer::Flatten(cache) => {
                let shape = x.shape().to_vec();
                let rest: usize = shape[1..].iter().product();
                *cache = Some(shape.clone());
                x.clone().reshape(&[shape[0], rest])
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Act(l) => l.backward(dy),
            Layer::MaxPool(l) => l.backward(dy),
            Layer::Dropout(l) => Ok(l.backward(dy)),
            Layer::Dense(l) => l.backward(dy),
            Layer::Flatten(cache) => {
                let shape = cache
                    .take()
                    .ok_or_else(|| NnError::Shape("flatten backward without forward".into()))?;
                dy.clone().reshape(&shape)
            }
        }
    }

    /// Trainable parameters with local names, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn penalty(&self) -> f64 {
        match self {
            Layer::Dense(l) => l.penalty(),
            _ => 0.0,
        }
    }
}

/// Named sequential stack of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for (_, layer) in &mut self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = dy.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            for (local, p) in layer.params_mut() {
                out.push((format!("{prefix}.{name}.{local}"), p));
            }
        }
        out
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &self.layers {
            for (local, p) in layer.params() {
                out.push((format!("{prefix}.{name}.{local}"), p));
            }
        }
        out
    }

    pub fn named_buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            for (local, b) in layer.buffers_mut() {
                out.push((format!("{prefix}.{name}.{local}"), b));
            }
        }
        out
    }

    pub fn named_buffers(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &self.layers {
            for (local, b) in layer.buffers() {
                out.push((format!("{prefix}.{name}.{local}"), b));
            }
        }
        out
    }

    pub fn penalty(&self) -> f64 {
        self.layers.iter().map(|(_, l)| l.penalty()).sum()
    }
}
