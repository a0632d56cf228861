use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::nn::tensor::sc;
use crate::nn::{
    concat_axis1, mix_seed, split_axis1, Activation, ActivationLayer, BatchNorm, Conv2d, Ctx, Dense, Dropout,
    Layer, MaxPool, NnError, Padding, Param, Scalar, Sequential, Tensor,
};

/// Parallel dilated branches followed by the strided and valid convolutions.
/// Input `[B, M², D+1, 1]`, output `[B, flat]`.
#[derive(Debug, Clone)]
pub struct Tower<T> {
    pub name: String,
    pub channels: usize,
    pub branches: Vec<Sequential<T>>,
    pub trunk: Sequential<T>,
    branch_filters: Vec<usize>,
}

fn uniform<T: Scalar>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| sc(rng.random_range(-limit..limit)))
}

fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn conv_block<T: Scalar>(
    seq: &mut Sequential<T>,
    tag: &str,
    cfg: &ModelConfig,
    shape: [usize; 4],
    conv: (usize, usize, Padding),
    first: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(), NnError> {
    let [f, c, kh, kw] = shape;
    let (stride, dilation, padding) = conv;
    let w = uniform(&shape, he_limit(c * kh * kw), rng);
    let mut layer = Conv2d::new(w, Tensor::zeros(&[f]), (stride, 1), (dilation, 1), padding)?;
    layer.need_input_grad = !first;
    seq.push(format!("conv{tag}"), Layer::Conv(layer));
    if cfg.placement.batchnorm {
        seq.push(format!("bn{tag}"), Layer::BatchNorm(BatchNorm::new(f)));
    }
    seq.push(
        format!("act{tag}"),
        Layer::Act(ActivationLayer::new(Activation::LeakyRelu { alpha: cfg.leaky_alpha })),
    );
    Ok(())
}

impl<T: Scalar> Tower<T> {
    pub fn new(name: &str, channels: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let cin = channels * channels;
        let mut branches = Vec::new();
        for &d in &cfg.dilations {
            let mut seq = Sequential::new();
            conv_block(
                &mut seq,
                "",
                cfg,
                [cfg.o1, cin, cfg.branch_kernel, 1],
                (1, d, Padding::Same),
                true,
                rng,
            )?;
            branches.push(seq);
        }
        let mut trunk = Sequential::new();
        let merged = cfg.o1 * cfg.dilations.len();
        conv_block(&mut trunk, "5", cfg, [cfg.c5_filters, merged, 3, 1], (2, 1, Padding::Same), false, rng)?;
        conv_block(&mut trunk, "6", cfg, [cfg.o2, cfg.c5_filters, cfg.k1, 1], (1, 1, Padding::Valid), false, rng)?;
        if cfg.placement.maxpool_after_c6 {
            trunk.push("pool", Layer::MaxPool(MaxPool::new((2, 1))));
        }
        trunk.push("flatten", Layer::Flatten(None));
        Ok(Self {
            name: name.to_string(),
            channels,
            branch_filters: vec![cfg.o1; cfg.dilations.len()],
            branches,
            trunk,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>, NnError> {
        let [_, c, _, w] = x.dims4(&self.name)?;
        if c != self.channels * self.channels || w != 1 {
            return Err(NnError::Shape(format!(
                "tower {} expects [B, {}, D+1, 1], got {:?}",
                self.name,
                self.channels * self.channels,
                x.shape()
            )));
        }
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        self.trunk.forward(&concat_axis1(&refs)?, ctx)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<(), NnError> {
        let g = self.trunk.backward(dy)?;
        for (branch, part) in self.branches.iter_mut().zip(split_axis1(&g, &self.branch_filters)?) {
            branch.backward(&part)?;
        }
        Ok(())
    }

    fn branch_prefix(&self, i: usize, cfg: &ModelConfig) -> String {
        format!("{}.d{}", self.name, cfg.dilations[i])
    }
}

/// One or two towers feeding a dense head that ends in a sigmoid.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub towers: Vec<Tower<T>>,
    pub head: Sequential<T>,
    tower_widths: Vec<usize>,
}

/// Tensor name, shape and values.
pub type StateEntry<T> = (String, Vec<usize>, Vec<T>);

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; weights depend only on `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate().map_err(NnError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x1417));
        let mode = config.feature_mode;
        let towers = mode
            .tower_names()
            .iter()
            .zip(mode.tower_channels())
            .map(|(name, &m)| Tower::new(name, m, config, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let width = config.tower_flat_width().map_err(NnError::Config)?;
        let flat = width * towers.len();

        let mut head = Sequential::new();
        if config.placement.dropout_after_flatten {
            head.push("drop0", Layer::Dropout(Dropout::new(config.dropout)?));
        }
        let d1 = uniform(&[config.d1_units, flat], he_limit(flat), &mut rng);
        head.push("d1", Layer::Dense(Dense::new(d1, Tensor::zeros(&[config.d1_units]), config.l2)?));
        head.push("relu1", Layer::Act(ActivationLayer::new(Activation::Relu)));
        if config.placement.dropout_after_d1 {
            head.push("drop1", Layer::Dropout(Dropout::new(config.dropout)?));
        }
        let d2 = uniform(&[config.o3, config.d1_units], he_limit(config.d1_units), &mut rng);
        head.push("d2", Layer::Dense(Dense::new(d2, Tensor::zeros(&[config.o3]), config.l2)?));
        head.push("relu2", Layer::Act(ActivationLayer::new(Activation::Relu)));
        let glorot = (6.0 / (config.o3 + 1) as f64).sqrt();
        let out = uniform(&[1, config.o3], glorot, &mut rng);
        head.push("out", Layer::Dense(Dense::new(out, Tensor::zeros(&[1]), 0.0)?));
        head.push("sigmoid", Layer::Act(ActivationLayer::new(Activation::Sigmoid)));

        Ok(Self {
            config: config.clone(),
            tower_widths: vec![width; towers.len()],
            towers,
            head,
        })
    }

    /// One input per tower, in tower order. Returns probabilities `[B, 1]`.
    pub fn forward(&mut self, inputs: &[&Tensor<T>], ctx: &mut Ctx) -> Result<Tensor<T>, NnError> {
        if inputs.len() != self.towers.len() {
            return Err(NnError::Shape(format!(
                "{} inputs for {} towers",
                inputs.len(),
                self.towers.len()
            )));
        }
        let feats = self
            .towers
            .iter_mut()
            .zip(inputs)
            .map(|(t, x)| t.forward(x, ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        self.head.forward(&concat_axis1(&refs)?, ctx)
    }

    /// Accumulates parameter gradients from `d loss / d prob`, including the
    /// L2 terms of the dense layers.
    pub fn backward(&mut self, dprob: &Tensor<T>) -> Result<(), NnError> {
        let g = self.head.backward(dprob)?;
        for (tower, part) in self.towers.iter_mut().zip(split_axis1(&g, &self.tower_widths)?) {
            tower.backward(&part)?;
        }
        Ok(())
    }

    /// Forward pass in inference mode.
    pub fn predict(&mut self, inputs: &[&Tensor<T>]) -> Result<Vec<f64>, NnError> {
        let p = self.forward(inputs, &mut Ctx::eval())?;
        Ok(p.data().iter().map(|v| v.to_f64().unwrap()).collect())
    }

    pub fn penalty(&self) -> f64 {
        self.head.penalty()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let cfg = &self.config;
        let mut out = Vec::new();
        for tower in &mut self.towers {
            let prefixes: Vec<String> = (0..tower.branches.len()).map(|i| tower.branch_prefix(i, cfg)).collect();
            for (b, prefix) in tower.branches.iter_mut().zip(&prefixes) {
                out.extend(b.named_params_mut(prefix));
            }
            out.extend(tower.trunk.named_params_mut(&tower.name));
        }
        out.extend(self.head.named_params_mut("head"));
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for tower in &self.towers {
            for (i, b) in tower.branches.iter().enumerate() {
                out.extend(b.named_params(&tower.branch_prefix(i, &self.config)));
            }
            out.extend(tower.trunk.named_params(&tower.name));
        }
        out.extend(self.head.named_params("head"));
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let cfg = &self.config;
        let mut out = Vec::new();
        for tower in &mut self.towers {
            let prefixes: Vec<String> = (0..tower.branches.len()).map(|i| tower.branch_prefix(i, cfg)).collect();
            for (b, prefix) in tower.branches.iter_mut().zip(&prefixes) {
                out.extend(b.named_buffers_mut(prefix));
            }
            out.extend(tower.trunk.named_buffers_mut(&tower.name));
        }
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for tower in &self.towers {
            for (i, b) in tower.branches.iter().enumerate() {
                out.extend(b.named_buffers(&tower.branch_prefix(i, &self.config)));
            }
            out.extend(tower.trunk.named_buffers(&tower.name));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params()
            .into_iter()
            .map(|(_, p)| p.value.shape().to_vec())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Parameters followed by buffers.
    pub fn state(&self) -> Vec<StateEntry<T>> {
        let params = self
            .named_params()
            .into_iter()
            .map(|(n, p)| (n, p.value.shape().to_vec(), p.value.data().to_vec()));
        let buffers = self
            .named_buffers()
            .into_iter()
            .map(|(n, b)| (n, b.shape().to_vec(), b.data().to_vec()));
        params.chain(buffers).collect()
    }

    /// Overwrites every parameter and buffer; names and shapes must match
    /// [`Model::state`] exactly.
    pub fn load_state<U: Scalar>(&mut self, state: &[StateEntry<U>]) -> Result<(), NnError> {
        let n_params = self.named_params().len();
        let n_buffers = self.named_buffers().len();
        if state.len() != n_params + n_buffers {
            return Err(NnError::Shape(format!(
                "state has {} tensors, model has {}",
                state.len(),
                n_params + n_buffers
            )));
        }
        let (params, buffers) = state.split_at(n_params);
        let copy = |name: String, dst: &mut Tensor<T>, entry: &StateEntry<U>| {
            let (sname, shape, values) = entry;
            if &name != sname || dst.shape() != shape.as_slice() || values.len() != dst.len() {
                return Err(NnError::Shape(format!(
                    "state entry {sname} {shape:?} does not match {name} {:?}",
                    dst.shape()
                )));
            }
            for (d, v) in dst.data_mut().iter_mut().zip(values) {
                *d = sc(v.to_f64().unwrap());
            }
            Ok(())
        };
        for ((name, p), entry) in self.named_params_mut().into_iter().zip(params) {
            copy(name, &mut p.value, entry)?;
        }
        for ((name, b), entry) in self.named_buffers_mut().into_iter().zip(buffers) {
            copy(name, b, entry)?;
        }
        Ok(())
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Model<U>, NnError> {
        let mut out = Model::<U>::new(&self.config)?;
        out.load_state(&self.state())?;
        Ok(out)
    }
}
