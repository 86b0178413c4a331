use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Mode, ParamId, ParamKind, ParamStore, Session};
use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{conv_output_extent, Tensor, Var};

/// Fan-in scaled Gaussian (He) initialization, rounded to `f32` so a freshly
/// built model already sits on the checkpoint grid.
pub(crate) fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng) as f32 as f64)
}

/// Square-kernel 2-D convolution with "same" padding for stride 1.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return contract_err(format!("{name}: kernel size {kernel} must be odd"));
        }
        if stride == 0 || in_channels == 0 || out_channels == 0 {
            return contract_err(format!("{name}: zero stride or channel count"));
        }
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            ParamKind::Trainable,
        )?;
        let bias = if with_bias {
            Some(store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_channels]),
                ParamKind::Trainable,
            )?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: (kernel - 1) / 2,
        })
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        conv_output_extent(input, self.kernel, self.stride, self.padding)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = s.graph.value(x).shape().get(1).copied();
        if c != Some(self.in_channels) {
            return dim_err(format!(
                "conv expects {} input channels, got shape {:?}",
                self.in_channels,
                s.graph.value(x).shape()
            ));
        }
        let w = s.param(self.weight);
        let y = s.graph.conv2d(x, w, self.stride, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.graph.add_channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub const DEFAULT_EPS: f64 = 1e-6;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::full(&[channels], 1.0),
                ParamKind::Trainable,
            )?,
            beta: store.add(
                format!("{name}.beta"),
                Tensor::zeros(&[channels]),
                ParamKind::Trainable,
            )?,
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            )?,
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], 1.0),
                ParamKind::Buffer,
            )?,
            channels,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (gamma, beta) = (s.param(self.gamma), s.param(self.beta));
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let rm = s.buffer_mut(self.running_mean).data_mut();
                rm.iter_mut()
                    .zip(&stats.mean)
                    .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
                let rv = s.buffer_mut(self.running_var).data_mut();
                rv.iter_mut()
                    .zip(&stats.var)
                    .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
                Ok(y)
            }
            Mode::Eval => {
                let mean = s.buffer(self.running_mean).data().to_vec();
                let var = s.buffer(self.running_var).data().to_vec();
                s.graph.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

/// Fully connected layer `y = x·W + b` with `W[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                he_normal(&[in_features, out_features], in_features, rng),
                ParamKind::Trainable,
            )?,
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_features]),
                ParamKind::Trainable,
            )?,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        let y = s.graph.matmul(x, w)?;
        s.graph.add_row_bias(y, b)
    }
}

/// BN → ReLU → conv, the pre-activation unit every convolution sits in.
#[derive(Clone, Debug)]
pub struct PreActConv {
    pub norm: BatchNorm2d,
    pub conv: Conv2d,
}

impl PreActConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm: BatchNorm2d::new(store, &format!("{name}.bn"), in_channels)?,
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                out_channels,
                kernel,
                stride,
                false,
                rng,
            )?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.norm.forward(s, x)?;
        let y = s.graph.relu(y);
        self.conv.forward(s, y)
    }
}
