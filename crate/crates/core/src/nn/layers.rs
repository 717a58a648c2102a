use std::sync::Arc;

use candle_core::{DType, Tensor, Var};

use super::conv::{conv2d_bias, Conv2dOp};
use super::norm::{channel_stats, ChannelNorm};
use super::params::{Initializer, ParamStore};
use crate::Result;

/// How normalization layers treat statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics untouched.
    Batch,
    /// Running statistics only; a pure function of the input.
    Eval,
}

impl Mode {
    /// Same statistics source without side effects.
    pub fn passive(self) -> Mode {
        match self {
            Mode::Train => Mode::Batch,
            m => m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    op: Conv2dOp,
}

impl Conv2d {
    /// Square kernel with "same" padding.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let weight = store.param(&format!("{name}.weight"), init.fan_in_uniform(&[cout, cin, kernel, kernel], fan_in)?)?;
        let bias = store.param(&format!("{name}.bias"), init.fan_in_uniform(&[cout], fan_in)?)?;
        Ok(Self { weight, bias, op: Conv2dOp::same(kernel, stride) })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dt = x.dtype();
        Ok(conv2d_bias(x, &self.weight.as_tensor().to_dtype(dt)?, &self.bias.as_tensor().to_dtype(dt)?, self.op)?)
    }

    pub fn out_channels(&self) -> usize {
        self.bias.elem_count()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, init: &Initializer, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.gamma"), init.constant(&[channels], 1.0)?)?,
            beta: store.param(&format!("{name}.beta"), init.constant(&[channels], 0.0)?)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), init.constant(&[channels], 0.0)?)?,
            running_var: store.buffer(&format!("{name}.running_var"), init.constant(&[channels], 1.0)?)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let x = x.contiguous()?;
        let (mean, var) = match mode {
            Mode::Eval => (
                self.running_mean.as_tensor().to_dtype(DType::F64)?.to_vec1::<f64>()?,
                self.running_var.as_tensor().to_dtype(DType::F64)?.to_vec1::<f64>()?,
            ),
            Mode::Train | Mode::Batch => {
                let (mean, var) = channel_stats(&x)?;
                if mode == Mode::Train {
                    let count = (n * h * w) as f64;
                    let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                    let m = self.momentum;
                    let blend = |old: &Var, new: Vec<f64>| -> Result<()> {
                        let t = Tensor::from_vec(new, old.shape(), old.device())?.to_dtype(old.dtype())?;
                        old.set(&((old.as_tensor() * (1.0 - m))? + (t * m)?)?)?;
                        Ok(())
                    };
                    blend(&self.running_mean, mean.clone())?;
                    blend(&self.running_var, var.iter().map(|v| v * correction).collect())?;
                }
                (mean, var)
            }
        };
        let op = ChannelNorm {
            inv_std: Arc::new(var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()),
            mean: Arc::new(mean),
            batch_stats: mode != Mode::Eval,
        };
        let dt = x.dtype();
        Ok(x.apply_op3(&self.gamma.as_tensor().to_dtype(dt)?, &self.beta.as_tensor().to_dtype(dt)?, op)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, fan_in: usize, out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), init.fan_in_uniform(&[out, fan_in], fan_in)?)?,
            bias: store.param(&format!("{name}.bias"), init.fan_in_uniform(&[out], fan_in)?)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}
