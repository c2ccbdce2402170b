use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Forward;
use crate::error::Result;
use crate::rng::StreamRng;
use crate::tensor::{BufferId, ParamId, ParamSet, Scalar, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Weight std of the final classifier. Near-zero logits at initialization
/// keep the first-batch loss at ln 2.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Allocates named parameters with fan-in scaled normal initialization.
pub struct Init<'a, T: Scalar> {
    params: &'a mut ParamSet<T>,
    rng: StreamRng,
}

impl<'a, T: Scalar> Init<'a, T> {
    pub fn new(params: &'a mut ParamSet<T>, rng: StreamRng) -> Self {
        Init { params, rng }
    }

    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(normal.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("shape matches")
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Result<Conv2d> {
        let w = self.he_normal(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel);
        let weight = self.params.add_param(format!("{name}.weight"), w, true)?;
        let bias = if bias {
            Some(self.params.add_param(format!("{name}.bias"), Tensor::zeros(&[c_out]), false)?)
        } else {
            None
        };
        Ok(Conv2d { weight, bias, stride, pad })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm2d> {
        Ok(BatchNorm2d {
            gamma: self.params.add_param(format!("{name}.gamma"), Tensor::ones(&[channels]), false)?,
            beta: self.params.add_param(format!("{name}.beta"), Tensor::zeros(&[channels]), false)?,
            running_mean: self.params.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: self.params.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels]))?,
        })
    }

    pub fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let w = self.he_normal(&[outputs, inputs], inputs);
        self.dense_with(name, w)
    }

    /// Output layer: weights drawn with [`HEAD_INIT_STD`].
    pub fn classifier(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let w = self.normal(&[outputs, inputs], HEAD_INIT_STD);
        self.dense_with(name, w)
    }

    fn dense_with(&mut self, name: &str, w: Tensor<T>) -> Result<Dense> {
        let outputs = w.shape()[0];
        Ok(Dense {
            weight: self.params.add_param(format!("{name}.weight"), w, true)?,
            bias: self.params.add_param(format!("{name}.bias"), Tensor::zeros(&[outputs]), false)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2d {
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let g = f.param(self.gamma);
        let b = f.param(self.beta);
        let (rm, rv) = f.params.buffer_pair_mut(self.running_mean, self.running_var);
        f.tape.batch_norm(x, g, b, rm, rv, f.mode, BN_EPS, BN_MOMENTUM)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = f.param(self.bias);
        f.tape.dense(x, w, b)
    }
}

/// conv3×3 → BN → ReLU, used by the stem and the gater.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn build<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: init.conv(&format!("{name}.conv"), c_in, c_out, 3, stride, 1, false)?,
            bn: init.batch_norm(&format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.tape.relu(y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlockCfg {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl BasicBlockCfg {
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

/// Post-activation residual unit:
/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`, where the shortcut
/// is a strided 1×1 conv + BN whenever the shape changes.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub cfg: BasicBlockCfg,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    pub fn build<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: BasicBlockCfg) -> Result<Self> {
        let BasicBlockCfg { in_channels, out_channels, stride } = cfg;
        let conv1 = init.conv(&format!("{name}.conv1"), in_channels, out_channels, 3, stride, 1, false)?;
        let bn1 = init.batch_norm(&format!("{name}.bn1"), out_channels)?;
        let conv2 = init.conv(&format!("{name}.conv2"), out_channels, out_channels, 3, 1, 1, false)?;
        let bn2 = init.batch_norm(&format!("{name}.bn2"), out_channels)?;
        let shortcut = if cfg.needs_projection() {
            Some((
                init.conv(&format!("{name}.shortcut.conv"), in_channels, out_channels, 1, stride, 0, false)?,
                init.batch_norm(&format!("{name}.shortcut.bn"), out_channels)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock { cfg, conv1, bn1, conv2, bn2, shortcut })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(f, x)?;
        let y = self.bn1.forward(f, y)?;
        let y = f.tape.relu(y);
        let y = self.conv2.forward(f, y)?;
        let y = self.bn2.forward(f, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(f, x)?;
                bn.forward(f, s)?
            }
            None => x,
        };
        let y = f.tape.add(y, skip)?;
        Ok(f.tape.relu(y))
    }
}

/// `depth` BasicBlocks; only the first one carries `stride` and the channel change.
pub fn build_stack<T: Scalar>(
    init: &mut Init<'_, T>,
    name: &str,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    depth: usize,
) -> Result<Vec<BasicBlock>> {
    (0..depth)
        .map(|i| {
            let cfg = if i == 0 {
                BasicBlockCfg { in_channels, out_channels, stride }
            } else {
                BasicBlockCfg { in_channels: out_channels, out_channels, stride: 1 }
            };
            BasicBlock::build(init, &format!("{name}.block{i}"), cfg)
        })
        .collect()
}

pub fn forward_stack<T: Scalar>(blocks: &[BasicBlock], f: &mut Forward<'_, T>, mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(f, x)?;
    }
    Ok(x)
}
