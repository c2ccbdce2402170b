use serde::{Deserialize, Serialize};

use super::layers::{build_stack, forward_stack, BasicBlock, ConvBnRelu, Dense, Init};
use super::Forward;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Gater network: four conv3×3 → BN → ReLU layers, global average pooling,
/// a dense layer with `num_experts` outputs and a softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaterCfg {
    pub in_channels: usize,
    pub conv_channels: [usize; 4],
    pub conv_strides: [usize; 4],
    pub num_experts: usize,
}

impl GaterCfg {
    pub fn new(in_channels: usize, num_experts: usize) -> Self {
        GaterCfg { in_channels, conv_channels: [32, 32, 32, 16], conv_strides: [2, 2, 1, 1], num_experts }
    }
}

#[derive(Clone, Debug)]
pub struct Gater {
    pub cfg: GaterCfg,
    pub layers: Vec<ConvBnRelu>,
    pub dense: Dense,
}

impl Gater {
    pub fn build<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: GaterCfg) -> Result<Self> {
        if cfg.num_experts == 0 {
            return Err(Error::Config("gater needs at least one expert".into()));
        }
        let mut layers = Vec::with_capacity(4);
        let mut c_in = cfg.in_channels;
        for (i, (&c, &s)) in cfg.conv_channels.iter().zip(&cfg.conv_strides).enumerate() {
            layers.push(ConvBnRelu::build(init, &format!("{name}.layer{i}"), c_in, c, s)?);
            c_in = c;
        }
        let dense = init.dense(&format!("{name}.dense"), c_in, cfg.num_experts)?;
        Ok(Gater { cfg, layers, dense })
    }

    /// Returns N×E gate probabilities.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut y = x;
        for layer in &self.layers {
            y = layer.forward(f, y)?;
        }
        let y = f.tape.global_avg_pool(y)?;
        let y = self.dense.forward(f, y)?;
        f.tape.softmax(y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureModuleCfg {
    pub num_experts: usize,
    pub depth: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub gater: GaterCfg,
}

/// `M(E, D)`: E independent D-stacks of BasicBlocks that all read the module
/// input, combined per sample by the gater's probabilities.
#[derive(Clone, Debug)]
pub struct MixtureModule {
    pub name: String,
    pub cfg: MixtureModuleCfg,
    pub experts: Vec<Vec<BasicBlock>>,
    pub gater: Gater,
}

impl MixtureModule {
    pub fn build<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: MixtureModuleCfg) -> Result<Self> {
        if cfg.num_experts == 0 || cfg.depth == 0 {
            return Err(Error::Config(format!(
                "mixture module needs E >= 1 and D >= 1, got E={} D={}",
                cfg.num_experts, cfg.depth
            )));
        }
        if cfg.gater.num_experts != cfg.num_experts || cfg.gater.in_channels != cfg.in_channels {
            return Err(Error::Config("gater config does not match its mixture module".into()));
        }
        let experts = (0..cfg.num_experts)
            .map(|i| {
                build_stack(
                    init,
                    &format!("{name}.expert{i}"),
                    cfg.in_channels,
                    cfg.out_channels,
                    cfg.stride,
                    cfg.depth,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let gater = Gater::build(init, &format!("{name}.gater"), cfg.gater.clone())?;
        Ok(MixtureModule { name: name.to_string(), cfg, experts, gater })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let outputs = self.experts.iter().map(|stack| forward_stack(stack, f, x)).collect::<Result<Vec<_>>>()?;
        let gates = self.gater.forward(f, x)?;
        f.record_gates(&self.name, gates);
        f.tape.weighted_mixture(&outputs, gates)
    }

    /// Runs one expert stack alone, bypassing the gater.
    pub fn forward_expert<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var, expert: usize) -> Result<Var> {
        forward_stack(&self.experts[expert], f, x)
    }
}
