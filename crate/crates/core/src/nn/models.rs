use serde::{Deserialize, Serialize};

use super::layers::{build_stack, forward_stack, BasicBlock, ConvBnRelu, Dense, Init};
use super::mixture::{GaterCfg, MixtureModule, MixtureModuleCfg};
use super::Forward;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

fn default_input_channels() -> usize {
    3
}
fn default_stem_channels() -> usize {
    16
}
fn default_stage_channels() -> [usize; 3] {
    [16, 32, 64]
}
fn default_num_classes() -> usize {
    2
}
fn default_stem_stride() -> usize {
    2
}

/// `ResMixNet(E, D)`:
/// stem conv3×3/2 → M₁(E, D) → M₂(E, D)/2 → D BasicBlocks/2 → GAP → dense.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResMixCfg {
    pub experts: usize,
    pub depth: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_stem_channels")]
    pub stem_channels: usize,
    #[serde(default = "default_stage_channels")]
    pub stage_channels: [usize; 3],
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
}

impl ResMixCfg {
    pub fn new(experts: usize, depth: usize) -> Self {
        ResMixCfg {
            experts,
            depth,
            input_channels: default_input_channels(),
            stem_channels: default_stem_channels(),
            stage_channels: default_stage_channels(),
            num_classes: default_num_classes(),
        }
    }

    pub fn module_cfgs(&self) -> [MixtureModuleCfg; 2] {
        let [c1, c2, _] = self.stage_channels;
        [
            MixtureModuleCfg {
                num_experts: self.experts,
                depth: self.depth,
                in_channels: self.stem_channels,
                out_channels: c1,
                stride: 1,
                gater: GaterCfg::new(self.stem_channels, self.experts),
            },
            MixtureModuleCfg {
                num_experts: self.experts,
                depth: self.depth,
                in_channels: c1,
                out_channels: c2,
                stride: 2,
                gater: GaterCfg::new(c1, self.experts),
            },
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ResMixNet {
    pub cfg: ResMixCfg,
    pub stem: ConvBnRelu,
    pub m1: MixtureModule,
    pub m2: MixtureModule,
    pub stage3: Vec<BasicBlock>,
    pub head: Dense,
}

impl ResMixNet {
    pub fn build<T: Scalar>(init: &mut Init<'_, T>, cfg: ResMixCfg) -> Result<Self> {
        if cfg.experts == 0 || cfg.depth == 0 {
            return Err(Error::Config(format!(
                "ResMixNet needs E >= 1 and D >= 1, got ({}, {})",
                cfg.experts, cfg.depth
            )));
        }
        let [m1_cfg, m2_cfg] = cfg.module_cfgs();
        let stem = ConvBnRelu::build(init, "stem", cfg.input_channels, cfg.stem_channels, 2)?;
        let m1 = MixtureModule::build(init, "m1", m1_cfg)?;
        let m2 = MixtureModule::build(init, "m2", m2_cfg)?;
        let [_, c2, c3] = cfg.stage_channels;
        let stage3 = build_stack(init, "stage3", c2, c3, 2, cfg.depth)?;
        let head = init.classifier("head", c3, cfg.num_classes)?;
        Ok(ResMixNet { cfg, stem, m1, m2, stage3, head })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(f, x)?;
        let y = self.m1.forward(f, y)?;
        let y = self.m2.forward(f, y)?;
        self.tail(f, y)
    }

    /// Same network with both mixture modules replaced by their `expert`-th stack.
    pub fn forward_single_expert<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var, expert: usize) -> Result<Var> {
        let y = self.stem.forward(f, x)?;
        let y = self.m1.forward_expert(f, y, expert)?;
        let y = self.m2.forward_expert(f, y, expert)?;
        self.tail(f, y)
    }

    fn tail<T: Scalar>(&self, f: &mut Forward<'_, T>, y: Var) -> Result<Var> {
        let y = forward_stack(&self.stage3, f, y)?;
        let y = f.tape.global_avg_pool(y)?;
        self.head.forward(f, y)
    }
}

/// CIFAR-style BasicBlock ResNet with `6n + 2` weighted layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetCfg {
    pub blocks_per_stage: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_stage_channels")]
    pub stage_channels: [usize; 3],
    #[serde(default = "default_stem_stride")]
    pub stem_stride: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
}

impl ResNetCfg {
    pub fn new(blocks_per_stage: usize) -> Self {
        ResNetCfg {
            blocks_per_stage,
            input_channels: default_input_channels(),
            stage_channels: default_stage_channels(),
            stem_stride: default_stem_stride(),
            num_classes: default_num_classes(),
        }
    }

    /// ResNet-`depth` for `depth = 6n + 2`.
    pub fn with_depth(depth: usize) -> Result<Self> {
        if depth < 8 || !(depth - 2).is_multiple_of(6) {
            return Err(Error::Config(format!("ResNet depth must be 6n + 2 with n >= 1, got {depth}")));
        }
        Ok(Self::new((depth - 2) / 6))
    }

    pub fn depth(&self) -> usize {
        6 * self.blocks_per_stage + 2
    }
}

#[derive(Clone, Debug)]
pub struct ResNet {
    pub cfg: ResNetCfg,
    pub stem: ConvBnRelu,
    pub stages: Vec<Vec<BasicBlock>>,
    pub head: Dense,
}

impl ResNet {
    pub fn build<T: Scalar>(init: &mut Init<'_, T>, cfg: ResNetCfg) -> Result<Self> {
        if cfg.blocks_per_stage == 0 {
            return Err(Error::Config("ResNet needs at least one block per stage".into()));
        }
        let [c1, c2, c3] = cfg.stage_channels;
        let stem = ConvBnRelu::build(init, "stem", cfg.input_channels, c1, cfg.stem_stride)?;
        let n = cfg.blocks_per_stage;
        let stages = vec![
            build_stack(init, "stage1", c1, c1, 1, n)?,
            build_stack(init, "stage2", c1, c2, 2, n)?,
            build_stack(init, "stage3", c2, c3, 2, n)?,
        ];
        let head = init.classifier("head", c3, cfg.num_classes)?;
        Ok(ResNet { cfg, stem, stages, head })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.stem.forward(f, x)?;
        for stage in &self.stages {
            y = forward_stack(stage, f, y)?;
        }
        let y = f.tape.global_avg_pool(y)?;
        self.head.forward(f, y)
    }
}
