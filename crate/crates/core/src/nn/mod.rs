//! Network architectures: BasicBlock residual units, the gater and mixture
//! module, `ResMixNet(E, D)` and the CIFAR-style ResNet baseline.

mod layers;
mod mixture;
mod models;
mod summary;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;
use crate::tensor::{Mode, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

pub use layers::{
    build_stack, forward_stack, BasicBlock, BasicBlockCfg, BatchNorm2d, Conv2d, ConvBnRelu, Dense, Init, BN_EPS,
    BN_MOMENTUM, HEAD_INIT_STD,
};
pub use mixture::{Gater, GaterCfg, MixtureModule, MixtureModuleCfg};
pub use models::{ResMixCfg, ResMixNet, ResNet, ResNetCfg};
pub use summary::{budget_check, count_params, BudgetReport, ModuleNode, ParamSummary};

/// State threaded through a forward pass: the tape being recorded, the
/// model's parameters (BN running statistics are updated in train mode) and
/// the gate probabilities emitted by each mixture module.
pub struct Forward<'a, T: Scalar> {
    pub tape: Tape<T>,
    params: &'a mut ParamSet<T>,
    mode: Mode,
    gates: Vec<(String, Var)>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(params: &'a mut ParamSet<T>, mode: Mode) -> Self {
        Forward { tape: Tape::new(), params, mode, gates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    pub fn record_gates(&mut self, module: &str, gates: Var) {
        self.gates.push((module.to_string(), gates));
    }

    pub fn finish(self, logits: Var) -> ForwardPass<T> {
        ForwardPass { tape: self.tape, logits, gates: self.gates }
    }
}

/// Output of [`Model::forward`]: the recorded tape, the logits and the gate
/// probabilities of each mixture module (`"m1"`, `"m2"`).
pub struct ForwardPass<T: Scalar> {
    pub tape: Tape<T>,
    pub logits: Var,
    pub gates: Vec<(String, Var)>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.tape.value(self.logits)
    }

    pub fn gate_values(&self) -> Vec<(String, &Tensor<T>)> {
        self.gates.iter().map(|(n, v)| (n.clone(), self.tape.value(*v))).collect()
    }

    /// Appends the mean NLL loss of `labels` and back-propagates into `params`.
    /// Returns the loss value.
    pub fn backward(mut self, labels: &[usize], params: &mut ParamSet<T>) -> Result<f64> {
        let loss = self.tape.log_softmax_nll(self.logits, labels)?;
        let value = self.tape.value(loss).data()[0].as_f64();
        self.tape.backward(loss, params)?;
        Ok(value)
    }
}

/// Architecture selector, serialized with an `arch` tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    ResMixNet(ResMixCfg),
    ResNet(ResNetCfg),
}

impl ModelConfig {
    pub fn resmixnet(experts: usize, depth: usize) -> Self {
        ModelConfig::ResMixNet(ResMixCfg::new(experts, depth))
    }

    pub fn resnet(blocks_per_stage: usize) -> Self {
        ModelConfig::ResNet(ResNetCfg::new(blocks_per_stage))
    }

    /// The shallowest baseline; its size is the parameter budget for every
    /// ResMixNet.
    pub fn resnet26() -> Self {
        Self::resnet(4)
    }

    pub fn label(&self) -> String {
        match self {
            ModelConfig::ResMixNet(c) => format!("ResMixNet({},{})", c.experts, c.depth),
            ModelConfig::ResNet(c) => format!("ResNet{}", c.depth()),
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            ModelConfig::ResMixNet(c) => c.input_channels,
            ModelConfig::ResNet(c) => c.input_channels,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::ResMixNet(c) => c.num_classes,
            ModelConfig::ResNet(c) => c.num_classes,
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Network {
    ResMixNet(ResMixNet),
    ResNet(ResNet),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds the network, drawing initial weights from the `init` stream of `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut init = Init::new(&mut params, rng::stream(seed, "init", 0));
        let network = match config {
            ModelConfig::ResMixNet(c) => Network::ResMixNet(ResMixNet::build(&mut init, c.clone())?),
            ModelConfig::ResNet(c) => Network::ResNet(ResNet::build(&mut init, c.clone())?),
        };
        Ok(Model { config: config.clone(), network, params })
    }

    /// Records a forward pass over an N×C×H×W batch.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        let mut f = Forward::new(&mut self.params, mode);
        let input = f.tape.input(x);
        let logits = match &self.network {
            Network::ResMixNet(net) => net.forward(&mut f, input)?,
            Network::ResNet(net) => net.forward(&mut f, input)?,
        };
        Ok(f.finish(logits))
    }

    /// The same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), network: self.network.clone(), params: self.params.cast() }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn summary(&self) -> ParamSummary {
        ParamSummary::from_params(&self.config, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_block_count_16_to_16() {
        let mut ps = ParamSet::<f32>::new();
        let mut init = Init::new(&mut ps, rng::stream(0, "init", 0));
        let cfg = BasicBlockCfg { in_channels: 16, out_channels: 16, stride: 1 };
        BasicBlock::build(&mut init, "b", cfg).unwrap();
        assert_eq!(ps.num_scalars(), 2 * (3 * 3 * 16 * 16) + 2 * (2 * 16));
        assert_eq!(ps.num_scalars(), 4672);
    }

    #[test]
    fn basic_block_downsamples() {
        let mut ps = ParamSet::<f32>::new();
        let mut init = Init::new(&mut ps, rng::stream(0, "init", 0));
        let cfg = BasicBlockCfg { in_channels: 16, out_channels: 32, stride: 2 };
        let block = BasicBlock::build(&mut init, "b", cfg).unwrap();
        assert!(block.shortcut.is_some());
        let mut f = Forward::new(&mut ps, Mode::Train);
        let x = f.tape.input(Tensor::<f32>::ones(&[2, 16, 8, 8]));
        let y = block.forward(&mut f, x).unwrap();
        assert_eq!(f.tape.shape(y), &[2, 32, 4, 4]);
    }

    #[test]
    fn basic_block_zero_input_zero_output() {
        let mut ps = ParamSet::<f64>::new();
        let blocks = {
            let mut init = Init::new(&mut ps, rng::stream(1, "init", 0));
            [
                BasicBlockCfg { in_channels: 4, out_channels: 4, stride: 1 },
                BasicBlockCfg { in_channels: 4, out_channels: 8, stride: 2 },
            ]
            .map(|cfg| BasicBlock::build(&mut init, &format!("b{}", cfg.out_channels), cfg).unwrap())
        };
        for block in &blocks {
            for mode in [Mode::Train, Mode::Eval] {
                let mut f = Forward::new(&mut ps, mode);
                let x = f.tape.input(Tensor::zeros(&[2, 4, 4, 4]));
                let y = block.forward(&mut f, x).unwrap();
                assert!(f.tape.value(y).data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn head_count() {
        let mut ps = ParamSet::<f32>::new();
        let mut init = Init::new(&mut ps, rng::stream(0, "init", 0));
        init.dense("head", 64, 2).unwrap();
        assert_eq!(ps.num_scalars(), 64 * 2 + 2);
    }

    #[test]
    fn resnet_depths() {
        assert_eq!(ResNetCfg::with_depth(26).unwrap().blocks_per_stage, 4);
        assert_eq!(ResNetCfg::with_depth(50).unwrap().blocks_per_stage, 8);
        assert!(ResNetCfg::with_depth(27).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ModelConfig::resmixnet(4, 1);
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"arch\":\"resmixnet\""), "{s}");
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), cfg);
        let short: ModelConfig = serde_json::from_str(r#"{"arch":"resnet","blocks_per_stage":8}"#).unwrap();
        assert_eq!(short, ModelConfig::resnet(8));
        assert!(serde_json::from_str::<ModelConfig>(r#"{"arch":"resnet","blocks":8}"#).is_err());
    }
}
