use super::config::TrainConfig;
use crate::data::DatasetKind;
use crate::nn::ModelConfig;

/// Tuned learning rate for one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub dataset: DatasetKind,
    pub model: ModelConfig,
    pub learning_rate: f64,
}

impl Preset {
    /// The full recipe with this preset's model and rate; data paths unset.
    pub fn config(&self) -> TrainConfig {
        TrainConfig { model: self.model.clone(), learning_rate: self.learning_rate, ..TrainConfig::default() }
    }
}

pub fn presets() -> Vec<Preset> {
    use DatasetKind::{MnistParity, Pentomino};
    let p = |name, dataset, model, learning_rate| Preset { name, dataset, model, learning_rate };
    vec![
        p("table3-resnet26-pentomino", Pentomino, ModelConfig::resnet26(), 0.1),
        p("table3-resnet50-pentomino", Pentomino, ModelConfig::resnet(8), 0.1),
        p("table3-resmix41-pentomino", Pentomino, ModelConfig::resmixnet(4, 1), 0.01),
        p("table3-resnet26-mnist-parity", MnistParity, ModelConfig::resnet26(), 0.05),
        p("table3-resnet50-mnist-parity", MnistParity, ModelConfig::resnet(8), 0.1),
        p("table3-resmix22-mnist-parity", MnistParity, ModelConfig::resmixnet(2, 2), 0.1),
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rates() {
        let lr = |n: &str| preset(n).unwrap().learning_rate;
        assert_eq!(lr("table3-resmix41-pentomino"), 0.01);
        assert_eq!(lr("table3-resmix22-mnist-parity"), 0.1);
        assert_eq!(lr("table3-resnet26-mnist-parity"), 0.05);
        assert_eq!(preset("table3-resnet50-pentomino").unwrap().model.label(), "ResNet50");
        assert!(preset("nope").is_none());
        for p in presets() {
            p.config().validate().unwrap();
        }
    }
}
