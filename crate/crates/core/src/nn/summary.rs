use serde::Serialize;

use super::{Model, ModelConfig};
use crate::error::Result;
use crate::tensor::{ParamSet, Scalar};

/// One node of the module tree derived from dotted parameter names.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ModuleNode {
    pub name: String,
    pub params: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ModuleNode>,
}

impl ModuleNode {
    fn insert(&mut self, path: &[&str], shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.params += n;
        let Some((head, rest)) = path.split_first() else { return };
        let idx = match self.children.iter().position(|c| c.name == *head) {
            Some(i) => i,
            None => {
                self.children.push(ModuleNode { name: head.to_string(), params: 0, shape: None, children: Vec::new() });
                self.children.len() - 1
            }
        };
        let child = &mut self.children[idx];
        if rest.is_empty() {
            child.params += n;
            child.shape = Some(shape.to_vec());
        } else {
            child.insert(rest, shape);
        }
    }

    pub fn child(&self, name: &str) -> Option<&ModuleNode> {
        self.children.iter().find(|c| c.name == name)
    }
}

/// Exact trainable-scalar count with a per-module breakdown.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ParamSummary {
    pub model: String,
    pub total: usize,
    pub tree: ModuleNode,
    /// Present for ResMixNets: the ResNet26 comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetReport>,
}

impl ParamSummary {
    pub fn from_params<T: Scalar>(config: &ModelConfig, params: &ParamSet<T>) -> Self {
        let mut tree = ModuleNode { name: config.label(), params: 0, shape: None, children: Vec::new() };
        for p in params.params() {
            let path: Vec<&str> = p.name.split('.').collect();
            tree.insert(&path, p.value.shape());
        }
        ParamSummary { model: config.label(), total: params.num_scalars(), tree, budget: None }
    }

    /// Top-level modules and their counts, in build order.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        self.tree.children.iter().map(|c| (c.name.clone(), c.params)).collect()
    }
}

/// Builds `config` and counts its parameters; ResMixNets also get a budget
/// report against ResNet26.
pub fn count_params(config: &ModelConfig) -> Result<ParamSummary> {
    let model = Model::<f32>::build(config, 0)?;
    let mut summary = model.summary();
    if matches!(config, ModelConfig::ResMixNet(_)) {
        summary.budget = Some(budget_check(config)?);
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct BudgetReport {
    pub model: String,
    pub params: usize,
    pub baseline: String,
    pub baseline_params: usize,
    pub within_budget: bool,
}

/// A ResMixNet must never have more parameters than ResNet26.
pub fn budget_check(config: &ModelConfig) -> Result<BudgetReport> {
    let baseline = ModelConfig::resnet26();
    let params = Model::<f32>::build(config, 0)?.num_params();
    let baseline_params = Model::<f32>::build(&baseline, 0)?.num_params();
    Ok(BudgetReport {
        model: config.label(),
        params,
        baseline: baseline.label(),
        baseline_params,
        within_budget: params <= baseline_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_sums_to_total() {
        for cfg in [ModelConfig::resmixnet(2, 2), ModelConfig::resnet(4)] {
            let s = count_params(&cfg).unwrap();
            let sum: usize = s.breakdown().iter().map(|(_, n)| n).sum();
            assert_eq!(sum, s.total);
            assert_eq!(s.tree.params, s.total);
        }
    }

    #[test]
    fn resmixnet_module_tree() {
        let s = count_params(&ModelConfig::resmixnet(2, 1)).unwrap();
        let names: Vec<String> = s.breakdown().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["stem", "m1", "m2", "stage3", "head"]);
        let m1 = s.tree.child("m1").unwrap();
        assert!(m1.child("expert0").is_some() && m1.child("expert1").is_some());
        assert_eq!(m1.child("expert0").unwrap().params, 4672);
        assert_eq!(s.tree.child("head").unwrap().params, 130);
    }
}
