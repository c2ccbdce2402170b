//! Independent oracles: gradient checks, a naive convolution reference,
//! dataset audits and the parameter budget.

mod audit;
mod conv_ref;
mod gradcheck;

pub use audit::{audit_dataset, audit_dataset_with, audit_loaded, AuditReport};
pub use conv_ref::{conv_differential, conv_naive, ConvDiffReport, ConvTrial, ARCH_GEOMETRIES};
pub use gradcheck::{
    check_model, check_ops, op_cases, rel_err, GradCheckReport, OpCase, TensorCheck, MAX_SKIP_FRACTION,
    MODEL_SAMPLES_PER_TENSOR, MODEL_STEP, MODEL_THRESHOLD, OP_STEP, OP_THRESHOLD,
};

use crate::error::Result;
use crate::nn::{budget_check, BudgetReport, ModelConfig};

/// Passes iff `config` has no more parameters than ResNet26.
pub fn enforce_budget(config: &ModelConfig) -> Result<BudgetReport> {
    budget_check(config)
}

/// Seed of the fixed full-model fixture.
pub const MODEL_FIXTURE_SEED: u64 = 0;

/// Full-model gradient check with the default fixture: a 2×3×8×8 batch in
/// eval mode (batch norm as an affine map of its running statistics),
/// step 1e-4, 64 sampled scalars per parameter tensor.
pub fn check_full_model(config: &ModelConfig) -> Result<GradCheckReport> {
    check_model(
        config,
        [2, 3, 8, 8],
        crate::tensor::Mode::Eval,
        MODEL_FIXTURE_SEED,
        MODEL_SAMPLES_PER_TENSOR,
        MODEL_STEP,
        MODEL_THRESHOLD,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_examples() {
        assert!(enforce_budget(&ModelConfig::resmixnet(2, 2)).unwrap().within_budget);
        assert!(enforce_budget(&ModelConfig::resmixnet(4, 1)).unwrap().within_budget);
        let big = enforce_budget(&ModelConfig::resmixnet(8, 4)).unwrap();
        assert!(!big.within_budget);
        assert!(big.params > big.baseline_params);
    }
}
