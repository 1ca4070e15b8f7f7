//! Comparison harness between analytic tape gradients and the
//! central-difference oracle.

use crate::tensor::{rel_err_max, Tensor};

/// Outcome of one analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub op_name: String,
    pub param_name: String,
    pub analytic: Tensor<f64>,
    pub numeric: Tensor<f64>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn compare(
        op_name: &str,
        param_name: &str,
        analytic: Tensor<f64>,
        numeric: Tensor<f64>,
        tolerance: f64,
    ) -> Self {
        let max_rel_err = rel_err_max(&analytic, &numeric);
        Self {
            op_name: op_name.to_string(),
            param_name: param_name.to_string(),
            analytic,
            numeric,
            max_rel_err,
            tolerance,
            pass: max_rel_err <= tolerance,
        }
    }
}

/// Central-difference step used by the verification suites.
pub const CHECK_STEP: f64 = 1e-6;
/// Relative-error tolerance used by the verification suites.
pub const CHECK_TOL: f64 = 1e-5;
