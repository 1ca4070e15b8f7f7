//! Pointwise nonlinearities. GELU uses the exact erf form so its derivative
//! has a single ground truth for gradient checking.

use crate::tensor::{Element, Tensor};

pub fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::of_f64(0.5);
    let inv_sqrt2 = T::of_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * x * (T::one() + (x * inv_sqrt2).erf())
}

/// d/dx gelu(x) = Phi(x) + x * phi(x), with Phi the standard normal CDF.
pub fn gelu_derivative_scalar<T: Element>(x: T) -> T {
    let half = T::of_f64(0.5);
    let inv_sqrt2 = T::of_f64(std::f64::consts::FRAC_1_SQRT_2);
    let phi_coeff = T::of_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
    let pdf = phi_coeff * (-half * x * x).exp();
    cdf + x * pdf
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0f64).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_at_zero_is_half() {
        assert!((gelu_derivative_scalar(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_midpoint() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
    }
}
