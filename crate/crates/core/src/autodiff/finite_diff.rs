//! Central-difference gradient estimation, the independent oracle every
//! analytic gradient is checked against.

use crate::tensor::{Error, Result, Tensor};

/// Central-difference gradient of a scalar-valued function:
/// g_i = (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a time.
/// Errors if `f` returns a non-finite value anywhere on the stencil.
pub fn finite_diff(
    f: impl Fn(&Tensor<f64>) -> Result<f64>,
    at: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument {
            context: "finite_diff step must be positive".into(),
        });
    }
    let mut grad = at.zeros_like();
    let mut probe = at.clone();
    for i in 0..at.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("finite_diff at coordinate {i}"),
            });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::gelu;
    use crate::rng::rand_tensor;

    #[test]
    fn gradient_of_sum_is_ones() {
        let at = rand_tensor(&[2, 3], 1);
        let g = finite_diff(|x| Ok(x.sum()), &at, 1e-6).unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let at = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff(
            |x| Ok(x.data().iter().map(|v| v * v).sum()),
            &at,
            1e-6,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn gelu_slope_at_zero_is_half() {
        let at = Tensor::zeros(&[1, 1, 2, 2]);
        let g = finite_diff(|x| Ok(gelu(x).sum()), &at, 1e-6).unwrap();
        for &v in g.data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_output_is_an_error() {
        let at = Tensor::scalar(1.0);
        let result = finite_diff(|_| Ok(f64::NAN), &at, 1e-6);
        assert!(matches!(result, Err(Error::NonFinite { .. })));
    }
}
