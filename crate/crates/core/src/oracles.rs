//! Brute-force references every equivalence claim is checked against.
//! Each oracle is written as plain loops in f64, independent of the
//! optimized paths it verifies.

use num_complex::Complex;

use crate::fft::{fft2, ifft2};
use crate::firc::PeriodizedKernel;
use crate::tensor::{Error, Result, Tensor};

/// Full dense softmax attention, straightforward triple loops:
/// out = softmax(Q K^T / sqrt(d)) V over (N, d) operands.
pub fn dense_attention_reference(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let shape = q.shape();
    if shape.len() != 2 || k.shape() != shape || v.shape() != shape {
        return Err(Error::ShapeMismatch {
            context: "dense_attention_reference",
            lhs: shape.to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    let mut weights = vec![0.0f64; n];
    for i in 0..n {
        let qi = &q.data()[i * d..(i + 1) * d];
        let mut denom = 0.0;
        for j in 0..n {
            let kj = &k.data()[j * d..(j + 1) * d];
            let mut s = 0.0;
            for t in 0..d {
                s += qi[t] * kj[t];
            }
            weights[j] = (s * scale).exp();
            denom += weights[j];
        }
        let row = &mut out.data_mut()[i * d..(i + 1) * d];
        for j in 0..n {
            let w = weights[j] / denom;
            let vj = &v.data()[j * d..(j + 1) * d];
            for t in 0..d {
                row[t] += w * vj[t];
            }
        }
    }
    Ok(out)
}

/// Direct spatial circular convolution with modular indexing, one k x k
/// filter per channel:
/// y(p, q) = sum_{u,v} taps(u, v) * x(p + c - u mod H, q + c - v mod W)
/// with c = k/2, which matches multiplying by the periodized transform of
/// the same taps in the frequency domain.
pub fn circular_conv2d_reference(x: &Tensor<f64>, taps: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (b, c, h, w) = x.dims4("circular_conv2d_reference")?;
    let tshape = taps.shape();
    if tshape.len() != 3 || tshape[0] != c || tshape[1] != tshape[2] {
        return Err(Error::InvalidShape {
            context: "circular_conv2d_reference taps",
            shape: tshape.to_vec(),
            data_len: taps.numel(),
        });
    }
    let k = tshape[1];
    if k > h || k > w {
        return Err(Error::KernelTooLarge {
            kernel: k,
            extent: h.min(w),
        });
    }
    let center = (k / 2) as isize;
    let mut out = x.zeros_like();
    for bi in 0..b {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            let tap_base = ci * k * k;
            for p in 0..h {
                for q in 0..w {
                    let mut acc = 0.0;
                    for u in 0..k {
                        let ih = (p as isize + center - u as isize).rem_euclid(h as isize) as usize;
                        for vker in 0..k {
                            let iw = (q as isize + center - vker as isize).rem_euclid(w as isize)
                                as usize;
                            acc += taps.data()[tap_base + u * k + vker]
                                * x.data()[plane + ih * w + iw];
                        }
                    }
                    out.data_mut()[plane + p * w + q] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Closed-form equivalent of the scale-1 frequency refinement operator:
/// `invfft( (conj(FK) + eps_b) * fft(x) / (|FK|^2 + eps_b) )`, real part.
/// An independent algebraic route used to verify the staged pipeline.
pub fn firc_closed_form_reference(
    f: &Tensor<f64>,
    kernel: &PeriodizedKernel<f64>,
    eps_b: &[f64],
) -> Result<Tensor<f64>> {
    let (b, c, h, w) = f.dims4("firc_closed_form_reference")?;
    if kernel.extent != (h, w) || kernel.otf.shape()[1] != c {
        return Err(Error::ShapeMismatch {
            context: "firc_closed_form_reference kernel",
            lhs: vec![c, kernel.extent.0, kernel.extent.1],
            rhs: kernel.otf.shape().to_vec(),
        });
    }
    if eps_b.len() != c {
        return Err(Error::DimensionMismatch {
            context: "firc_closed_form_reference",
            dim: "channels",
            expected: c,
            got: eps_b.len(),
        });
    }
    let spec = fft2(f)?;
    let mut filtered = spec.clone();
    let hw = h * w;
    for bi in 0..b {
        for ci in 0..c {
            let eps = eps_b[ci];
            for i in 0..hw {
                let fk = kernel.otf.data()[ci * hw + i];
                let gain =
                    (fk.conj() + Complex::new(eps, 0.0)) / Complex::new(fk.norm_sqr() + eps, 0.0);
                let idx = (bi * c + ci) * hw + i;
                filtered.data_mut()[idx] = gain * spec.data()[idx];
            }
        }
    }
    Ok(ifft2(&filtered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firc::periodize_kernel;
    use crate::rng::rand_tensor;
    use crate::tensor::rel_err_max;

    #[test]
    fn single_token_reference_returns_v() {
        let q: Tensor<f64> = rand_tensor(&[1, 4], 1);
        let k: Tensor<f64> = rand_tensor(&[1, 4], 2);
        let v: Tensor<f64> = rand_tensor(&[1, 4], 3);
        let out = dense_attention_reference(&q, &k, &v).unwrap();
        assert!(rel_err_max(&out, &v) < 1e-12);
    }

    #[test]
    fn uniform_logits_average_the_values() {
        // Zero queries give uniform attention: every output row is the mean
        // of the value rows.
        let q = Tensor::zeros(&[3, 2]);
        let k: Tensor<f64> = rand_tensor(&[3, 2], 4);
        let v: Tensor<f64> = rand_tensor(&[3, 2], 5);
        let out = dense_attention_reference(&q, &k, &v).unwrap();
        for t in 0..2 {
            let mean = (v.data()[t] + v.data()[2 + t] + v.data()[4 + t]) / 3.0;
            for i in 0..3 {
                assert!((out.data()[i * 2 + t] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_taps_are_identity() {
        let x: Tensor<f64> = rand_tensor(&[1, 2, 5, 5], 6);
        let mut taps = Tensor::zeros(&[2, 3, 3]);
        taps.data_mut()[4] = 1.0;
        taps.data_mut()[9 + 4] = 1.0;
        let y = circular_conv2d_reference(&x, &taps).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_taps_on_constant_input() {
        let x = Tensor::full(&[1, 1, 4, 4], 2.0f64);
        let taps = Tensor::full(&[1, 3, 3], 1.0f64);
        let y = circular_conv2d_reference(&x, &taps).unwrap();
        for &v in y.data() {
            assert!((v - 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frequency_and_spatial_circular_convolution_agree() {
        let x: Tensor<f64> = rand_tensor(&[1, 2, 8, 8], 7);
        let taps: Tensor<f64> = rand_tensor(&[2, 3, 3], 8);
        let spatial = circular_conv2d_reference(&x, &taps).unwrap();

        let kernel = periodize_kernel(&taps, (8, 8)).unwrap();
        let spec = fft2(&x).unwrap();
        let filtered = crate::spectrum::cmul(&kernel.otf, &spec).unwrap();
        let freq = ifft2(&filtered);
        assert!(rel_err_max(&spatial, &freq) <= 1e-8);
    }

    #[test]
    fn closed_form_with_huge_regularizer_passes_input_through() {
        let x: Tensor<f64> = rand_tensor(&[1, 1, 8, 8], 9);
        let taps: Tensor<f64> = rand_tensor(&[1, 3, 3], 10);
        let kernel = periodize_kernel(&taps, (8, 8)).unwrap();
        let out = firc_closed_form_reference(&x, &kernel, &[1e6]).unwrap();
        assert!(rel_err_max(&out, &x) <= 1e-4);
    }

    #[test]
    fn closed_form_with_delta_kernel_is_identity() {
        let x: Tensor<f64> = rand_tensor(&[1, 1, 6, 6], 11);
        let mut taps = Tensor::zeros(&[1, 3, 3]);
        taps.data_mut()[4] = 1.0;
        let kernel = periodize_kernel(&taps, (6, 6)).unwrap();
        let out = firc_closed_form_reference(&x, &kernel, &[1.3e-4]).unwrap();
        assert!(rel_err_max(&out, &x) <= 1e-10);
    }
}
