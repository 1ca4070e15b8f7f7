//! Spatial upsampling operators: nearest-neighbor replication and
//! zero-insertion. Both scale H and W by an integer factor.

use crate::tensor::{Element, Error, Result, Tensor};

fn check_scale(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidArgument {
            context: "upsample scale must be >= 1".into(),
        });
    }
    Ok(())
}

/// Replicate every value into an s x s block. The L1 mass grows by exactly
/// s^2 since each value appears s^2 times.
pub fn nearest_upsample<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    check_scale(s)?;
    let (b, c, h, w) = x.dims4("nearest_upsample")?;
    if s == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / s) * w + j / s];
            }
        }
    }
    Ok(out)
}

/// Place each value at the top-left corner of its s x s block and fill the
/// rest with exact zeros. Preserves the L1 mass bit-exactly.
pub fn zero_insert_upsample<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    check_scale(s)?;
    let (b, c, h, w) = x.dims4("zero_insert_upsample")?;
    if s == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                dst[(i * s) * ow + j * s] = src[i * w + j];
            }
        }
    }
    Ok(out)
}

/// Adjoint of nearest_upsample: sum each s x s block of the cotangent.
pub fn nearest_upsample_adjoint<T: Element>(cot: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = cot.dims4("nearest_upsample_adjoint")?;
    if s == 1 {
        return Ok(cot.clone());
    }
    let (h, w) = (oh / s, ow / s);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for plane in 0..b * c {
        let src = &cot.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / s) * w + j / s] = dst[(i / s) * w + j / s] + src[i * ow + j];
            }
        }
    }
    Ok(out)
}

/// Adjoint of zero_insert_upsample: read back the strided sample positions.
pub fn zero_insert_upsample_adjoint<T: Element>(cot: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = cot.dims4("zero_insert_upsample_adjoint")?;
    if s == 1 {
        return Ok(cot.clone());
    }
    let (h, w) = (oh / s, ow / s);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for plane in 0..b * c {
        let src = &cot.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = src[(i * s) * ow + j * s];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rand_tensor, rand_tensor_exact_grid};

    #[test]
    fn nearest_replicates_blocks() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = nearest_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0
            ]
        );
    }

    #[test]
    fn scale_one_is_identity() {
        let x: Tensor<f64> = rand_tensor(&[1, 2, 3, 3], 8);
        assert_eq!(nearest_upsample(&x, 1).unwrap().data(), x.data());
        assert_eq!(zero_insert_upsample(&x, 1).unwrap().data(), x.data());
    }

    #[test]
    fn nearest_l1_grows_by_replication_count() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0f64);
        let y = nearest_upsample(&x, 3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
        assert_eq!(x.l1_norm(), 4.0);
        assert_eq!(y.l1_norm(), 36.0);
    }

    #[test]
    fn nearest_l1_identity_on_exact_grid() {
        for s in [1usize, 2, 3, 4] {
            let x: Tensor<f64> = rand_tensor_exact_grid(&[1, 2, 6, 6], 100 + s as u64);
            let y = nearest_upsample(&x, s).unwrap();
            assert_eq!(y.l1_norm(), (s * s) as f64 * x.l1_norm());
        }
    }

    #[test]
    fn zero_insert_places_single_value() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = zero_insert_upsample(&x, 2).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_insert_preserves_l1_for_any_input() {
        let x: Tensor<f64> = rand_tensor(&[2, 3, 5, 4], 77);
        for s in [1usize, 2, 3] {
            let y = zero_insert_upsample(&x, s).unwrap();
            assert_eq!(y.l1_norm(), x.l1_norm());
        }
    }
}
