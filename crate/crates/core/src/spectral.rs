//! Spectrum-resolution operators: the alias average that folds an (sH, sW)
//! spectrum into s x s congruent tiles, and the tiling repeat that undoes it.
//!
//! Means are computed as base + mean(deviations from base). Besides being
//! the numerically centered form, it makes averaging s^2 identical values
//! return that value bit-exactly, so repeat followed by average is an exact
//! identity at every scale.

use num_complex::Complex;

use crate::spectrum::ComplexSpectrum;
use crate::tensor::{Element, Error, Result, Tensor};

fn check_divides(context: &'static str, s: usize, h: usize, w: usize) -> Result<()> {
    if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(Error::NotDivisible {
            context,
            divisor: s,
            extent: if s == 0 || !h.is_multiple_of(s) { h } else { w },
        });
    }
    Ok(())
}

/// Fold an (sH', sW') spectrum down to (H', W'): output bin (u, v) is the
/// mean of the s^2 aliases {(u + m*H', v + n*W')}.
pub fn block_avg_spectrum<T: Element>(spec: &ComplexSpectrum<T>, s: usize) -> Result<ComplexSpectrum<T>> {
    let [b, c, h, w] = spec.shape();
    check_divides("block_avg_spectrum", s, h, w)?;
    if s == 1 {
        return Ok(spec.clone());
    }
    let (oh, ow) = (h / s, w / s);
    let inv = T::one() / T::of_f64((s * s) as f64);
    let mut out = ComplexSpectrum::zeros([b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &spec.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for u in 0..oh {
            for v in 0..ow {
                let base = src[u * w + v];
                let mut dev = Complex::new(T::zero(), T::zero());
                for m in 0..s {
                    for n in 0..s {
                        if m == 0 && n == 0 {
                            continue;
                        }
                        dev = dev + (src[(u + m * oh) * w + (v + n * ow)] - base);
                    }
                }
                dst[u * ow + v] = base + Complex::new(dev.re * inv, dev.im * inv);
            }
        }
    }
    Ok(out)
}

/// Tile an (H', W') spectrum s x s times up to (sH', sW'), the right inverse
/// of `block_avg_spectrum`.
pub fn repeat_spectrum<T: Element>(spec: &ComplexSpectrum<T>, s: usize) -> Result<ComplexSpectrum<T>> {
    if s == 0 {
        return Err(Error::InvalidArgument {
            context: "repeat_spectrum scale must be >= 1".into(),
        });
    }
    let [b, c, h, w] = spec.shape();
    if s == 1 {
        return Ok(spec.clone());
    }
    let (oh, ow) = (h * s, w * s);
    let mut out = ComplexSpectrum::zeros([b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &spec.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i % h) * w + (j % w)];
            }
        }
    }
    Ok(out)
}

/// Real-valued variant of the alias average, for magnitude spectra.
pub fn block_avg_tensor<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("block_avg_tensor")?;
    check_divides("block_avg_tensor", s, h, w)?;
    if s == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / s, w / s);
    let inv = T::one() / T::of_f64((s * s) as f64);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for u in 0..oh {
            for v in 0..ow {
                let base = src[u * w + v];
                let mut dev = T::zero();
                for m in 0..s {
                    for n in 0..s {
                        if m == 0 && n == 0 {
                            continue;
                        }
                        dev = dev + (src[(u + m * oh) * w + (v + n * ow)] - base);
                    }
                }
                dst[u * ow + v] = base + dev * inv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of `block_avg_spectrum`: spread the cotangent back over the
/// aliases with weight 1/s^2.
pub fn block_avg_adjoint<T: Element>(cot: &ComplexSpectrum<T>, s: usize) -> Result<ComplexSpectrum<T>> {
    let tiled = repeat_spectrum(cot, s)?;
    let inv = T::one() / T::of_f64((s * s) as f64);
    let mut out = tiled;
    for z in out.data_mut() {
        *z = Complex::new(z.re * inv, z.im * inv);
    }
    Ok(out)
}

/// Adjoint of `repeat_spectrum`: sum the cotangent over the s x s tiles.
pub fn repeat_adjoint<T: Element>(cot: &ComplexSpectrum<T>, s: usize) -> Result<ComplexSpectrum<T>> {
    let [b, c, h, w] = cot.shape();
    check_divides("repeat_adjoint", s, h, w)?;
    if s == 1 {
        return Ok(cot.clone());
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = ComplexSpectrum::zeros([b, c, oh, ow]);
    for plane in 0..b * c {
        let src = &cot.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                let d = &mut dst[(i % oh) * ow + (j % ow)];
                *d = *d + src[i * w + j];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft2;
    use crate::rng::rand_tensor;
    use crate::spectrum::cmax_abs_diff;

    fn random_spectrum(shape: &[usize], seed: u64) -> ComplexSpectrum<f64> {
        fft2(&rand_tensor::<f64>(shape, seed)).unwrap()
    }

    #[test]
    fn two_by_two_averages_to_single_bin() {
        let re = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = fft2(&re).unwrap();
        let avg = block_avg_spectrum(&spec, 2).unwrap();
        assert_eq!(avg.shape(), [1, 1, 1, 1]);
        let expect = (spec.data()[0] + spec.data()[1] + spec.data()[2] + spec.data()[3]) / 4.0;
        assert!((avg.data()[0] - expect).norm() < 1e-12);
    }

    #[test]
    fn scale_one_is_identity() {
        let s = random_spectrum(&[1, 2, 4, 4], 12);
        assert_eq!(block_avg_spectrum(&s, 1).unwrap().data(), s.data());
        assert_eq!(repeat_spectrum(&s, 1).unwrap().data(), s.data());
    }

    #[test]
    fn single_bin_tiles_everywhere() {
        let mut s = ComplexSpectrum::<f64>::zeros([1, 1, 1, 1]);
        s.data_mut()[0] = num_complex::Complex::new(3.5, -0.5);
        let tiled = repeat_spectrum(&s, 2).unwrap();
        assert_eq!(tiled.shape(), [1, 1, 2, 2]);
        for z in tiled.data() {
            assert_eq!(*z, num_complex::Complex::new(3.5, -0.5));
        }
    }

    #[test]
    fn constant_spectrum_stays_constant() {
        let mut s = ComplexSpectrum::<f64>::zeros([1, 1, 6, 6]);
        for z in s.data_mut() {
            *z = num_complex::Complex::new(2.5, -1.25);
        }
        for scale in [1, 2, 3] {
            let avg = block_avg_spectrum(&s, scale).unwrap();
            for z in avg.data() {
                assert_eq!(*z, num_complex::Complex::new(2.5, -1.25));
            }
        }
    }

    #[test]
    fn repeat_then_average_is_exact_identity() {
        for s in [2usize, 3, 4] {
            let spec = random_spectrum(&[1, 2, 3, 5], 40 + s as u64);
            let round = block_avg_spectrum(&repeat_spectrum(&spec, s).unwrap(), s).unwrap();
            assert_eq!(round.data(), spec.data(), "scale {s}");
        }
    }

    #[test]
    fn average_then_repeat_is_idempotent() {
        let spec = random_spectrum(&[1, 1, 6, 6], 9);
        let proj = |z: &ComplexSpectrum<f64>| {
            repeat_spectrum(&block_avg_spectrum(z, 3).unwrap(), 3).unwrap()
        };
        let once = proj(&spec);
        let twice = proj(&once);
        assert!(cmax_abs_diff(&once, &twice) == 0.0);
    }
}
