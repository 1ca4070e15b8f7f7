//! 2-D discrete Fourier transforms over the last two axes of (B, C, H, W)
//! tensors. Convention: the forward transform is unnormalized, the inverse
//! carries the 1/(H*W) factor, so a forward/inverse round trip is the
//! identity and the DC bin of the forward transform is the plain sum.

use std::cell::RefCell;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::spectrum::ComplexSpectrum;
use crate::tensor::{Element, Result, Tensor};

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Access to a per-thread FFT planner for the element type.
pub trait FftElement: Element {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R;
}

impl FftElement for f32 {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R {
        PLANNER_F32.with(|p| f(&mut p.borrow_mut()))
    }
}

impl FftElement for f64 {
    fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<Self>) -> R) -> R {
        PLANNER_F64.with(|p| f(&mut p.borrow_mut()))
    }
}

fn transform_planes<T: FftElement>(data: &mut [Complex<T>], h: usize, w: usize, forward: bool) {
    T::with_planner(|planner| {
        let row_fft = if forward {
            planner.plan_fft_forward(w)
        } else {
            planner.plan_fft_inverse(w)
        };
        let col_fft = if forward {
            planner.plan_fft_forward(h)
        } else {
            planner.plan_fft_inverse(h)
        };
        let plane = h * w;
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for chunk in data.chunks_mut(plane) {
            for row in chunk.chunks_mut(w) {
                row_fft.process(row);
            }
            for x in 0..w {
                for y in 0..h {
                    col[y] = chunk[y * w + x];
                }
                col_fft.process(&mut col);
                for y in 0..h {
                    chunk[y * w + x] = col[y];
                }
            }
        }
    });
}

/// Unnormalized forward transform of a real feature map.
pub fn fft2<T: FftElement>(x: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (b, c, h, w) = x.dims4("fft2")?;
    let mut data: Vec<Complex<T>> = x
        .data()
        .iter()
        .map(|&v| Complex::new(v, T::zero()))
        .collect();
    transform_planes(&mut data, h, w, true);
    ComplexSpectrum::from_vec([b, c, h, w], data)
}

/// Full complex inverse with the 1/(H*W) factor.
pub fn ifft2_complex<T: FftElement>(s: &ComplexSpectrum<T>) -> ComplexSpectrum<T> {
    let [b, c, h, w] = s.shape();
    let mut data = s.data().to_vec();
    transform_planes(&mut data, h, w, false);
    let scale = T::one() / T::of_f64((h * w) as f64);
    for z in &mut data {
        *z = Complex::new(z.re * scale, z.im * scale);
    }
    ComplexSpectrum::from_vec([b, c, h, w], data).expect("shape preserved")
}

/// Normalized inverse returning the real part together with the largest
/// absolute imaginary component left behind.
pub fn ifft2_with_residue<T: FftElement>(s: &ComplexSpectrum<T>) -> (Tensor<T>, T) {
    let [b, c, h, w] = s.shape();
    let inv = ifft2_complex(s);
    let mut residue = T::zero();
    let mut data = Vec::with_capacity(inv.numel());
    for z in inv.data() {
        if z.im.abs() > residue {
            residue = z.im.abs();
        }
        data.push(z.re);
    }
    let t = Tensor::from_vec(vec![b, c, h, w], data).expect("shape preserved");
    (t, residue)
}

/// Normalized inverse transform; discards the imaginary residue (which is at
/// round-off level for conjugate-symmetric spectra).
pub fn ifft2<T: FftElement>(s: &ComplexSpectrum<T>) -> Tensor<T> {
    ifft2_with_residue(s).0
}

/// Adjoint of the unnormalized forward transform restricted to real inputs,
/// used by the reverse pass: H*W times the normalized inverse, real part.
pub fn fft2_adjoint<T: FftElement>(cot: &ComplexSpectrum<T>) -> Tensor<T> {
    let [b, c, h, w] = cot.shape();
    let mut data = cot.data().to_vec();
    transform_planes(&mut data, h, w, false);
    let re: Vec<T> = data.into_iter().map(|z| z.re).collect();
    Tensor::from_vec(vec![b, c, h, w], re).expect("shape preserved")
}

/// Adjoint of `ifft2` (normalized inverse followed by taking the real part):
/// the forward transform of the real cotangent, scaled by 1/(H*W).
pub fn ifft2_adjoint<T: FftElement>(cot: &Tensor<T>) -> Result<ComplexSpectrum<T>> {
    let (_, _, h, w) = cot.dims4("ifft2_adjoint")?;
    let mut s = fft2(cot)?;
    let scale = T::one() / T::of_f64((h * w) as f64);
    for z in s.data_mut() {
        *z = Complex::new(z.re * scale, z.im * scale);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;
    use crate::tensor::max_abs_diff;

    #[test]
    fn delta_at_origin_gives_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        x.data_mut()[0] = 1.0;
        let s = fft2(&x).unwrap();
        for z in s.data() {
            assert!((z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_recovers_input() {
        let x: Tensor<f64> = rand_tensor(&[2, 3, 8, 8], 11);
        let back = ifft2(&fft2(&x).unwrap());
        assert!(max_abs_diff(&x, &back) <= 1e-10);
    }

    #[test]
    fn parseval_holds() {
        let x: Tensor<f64> = rand_tensor(&[1, 2, 16, 16], 3);
        let s = fft2(&x).unwrap();
        let spatial: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = s.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / 256.0;
        assert!((spatial - spectral).abs() / spatial.abs() <= 1e-9);
    }

    #[test]
    fn odd_extents_are_supported() {
        let x: Tensor<f64> = rand_tensor(&[1, 1, 5, 7], 4);
        let back = ifft2(&fft2(&x).unwrap());
        assert!(max_abs_diff(&x, &back) <= 1e-10);
    }
}
