//! Complex-valued frequency representations of (B, C, H, W) feature maps.

use num_complex::Complex;

use crate::tensor::{Element, Error, Result};

/// Row-major complex spectrum with shape (B, C, H, W). Produced by the 2-D
/// forward transform over the last two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T> {
    shape: [usize; 4],
    data: Vec<Complex<T>>,
}

impl<T: Element> ComplexSpectrum<T> {
    pub fn from_vec(shape: [usize; 4], data: Vec<Complex<T>>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(Error::InvalidShape {
                context: "ComplexSpectrum::from_vec",
                shape: shape.to_vec(),
                data_len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![Complex::new(T::zero(), T::zero()); numel],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// |z|^2 per element, as a real spectrum-shaped buffer.
    pub fn magnitude_sq(&self) -> Vec<T> {
        self.data.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|z| z.norm_sqr().as_f64().sqrt())
            .fold(0.0, f64::max)
    }
}

fn check_same_shape<T: Element>(
    context: &'static str,
    a: &ComplexSpectrum<T>,
    b: &ComplexSpectrum<T>,
) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            context,
            lhs: a.shape.to_vec(),
            rhs: b.shape.to_vec(),
        });
    }
    Ok(())
}

pub fn cadd<T: Element>(a: &ComplexSpectrum<T>, b: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    check_same_shape("cadd", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(ComplexSpectrum { shape: a.shape, data })
}

pub fn csub<T: Element>(a: &ComplexSpectrum<T>, b: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    check_same_shape("csub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(ComplexSpectrum { shape: a.shape, data })
}

/// Elementwise complex product. The left operand may have batch extent 1, in
/// which case it is broadcast across the right operand's batches.
pub fn cmul<T: Element>(a: &ComplexSpectrum<T>, b: &ComplexSpectrum<T>) -> Result<ComplexSpectrum<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        return Ok(ComplexSpectrum { shape: a.shape, data });
    }
    if a.shape[0] == 1 && a.shape[1..] == b.shape[1..] {
        let per_batch = a.data.len();
        let mut data = Vec::with_capacity(b.data.len());
        for (i, y) in b.data.iter().enumerate() {
            data.push(a.data[i % per_batch] * y);
        }
        return Ok(ComplexSpectrum { shape: b.shape, data });
    }
    Err(Error::ShapeMismatch {
        context: "cmul",
        lhs: a.shape.to_vec(),
        rhs: b.shape.to_vec(),
    })
}

/// Elementwise division of a complex spectrum by a real, strictly positive
/// buffer of the same shape.
pub fn cdiv_real<T: Element>(a: &ComplexSpectrum<T>, denom: &[T]) -> Result<ComplexSpectrum<T>> {
    if denom.len() != a.data.len() {
        return Err(Error::DimensionMismatch {
            context: "cdiv_real",
            dim: "elements",
            expected: a.data.len(),
            got: denom.len(),
        });
    }
    let data = a
        .data
        .iter()
        .zip(denom)
        .map(|(z, &d)| Complex::new(z.re / d, z.im / d))
        .collect();
    Ok(ComplexSpectrum { shape: a.shape, data })
}

/// Scale every element of channel `c` by `scales[c]` (real scalars).
pub fn cscale_per_channel<T: Element>(
    a: &ComplexSpectrum<T>,
    scales: &[T],
) -> Result<ComplexSpectrum<T>> {
    let [b, c, h, w] = a.shape;
    if scales.len() != c {
        return Err(Error::DimensionMismatch {
            context: "cscale_per_channel",
            dim: "channels",
            expected: c,
            got: scales.len(),
        });
    }
    let hw = h * w;
    let mut out = a.clone();
    for bi in 0..b {
        for ci in 0..c {
            let start = (bi * c + ci) * hw;
            for z in &mut out.data[start..start + hw] {
                *z = Complex::new(z.re * scales[ci], z.im * scales[ci]);
            }
        }
    }
    Ok(out)
}

/// Replicate a batch-1 spectrum across `batches` batches.
pub fn tile_batch<T: Element>(a: &ComplexSpectrum<T>, batches: usize) -> Result<ComplexSpectrum<T>> {
    let [b, c, h, w] = a.shape;
    if b != 1 {
        return Err(Error::DimensionMismatch {
            context: "tile_batch",
            dim: "batch",
            expected: 1,
            got: b,
        });
    }
    let mut data = Vec::with_capacity(a.data.len() * batches);
    for _ in 0..batches {
        data.extend_from_slice(&a.data);
    }
    Ok(ComplexSpectrum {
        shape: [batches, c, h, w],
        data,
    })
}

/// Largest absolute difference between two spectra (component-wise), in f64.
pub fn cmax_abs_diff<T: Element>(a: &ComplexSpectrum<T>, b: &ComplexSpectrum<T>) -> f64 {
    assert_eq!(a.shape, b.shape);
    let mut m = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        m = m
            .max((x.re.as_f64() - y.re.as_f64()).abs())
            .max((x.im.as_f64() - y.im.as_f64()).abs());
    }
    m
}
