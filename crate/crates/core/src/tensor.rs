//! Dense row-major N-dimensional tensors over `f32`/`f64`.
//!
//! Feature maps use the axis order (batch, channels, height, width). All
//! reductions run in a fixed left-to-right order so results are
//! run-to-run identical.

use std::fmt;

/// Scalar element types the kernels operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// Dtype code used by the tensor fixture file format.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Scalar trait shared by the f32 runtime path and the f64 verification path.
pub trait Element: rustfft::FftNum + num_traits::Float {
    const DTYPE: DType;
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;
    /// Tolerance on the imaginary residue left behind by an inverse
    /// transform of data that should be real.
    fn imag_residue_tol() -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn imag_residue_tol() -> Self {
        1e-3
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn imag_residue_tol() -> Self {
        1e-9
    }
}

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// An axis of one operand does not match what the operation requires.
    DimensionMismatch {
        context: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    /// Full-shape mismatch between two operands.
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Shape metadata is inconsistent with the data buffer.
    InvalidShape {
        context: &'static str,
        shape: Vec<usize>,
        data_len: usize,
    },
    /// A kernel does not fit inside the spatial extent it is applied to.
    KernelTooLarge {
        kernel: usize,
        extent: usize,
    },
    /// Operation requires an even channel count.
    OddChannels {
        context: &'static str,
        channels: usize,
    },
    /// A divisor argument does not divide the extent it partitions.
    NotDivisible {
        context: &'static str,
        divisor: usize,
        extent: usize,
    },
    /// A masked softmax row was given no indices to keep.
    EmptyKeepSet {
        row: usize,
    },
    /// A computation produced NaN or Inf.
    NonFinite {
        stage: String,
    },
    /// Reverse pass requested from a non-scalar output.
    NonScalarLoss {
        numel: usize,
    },
    /// Suite name not registered.
    UnknownSuite {
        name: String,
    },
    InvalidArgument {
        context: String,
    },
    /// Fixture file problems.
    BadMagic {
        found: [u8; 4],
    },
    UnknownDtypeCode {
        code: u8,
    },
    Truncated {
        expected: usize,
        actual: usize,
    },
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                dim,
                expected,
                got,
            } => write!(
                f,
                "{context}: {dim} mismatch, expected {expected}, got {got}"
            ),
            Error::ShapeMismatch { context, lhs, rhs } => {
                write!(f, "{context}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::InvalidShape {
                context,
                shape,
                data_len,
            } => write!(
                f,
                "{context}: shape {shape:?} does not describe {data_len} elements"
            ),
            Error::KernelTooLarge { kernel, extent } => {
                write!(f, "kernel size {kernel} exceeds spatial extent {extent}")
            }
            Error::OddChannels { context, channels } => {
                write!(f, "{context}: channel count {channels} must be even")
            }
            Error::NotDivisible {
                context,
                divisor,
                extent,
            } => write!(f, "{context}: {divisor} does not divide {extent}"),
            Error::EmptyKeepSet { row } => {
                write!(f, "masked softmax row {row} has an empty keep set")
            }
            Error::NonFinite { stage } => {
                write!(f, "non-finite value produced at stage '{stage}'")
            }
            Error::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Error::UnknownSuite { name } => write!(f, "unknown suite '{name}'"),
            Error::InvalidArgument { context } => write!(f, "{context}"),
            Error::BadMagic { found } => {
                write!(f, "bad fixture magic {found:?}, expected \"DFIR\"")
            }
            Error::UnknownDtypeCode { code } => write!(f, "unknown dtype code {code}"),
            Error::Truncated { expected, actual } => {
                write!(f, "truncated body: expected {expected} bytes, got {actual}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != data.len() {
            return Err(Error::InvalidShape {
                context: "Tensor::from_vec",
                shape,
                data_len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Interpret the shape as (B, C, H, W). Errors if the rank is not 4.
    pub fn dims4(&self, context: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::DimensionMismatch {
                context,
                dim: "rank",
                expected: 4,
                got: self.shape.len(),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn l1_norm(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v.abs();
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for &v in &self.data {
            if v.abs() > m {
                m = v.abs();
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn from_f64_tensor(t: &Tensor<f64>) -> Self {
        Self {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| T::of_f64(v)).collect(),
        }
    }
}

fn binary_op<T: Element>(
    context: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            context,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_op("add", a, b, |x, y| x + y)
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_op("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_op("mul", a, b, |x, y| x * y)
}

/// Largest absolute elementwise difference, in f64.
pub fn max_abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape, b.shape, "max_abs_diff: shape mismatch");
    let mut m = 0.0f64;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = (x.as_f64() - y.as_f64()).abs();
        if d > m {
            m = d;
        }
    }
    m
}

/// Relative error metric used by every oracle comparison:
/// max |a - b| over all elements, divided by max(|a|, |b|, 1e-8) where the
/// magnitudes are taken over the whole tensors. The global denominator keeps
/// the metric robust when individual entries are near zero.
pub fn rel_err_max<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let diff = max_abs_diff(a, b);
    let denom = a
        .max_abs()
        .as_f64()
        .max(b.max_abs().as_f64())
        .max(1e-8);
    diff / denom
}

/// Concatenate along the channel axis of (B, C, H, W) tensors.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    assert!(!parts.is_empty());
    let (b, _, h, w) = parts[0].dims4("concat_channels")?;
    let mut c_total = 0;
    for p in parts {
        let (pb, pc, ph, pw) = p.dims4("concat_channels")?;
        if pb != b || ph != h || pw != w {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                lhs: parts[0].shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        c_total += pc;
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[b, c_total, h, w]);
    for bi in 0..b {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data[bi * pc * hw..(bi + 1) * pc * hw];
            let dst_start = (bi * c_total + c_off) * hw;
            out.data[dst_start..dst_start + pc * hw].copy_from_slice(src);
            c_off += pc;
        }
    }
    Ok(out)
}

/// Slice `len` channels starting at `start` out of a (B, C, H, W) tensor.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("slice_channels")?;
    if start + len > c {
        return Err(Error::DimensionMismatch {
            context: "slice_channels",
            dim: "channels",
            expected: c,
            got: start + len,
        });
    }
    let hw = h * w;
    let mut out = Tensor::zeros(&[b, len, h, w]);
    for bi in 0..b {
        let src_start = (bi * c + start) * hw;
        let dst_start = bi * len * hw;
        out.data[dst_start..dst_start + len * hw]
            .copy_from_slice(&x.data[src_start..src_start + len * hw]);
    }
    Ok(out)
}

/// Split a (B, C, H, W) tensor into two channel halves. Requires even C.
pub fn split_half_channels<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, _, _) = x.dims4("split_half_channels")?;
    if c % 2 != 0 {
        return Err(Error::OddChannels {
            context: "split_half_channels",
            channels: c,
        });
    }
    Ok((
        slice_channels(x, 0, c / 2)?,
        slice_channels(x, c / 2, c / 2)?,
    ))
}

/// Multiply each channel by a per-channel constant.
pub fn scale_per_channel<T: Element>(x: &Tensor<T>, scales: &[T]) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("scale_per_channel")?;
    if scales.len() != c {
        return Err(Error::DimensionMismatch {
            context: "scale_per_channel",
            dim: "channels",
            expected: c,
            got: scales.len(),
        });
    }
    let hw = h * w;
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            let start = (bi * c + ci) * hw;
            for v in &mut out.data[start..start + hw] {
                *v = *v * scales[ci];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_zero_extent_and_bad_length() {
        assert!(Tensor::<f64>::from_vec(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = Tensor::from_vec(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 1, 1, 2], vec![5.0, 6.0]).unwrap();
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 3, 1, 2]);
        assert_eq!(cat.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = slice_channels(&cat, 2, 1).unwrap();
        assert_eq!(back.data(), b.data());
    }

    #[test]
    fn rel_err_uses_global_magnitude() {
        let a = Tensor::from_vec(vec![2], vec![1.0, 1e-12]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![1.0, 0.0]).unwrap();
        // The tiny element difference is measured against the global scale.
        assert!(rel_err_max(&a, &b) < 1e-11);
    }

    #[test]
    fn split_requires_even_channels() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(matches!(
            split_half_channels(&x),
            Err(Error::OddChannels { .. })
        ));
    }
}
