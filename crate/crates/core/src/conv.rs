//! 2-D convolution with same-padding, channel groups, and zero or circular
//! boundary handling. Stride 1 preserves the spatial extent; the reverse-mode
//! rules live here next to the forward so the index arithmetic stays in one
//! place.
//!
//! Kernels are square in every production block; rectangular extents are
//! supported so 1-D cases (a 1 x k kernel on a single-row map) work too.

use rand_chacha::ChaCha8Rng;

use crate::rng::init_uniform;
use crate::tensor::{Element, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    Zero,
    Circular,
}

/// Geometry of a convolution, independent of its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub groups: usize,
    pub padding: PaddingMode,
    pub stride: usize,
}

impl ConvGeom {
    /// Square k x k kernel, groups 1, zero padding, stride 1.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel_size,
            kernel_w: kernel_size,
            groups: 1,
            padding: PaddingMode::Zero,
            stride: 1,
        }
    }

    pub fn with_kernel_hw(mut self, kernel_h: usize, kernel_w: usize) -> Self {
        self.kernel_h = kernel_h;
        self.kernel_w = kernel_w;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: PaddingMode) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for k in [self.kernel_h, self.kernel_w] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::InvalidArgument {
                    context: format!("kernel extents must be odd and >= 1, got {k}"),
                });
            }
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument {
                context: "stride must be >= 1".into(),
            });
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::NotDivisible {
                context: "conv groups",
                divisor: self.groups,
                extent: self.in_channels,
            });
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }
}

/// A convolution together with its parameters.
#[derive(Debug, Clone)]
pub struct ConvSpec<T> {
    pub geom: ConvGeom,
    /// Shape (out_channels, in_channels/groups, kh, kw).
    pub weight: Tensor<T>,
    /// Shape (out_channels), optional.
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> ConvSpec<T> {
    pub fn new(geom: ConvGeom, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        geom.validate()?;
        let expected = geom.weight_shape();
        if weight.shape() != expected {
            return Err(Error::ShapeMismatch {
                context: "conv weight",
                lhs: expected.to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = &bias {
            if b.shape() != [geom.out_channels] {
                return Err(Error::DimensionMismatch {
                    context: "conv bias",
                    dim: "out_channels",
                    expected: geom.out_channels,
                    got: b.numel(),
                });
            }
        }
        Ok(Self { geom, weight, bias })
    }

    /// Randomly initialized convolution with bias.
    pub fn init(geom: ConvGeom, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = geom.in_channels / geom.groups * geom.kernel_h * geom.kernel_w;
        let weight = init_uniform(&geom.weight_shape(), fan_in, rng);
        let bias = Some(init_uniform(&[geom.out_channels], fan_in, rng));
        Self { geom, weight, bias }
    }

    /// All-zero weights and bias.
    pub fn zeros(geom: ConvGeom) -> Self {
        Self {
            geom,
            weight: Tensor::zeros(&geom.weight_shape()),
            bias: Some(Tensor::zeros(&[geom.out_channels])),
        }
    }

    /// Depthwise delta kernel: convolving with it is the identity map.
    pub fn identity(channels: usize, kernel_size: usize) -> Self {
        let geom = ConvGeom::new(channels, channels, kernel_size).with_groups(channels);
        let mut weight = Tensor::zeros(&geom.weight_shape());
        let k = kernel_size;
        let center = k / 2;
        for c in 0..channels {
            weight.data_mut()[c * k * k + center * k + center] = T::one();
        }
        Self {
            geom,
            weight,
            bias: None,
        }
    }

    pub fn zero_out(&mut self) {
        for v in self.weight.data_mut() {
            *v = T::zero();
        }
        if let Some(b) = &mut self.bias {
            for v in b.data_mut() {
                *v = T::zero();
            }
        }
    }
}

fn resolve(pos: isize, extent: usize, padding: PaddingMode) -> Option<usize> {
    if pos >= 0 && (pos as usize) < extent {
        return Some(pos as usize);
    }
    match padding {
        PaddingMode::Zero => None,
        PaddingMode::Circular => Some(pos.rem_euclid(extent as isize) as usize),
    }
}

/// Same-padded grouped convolution. Output spatial extent is
/// ceil(H/stride) x ceil(W/stride); stride 1 preserves H x W.
pub fn conv2d<T: Element>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4("conv2d input")?;
    let g = &spec.geom;
    g.validate()?;
    if c != g.in_channels {
        return Err(Error::DimensionMismatch {
            context: "conv2d",
            dim: "in_channels",
            expected: g.in_channels,
            got: c,
        });
    }
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    if g.padding == PaddingMode::Circular && (kh > h || kw > w) {
        return Err(Error::KernelTooLarge {
            kernel: kh.max(kw),
            extent: if kh > h { h } else { w },
        });
    }
    let pad_h = (kh / 2) as isize;
    let pad_w = (kw / 2) as isize;
    let out_h = h.div_ceil(g.stride);
    let out_w = w.div_ceil(g.stride);
    let in_per_group = g.in_channels / g.groups;
    let out_per_group = g.out_channels / g.groups;
    let mut out = Tensor::zeros(&[b, g.out_channels, out_h, out_w]);

    let wdat = spec.weight.data();
    let xdat = input.data();
    let odat = out.data_mut();
    for bi in 0..b {
        for oc in 0..g.out_channels {
            let group = oc / out_per_group;
            let bias = spec.bias.as_ref().map_or(T::zero(), |t| t.data()[oc]);
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = bias;
                    for icg in 0..in_per_group {
                        let ic = group * in_per_group + icg;
                        let x_plane = (bi * c + ic) * h * w;
                        let w_base = ((oc * in_per_group) + icg) * kh * kw;
                        for ki in 0..kh {
                            let ih = (oh * g.stride) as isize + ki as isize - pad_h;
                            let Some(ih) = resolve(ih, h, g.padding) else {
                                continue;
                            };
                            for kj in 0..kw {
                                let iw = (ow * g.stride) as isize + kj as isize - pad_w;
                                let Some(iw) = resolve(iw, w, g.padding) else {
                                    continue;
                                };
                                acc =
                                    acc + wdat[w_base + ki * kw + kj] * xdat[x_plane + ih * w + iw];
                            }
                        }
                    }
                    odat[((bi * g.out_channels + oc) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a stride-1 convolution with respect to input, weight, and
/// bias, given the cotangent of the output.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    spec: &ConvSpec<T>,
    cot: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = input.dims4("conv2d_backward input")?;
    let g = &spec.geom;
    if g.stride != 1 {
        return Err(Error::InvalidArgument {
            context: "conv2d_backward supports stride 1 only".into(),
        });
    }
    if cot.shape() != [b, g.out_channels, h, w] {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward cotangent",
            lhs: vec![b, g.out_channels, h, w],
            rhs: cot.shape().to_vec(),
        });
    }
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let pad_h = (kh / 2) as isize;
    let pad_w = (kw / 2) as isize;
    let in_per_group = g.in_channels / g.groups;
    let out_per_group = g.out_channels / g.groups;

    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let mut dw = Tensor::zeros(spec.weight.shape());
    let mut db = Tensor::zeros(&[g.out_channels]);

    let wdat = spec.weight.data();
    let xdat = input.data();
    let cdat = cot.data();
    for bi in 0..b {
        for oc in 0..g.out_channels {
            let group = oc / out_per_group;
            for oh in 0..h {
                for ow in 0..w {
                    let dy = cdat[((bi * g.out_channels + oc) * h + oh) * w + ow];
                    db.data_mut()[oc] = db.data()[oc] + dy;
                    for icg in 0..in_per_group {
                        let ic = group * in_per_group + icg;
                        let x_plane = (bi * c + ic) * h * w;
                        let w_base = ((oc * in_per_group) + icg) * kh * kw;
                        for ki in 0..kh {
                            let Some(ih) = resolve(oh as isize + ki as isize - pad_h, h, g.padding)
                            else {
                                continue;
                            };
                            for kj in 0..kw {
                                let Some(iw) =
                                    resolve(ow as isize + kj as isize - pad_w, w, g.padding)
                                else {
                                    continue;
                                };
                                let wi = w_base + ki * kw + kj;
                                let xi = x_plane + ih * w + iw;
                                dx.data_mut()[xi] = dx.data()[xi] + wdat[wi] * dy;
                                dw.data_mut()[wi] = dw.data()[wi] + xdat[xi] * dy;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}
