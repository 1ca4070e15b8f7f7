//! Tape-based reverse-mode differentiation over the tensor operation set,
//! in f64. Nodes are appended in topological order by construction; the
//! reverse pass visits them exactly once in reverse.
//!
//! Complex-valued nodes carry cotangents with the convention
//! cot(z) = dL/d(Re z) + i * dL/d(Im z), so a C-linear forward map with
//! matrix A pulls cotangents back through A^H, and conjugation pulls back
//! through conjugation.

use num_complex::Complex;

use crate::conv::{conv2d, conv2d_backward, ConvGeom, ConvSpec};
use crate::fft::{fft2, fft2_adjoint, ifft2_adjoint, ifft2_with_residue};
use crate::norm::{group_norm_backward, group_norm_with_stats, GroupNormStats, NormKind, NormSpec};
use crate::resample::{
    nearest_upsample, nearest_upsample_adjoint, zero_insert_upsample, zero_insert_upsample_adjoint,
};
use crate::shuffle::{channel_shuffle, channel_shuffle_inverse};
use crate::softmax::{masked_softmax, masked_softmax_backward};
use crate::spectral::{
    block_avg_adjoint, block_avg_spectrum, block_avg_tensor, repeat_adjoint, repeat_spectrum,
};
use crate::spectrum::{cadd, cdiv_real, cmul, csub, ComplexSpectrum};
use crate::tensor::{
    add, concat_channels, mul, scale_per_channel, slice_channels, sub, Element, Error, Result,
    Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub enum Value {
    Re(Tensor<f64>),
    Cx(ComplexSpectrum<f64>),
}

impl Value {
    fn zeros_like(&self) -> Value {
        match self {
            Value::Re(t) => Value::Re(t.zeros_like()),
            Value::Cx(s) => Value::Cx(ComplexSpectrum::zeros(s.shape())),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ChannelScaleConst(NodeId, Vec<f64>),
    AddChannelConst(NodeId),
    ChannelAffine {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
    },
    Gelu(NodeId),
    Sigmoid(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    GroupNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        groups: usize,
        eps: f64,
        stats: GroupNormStats,
    },
    MaskedSoftmax {
        logits: NodeId,
        keep: Vec<Vec<usize>>,
    },
    NearestUp(NodeId, usize),
    ZeroInsertUp(NodeId, usize),
    ChannelShuffle(NodeId),
    ConcatCh(Vec<NodeId>),
    SliceCh {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Reshape {
        x: NodeId,
        orig: Vec<usize>,
    },
    NchwToTokens(NodeId),
    TokensToNchw {
        x: NodeId,
    },
    SplitHeads {
        x: NodeId,
        heads: usize,
    },
    MergeHeads {
        x: NodeId,
        heads: usize,
    },
    BmmNt {
        a: NodeId,
        b: NodeId,
    },
    BmmNn {
        a: NodeId,
        b: NodeId,
    },
    Sum(NodeId),
    PadTaps {
        x: NodeId,
    },
    Roll2d {
        x: NodeId,
        dy: isize,
        dx: isize,
    },
    Fft2(NodeId),
    Ifft2Re(NodeId),
    CMul(NodeId, NodeId),
    CAdd(NodeId, NodeId),
    CSub(NodeId, NodeId),
    Conj(NodeId),
    MagSq(NodeId),
    CDivRe {
        a: NodeId,
        d: NodeId,
    },
    CScaleChannel(NodeId, Vec<f64>),
    BlockAvg(NodeId, usize),
    RepeatSpec(NodeId, usize),
    BlockAvgRe(NodeId, usize),
}

struct Node {
    value: Value,
    op: Op,
}

/// Recorded forward computation plus a registry of named parameters.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

/// Per-node cotangents produced by the reverse pass.
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a real-valued node; zero if the
    /// node does not influence the loss.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Tensor<f64> {
        match &self.grads[id.0] {
            Some(Value::Re(t)) => t.clone(),
            Some(Value::Cx(_)) => panic!("node {} is complex-valued", id.0),
            None => match &tape.nodes[id.0].value {
                Value::Re(t) => t.zeros_like(),
                Value::Cx(_) => panic!("node {} is complex-valued", id.0),
            },
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn re(&self, id: NodeId) -> &Tensor<f64> {
        match &self.nodes[id.0].value {
            Value::Re(t) => t,
            Value::Cx(_) => panic!("node {} is complex-valued, expected real", id.0),
        }
    }

    fn cx(&self, id: NodeId) -> &ComplexSpectrum<f64> {
        match &self.nodes[id.0].value {
            Value::Cx(s) => s,
            Value::Re(_) => panic!("node {} is real-valued, expected complex", id.0),
        }
    }

    /// Forward value of a real node.
    pub fn value(&self, id: NodeId) -> &Tensor<f64> {
        self.re(id)
    }

    /// Forward value of a complex node.
    pub fn value_cx(&self, id: NodeId) -> &ComplexSpectrum<f64> {
        self.cx(id)
    }

    pub fn leaf(&mut self, t: Tensor<f64>) -> NodeId {
        self.push(Value::Re(t), Op::Leaf)
    }

    /// Leaf registered under a name for gradient reporting.
    pub fn param(&mut self, name: &str, t: Tensor<f64>) -> NodeId {
        let id = self.leaf(t);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn param_names(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.params.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = add(self.re(a), self.re(b))?;
        Ok(self.push(Value::Re(v), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = sub(self.re(a), self.re(b))?;
        Ok(self.push(Value::Re(v), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = mul(self.re(a), self.re(b))?;
        Ok(self.push(Value::Re(v), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.re(a).scale(c);
        self.push(Value::Re(v), Op::Scale(a, c))
    }

    pub fn channel_scale_const(&mut self, a: NodeId, scales: &[f64]) -> Result<NodeId> {
        let v = scale_per_channel(self.re(a), scales)?;
        Ok(self.push(Value::Re(v), Op::ChannelScaleConst(a, scales.to_vec())))
    }

    /// `y[b,c,.] = x[b,c,.] + consts[c]`.
    pub fn add_channel_const(&mut self, a: NodeId, consts: &[f64]) -> Result<NodeId> {
        let x = self.re(a);
        let (bb, c, h, w) = x.dims4("add_channel_const")?;
        if consts.len() != c {
            return Err(Error::DimensionMismatch {
                context: "add_channel_const",
                dim: "channels",
                expected: c,
                got: consts.len(),
            });
        }
        let mut out = x.clone();
        let hw = h * w;
        for bi in 0..bb {
            for ci in 0..c {
                let start = (bi * c + ci) * hw;
                for v in &mut out.data_mut()[start..start + hw] {
                    *v += consts[ci];
                }
            }
        }
        Ok(self.push(Value::Re(out), Op::AddChannelConst(a)))
    }

    pub fn channel_affine(&mut self, x: NodeId, gain: NodeId, shift: NodeId) -> Result<NodeId> {
        let spec = NormSpec {
            kind: NormKind::BatchAffine,
            num_groups: 1,
            eps: 1e-5,
            gain: self.re(gain).clone(),
            shift: self.re(shift).clone(),
        };
        let v = crate::norm::channel_affine(self.re(x), &spec)?;
        Ok(self.push(Value::Re(v), Op::ChannelAffine { x, gain, shift }))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = crate::activation::gelu(self.re(x));
        self.push(Value::Re(v), Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = crate::activation::sigmoid(self.re(x));
        self.push(Value::Re(v), Op::Sigmoid(x))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    ) -> Result<NodeId> {
        let spec = ConvSpec::new(geom, self.re(w).clone(), b.map(|bid| self.re(bid).clone()))?;
        let v = conv2d(self.re(x), &spec)?;
        Ok(self.push(Value::Re(v), Op::Conv2d { x, w, b, geom }))
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let spec = NormSpec {
            kind: NormKind::GroupNorm,
            num_groups: groups,
            eps,
            gain: self.re(gain).clone(),
            shift: self.re(shift).clone(),
        };
        let (stats, v) = group_norm_with_stats(self.re(x), &spec)?;
        Ok(self.push(
            Value::Re(v),
            Op::GroupNorm {
                x,
                gain,
                shift,
                groups,
                eps,
                stats,
            },
        ))
    }

    pub fn masked_softmax(&mut self, logits: NodeId, keep: Vec<Vec<usize>>) -> Result<NodeId> {
        let v = masked_softmax(self.re(logits), &keep)?;
        Ok(self.push(Value::Re(v), Op::MaskedSoftmax { logits, keep }))
    }

    pub fn nearest_upsample(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let v = nearest_upsample(self.re(x), s)?;
        Ok(self.push(Value::Re(v), Op::NearestUp(x, s)))
    }

    pub fn zero_insert_upsample(&mut self, x: NodeId, s: usize) -> Result<NodeId> {
        let v = zero_insert_upsample(self.re(x), s)?;
        Ok(self.push(Value::Re(v), Op::ZeroInsertUp(x, s)))
    }

    pub fn channel_shuffle(&mut self, x: NodeId) -> Result<NodeId> {
        let v = channel_shuffle(self.re(x))?;
        Ok(self.push(Value::Re(v), Op::ChannelShuffle(x)))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<f64>> = parts.iter().map(|&p| self.re(p)).collect();
        let v = concat_channels(&tensors)?;
        Ok(self.push(Value::Re(v), Op::ConcatCh(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = slice_channels(self.re(x), start, len)?;
        Ok(self.push(Value::Re(v), Op::SliceCh { x, start, len }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let orig = self.re(x).shape().to_vec();
        let v = self.re(x).reshaped(shape)?;
        Ok(self.push(Value::Re(v), Op::Reshape { x, orig }))
    }

    /// (B, C, H, W) -> (B, H*W, C) token layout.
    pub fn nchw_to_tokens(&mut self, x: NodeId) -> Result<NodeId> {
        let v = nchw_to_tokens(self.re(x))?;
        Ok(self.push(Value::Re(v), Op::NchwToTokens(x)))
    }

    /// (B, N, C) -> (B, C, H, W) with N = H*W.
    pub fn tokens_to_nchw(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let v = tokens_to_nchw(self.re(x), h, w)?;
        Ok(self.push(Value::Re(v), Op::TokensToNchw { x }))
    }

    /// (B, N, C) -> (B*heads, N, C/heads).
    pub fn split_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let v = split_heads(self.re(x), heads)?;
        Ok(self.push(Value::Re(v), Op::SplitHeads { x, heads }))
    }

    /// (B*heads, N, C/heads) -> (B, N, C).
    pub fn merge_heads(&mut self, x: NodeId, heads: usize) -> Result<NodeId> {
        let v = merge_heads(self.re(x), heads)?;
        Ok(self.push(Value::Re(v), Op::MergeHeads { x, heads }))
    }

    /// Batched a @ b^T: (g, m, d) x (g, n, d) -> (g, m, n).
    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = bmm_nt(self.re(a), self.re(b))?;
        Ok(self.push(Value::Re(v), Op::BmmNt { a, b }))
    }

    /// Batched a @ b: (g, m, n) x (g, n, d) -> (g, m, d).
    pub fn bmm_nn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = bmm_nn(self.re(a), self.re(b))?;
        Ok(self.push(Value::Re(v), Op::BmmNn { a, b }))
    }

    /// Scalar sum of all entries, shape (1).
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.re(x).sum());
        self.push(Value::Re(v), Op::Sum(x))
    }

    /// Place (C, k, k) taps at the top-left of an otherwise-zero
    /// (1, C, h, w) map.
    pub fn pad_taps(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let v = pad_taps(self.re(x), h, w)?;
        Ok(self.push(Value::Re(v), Op::PadTaps { x }))
    }

    /// Circularly shift the last two axes by (dy, dx).
    pub fn roll2d(&mut self, x: NodeId, dy: isize, dx: isize) -> Result<NodeId> {
        let v = roll2d(self.re(x), dy, dx)?;
        Ok(self.push(Value::Re(v), Op::Roll2d { x, dy, dx }))
    }

    pub fn fft2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = fft2(self.re(x))?;
        Ok(self.push(Value::Cx(v), Op::Fft2(x)))
    }

    /// Inverse transform, real part.
    pub fn ifft2_re(&mut self, z: NodeId) -> NodeId {
        let (v, _residue) = ifft2_with_residue(self.cx(z));
        self.push(Value::Re(v), Op::Ifft2Re(z))
    }

    pub fn cmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.cx(a).shape(), self.cx(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context: "tape cmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let v = cmul(self.cx(a), self.cx(b))?;
        Ok(self.push(Value::Cx(v), Op::CMul(a, b)))
    }

    pub fn cadd(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = cadd(self.cx(a), self.cx(b))?;
        Ok(self.push(Value::Cx(v), Op::CAdd(a, b)))
    }

    pub fn csub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = csub(self.cx(a), self.cx(b))?;
        Ok(self.push(Value::Cx(v), Op::CSub(a, b)))
    }

    pub fn conj(&mut self, a: NodeId) -> NodeId {
        let v = self.cx(a).conj();
        self.push(Value::Cx(v), Op::Conj(a))
    }

    /// |z|^2 as a real tensor with the spectrum's shape.
    pub fn mag_sq(&mut self, a: NodeId) -> NodeId {
        let s = self.cx(a);
        let shape = s.shape();
        let v = Tensor::from_vec(shape.to_vec(), s.magnitude_sq()).expect("shape preserved");
        self.push(Value::Re(v), Op::MagSq(a))
    }

    /// Complex numerator divided elementwise by a real denominator.
    pub fn cdiv_re(&mut self, a: NodeId, d: NodeId) -> Result<NodeId> {
        let denom = self.re(d);
        if self.cx(a).shape().to_vec() != denom.shape() {
            return Err(Error::ShapeMismatch {
                context: "tape cdiv_re",
                lhs: self.cx(a).shape().to_vec(),
                rhs: denom.shape().to_vec(),
            });
        }
        let v = cdiv_real(self.cx(a), denom.data())?;
        Ok(self.push(Value::Cx(v), Op::CDivRe { a, d }))
    }

    pub fn cscale_channel(&mut self, a: NodeId, scales: &[f64]) -> Result<NodeId> {
        let v = crate::spectrum::cscale_per_channel(self.cx(a), scales)?;
        Ok(self.push(Value::Cx(v), Op::CScaleChannel(a, scales.to_vec())))
    }

    pub fn block_avg(&mut self, a: NodeId, s: usize) -> Result<NodeId> {
        let v = block_avg_spectrum(self.cx(a), s)?;
        Ok(self.push(Value::Cx(v), Op::BlockAvg(a, s)))
    }

    pub fn repeat_spectrum(&mut self, a: NodeId, s: usize) -> Result<NodeId> {
        let v = repeat_spectrum(self.cx(a), s)?;
        Ok(self.push(Value::Cx(v), Op::RepeatSpec(a, s)))
    }

    pub fn block_avg_re(&mut self, a: NodeId, s: usize) -> Result<NodeId> {
        let v = block_avg_tensor(self.re(a), s)?;
        Ok(self.push(Value::Re(v), Op::BlockAvgRe(a, s)))
    }

    /// Reverse pass from a scalar loss. Every reachable node receives its
    /// cotangent; unreachable parameters read back as zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = match &self.nodes[loss.0].value {
            Value::Re(t) => t,
            Value::Cx(_) => {
                return Err(Error::NonScalarLoss { numel: 0 });
            }
        };
        if loss_val.numel() != 1 {
            return Err(Error::NonScalarLoss {
                numel: loss_val.numel(),
            });
        }
        let mut grads: Vec<Option<Value>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Value::Re(Tensor::scalar(1.0)));

        for idx in (0..=loss.0).rev() {
            let Some(cot) = grads[idx].clone() else {
                continue;
            };
            match (&self.nodes[idx].op, cot) {
                (Op::Leaf, _) => {}
                (Op::Add(a, b), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, c.clone());
                    self.acc_re(&mut grads, *b, c);
                }
                (Op::Sub(a, b), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, c.clone());
                    self.acc_re(&mut grads, *b, c.scale(-1.0));
                }
                (Op::Mul(a, b), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, mul(&c, self.re(*b))?);
                    self.acc_re(&mut grads, *b, mul(&c, self.re(*a))?);
                }
                (Op::Scale(a, f), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, c.scale(*f));
                }
                (Op::ChannelScaleConst(a, scales), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, scale_per_channel(&c, scales)?);
                }
                (Op::AddChannelConst(a), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, c);
                }
                (Op::ChannelAffine { x, gain, shift }, Value::Re(c)) => {
                    let xv = self.re(*x);
                    let gv = self.re(*gain);
                    let (b, ch, h, w) = xv.dims4("channel_affine backward")?;
                    let hw = h * w;
                    let mut dx = xv.zeros_like();
                    let mut dgain = Tensor::zeros(&[ch]);
                    let mut dshift = Tensor::zeros(&[ch]);
                    for bi in 0..b {
                        for ci in 0..ch {
                            let start = (bi * ch + ci) * hw;
                            for i in 0..hw {
                                let dy = c.data()[start + i];
                                dx.data_mut()[start + i] = gv.data()[ci] * dy;
                                dgain.data_mut()[ci] += xv.data()[start + i] * dy;
                                dshift.data_mut()[ci] += dy;
                            }
                        }
                    }
                    self.acc_re(&mut grads, *x, dx);
                    self.acc_re(&mut grads, *gain, dgain);
                    self.acc_re(&mut grads, *shift, dshift);
                }
                (Op::Gelu(a), Value::Re(c)) => {
                    let x = self.re(*a);
                    let mut dx = c.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        *d *= crate::activation::gelu_derivative_scalar(xv);
                    }
                    self.acc_re(&mut grads, *a, dx);
                }
                (Op::Sigmoid(a), Value::Re(c)) => {
                    let y = self.re(NodeId(idx));
                    let mut dx = c.clone();
                    for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= yv * (1.0 - yv);
                    }
                    self.acc_re(&mut grads, *a, dx);
                }
                (Op::Conv2d { x, w, b, geom }, Value::Re(c)) => {
                    let spec = ConvSpec::new(
                        *geom,
                        self.re(*w).clone(),
                        b.map(|bid| self.re(bid).clone()),
                    )?;
                    let (dx, dw, db) = conv2d_backward(self.re(*x), &spec, &c)?;
                    self.acc_re(&mut grads, *x, dx);
                    self.acc_re(&mut grads, *w, dw);
                    if let Some(bid) = b {
                        self.acc_re(&mut grads, *bid, db);
                    }
                }
                (
                    Op::GroupNorm {
                        x,
                        gain,
                        shift,
                        groups,
                        eps,
                        stats,
                    },
                    Value::Re(c),
                ) => {
                    let spec = NormSpec {
                        kind: NormKind::GroupNorm,
                        num_groups: *groups,
                        eps: *eps,
                        gain: self.re(*gain).clone(),
                        shift: self.re(*shift).clone(),
                    };
                    let (dx, dgain, dshift) = group_norm_backward(self.re(*x), &spec, stats, &c)?;
                    self.acc_re(&mut grads, *x, dx);
                    self.acc_re(&mut grads, *gain, dgain);
                    self.acc_re(&mut grads, *shift, dshift);
                }
                (Op::MaskedSoftmax { logits, keep }, Value::Re(c)) => {
                    let out = self.re(NodeId(idx));
                    let dx = masked_softmax_backward(out, keep, &c);
                    self.acc_re(&mut grads, *logits, dx);
                }
                (Op::NearestUp(a, s), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, nearest_upsample_adjoint(&c, *s)?);
                }
                (Op::ZeroInsertUp(a, s), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, zero_insert_upsample_adjoint(&c, *s)?);
                }
                (Op::ChannelShuffle(a), Value::Re(c)) => {
                    self.acc_re(&mut grads, *a, channel_shuffle_inverse(&c)?);
                }
                (Op::ConcatCh(parts), Value::Re(c)) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.re(p).shape()[1];
                        self.acc_re(&mut grads, p, slice_channels(&c, start, len)?);
                        start += len;
                    }
                }
                (Op::SliceCh { x, start, len }, Value::Re(c)) => {
                    let xv = self.re(*x);
                    let (b, ch, h, w) = xv.dims4("slice backward")?;
                    let hw = h * w;
                    let mut dx = xv.zeros_like();
                    for bi in 0..b {
                        let dst = (bi * ch + start) * hw;
                        let src = bi * len * hw;
                        dx.data_mut()[dst..dst + len * hw]
                            .copy_from_slice(&c.data()[src..src + len * hw]);
                    }
                    self.acc_re(&mut grads, *x, dx);
                }
                (Op::Reshape { x, orig }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, c.reshaped(orig.clone())?);
                }
                (Op::NchwToTokens(a), Value::Re(c)) => {
                    let (_, _, h, w) = self.re(*a).dims4("tokens backward")?;
                    self.acc_re(&mut grads, *a, tokens_to_nchw(&c, h, w)?);
                }
                (Op::TokensToNchw { x, .. }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, nchw_to_tokens(&c)?);
                }
                (Op::SplitHeads { x, heads }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, merge_heads(&c, *heads)?);
                }
                (Op::MergeHeads { x, heads }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, split_heads(&c, *heads)?);
                }
                (Op::BmmNt { a, b }, Value::Re(c)) => {
                    // out = a b^T: da = c b, db = c^T a.
                    self.acc_re(&mut grads, *a, bmm_nn(&c, self.re(*b))?);
                    self.acc_re(&mut grads, *b, bmm_tn(&c, self.re(*a))?);
                }
                (Op::BmmNn { a, b }, Value::Re(c)) => {
                    // out = a v: da = c v^T, dv = a^T c.
                    self.acc_re(&mut grads, *a, bmm_nt(&c, self.re(*b))?);
                    self.acc_re(&mut grads, *b, bmm_tn(self.re(*a), &c)?);
                }
                (Op::Sum(a), Value::Re(c)) => {
                    let g = Tensor::full(self.re(*a).shape(), c.data()[0]);
                    self.acc_re(&mut grads, *a, g);
                }
                (Op::PadTaps { x, .. }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, pad_taps_adjoint(self.re(*x), &c)?);
                }
                (Op::Roll2d { x, dy, dx }, Value::Re(c)) => {
                    self.acc_re(&mut grads, *x, roll2d(&c, -dy, -dx)?);
                }
                (Op::Fft2(a), Value::Cx(c)) => {
                    self.acc_re(&mut grads, *a, fft2_adjoint(&c));
                }
                (Op::Ifft2Re(a), Value::Re(c)) => {
                    self.acc_cx(&mut grads, *a, ifft2_adjoint(&c)?);
                }
                (Op::CMul(a, b), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, cmul(&self.cx(*b).conj(), &c)?);
                    self.acc_cx(&mut grads, *b, cmul(&self.cx(*a).conj(), &c)?);
                }
                (Op::CAdd(a, b), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, c.clone());
                    self.acc_cx(&mut grads, *b, c);
                }
                (Op::CSub(a, b), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, c.clone());
                    let mut neg = c;
                    for z in neg.data_mut() {
                        *z = -*z;
                    }
                    self.acc_cx(&mut grads, *b, neg);
                }
                (Op::Conj(a), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, c.conj());
                }
                (Op::MagSq(a), Value::Re(c)) => {
                    let z = self.cx(*a);
                    let mut dz = z.clone();
                    for (d, (&cv, zv)) in dz
                        .data_mut()
                        .iter_mut()
                        .zip(c.data().iter().zip(z.data()))
                    {
                        *d = Complex::new(2.0 * cv * zv.re, 2.0 * cv * zv.im);
                    }
                    self.acc_cx(&mut grads, *a, dz);
                }
                (Op::CDivRe { a, d }, Value::Cx(c)) => {
                    let denom = self.re(*d);
                    let av = self.cx(*a);
                    self.acc_cx(&mut grads, *a, cdiv_real(&c, denom.data())?);
                    let mut dd = denom.zeros_like();
                    for (out, ((cv, zv), &dv)) in dd
                        .data_mut()
                        .iter_mut()
                        .zip(c.data().iter().zip(av.data()).zip(denom.data()))
                    {
                        // d/dd of (a/d) against cotangent c: -Re(c conj(a)) / d^2.
                        *out = -(cv.re * zv.re + cv.im * zv.im) / (dv * dv);
                    }
                    self.acc_re(&mut grads, *d, dd);
                }
                (Op::CScaleChannel(a, scales), Value::Cx(c)) => {
                    self.acc_cx(
                        &mut grads,
                        *a,
                        crate::spectrum::cscale_per_channel(&c, scales)?,
                    );
                }
                (Op::BlockAvg(a, s), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, block_avg_adjoint(&c, *s)?);
                }
                (Op::RepeatSpec(a, s), Value::Cx(c)) => {
                    self.acc_cx(&mut grads, *a, repeat_adjoint(&c, *s)?);
                }
                (Op::BlockAvgRe(a, s), Value::Re(c)) => {
                    let tiled = repeat_tensor(&c, *s)?;
                    let inv = 1.0 / ((*s * *s) as f64);
                    self.acc_re(&mut grads, *a, tiled.scale(inv));
                }
                (op, _) => {
                    unreachable!("cotangent kind mismatch for op {op:?}");
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn acc_re(&self, grads: &mut [Option<Value>], id: NodeId, g: Tensor<f64>) {
        match &mut grads[id.0] {
            Some(Value::Re(acc)) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(Value::Re(g)),
            Some(Value::Cx(_)) => unreachable!("mixed cotangent kinds at node {}", id.0),
        }
    }

    fn acc_cx(&self, grads: &mut [Option<Value>], id: NodeId, g: ComplexSpectrum<f64>) {
        match &mut grads[id.0] {
            Some(Value::Cx(acc)) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(Value::Cx(g)),
            Some(Value::Re(_)) => unreachable!("mixed cotangent kinds at node {}", id.0),
        }
    }

    /// Zero-valued gradient placeholder with a node's shape.
    pub fn zeros_like_node(&self, id: NodeId) -> Value {
        self.nodes[id.0].value.zeros_like()
    }
}

// ---------------------------------------------------------------------------
// Layout helpers shared by the tape and the attention builders.
// ---------------------------------------------------------------------------

/// (B, C, H, W) -> (B, N, C), tokens in row-major spatial order.
pub fn nchw_to_tokens<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("nchw_to_tokens")?;
    let n = h * w;
    let mut out = Tensor::zeros(&[b, n, c]);
    for bi in 0..b {
        for ci in 0..c {
            for t in 0..n {
                let src = (bi * c + ci) * n + t;
                let dst = (bi * n + t) * c + ci;
                out.data_mut()[dst] = x.data()[src];
            }
        }
    }
    Ok(out)
}

/// (B, N, C) -> (B, C, H, W) with N = H*W.
pub fn tokens_to_nchw<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != h * w {
        return Err(Error::InvalidShape {
            context: "tokens_to_nchw",
            shape: shape.to_vec(),
            data_len: x.numel(),
        });
    }
    let (b, n, c) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for t in 0..n {
            for ci in 0..c {
                let src = (bi * n + t) * c + ci;
                let dst = (bi * c + ci) * n + t;
                out.data_mut()[dst] = x.data()[src];
            }
        }
    }
    Ok(out)
}

/// (B, N, C) -> (B*heads, N, C/heads).
pub fn split_heads<T: Element>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 3 || !shape[2].is_multiple_of(heads) {
        return Err(Error::NotDivisible {
            context: "split_heads",
            divisor: heads,
            extent: *shape.last().unwrap_or(&0),
        });
    }
    let (b, n, c) = (shape[0], shape[1], shape[2]);
    let d = c / heads;
    let mut out = Tensor::zeros(&[b * heads, n, d]);
    for bi in 0..b {
        for t in 0..n {
            for hi in 0..heads {
                for di in 0..d {
                    let src = (bi * n + t) * c + hi * d + di;
                    let dst = ((bi * heads + hi) * n + t) * d + di;
                    out.data_mut()[dst] = x.data()[src];
                }
            }
        }
    }
    Ok(out)
}

/// (B*heads, N, d) -> (B, N, heads*d).
pub fn merge_heads<T: Element>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 3 || !shape[0].is_multiple_of(heads) {
        return Err(Error::NotDivisible {
            context: "merge_heads",
            divisor: heads,
            extent: shape[0],
        });
    }
    let (g, n, d) = (shape[0], shape[1], shape[2]);
    let b = g / heads;
    let c = heads * d;
    let mut out = Tensor::zeros(&[b, n, c]);
    for bi in 0..b {
        for hi in 0..heads {
            for t in 0..n {
                for di in 0..d {
                    let src = ((bi * heads + hi) * n + t) * d + di;
                    let dst = (bi * n + t) * c + hi * d + di;
                    out.data_mut()[dst] = x.data()[src];
                }
            }
        }
    }
    Ok(out)
}

fn bmm_dims(context: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return Err(Error::ShapeMismatch {
            context,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// (g, m, d) x (g, n, d) -> (g, m, n): batched a @ b^T.
pub fn bmm_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    bmm_dims("bmm_nt", a.shape(), b.shape())?;
    let (g, m, d) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[1];
    if b.shape()[2] != d {
        return Err(Error::ShapeMismatch {
            context: "bmm_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[g, m, n]);
    for gi in 0..g {
        let abase = gi * m * d;
        let bbase = gi * n * d;
        let obase = gi * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for t in 0..d {
                    acc = acc + a.data()[abase + i * d + t] * b.data()[bbase + j * d + t];
                }
                out.data_mut()[obase + i * n + j] = acc;
            }
        }
    }
    Ok(out)
}

/// (g, m, n) x (g, n, d) -> (g, m, d): batched a @ b.
pub fn bmm_nn<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    bmm_dims("bmm_nn", a.shape(), b.shape())?;
    let (g, m, n) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let d = b.shape()[2];
    if b.shape()[1] != n {
        return Err(Error::ShapeMismatch {
            context: "bmm_nn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[g, m, d]);
    for gi in 0..g {
        let abase = gi * m * n;
        let bbase = gi * n * d;
        let obase = gi * m * d;
        for i in 0..m {
            for j in 0..n {
                let av = a.data()[abase + i * n + j];
                for t in 0..d {
                    let o = obase + i * d + t;
                    out.data_mut()[o] = out.data()[o] + av * b.data()[bbase + j * d + t];
                }
            }
        }
    }
    Ok(out)
}

/// (g, m, n) x (g, m, d) -> (g, n, d): batched a^T @ b.
pub fn bmm_tn<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    bmm_dims("bmm_tn", a.shape(), b.shape())?;
    let (g, m, n) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let d = b.shape()[2];
    if b.shape()[1] != m {
        return Err(Error::ShapeMismatch {
            context: "bmm_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[g, n, d]);
    for gi in 0..g {
        let abase = gi * m * n;
        let bbase = gi * m * d;
        let obase = gi * n * d;
        for i in 0..m {
            for j in 0..n {
                let av = a.data()[abase + i * n + j];
                for t in 0..d {
                    let o = obase + j * d + t;
                    out.data_mut()[o] = out.data()[o] + av * b.data()[bbase + i * d + t];
                }
            }
        }
    }
    Ok(out)
}

/// Place (C, k, k) taps in the top-left corner of a zero (1, C, h, w) map.
pub fn pad_taps<T: Element>(taps: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let shape = taps.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            context: "pad_taps",
            shape: shape.to_vec(),
            data_len: taps.numel(),
        });
    }
    let (c, kh, kw) = (shape[0], shape[1], shape[2]);
    if kh > h || kw > w {
        return Err(Error::KernelTooLarge {
            kernel: kh.max(kw),
            extent: if kh > h { h } else { w },
        });
    }
    let mut out = Tensor::zeros(&[1, c, h, w]);
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                out.data_mut()[(ci * h + i) * w + j] = taps.data()[(ci * kh + i) * kw + j];
            }
        }
    }
    Ok(out)
}

fn pad_taps_adjoint(taps: &Tensor<f64>, cot: &Tensor<f64>) -> Result<Tensor<f64>> {
    let shape = taps.shape();
    let (c, kh, kw) = (shape[0], shape[1], shape[2]);
    let (_, _, h, w) = cot.dims4("pad_taps_adjoint")?;
    let mut out = taps.zeros_like();
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                out.data_mut()[(ci * kh + i) * kw + j] = cot.data()[(ci * h + i) * w + j];
            }
        }
    }
    Ok(out)
}

/// Circular shift of the last two axes: output(i, j) = input(i - dy, j - dx)
/// with wraparound.
pub fn roll2d<T: Element>(x: &Tensor<T>, dy: isize, dx: isize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("roll2d")?;
    let mut out = x.zeros_like();
    for plane in 0..b * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for i in 0..h {
            let si = (i as isize - dy).rem_euclid(h as isize) as usize;
            for j in 0..w {
                let sj = (j as isize - dx).rem_euclid(w as isize) as usize;
                dst[i * w + j] = src[si * w + sj];
            }
        }
    }
    Ok(out)
}

/// Tile a real tensor s x s times along the last two axes.
pub fn repeat_tensor<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("repeat_tensor")?;
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
                dst[i * ow + j] = src[(i % h) * w + (j % w)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;

    #[test]
    fn square_loss_gradient() {
        // loss = sum x^2 at x = [3] has gradient 6.
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(&tape, x).data(), &[6.0]);
    }

    #[test]
    fn conv_sum_gradient_counts_kernel_overlap() {
        // loss = sum conv2d(x, all-ones 3x3, zero pad): dL/dx counts how many
        // output positions each input position feeds: 9 interior, 4 corners.
        let mut tape = Tape::new();
        let x = tape.param("x", rand_tensor(&[1, 1, 3, 3], 5));
        let geom = ConvGeom::new(1, 1, 3);
        let w = tape.leaf(Tensor::full(&geom.weight_shape(), 1.0));
        let y = tape.conv2d(x, w, None, geom).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.wrt(&tape, x);
        assert_eq!(gx.data()[4], 9.0);
        for &corner in &[0, 2, 6, 8] {
            assert_eq!(gx.data()[corner], 4.0);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[2, 2], 1));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { numel: 4 })
        ));
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::scalar(2.0));
        let unused = tape.param("unused", Tensor::scalar(1.0));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(&tape, unused).data(), &[0.0]);
    }

    #[test]
    fn fft_round_trip_gradient_is_identity() {
        let mut tape = Tape::new();
        let x = tape.param("x", rand_tensor(&[1, 1, 4, 4], 7));
        let s = tape.fft2(x).unwrap();
        let back = tape.ifft2_re(s);
        let loss = tape.sum(back);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.wrt(&tape, x);
        for &v in gx.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        // grad of a*f + b*g == a*grad f + b*grad g.
        let x0 = rand_tensor(&[1, 1, 3, 3], 13);
        let grad_of = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let x = tape.param("x", x0.clone());
            let f = tape.gelu(x);
            let fs = tape.sum(f);
            let g = tape.mul(x, x).unwrap();
            let gs = tape.sum(g);
            let fa = tape.scale(fs, a);
            let gb = tape.scale(gs, b);
            let loss = tape.add(fa, gb).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.wrt(&tape, x)
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let combo = grad_of(2.5, -1.5);
        for i in 0..combo.numel() {
            let expect = 2.5 * gf.data()[i] - 1.5 * gg.data()[i];
            assert!((combo.data()[i] - expect).abs() <= 1e-10);
        }
    }
}
