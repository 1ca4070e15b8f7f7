//! Backbone aggregation block: a dual-path channel split feeding a chain of
//! attention-fusion units, re-concatenated through 1x1 projections.
//!
//! Each fusion unit is a depthwise residual, content-gated Top-K sparse
//! attention over the spatial tokens, and a spatially gated feedforward.
//! The number of attended connections per query, K, comes from a small
//! learned gate and is clamped to [1, N]; selection is piecewise-constant
//! so gradients flow only through the selected entries.

use rand_chacha::ChaCha8Rng;

use crate::activation::{gelu, sigmoid_scalar};
use crate::autodiff::tape::{
    merge_heads, nchw_to_tokens, split_heads, tokens_to_nchw, NodeId, Tape,
};
use crate::conv::{conv2d, ConvGeom, ConvSpec};
use crate::norm::{channel_affine, group_norm, NormSpec};
use crate::rng::rng_from_seed;
use crate::softmax::top_k_indices;
use crate::tensor::{
    add, concat_channels, mul, split_half_channels, Element, Error, Result, Tensor,
};

/// Configuration for one backbone block.
#[derive(Debug, Clone)]
pub struct DcfaConfig {
    pub channels: usize,
    /// Number of chained fusion units.
    pub stack_depth: usize,
    /// Attention heads for the attended half; `None` picks 4 when that half
    /// has at least 32 channels and 1 otherwise.
    pub heads: Option<usize>,
    pub dropout_p: f64,
    /// Group count for the pre-attention normalization; `None` = min(16, C).
    pub num_groups: Option<usize>,
    pub eps: f64,
    pub seed: u64,
    /// Concatenate every intermediate chain output (the dense variant) or
    /// only the final one.
    pub dense_concat: bool,
    /// Bypass the gate and force this K in every attention unit.
    pub fixed_k: Option<usize>,
}

impl DcfaConfig {
    pub fn new(channels: usize, stack_depth: usize, seed: u64) -> Self {
        Self {
            channels,
            stack_depth,
            heads: None,
            dropout_p: 0.0,
            num_groups: None,
            eps: 1e-5,
            seed,
            dense_concat: true,
            fixed_k: None,
        }
    }
}

fn default_heads(attn_channels: usize) -> usize {
    if attn_channels >= 32 {
        4
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// Gate
// ---------------------------------------------------------------------------

/// Two-convolution gate: 1x1 -> GELU -> 1x1 down to one channel.
#[derive(Debug, Clone)]
pub struct GateParams<T> {
    pub conv1: ConvSpec<T>,
    pub conv2: ConvSpec<T>,
}

impl<T: Element> GateParams<T> {
    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: ConvSpec::init(ConvGeom::new(channels, channels, 1), rng),
            conv2: ConvSpec::init(ConvGeom::new(channels, 1, 1), rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            conv1: ConvSpec::zeros(ConvGeom::new(channels, channels, 1)),
            conv2: ConvSpec::zeros(ConvGeom::new(channels, 1, 1)),
        }
    }
}

/// Per-sample K = clamp(floor(N * sigmoid(avgpool(gate(x)))), 1, N).
pub fn dynamic_k<T: Element>(x: &Tensor<T>, gate: &GateParams<T>) -> Result<Vec<usize>> {
    let (b, _, h, w) = x.dims4("dynamic_k")?;
    let n = h * w;
    let hidden = gelu(&conv2d(x, &gate.conv1)?);
    let logit_map = conv2d(&hidden, &gate.conv2)?;
    let mut ks = Vec::with_capacity(b);
    for bi in 0..b {
        let plane = &logit_map.data()[bi * n..(bi + 1) * n];
        let mut acc = T::zero();
        for &v in plane {
            acc = acc + v;
        }
        let pooled = acc.as_f64() / n as f64;
        let frac = sigmoid_scalar(pooled);
        let k = ((n as f64) * frac).floor() as usize;
        ks.push(k.clamp(1, n));
    }
    Ok(ks)
}

// ---------------------------------------------------------------------------
// Sparse attention core
// ---------------------------------------------------------------------------

/// Per-query Top-K index sets, the selected count, and the scaled logits.
#[derive(Debug, Clone)]
pub struct SparseAttnPlan<T> {
    /// Token count.
    pub n: usize,
    /// Selected connections per query.
    pub k: usize,
    pub heads: usize,
    /// `heads * n` rows (head-major); each row holds k ascending indices.
    pub indices: Vec<Vec<usize>>,
    /// Scaled logits Q K^T / sqrt(d), shape (heads, n, n).
    pub scores: Tensor<T>,
}

/// Score, gather, and normalize path for one head: q, k, v are flat (n, d)
/// row-major slices. Optionally records the scaled logits and each query's
/// selected index set.
#[allow(clippy::too_many_arguments)]
pub fn sparse_attention_head<T: Element>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    k_sel: usize,
    mut scores_out: Option<&mut [T]>,
    mut indices_out: Option<&mut Vec<Vec<usize>>>,
    out: &mut [T],
) {
    debug_assert!(k_sel >= 1 && k_sel <= n);
    let inv_sqrt_d = T::one() / T::of_f64((d as f64).sqrt());
    let mut scores = vec![T::zero(); n];
    for i in 0..n {
        let qi = &q[i * d..(i + 1) * d];
        for (j, s) in scores.iter_mut().enumerate() {
            let kj = &k[j * d..(j + 1) * d];
            let mut acc = T::zero();
            for t in 0..d {
                acc = acc + qi[t] * kj[t];
            }
            *s = acc * inv_sqrt_d;
        }
        if let Some(buf) = scores_out.as_deref_mut() {
            buf[i * n..(i + 1) * n].copy_from_slice(&scores);
        }
        let selected = top_k_indices(&scores, k_sel);
        let mut m = scores[selected[0]];
        for &j in &selected {
            if scores[j] > m {
                m = scores[j];
            }
        }
        let mut denom = T::zero();
        for &j in &selected {
            denom = denom + (scores[j] - m).exp();
        }
        let out_row = &mut out[i * d..(i + 1) * d];
        for slot in out_row.iter_mut() {
            *slot = T::zero();
        }
        for &j in &selected {
            let wgt = (scores[j] - m).exp() / denom;
            let vj = &v[j * d..(j + 1) * d];
            for t in 0..d {
                out_row[t] = out_row[t] + wgt * vj[t];
            }
        }
        if let Some(rows) = indices_out.as_deref_mut() {
            rows.push(selected);
        }
    }
}

/// Convenience wrapper over (N, d) tensors for a single head.
pub fn sparse_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    k_sel: usize,
) -> Result<Tensor<T>> {
    let shape = q.shape();
    if shape.len() != 2 || k.shape() != shape || v.shape() != shape {
        return Err(Error::ShapeMismatch {
            context: "sparse_attention",
            lhs: shape.to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    if k_sel == 0 || k_sel > n {
        return Err(Error::InvalidArgument {
            context: format!("k_sel {k_sel} outside [1, {n}]"),
        });
    }
    let mut out = Tensor::zeros(&[n, d]);
    sparse_attention_head(
        q.data(),
        k.data(),
        v.data(),
        n,
        d,
        k_sel,
        None,
        None,
        out.data_mut(),
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// DKSA
// ---------------------------------------------------------------------------

/// Parameters of one dynamic Top-K sparse attention unit.
#[derive(Debug, Clone)]
pub struct DksaParams<T> {
    pub channels: usize,
    pub heads: usize,
    pub norm: NormSpec<T>,
    pub proj_q: ConvSpec<T>,
    pub proj_k: ConvSpec<T>,
    pub proj_v: ConvSpec<T>,
    pub proj_out: ConvSpec<T>,
    pub gate: GateParams<T>,
    pub fixed_k: Option<usize>,
}

impl<T: Element> DksaParams<T> {
    pub fn init(
        channels: usize,
        heads: Option<usize>,
        num_groups: Option<usize>,
        eps: f64,
        fixed_k: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::OddChannels {
                context: "dksa",
                channels,
            });
        }
        let half = channels / 2;
        let heads = heads.unwrap_or_else(|| default_heads(half));
        if !half.is_multiple_of(heads) {
            return Err(Error::NotDivisible {
                context: "dksa heads",
                divisor: heads,
                extent: half,
            });
        }
        Ok(Self {
            channels,
            heads,
            norm: NormSpec::group_norm(half, num_groups.map(|g| g.min(half)), T::of_f64(eps))?,
            proj_q: ConvSpec::init(ConvGeom::new(half, half, 1), rng),
            proj_k: ConvSpec::init(ConvGeom::new(half, half, 1), rng),
            proj_v: ConvSpec::init(ConvGeom::new(half, half, 1), rng),
            proj_out: ConvSpec::init(ConvGeom::new(channels, channels, 1), rng),
            gate: GateParams::init(channels, rng),
            fixed_k,
        })
    }
}

/// Sparse attention unit: split channels, normalize and project the attended
/// half, attend with per-query Top-K softmax, and re-project the concat of
/// the attended result with the passthrough half.
pub fn dksa<T: Element>(x: &Tensor<T>, p: &DksaParams<T>) -> Result<Tensor<T>> {
    Ok(dksa_with_plans(x, p)?.0)
}

/// Same as [`dksa`] but also returns the per-sample selection plans.
pub fn dksa_with_plans<T: Element>(
    x: &Tensor<T>,
    p: &DksaParams<T>,
) -> Result<(Tensor<T>, Vec<SparseAttnPlan<T>>)> {
    let (b, c, h, w) = x.dims4("dksa")?;
    if c != p.channels {
        return Err(Error::DimensionMismatch {
            context: "dksa",
            dim: "channels",
            expected: p.channels,
            got: c,
        });
    }
    if c % 2 != 0 {
        return Err(Error::OddChannels {
            context: "dksa",
            channels: c,
        });
    }
    let n = h * w;
    let half = c / 2;
    let heads = p.heads;
    let d = half / heads;

    let (x1, x2) = split_half_channels(x)?;
    let x1n = group_norm(&x1, &p.norm)?;
    let q = nchw_to_tokens(&conv2d(&x1n, &p.proj_q)?)?;
    let k = nchw_to_tokens(&conv2d(&x1n, &p.proj_k)?)?;
    let v = nchw_to_tokens(&conv2d(&x1n, &p.proj_v)?)?;
    let qh = split_heads(&q, heads)?;
    let kh = split_heads(&k, heads)?;
    let vh = split_heads(&v, heads)?;

    let ks = match p.fixed_k {
        Some(k_forced) => {
            if k_forced == 0 || k_forced > n {
                return Err(Error::InvalidArgument {
                    context: format!("fixed K {k_forced} outside [1, {n}]"),
                });
            }
            vec![k_forced; b]
        }
        None => dynamic_k(x, &p.gate)?,
    };

    let mut att = Tensor::zeros(&[b * heads, n, d]);
    let mut plans = Vec::with_capacity(b);
    for bi in 0..b {
        let k_sel = ks[bi];
        let mut scores = Tensor::zeros(&[heads, n, n]);
        let mut indices = Vec::with_capacity(heads * n);
        for hi in 0..heads {
            let g = bi * heads + hi;
            let base = g * n * d;
            let score_buf = &mut scores.data_mut()[hi * n * n..(hi + 1) * n * n];
            let mut rows = Vec::with_capacity(n);
            let mut out_buf = vec![T::zero(); n * d];
            sparse_attention_head(
                &qh.data()[base..base + n * d],
                &kh.data()[base..base + n * d],
                &vh.data()[base..base + n * d],
                n,
                d,
                k_sel,
                Some(score_buf),
                Some(&mut rows),
                &mut out_buf,
            );
            att.data_mut()[base..base + n * d].copy_from_slice(&out_buf);
            indices.extend(rows);
        }
        plans.push(SparseAttnPlan {
            n,
            k: k_sel,
            heads,
            indices,
            scores,
        });
    }

    let merged = merge_heads(&att, heads)?;
    let att_map = tokens_to_nchw(&merged, h, w)?;
    let cat = concat_channels(&[&att_map, &x2])?;
    let out = conv2d(&cat, &p.proj_out)?;
    Ok((out, plans))
}

// ---------------------------------------------------------------------------
// SGLU
// ---------------------------------------------------------------------------

/// Gated feedforward: the gate stream sees a depthwise 3x3 before GELU, the
/// value stream is a plain 1x1 projection, and the modulated product is
/// projected back and added residually.
#[derive(Debug, Clone)]
pub struct SgluParams<T> {
    pub proj_gate: ConvSpec<T>,
    pub proj_value: ConvSpec<T>,
    pub dw: ConvSpec<T>,
    pub proj_out: ConvSpec<T>,
    pub dropout_p: f64,
    pub dropout_seed: u64,
}

impl<T: Element> SgluParams<T> {
    pub fn init(channels: usize, dropout_p: f64, dropout_seed: u64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            proj_gate: ConvSpec::init(ConvGeom::new(channels, channels, 1), rng),
            proj_value: ConvSpec::init(ConvGeom::new(channels, channels, 1), rng),
            dw: ConvSpec::init(
                ConvGeom::new(channels, channels, 3).with_groups(channels),
                rng,
            ),
            proj_out: ConvSpec::init(ConvGeom::new(channels, channels, 1), rng),
            dropout_p,
            dropout_seed,
        }
    }
}

/// Seeded inverted dropout; p = 0 is the identity (all verification paths).
pub fn dropout<T: Element>(x: &Tensor<T>, p: f64, seed: u64) -> Tensor<T> {
    if p <= 0.0 {
        return x.clone();
    }
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let scale = T::of_f64(1.0 / (1.0 - p));
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if rng.random_range(0.0..1.0) < p {
            T::zero()
        } else {
            *v * scale
        };
    }
    out
}

pub fn sglu<T: Element>(x: &Tensor<T>, p: &SgluParams<T>) -> Result<Tensor<T>> {
    let gate_stream = conv2d(x, &p.proj_gate)?;
    let value_stream = conv2d(x, &p.proj_value)?;
    let gate = gelu(&conv2d(&gate_stream, &p.dw)?);
    let modulated = mul(&gate, &value_stream)?;
    let dropped = dropout(&modulated, p.dropout_p, p.dropout_seed);
    add(x, &conv2d(&dropped, &p.proj_out)?)
}

// ---------------------------------------------------------------------------
// DAFB
// ---------------------------------------------------------------------------

/// One fusion unit: depthwise residual, sparse attention, gated feedforward.
#[derive(Debug, Clone)]
pub struct DafbParams<T> {
    pub dw: ConvSpec<T>,
    pub bn: NormSpec<T>,
    pub dksa: DksaParams<T>,
    pub sglu: SgluParams<T>,
}

impl<T: Element> DafbParams<T> {
    pub fn init(channels: usize, cfg: &DcfaConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            dw: ConvSpec::init(
                ConvGeom::new(channels, channels, 3).with_groups(channels),
                rng,
            ),
            bn: NormSpec::batch_affine(channels),
            dksa: DksaParams::init(
                channels,
                cfg.heads,
                cfg.num_groups,
                cfg.eps,
                cfg.fixed_k,
                rng,
            )?,
            sglu: SgluParams::init(channels, cfg.dropout_p, cfg.seed.wrapping_add(0x517), rng),
        })
    }
}

/// H = x + BN(DWConv(x)); output = SGLU(H + DKSA(H)).
pub fn dafb<T: Element>(x: &Tensor<T>, p: &DafbParams<T>) -> Result<Tensor<T>> {
    let h = add(x, &channel_affine(&conv2d(x, &p.dw)?, &p.bn)?)?;
    let attended = add(&h, &dksa(&h, &p.dksa)?)?;
    sglu(&attended, &p.sglu)
}

// ---------------------------------------------------------------------------
// Block assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DcfaParams<T> {
    pub config: DcfaConfig,
    pub cv1: ConvSpec<T>,
    pub cv2: ConvSpec<T>,
    pub blocks: Vec<DafbParams<T>>,
}

impl<T: Element> DcfaParams<T> {
    pub fn init(config: &DcfaConfig) -> Result<Self> {
        let c = config.channels;
        if !c.is_multiple_of(2) {
            return Err(Error::OddChannels {
                context: "dcfa",
                channels: c,
            });
        }
        let half = c / 2;
        if config.stack_depth > 0 && !half.is_multiple_of(2) {
            return Err(Error::OddChannels {
                context: "dcfa chain units split channels again",
                channels: half,
            });
        }
        let mut rng = rng_from_seed(config.seed);
        let cv1 = ConvSpec::init(ConvGeom::new(c, c, 1), &mut rng);
        let concat_c = if config.dense_concat {
            (config.stack_depth + 2) * half
        } else {
            c
        };
        let cv2 = ConvSpec::init(ConvGeom::new(concat_c, c, 1), &mut rng);
        let mut blocks = Vec::with_capacity(config.stack_depth);
        for _ in 0..config.stack_depth {
            blocks.push(DafbParams::init(half, config, &mut rng)?);
        }
        Ok(Self {
            config: config.clone(),
            cv1,
            cv2,
            blocks,
        })
    }
}

/// Dual-path block: split the 1x1-projected input, run the chain on the
/// second half, concatenate (densely by default), and project back to C.
pub fn dcfa_block<T: Element>(x: &Tensor<T>, p: &DcfaParams<T>) -> Result<Tensor<T>> {
    let (_, c, _, _) = x.dims4("dcfa_block")?;
    if c != p.config.channels {
        return Err(Error::DimensionMismatch {
            context: "dcfa_block",
            dim: "channels",
            expected: p.config.channels,
            got: c,
        });
    }
    let projected = conv2d(x, &p.cv1)?;
    let (f1, f2) = split_half_channels(&projected)?;
    let mut chain = Vec::with_capacity(p.blocks.len() + 2);
    chain.push(f1.clone());
    chain.push(f2.clone());
    let mut cur = f2;
    for blk in &p.blocks {
        cur = dafb(&cur, blk)?;
        chain.push(cur.clone());
    }
    let cat = if p.config.dense_concat {
        let refs: Vec<&Tensor<T>> = chain.iter().collect();
        concat_channels(&refs)?
    } else {
        concat_channels(&[&cur, &chain[0]])?
    };
    conv2d(&cat, &p.cv2)
}

// ---------------------------------------------------------------------------
// Tape builders (f64) for gradient verification
// ---------------------------------------------------------------------------

/// SGLU weight handles on the tape.
pub struct SgluNodes {
    pub pg_w: NodeId,
    pub pg_b: NodeId,
    pub pv_w: NodeId,
    pub pv_b: NodeId,
    pub dw_w: NodeId,
    pub dw_b: NodeId,
    pub po_w: NodeId,
    pub po_b: NodeId,
}

pub fn sglu_nodes(tape: &mut Tape, p: &SgluParams<f64>) -> SgluNodes {
    SgluNodes {
        pg_w: tape.param("proj_gate.weight", p.proj_gate.weight.clone()),
        pg_b: tape.param("proj_gate.bias", p.proj_gate.bias.clone().unwrap()),
        pv_w: tape.param("proj_value.weight", p.proj_value.weight.clone()),
        pv_b: tape.param("proj_value.bias", p.proj_value.bias.clone().unwrap()),
        dw_w: tape.param("dw.weight", p.dw.weight.clone()),
        dw_b: tape.param("dw.bias", p.dw.bias.clone().unwrap()),
        po_w: tape.param("proj_out.weight", p.proj_out.weight.clone()),
        po_b: tape.param("proj_out.bias", p.proj_out.bias.clone().unwrap()),
    }
}

/// SGLU composed on the tape; must mirror [`sglu`] operation for operation.
pub fn sglu_tape(
    tape: &mut Tape,
    x: NodeId,
    p: &SgluParams<f64>,
    nodes: &SgluNodes,
) -> Result<NodeId> {
    let gate_stream = tape.conv2d(x, nodes.pg_w, Some(nodes.pg_b), p.proj_gate.geom)?;
    let value_stream = tape.conv2d(x, nodes.pv_w, Some(nodes.pv_b), p.proj_value.geom)?;
    let pre = tape.conv2d(gate_stream, nodes.dw_w, Some(nodes.dw_b), p.dw.geom)?;
    let gate = tape.gelu(pre);
    let modulated = tape.mul(gate, value_stream)?;
    let projected = tape.conv2d(modulated, nodes.po_w, Some(nodes.po_b), p.proj_out.geom)?;
    tape.add(x, projected)
}

/// DKSA composed on the tape with a frozen selection plan (single sample).
pub fn dksa_tape(
    tape: &mut Tape,
    x: NodeId,
    p: &DksaParams<f64>,
    plan: &SparseAttnPlan<f64>,
) -> Result<NodeId> {
    let (b, _, h, w) = tape.value(x).dims4("dksa_tape")?;
    if b != 1 {
        return Err(Error::InvalidArgument {
            context: "dksa_tape expects a single sample".into(),
        });
    }
    let half = p.channels / 2;
    let d = half / p.heads;
    let x1 = tape.slice_channels(x, 0, half)?;
    let x2 = tape.slice_channels(x, half, half)?;
    let gain = tape.param("norm.gain", p.norm.gain.clone());
    let shift = tape.param("norm.shift", p.norm.shift.clone());
    let x1n = tape.group_norm(x1, gain, shift, p.norm.num_groups, p.norm.eps)?;

    let qw = tape.param("proj_q.weight", p.proj_q.weight.clone());
    let qb = tape.param("proj_q.bias", p.proj_q.bias.clone().unwrap());
    let kw = tape.param("proj_k.weight", p.proj_k.weight.clone());
    let kb = tape.param("proj_k.bias", p.proj_k.bias.clone().unwrap());
    let vw = tape.param("proj_v.weight", p.proj_v.weight.clone());
    let vb = tape.param("proj_v.bias", p.proj_v.bias.clone().unwrap());
    let q4 = tape.conv2d(x1n, qw, Some(qb), p.proj_q.geom)?;
    let k4 = tape.conv2d(x1n, kw, Some(kb), p.proj_k.geom)?;
    let v4 = tape.conv2d(x1n, vw, Some(vb), p.proj_v.geom)?;
    let q = tape.nchw_to_tokens(q4)?;
    let k = tape.nchw_to_tokens(k4)?;
    let v = tape.nchw_to_tokens(v4)?;
    let qh = tape.split_heads(q, p.heads)?;
    let kh = tape.split_heads(k, p.heads)?;
    let vh = tape.split_heads(v, p.heads)?;

    let raw = tape.bmm_nt(qh, kh)?;
    let scaled = tape.scale(raw, 1.0 / (d as f64).sqrt());
    let weights = tape.masked_softmax(scaled, plan.indices.clone())?;
    let att = tape.bmm_nn(weights, vh)?;
    let merged = tape.merge_heads(att, p.heads)?;
    let att_map = tape.tokens_to_nchw(merged, h, w)?;
    let cat = tape.concat_channels(&[att_map, x2])?;
    let ow = tape.param("proj_out.weight", p.proj_out.weight.clone());
    let ob = tape.param("proj_out.bias", p.proj_out.bias.clone().unwrap());
    tape.conv2d(cat, ow, Some(ob), p.proj_out.geom)
}
