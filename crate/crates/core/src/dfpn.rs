//! Pyramid neck: amplitude-normalized top-down fusion followed by a
//! dual-path shuffle convolution at every level.
//!
//! Upsampling by s multiplies the L1 mass of a map by s^2; the 1/s^2
//! amplitude factor cancels that exactly, so feature intensity is preserved
//! across scales before the lateral fusion.

use rand_chacha::ChaCha8Rng;

use crate::activation::{gelu, sigmoid};
use crate::autodiff::tape::{NodeId, Tape};
use crate::conv::{conv2d, ConvGeom, ConvSpec};
use crate::resample::nearest_upsample;
use crate::rng::rng_from_seed;
use crate::shuffle::channel_shuffle;
use crate::tensor::{concat_channels, Element, Error, Result, Tensor};

/// Ordered pyramid, finest level first; adjacent levels differ by the
/// integer scale held in the config.
#[derive(Debug, Clone)]
pub struct PyramidLevels<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Element> PyramidLevels<T> {
    pub fn new(levels: Vec<Tensor<T>>) -> Self {
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|t| t.shape()[1]).collect()
    }

    /// Adjacent spatial extents must differ by exactly `s`.
    pub fn validate(&self, s: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument {
                context: "pyramid needs at least one level".into(),
            });
        }
        for (i, pair) in self.levels.windows(2).enumerate() {
            let (_, _, fh, fw) = pair[0].dims4("pyramid level")?;
            let (_, _, ch, cw) = pair[1].dims4("pyramid level")?;
            if fh != ch * s || fw != cw * s {
                return Err(Error::DimensionMismatch {
                    context: "pyramid scale relation",
                    dim: "height",
                    expected: ch * s,
                    got: fh,
                });
            }
            let _ = i;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// ANUP
// ---------------------------------------------------------------------------

/// Amplitude-normalized upsample and lateral fuse:
/// norm = (1/s^2) * nearest_upsample(high, s); out = 1x1(concat[norm, low]).
pub fn anup<T: Element>(
    high: &Tensor<T>,
    low: &Tensor<T>,
    s: usize,
    lateral: &ConvSpec<T>,
) -> Result<Tensor<T>> {
    let normalized = anup_normalize(high, s)?;
    let (_, _, lh, lw) = low.dims4("anup low")?;
    let (_, _, nh, nw) = normalized.dims4("anup normalized")?;
    if lh != nh || lw != nw {
        return Err(Error::DimensionMismatch {
            context: "anup extent",
            dim: "height",
            expected: nh,
            got: lh,
        });
    }
    conv2d(&concat_channels(&[&normalized, low])?, lateral)
}

/// The normalization stage alone: replicate by s and scale by 1/s^2 so the
/// L1 mass of the result equals the input's.
pub fn anup_normalize<T: Element>(high: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let up = nearest_upsample(high, s)?;
    let beta = T::one() / T::of_f64((s * s) as f64);
    Ok(up.scale(beta))
}

// ---------------------------------------------------------------------------
// DPSC
// ---------------------------------------------------------------------------

/// Dual-path shuffle convolution parameters. Path 1 is a standard 3x3 with a
/// sigmoid; path 2 cascades a standard 3x3 and a depthwise 3x3 with GELU,
/// consuming path 1's output (the cascaded form). `path2_from_input` selects
/// the variant that feeds path 2 from the raw input with an inner GELU.
#[derive(Debug, Clone)]
pub struct DpscParams<T> {
    pub std: ConvSpec<T>,
    pub conv: ConvSpec<T>,
    pub dw: ConvSpec<T>,
    pub path2_from_input: bool,
}

impl<T: Element> DpscParams<T> {
    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(Error::OddChannels {
                context: "dpsc",
                channels,
            });
        }
        let half = channels / 2;
        Ok(Self {
            std: ConvSpec::init(ConvGeom::new(channels, half, 3), rng),
            conv: ConvSpec::init(ConvGeom::new(half, half, 3), rng),
            dw: ConvSpec::init(ConvGeom::new(half, half, 3).with_groups(half), rng),
            path2_from_input: false,
        })
    }
}

pub fn dpsc<T: Element>(x: &Tensor<T>, p: &DpscParams<T>) -> Result<Tensor<T>> {
    let (_, c, _, _) = x.dims4("dpsc")?;
    if c % 2 != 0 {
        return Err(Error::OddChannels {
            context: "dpsc",
            channels: c,
        });
    }
    let f1 = sigmoid(&conv2d(x, &p.std)?);
    let f2 = if p.path2_from_input {
        // Variant: path 2 consumes the raw input through a width-matching
        // cascade with an inner activation.
        let inner = gelu(&conv2d(&f1, &p.conv)?);
        gelu(&conv2d(&inner, &p.dw)?)
    } else {
        gelu(&conv2d(&conv2d(&f1, &p.conv)?, &p.dw)?)
    };
    channel_shuffle(&concat_channels(&[&f1, &f2])?)
}

// ---------------------------------------------------------------------------
// Fusion schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DfpnConfig {
    /// Scale ratio between adjacent levels.
    pub scale: usize,
    pub seed: u64,
}

impl DfpnConfig {
    pub fn new(scale: usize, seed: u64) -> Self {
        Self { scale, seed }
    }
}

#[derive(Debug, Clone)]
pub struct DfpnParams<T> {
    pub config: DfpnConfig,
    /// One lateral 1x1 per fused pair, index i fuses level i with the
    /// upsampled level i+1: (C_{i+1} + C_i) -> C_i.
    pub laterals: Vec<ConvSpec<T>>,
    /// One dual-path unit per level.
    pub dpsc: Vec<DpscParams<T>>,
}

impl<T: Element> DfpnParams<T> {
    pub fn init(channel_counts: &[usize], config: &DfpnConfig) -> Result<Self> {
        let mut rng = rng_from_seed(config.seed);
        let mut laterals = Vec::new();
        for i in 0..channel_counts.len().saturating_sub(1) {
            let (c_low, c_high) = (channel_counts[i], channel_counts[i + 1]);
            laterals.push(ConvSpec::init(
                ConvGeom::new(c_high + c_low, c_low, 1),
                &mut rng,
            ));
        }
        let mut dpsc = Vec::new();
        for &c in channel_counts {
            dpsc.push(DpscParams::init(c, &mut rng)?);
        }
        Ok(Self {
            config: config.clone(),
            laterals,
            dpsc,
        })
    }
}

/// Operation counts observed during a fusion pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseTrace {
    pub anup_calls: usize,
    pub dpsc_calls: usize,
}

/// Top-down pass with amplitude-normalized fusion, then the dual-path unit
/// on every level. Level shapes are preserved.
pub fn dfpn_fuse<T: Element>(pyr: &PyramidLevels<T>, p: &DfpnParams<T>) -> Result<PyramidLevels<T>> {
    Ok(dfpn_fuse_traced(pyr, p)?.0)
}

pub fn dfpn_fuse_traced<T: Element>(
    pyr: &PyramidLevels<T>,
    p: &DfpnParams<T>,
) -> Result<(PyramidLevels<T>, FuseTrace)> {
    let mut trace = FuseTrace::default();
    let mut fused = dfpn_top_down(pyr, p)?;
    trace.anup_calls = pyr.len() - 1;
    for (i, lvl) in fused.iter_mut().enumerate() {
        *lvl = dpsc(lvl, &p.dpsc[i])?;
        trace.dpsc_calls += 1;
    }
    Ok((PyramidLevels::new(fused), trace))
}

/// The top-down half of the schedule: coarsest level unchanged, each finer
/// level fused with the normalized upsample of the result above it. With
/// all-zero inputs and zero lateral biases this stage is exactly zero.
pub fn dfpn_top_down<T: Element>(
    pyr: &PyramidLevels<T>,
    p: &DfpnParams<T>,
) -> Result<Vec<Tensor<T>>> {
    let s = p.config.scale;
    pyr.validate(s)?;
    let l = pyr.len();
    if p.laterals.len() + 1 != l || p.dpsc.len() != l {
        return Err(Error::DimensionMismatch {
            context: "dfpn params",
            dim: "levels",
            expected: l,
            got: p.dpsc.len(),
        });
    }
    let mut fused: Vec<Tensor<T>> = vec![Tensor::zeros(&[1]); l];
    fused[l - 1] = pyr.levels[l - 1].clone();
    for i in (0..l - 1).rev() {
        let high = fused[i + 1].clone();
        fused[i] = anup(&high, &pyr.levels[i], s, &p.laterals[i])?;
    }
    Ok(fused)
}

// ---------------------------------------------------------------------------
// Tape builders (f64) for gradient verification
// ---------------------------------------------------------------------------

pub struct AnupNodes {
    pub lat_w: NodeId,
    pub lat_b: NodeId,
}

pub fn anup_nodes(tape: &mut Tape, lateral: &ConvSpec<f64>) -> AnupNodes {
    AnupNodes {
        lat_w: tape.param("lateral.weight", lateral.weight.clone()),
        lat_b: tape.param("lateral.bias", lateral.bias.clone().unwrap()),
    }
}

pub fn anup_tape(
    tape: &mut Tape,
    high: NodeId,
    low: NodeId,
    s: usize,
    lateral: &ConvSpec<f64>,
    nodes: &AnupNodes,
) -> Result<NodeId> {
    let up = tape.nearest_upsample(high, s)?;
    let normalized = tape.scale(up, 1.0 / ((s * s) as f64));
    let cat = tape.concat_channels(&[normalized, low])?;
    tape.conv2d(cat, nodes.lat_w, Some(nodes.lat_b), lateral.geom)
}

pub struct DpscNodes {
    pub std_w: NodeId,
    pub std_b: NodeId,
    pub conv_w: NodeId,
    pub conv_b: NodeId,
    pub dw_w: NodeId,
    pub dw_b: NodeId,
}

pub fn dpsc_nodes(tape: &mut Tape, p: &DpscParams<f64>) -> DpscNodes {
    DpscNodes {
        std_w: tape.param("std.weight", p.std.weight.clone()),
        std_b: tape.param("std.bias", p.std.bias.clone().unwrap()),
        conv_w: tape.param("conv.weight", p.conv.weight.clone()),
        conv_b: tape.param("conv.bias", p.conv.bias.clone().unwrap()),
        dw_w: tape.param("dw.weight", p.dw.weight.clone()),
        dw_b: tape.param("dw.bias", p.dw.bias.clone().unwrap()),
    }
}

pub fn dpsc_tape(
    tape: &mut Tape,
    x: NodeId,
    p: &DpscParams<f64>,
    nodes: &DpscNodes,
) -> Result<NodeId> {
    let pre = tape.conv2d(x, nodes.std_w, Some(nodes.std_b), p.std.geom)?;
    let f1 = tape.sigmoid(pre);
    let mid = tape.conv2d(f1, nodes.conv_w, Some(nodes.conv_b), p.conv.geom)?;
    let deep = tape.conv2d(mid, nodes.dw_w, Some(nodes.dw_b), p.dw.geom)?;
    let f2 = tape.gelu(deep);
    let cat = tape.concat_channels(&[f1, f2])?;
    tape.channel_shuffle(cat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rand_tensor, rand_tensor_exact_grid, rng_from_seed};
    use crate::tensor::max_abs_diff;

    #[test]
    fn normalization_keeps_unit_mass() {
        // All-ones 2x2, s = 2: normalized map is 4x4 of 0.25, L1 stays 4.
        let high = Tensor::full(&[1, 1, 2, 2], 1.0f64);
        let norm = anup_normalize(&high, 2).unwrap();
        assert_eq!(norm.shape(), &[1, 1, 4, 4]);
        for &v in norm.data() {
            assert_eq!(v, 0.25);
        }
        assert_eq!(norm.l1_norm(), 4.0);
    }

    #[test]
    fn scale_one_normalization_is_identity() {
        let high: Tensor<f64> = rand_tensor(&[1, 3, 4, 4], 2);
        let norm = anup_normalize(&high, 1).unwrap();
        assert_eq!(norm.data(), high.data());
    }

    #[test]
    fn amplitude_law_is_exact_on_grid_tensors() {
        for s in [2usize, 3] {
            let high: Tensor<f64> = rand_tensor_exact_grid(&[1, 2, 4, 4], 60 + s as u64);
            let norm = anup_normalize(&high, s).unwrap();
            assert_eq!(norm.l1_norm(), high.l1_norm(), "s = {s}");
        }
    }

    #[test]
    fn anup_rejects_extent_mismatch() {
        let high: Tensor<f64> = rand_tensor(&[1, 2, 2, 2], 3);
        let low: Tensor<f64> = rand_tensor(&[1, 2, 5, 5], 4);
        let lateral = ConvSpec::init(ConvGeom::new(4, 2, 1), &mut rng_from_seed(5));
        assert!(anup(&high, &low, 2, &lateral).is_err());
    }

    #[test]
    fn dpsc_preserves_shape() {
        let p = DpscParams::<f64>::init(8, &mut rng_from_seed(6)).unwrap();
        let x: Tensor<f64> = rand_tensor(&[1, 8, 6, 6], 7);
        let y = dpsc(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn zero_weights_give_shuffled_constant_and_zero_halves() {
        let mut p = DpscParams::<f64>::init(8, &mut rng_from_seed(8)).unwrap();
        p.std.zero_out();
        p.conv.zero_out();
        p.dw.zero_out();
        let x: Tensor<f64> = rand_tensor(&[1, 8, 3, 3], 9);
        let y = dpsc(&x, &p).unwrap();
        // Path 1 is sigmoid(0) = 0.5 everywhere, path 2 is GELU(0) = 0; the
        // shuffle interleaves them: even channels 0.5, odd channels 0.
        let hw = 9;
        for c in 0..8 {
            let expect = if c % 2 == 0 { 0.5 } else { 0.0 };
            for i in 0..hw {
                assert_eq!(y.data()[c * hw + i], expect, "channel {c}");
            }
        }
    }

    #[test]
    fn dpsc_output_is_a_permutation_of_its_concat() {
        let p = DpscParams::<f64>::init(6, &mut rng_from_seed(10)).unwrap();
        let x: Tensor<f64> = rand_tensor(&[1, 6, 4, 4], 11);
        let f1 = sigmoid(&conv2d(&x, &p.std).unwrap());
        let f2 = gelu(&conv2d(&conv2d(&f1, &p.conv).unwrap(), &p.dw).unwrap());
        let cat = concat_channels(&[&f1, &f2]).unwrap();
        let y = dpsc(&x, &p).unwrap();
        let mut a: Vec<f64> = cat.data().to_vec();
        let mut b: Vec<f64> = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    fn pyramid(levels: &[(usize, usize)], channels: usize, seed: u64) -> PyramidLevels<f64> {
        let tensors = levels
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| rand_tensor(&[1, channels, h, w], seed + i as u64))
            .collect();
        PyramidLevels::new(tensors)
    }

    #[test]
    fn fuse_preserves_shapes() {
        let pyr = pyramid(&[(8, 8), (4, 4)], 8, 20);
        let p = DfpnParams::init(&[8, 8], &DfpnConfig::new(2, 21)).unwrap();
        let out = dfpn_fuse(&pyr, &p).unwrap();
        assert_eq!(out.levels[0].shape(), &[1, 8, 8, 8]);
        assert_eq!(out.levels[1].shape(), &[1, 8, 4, 4]);
    }

    #[test]
    fn fuse_call_counts_follow_the_schedule() {
        let pyr = pyramid(&[(8, 8), (4, 4), (2, 2)], 4, 22);
        let p = DfpnParams::init(&[4, 4, 4], &DfpnConfig::new(2, 23)).unwrap();
        let (_, trace) = dfpn_fuse_traced(&pyr, &p).unwrap();
        assert_eq!(trace.anup_calls, 2);
        assert_eq!(trace.dpsc_calls, 3);
    }

    #[test]
    fn single_level_pyramid_only_runs_the_dual_path_unit() {
        let pyr = pyramid(&[(6, 6)], 4, 24);
        let p = DfpnParams::init(&[4], &DfpnConfig::new(2, 25)).unwrap();
        let (out, trace) = dfpn_fuse_traced(&pyr, &p).unwrap();
        assert_eq!(trace, FuseTrace { anup_calls: 0, dpsc_calls: 1 });
        let direct = dpsc(&pyr.levels[0], &p.dpsc[0]).unwrap();
        assert_eq!(out.levels[0].data(), direct.data());
    }

    #[test]
    fn zero_pyramid_with_zero_biases_stays_zero_through_top_down() {
        let levels = vec![
            Tensor::<f64>::zeros(&[1, 4, 8, 8]),
            Tensor::<f64>::zeros(&[1, 4, 4, 4]),
        ];
        let mut p = DfpnParams::init(&[4, 4], &DfpnConfig::new(2, 26)).unwrap();
        for lat in &mut p.laterals {
            for v in lat.bias.as_mut().unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let fused = dfpn_top_down(&PyramidLevels::new(levels), &p).unwrap();
        for lvl in &fused {
            for &v in lvl.data() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn tape_matches_eager_dpsc() {
        let p = DpscParams::<f64>::init(4, &mut rng_from_seed(30)).unwrap();
        let x: Tensor<f64> = rand_tensor(&[1, 4, 4, 4], 31);
        let eager = dpsc(&x, &p).unwrap();
        let mut tape = Tape::new();
        let xn = tape.param("x", x.clone());
        let nodes = dpsc_nodes(&mut tape, &p);
        let out = dpsc_tape(&mut tape, xn, &p, &nodes).unwrap();
        assert!(max_abs_diff(tape.value(out), &eager) == 0.0);
    }
}
