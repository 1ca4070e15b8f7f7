//! Single forward passes with per-stage statistics, for inspection from the
//! command line. Stage compositions re-run the public block pieces and are
//! asserted (in tests) to reproduce the block outputs bit-for-bit.

use crate::conv::conv2d;
use crate::dcfa::{dafb, dcfa_block, DcfaConfig, DcfaParams};
use crate::dfpn::{anup, anup_normalize, dfpn_fuse, DfpnConfig, DfpnParams, PyramidLevels};
use crate::fft::FftElement;
use crate::firc::{firc, firc3_block, periodize_kernel, FircConfig, FircParams};
use crate::resample::nearest_upsample;
use crate::tensor::{add, concat_channels, split_half_channels, Element, Error, Result, Tensor};

/// Summary statistics of one intermediate tensor.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StageStat {
    pub name: String,
    pub shape: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l1: f64,
}

pub fn stage_stat<T: Element>(name: &str, t: &Tensor<T>) -> StageStat {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut l1 = 0.0;
    for &v in t.data() {
        let v = v.as_f64();
        min = min.min(v);
        max = max.max(v);
        sum += v;
        l1 += v.abs();
    }
    StageStat {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        min,
        max,
        mean: sum / t.numel() as f64,
        l1,
    }
}

/// Forward pass of the backbone block with stage statistics.
pub fn demo_dcfa<T: Element>(
    x: &Tensor<T>,
    depth: usize,
    seed: u64,
) -> Result<(Tensor<T>, Vec<StageStat>)> {
    let (_, c, _, _) = x.dims4("demo_dcfa")?;
    let cfg = DcfaConfig::new(c, depth, seed);
    let p = DcfaParams::<T>::init(&cfg)?;
    let mut stages = vec![stage_stat("input", x)];

    let projected = conv2d(x, &p.cv1)?;
    stages.push(stage_stat("cv1", &projected));
    let (f1, f2) = split_half_channels(&projected)?;
    stages.push(stage_stat("split.passthrough", &f1));
    stages.push(stage_stat("split.chain", &f2));
    let mut chain = vec![f1.clone(), f2.clone()];
    let mut cur = f2;
    for (i, blk) in p.blocks.iter().enumerate() {
        cur = dafb(&cur, blk)?;
        stages.push(stage_stat(&format!("chain.{i}"), &cur));
        chain.push(cur.clone());
    }
    let refs: Vec<&Tensor<T>> = chain.iter().collect();
    let cat = concat_channels(&refs)?;
    stages.push(stage_stat("concat", &cat));
    let out = conv2d(&cat, &p.cv2)?;
    stages.push(stage_stat("output", &out));

    debug_assert_eq!(dcfa_block(x, &p)?.data(), out.data());
    Ok((out, stages))
}

/// Forward pass of a two-level pyramid fusion with stage statistics.
pub fn demo_dfpn<T: Element>(
    finest: &Tensor<T>,
    scale: usize,
    seed: u64,
) -> Result<(Tensor<T>, Vec<StageStat>)> {
    let (b, c, h, w) = finest.dims4("demo_dfpn")?;
    if h % scale != 0 || w % scale != 0 {
        return Err(Error::NotDivisible {
            context: "demo pyramid extent",
            divisor: scale,
            extent: h,
        });
    }
    // Synthesize the coarser level by average pooling the finest.
    let mut coarse = Tensor::zeros(&[b, c, h / scale, w / scale]);
    let inv = T::of_f64(1.0 / (scale * scale) as f64);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h / scale {
                for j in 0..w / scale {
                    let mut acc = T::zero();
                    for di in 0..scale {
                        for dj in 0..scale {
                            acc = acc
                                + finest.data()
                                    [((bi * c + ci) * h + i * scale + di) * w + j * scale + dj];
                        }
                    }
                    let hw = (h / scale) * (w / scale);
                    let plane = (bi * c + ci) * hw;
                    coarse.data_mut()[plane + i * (w / scale) + j] = acc * inv;
                }
            }
        }
    }
    let mut stages = vec![
        stage_stat("level.0", finest),
        stage_stat("level.1", &coarse),
    ];
    let pyr = PyramidLevels::new(vec![finest.clone(), coarse]);
    let p = DfpnParams::init(&[c, c], &DfpnConfig::new(scale, seed))?;
    let fused = dfpn_fuse(&pyr, &p)?;
    for (i, lvl) in fused.levels.iter().enumerate() {
        stages.push(stage_stat(&format!("fused.{i}"), lvl));
    }
    Ok((fused.levels[0].clone(), stages))
}

/// Forward pass of the frequency refinement block with stage statistics.
pub fn demo_firc3<T: FftElement>(
    x: &Tensor<T>,
    depth: usize,
    seed: u64,
) -> Result<(Tensor<T>, Vec<StageStat>)> {
    let (_, c, h, w) = x.dims4("demo_firc3")?;
    let cfg = FircConfig::new(c, depth, seed);
    let p = FircParams::<T>::init(&cfg)?;
    let mut stages = vec![stage_stat("input", x)];
    let refined = conv2d(x, &p.w1)?;
    stages.push(stage_stat("proj.refined", &refined));
    let skip = conv2d(x, &p.w2)?;
    stages.push(stage_stat("proj.skip", &skip));
    let mut cur = refined;
    for (i, stage) in p.stages.iter().enumerate() {
        let kernel = periodize_kernel(&stage.taps, (h, w))?;
        cur = firc(&cur, &kernel, &stage.eps_b(), 1)?;
        stages.push(stage_stat(&format!("refine.{i}"), &cur));
    }
    let merged = add(&cur, &skip)?;
    stages.push(stage_stat("sum", &merged));
    let out = conv2d(&merged, &p.w3)?;
    stages.push(stage_stat("output", &out));

    debug_assert_eq!(firc3_block(x, &p)?.data(), out.data());
    Ok((out, stages))
}

/// Amplitude-normalized upsampling in isolation: the input is the coarse
/// level; a zero fine level of matching extent is synthesized so the stats
/// isolate the mass flow through the normalization.
pub fn demo_anup<T: Element>(
    high: &Tensor<T>,
    scale: usize,
    seed: u64,
) -> Result<(Tensor<T>, Vec<StageStat>)> {
    let (b, c, h, w) = high.dims4("demo_anup")?;
    let mut stages = vec![stage_stat("input.high", high)];
    let up = nearest_upsample(high, scale)?;
    stages.push(stage_stat("upsampled", &up));
    let norm = anup_normalize(high, scale)?;
    stages.push(stage_stat("normalized", &norm));
    let low = Tensor::<T>::zeros(&[b, c, h * scale, w * scale]);
    let lateral = crate::conv::ConvSpec::init(
        crate::conv::ConvGeom::new(2 * c, c, 1),
        &mut crate::rng::rng_from_seed(seed),
    );
    let out = anup(high, &low, scale, &lateral)?;
    stages.push(stage_stat("fused", &out));
    Ok((out, stages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;

    #[test]
    fn dcfa_demo_matches_block_and_preserves_shape() {
        let x: Tensor<f64> = rand_tensor(&[1, 16, 8, 8], 3);
        let (out, stages) = demo_dcfa(&x, 1, 3).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert_eq!(stages.first().unwrap().name, "input");
        assert_eq!(stages.last().unwrap().name, "output");
    }

    #[test]
    fn anup_demo_shows_mass_conservation() {
        let high = Tensor::full(&[1, 1, 2, 2], 1.0f64);
        let (_, stages) = demo_anup(&high, 2, 5).unwrap();
        let by_name = |n: &str| stages.iter().find(|s| s.name == n).unwrap().l1;
        assert_eq!(by_name("input.high"), 4.0);
        assert_eq!(by_name("upsampled"), 16.0);
        assert_eq!(by_name("normalized"), 4.0);
    }

    #[test]
    fn firc3_demo_runs_each_stage() {
        let x: Tensor<f64> = rand_tensor(&[1, 8, 8, 8], 7);
        let (out, stages) = demo_firc3(&x, 2, 7).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert_eq!(stages.iter().filter(|s| s.name.starts_with("refine.")).count(), 2);
    }

    #[test]
    fn dfpn_demo_preserves_finest_shape() {
        let x: Tensor<f64> = rand_tensor(&[1, 8, 8, 8], 9);
        let (out, stages) = demo_dfpn(&x, 2, 9).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(stages.len() >= 4);
    }
}
