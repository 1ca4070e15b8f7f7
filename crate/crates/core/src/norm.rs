//! Normalization layers: grouped normalization with per-channel affine, and
//! the inference-form per-channel affine used where a batch-norm symbol
//! appears in a residual branch.

use crate::tensor::{Element, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    GroupNorm,
    BatchAffine,
}

#[derive(Debug, Clone)]
pub struct NormSpec<T> {
    pub kind: NormKind,
    pub num_groups: usize,
    pub eps: T,
    /// Per-channel gain, shape (C).
    pub gain: Tensor<T>,
    /// Per-channel shift, shape (C).
    pub shift: Tensor<T>,
}

impl<T: Element> NormSpec<T> {
    /// Grouped normalization with unit gain and zero shift. When `num_groups`
    /// is omitted the default is min(16, C).
    pub fn group_norm(channels: usize, num_groups: Option<usize>, eps: T) -> Result<Self> {
        let g = num_groups.unwrap_or_else(|| channels.min(16));
        if g == 0 || !channels.is_multiple_of(g) {
            return Err(Error::NotDivisible {
                context: "group_norm groups",
                divisor: g,
                extent: channels,
            });
        }
        if eps <= T::zero() {
            return Err(Error::InvalidArgument {
                context: "norm eps must be positive".into(),
            });
        }
        Ok(Self {
            kind: NormKind::GroupNorm,
            num_groups: g,
            eps,
            gain: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
        })
    }

    /// Per-channel affine y = gain * x + shift.
    pub fn batch_affine(channels: usize) -> Self {
        Self {
            kind: NormKind::BatchAffine,
            num_groups: 1,
            eps: T::of_f64(1e-5),
            gain: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.numel()
    }
}

/// Per-(sample, group) standardization followed by the per-channel affine.
pub fn group_norm<T: Element>(x: &Tensor<T>, spec: &NormSpec<T>) -> Result<Tensor<T>> {
    let (stats, out) = group_norm_with_stats(x, spec)?;
    let _ = stats;
    Ok(out)
}

/// Saved per-(sample, group) statistics for the reverse pass.
#[derive(Debug, Clone)]
pub struct GroupNormStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn group_norm_with_stats<T: Element>(
    x: &Tensor<T>,
    spec: &NormSpec<T>,
) -> Result<(GroupNormStats, Tensor<T>)> {
    let (b, c, h, w) = x.dims4("group_norm")?;
    if spec.kind != NormKind::GroupNorm {
        return Err(Error::InvalidArgument {
            context: "group_norm requires a group_norm spec".into(),
        });
    }
    if spec.channels() != c {
        return Err(Error::DimensionMismatch {
            context: "group_norm",
            dim: "channels",
            expected: spec.channels(),
            got: c,
        });
    }
    if c % spec.num_groups != 0 {
        return Err(Error::NotDivisible {
            context: "group_norm groups",
            divisor: spec.num_groups,
            extent: c,
        });
    }
    let g = spec.num_groups;
    let cg = c / g;
    let hw = h * w;
    let group_len = cg * hw;
    let mut out = x.clone();
    let mut stats = GroupNormStats {
        mean: Vec::with_capacity(b * g),
        inv_std: Vec::with_capacity(b * g),
    };
    for bi in 0..b {
        for gi in 0..g {
            let start = (bi * c + gi * cg) * hw;
            let slice = &x.data()[start..start + group_len];
            let mut sum = T::zero();
            for &v in slice {
                sum = sum + v;
            }
            let count = T::of_f64(group_len as f64);
            let mean = sum / count;
            let mut var_acc = T::zero();
            for &v in slice {
                let d = v - mean;
                var_acc = var_acc + d * d;
            }
            let var = var_acc / count;
            let inv_std = T::one() / (var + spec.eps).sqrt();
            stats.mean.push(mean.as_f64());
            stats.inv_std.push(inv_std.as_f64());
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let gain = spec.gain.data()[ch];
                let shift = spec.shift.data()[ch];
                let row = start + ci * hw;
                for v in &mut out.data_mut()[row..row + hw] {
                    *v = (*v - mean) * inv_std * gain + shift;
                }
            }
        }
    }
    Ok((stats, out))
}

/// Gradients of group_norm with respect to input, gain, and shift.
pub fn group_norm_backward(
    x: &Tensor<f64>,
    spec: &NormSpec<f64>,
    stats: &GroupNormStats,
    cot: &Tensor<f64>,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    let (b, c, h, w) = x.dims4("group_norm_backward")?;
    let g = spec.num_groups;
    let cg = c / g;
    let hw = h * w;
    let group_len = cg * hw;
    let mut dx = Tensor::zeros(&[b, c, h, w]);
    let mut dgain = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for bi in 0..b {
        for gi in 0..g {
            let s = bi * g + gi;
            let mean = stats.mean[s];
            let inv_std = stats.inv_std[s];
            let start = (bi * c + gi * cg) * hw;
            // x_hat = (x - mean) * inv_std; y = gain * x_hat + shift.
            // dx = gain * inv_std * (dy - mean(dy_g) - x_hat * mean(dy_g * x_hat))
            // where dy_g = gain * dy and the means run over the group.
            let mut sum_dyg = 0.0;
            let mut sum_dyg_xhat = 0.0;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let gain = spec.gain.data()[ch];
                let row = start + ci * hw;
                for i in 0..hw {
                    let xhat = (x.data()[row + i] - mean) * inv_std;
                    let dy = cot.data()[row + i];
                    dgain.data_mut()[ch] += dy * xhat;
                    dshift.data_mut()[ch] += dy;
                    sum_dyg += gain * dy;
                    sum_dyg_xhat += gain * dy * xhat;
                }
            }
            let n = group_len as f64;
            let mean_dyg = sum_dyg / n;
            let mean_dyg_xhat = sum_dyg_xhat / n;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let gain = spec.gain.data()[ch];
                let row = start + ci * hw;
                for i in 0..hw {
                    let xhat = (x.data()[row + i] - mean) * inv_std;
                    let dyg = gain * cot.data()[row + i];
                    dx.data_mut()[row + i] = inv_std * (dyg - mean_dyg - xhat * mean_dyg_xhat);
                }
            }
        }
    }
    Ok((dx, dgain, dshift))
}

/// Inference-form affine: `y[b,c,h,w] = gain[c] * x[b,c,h,w] + shift[c]`.
pub fn channel_affine<T: Element>(x: &Tensor<T>, spec: &NormSpec<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("channel_affine")?;
    if spec.channels() != c {
        return Err(Error::DimensionMismatch {
            context: "channel_affine",
            dim: "channels",
            expected: spec.channels(),
            got: c,
        });
    }
    let hw = h * w;
    let mut out = x.clone();
    for bi in 0..b {
        for ci in 0..c {
            let gain = spec.gain.data()[ci];
            let shift = spec.shift.data()[ci];
            let start = (bi * c + ci) * hw;
            for v in &mut out.data_mut()[start..start + hw] {
                *v = *v * gain + shift;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;
    use crate::tensor::max_abs_diff;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[1, 4, 3, 3], 7.5f64);
        let spec = NormSpec::group_norm(4, Some(2), 1e-5).unwrap();
        let y = group_norm(&x, &spec).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn normalized_stats_are_standard() {
        let x: Tensor<f64> = rand_tensor(&[2, 8, 4, 4], 31);
        let spec = NormSpec::group_norm(8, Some(4), 1e-12).unwrap();
        let y = group_norm(&x, &spec).unwrap();
        // Unit gain / zero shift: each (sample, group) slab has mean 0, var 1.
        let (b, c, h, w) = y.dims4("t").unwrap();
        let cg = c / 4;
        for bi in 0..b {
            for gi in 0..4 {
                let start = (bi * c + gi * cg) * h * w;
                let slab = &y.data()[start..start + cg * h * w];
                let n = slab.len() as f64;
                let mean: f64 = slab.iter().sum::<f64>() / n;
                let var: f64 = slab.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-6, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-6, "var {var}");
            }
        }
    }

    #[test]
    fn groups_equal_channels_matches_instance_norm() {
        let x: Tensor<f64> = rand_tensor(&[1, 3, 5, 5], 17);
        let spec = NormSpec::group_norm(3, Some(3), 1e-5).unwrap();
        let y = group_norm(&x, &spec).unwrap();

        // Direct per-channel computation.
        let (_, c, h, w) = x.dims4("t").unwrap();
        let hw = h * w;
        let mut expect = x.clone();
        for ci in 0..c {
            let start = ci * hw;
            let plane = &x.data()[start..start + hw];
            let mean: f64 = plane.iter().sum::<f64>() / hw as f64;
            let var: f64 = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            for i in 0..hw {
                expect.data_mut()[start + i] = (plane[i] - mean) * inv;
            }
        }
        assert!(max_abs_diff(&y, &expect) < 1e-12);
    }

    #[test]
    fn default_group_count_is_capped_at_sixteen() {
        let spec = NormSpec::<f64>::group_norm(32, None, 1e-5).unwrap();
        assert_eq!(spec.num_groups, 16);
        let spec = NormSpec::<f64>::group_norm(8, None, 1e-5).unwrap();
        assert_eq!(spec.num_groups, 8);
    }
}
