//! Wall-time measurements comparing the sparse attention path against the
//! dense reference, and direct spatial convolution against the transform
//! path. Medians over repeated runs resist scheduler noise; raw samples are
//! kept in the records.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use crate::dcfa::sparse_attention_head;
use crate::firc::periodize_kernel;
use crate::fft::{fft2, ifft2};
use crate::oracles::{circular_conv2d_reference, dense_attention_reference};
use crate::rng::rand_tensor;
use crate::spectrum::cmul;
use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchRecord {
    pub op: String,
    pub sizes: BTreeMap<String, u64>,
    pub median_ms: f64,
    pub runs: usize,
    pub samples_ms: Vec<f64>,
}

pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn time_runs(runs: usize, mut f: impl FnMut()) -> Vec<f64> {
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f();
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples
}

fn record(op: &str, sizes: &[(&str, usize)], samples: Vec<f64>) -> BenchRecord {
    BenchRecord {
        op: op.to_string(),
        sizes: sizes
            .iter()
            .map(|(k, v)| (k.to_string(), *v as u64))
            .collect(),
        median_ms: median(&samples),
        runs: samples.len(),
        samples_ms: samples,
    }
}

/// Dense reference vs the sparse score-gather-softmax path over a K sweep.
/// Produces one dense row per N and one sparse row per (N, K).
pub fn bench_attention(
    ns: &[usize],
    d: usize,
    k_divisors: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for &n in ns {
        let q: Tensor<f64> = rand_tensor(&[n, d], seed);
        let k: Tensor<f64> = rand_tensor(&[n, d], seed ^ 1);
        let v: Tensor<f64> = rand_tensor(&[n, d], seed ^ 2);

        let samples = time_runs(runs, || {
            let out = dense_attention_reference(&q, &k, &v).expect("bench shapes are valid");
            black_box(out);
        });
        records.push(record("attention_dense", &[("n", n), ("d", d)], samples));

        for &div in k_divisors {
            let k_sel = (n / div).max(1);
            let mut out = vec![0.0f64; n * d];
            let samples = time_runs(runs, || {
                sparse_attention_head(
                    q.data(),
                    k.data(),
                    v.data(),
                    n,
                    d,
                    k_sel,
                    None,
                    None,
                    &mut out,
                );
                black_box(&out);
            });
            records.push(record(
                "attention_sparse",
                &[("n", n), ("d", d), ("k", k_sel)],
                samples,
            ));
        }
    }
    Ok(records)
}

/// Direct spatial circular convolution vs the transform path (forward
/// transform, pointwise product with a precomputed kernel spectrum, inverse).
pub fn bench_conv(
    extents: &[usize],
    kernel_sizes: &[usize],
    channels: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for &extent in extents {
        for &k in kernel_sizes {
            if k > extent {
                continue;
            }
            let x: Tensor<f64> = rand_tensor(&[1, channels, extent, extent], seed);
            let taps: Tensor<f64> = rand_tensor(&[channels, k, k], seed ^ 3);
            let kernel = periodize_kernel(&taps, (extent, extent))?;

            let samples = time_runs(runs, || {
                let out = circular_conv2d_reference(&x, &taps).expect("bench shapes are valid");
                black_box(out);
            });
            records.push(record(
                "conv_direct",
                &[("extent", extent), ("k", k), ("c", channels)],
                samples,
            ));

            let samples = time_runs(runs, || {
                let spec = fft2(&x).expect("bench shapes are valid");
                let prod = cmul(&kernel.otf, &spec).expect("bench shapes are valid");
                let out = ifft2(&prod);
                black_box(out);
            });
            records.push(record(
                "conv_fft",
                &[("extent", extent), ("k", k), ("c", channels)],
                samples,
            ));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_single_sample_is_the_sample() {
        assert_eq!(median(&[4.2]), 4.2);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn attention_bench_row_count_contract() {
        // One dense + one sparse row per N at a single K divisor.
        let records = bench_attention(&[8, 16, 32], 4, &[16], 1, 7).unwrap();
        assert_eq!(records.len(), 6);
        let dense = records.iter().filter(|r| r.op == "attention_dense").count();
        assert_eq!(dense, 3);
    }

    #[test]
    fn single_run_median_equals_sample() {
        let records = bench_attention(&[8], 4, &[2], 1, 9).unwrap();
        for r in &records {
            assert_eq!(r.runs, 1);
            assert_eq!(r.median_ms, r.samples_ms[0]);
        }
    }

    #[test]
    fn conv_bench_skips_oversized_kernels() {
        let records = bench_conv(&[4], &[3, 5], 1, 1, 11).unwrap();
        // k = 5 does not fit a 4x4 extent: only the k = 3 pair remains.
        assert_eq!(records.len(), 2);
    }
}
