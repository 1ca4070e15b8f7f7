//! Property-based invariants over randomly generated shapes and values.

use proptest::prelude::*;

use dfir_core::conv::{conv2d, ConvSpec};
use dfir_core::fft::fft2;
use dfir_core::io::{decode, encode, AnyTensor};
use dfir_core::resample::zero_insert_upsample;
use dfir_core::shuffle::channel_shuffle;
use dfir_core::softmax::masked_softmax;
use dfir_core::spectral::{block_avg_spectrum, repeat_spectrum};
use dfir_core::tensor::Tensor;

fn tensor4(
    max_c: usize,
    even_channels: bool,
) -> impl Strategy<Value = Tensor<f64>> {
    (1usize..=2, 1usize..=max_c, 1usize..=5, 1usize..=5)
        .prop_map(move |(b, c, h, w)| {
            let c = if even_channels { c * 2 } else { c };
            (b, c, h, w)
        })
        .prop_flat_map(|(b, c, h, w)| {
            proptest::collection::vec(-1.0f64..1.0, b * c * h * w)
                .prop_map(move |data| Tensor::from_vec(vec![b, c, h, w], data).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffle_is_always_a_value_permutation(x in tensor4(4, true)) {
        let y = channel_shuffle(&x).unwrap();
        let mut a: Vec<f64> = x.data().to_vec();
        let mut b: Vec<f64> = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_insert_preserves_l1_for_all_inputs(x in tensor4(3, false), s in 1usize..=3) {
        let up = zero_insert_upsample(&x, s).unwrap();
        prop_assert_eq!(up.l1_norm(), x.l1_norm());
    }

    #[test]
    fn delta_convolution_is_identity_everywhere(x in tensor4(3, false)) {
        let c = x.shape()[1];
        let y = conv2d(&x, &ConvSpec::identity(c, 1)).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn repeat_then_average_recovers_any_spectrum(x in tensor4(2, false), s in 1usize..=3) {
        let spec = fft2(&x).unwrap();
        let round = block_avg_spectrum(&repeat_spectrum(&spec, s).unwrap(), s).unwrap();
        prop_assert_eq!(round.data(), spec.data());
    }

    #[test]
    fn masked_softmax_rows_normalize_and_mask(
        rows in 1usize..=6,
        cols in 2usize..=8,
        seed in 0u64..1000,
    ) {
        use rand::Rng;
        let mut rng = dfir_core::rng::rng_from_seed(seed);
        let logits: Tensor<f64> = dfir_core::rng::rand_tensor(&[rows, cols], seed);
        let keep: Vec<Vec<usize>> = (0..rows)
            .map(|_| {
                let k = rng.random_range(1..=cols);
                let mut idx: Vec<usize> = (0..cols).collect();
                for i in (1..idx.len()).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                idx.truncate(k);
                idx.sort_unstable();
                idx
            })
            .collect();
        let out = masked_softmax(&logits, &keep).unwrap();
        for (r, kept) in keep.iter().enumerate() {
            let row = &out.data()[r * cols..(r + 1) * cols];
            let sum: f64 = kept.iter().map(|&j| row[j]).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for (j, &v) in row.iter().enumerate() {
                if !kept.contains(&j) {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn fixture_encoding_round_trips_bitwise(
        shape in proptest::collection::vec(1usize..=4, 1..=4),
        seed in 0u64..10_000,
        use_f32 in any::<bool>(),
    ) {
        let t = if use_f32 {
            AnyTensor::F32(dfir_core::rng::rand_tensor(&shape, seed))
        } else {
            AnyTensor::F64(dfir_core::rng::rand_tensor(&shape, seed))
        };
        let bytes = encode(&t);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back), bytes);
    }
}
