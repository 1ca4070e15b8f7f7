//! Two-group channel shuffle: reshape (B, C, H, W) to (B, 2, C/2, H, W),
//! swap the group axes, and flatten back. A pure permutation of channels.

use crate::tensor::{Element, Error, Result, Tensor};

/// The channel at position g*(C/2)+j moves to position j*2+g.
pub fn channel_shuffle<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    permute_channels(x, |c, half| {
        let g = c / half;
        let j = c % half;
        j * 2 + g
    })
}

/// Inverse permutation: position j*2+g moves back to g*(C/2)+j.
pub fn channel_shuffle_inverse<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    permute_channels(x, |c, half| {
        let j = c / 2;
        let g = c % 2;
        g * half + j
    })
}

fn permute_channels<T: Element>(
    x: &Tensor<T>,
    dest_of: impl Fn(usize, usize) -> usize,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4("channel_shuffle")?;
    if c % 2 != 0 {
        return Err(Error::OddChannels {
            context: "channel_shuffle",
            channels: c,
        });
    }
    let half = c / 2;
    let hw = h * w;
    let mut out = x.zeros_like();
    for bi in 0..b {
        for ci in 0..c {
            let dst = dest_of(ci, half);
            let src_start = (bi * c + ci) * hw;
            let dst_start = (bi * c + dst) * hw;
            out.data_mut()[dst_start..dst_start + hw]
                .copy_from_slice(&x.data()[src_start..src_start + hw]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rand_tensor;

    fn labels(c: usize) -> Tensor<f64> {
        let data = (0..c).map(|i| i as f64).collect();
        Tensor::from_vec(vec![1, c, 1, 1], data).unwrap()
    }

    #[test]
    fn four_channels_interleave() {
        // [a, b, c, d] -> [a, c, b, d]
        let y = channel_shuffle(&labels(4)).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn two_channels_is_identity() {
        let y = channel_shuffle(&labels(2)).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn four_channel_shuffle_is_an_involution() {
        let x = labels(4);
        let y = channel_shuffle(&channel_shuffle(&x).unwrap()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn shuffle_preserves_value_multiset() {
        let x: Tensor<f64> = rand_tensor(&[2, 6, 3, 3], 55);
        let y = channel_shuffle(&x).unwrap();
        let mut a: Vec<f64> = x.data().to_vec();
        let mut b: Vec<f64> = y.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_undoes_shuffle() {
        let x: Tensor<f64> = rand_tensor(&[1, 8, 2, 2], 3);
        let y = channel_shuffle_inverse(&channel_shuffle(&x).unwrap()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn odd_channel_count_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 5, 2, 2]);
        assert!(matches!(
            channel_shuffle(&x),
            Err(Error::OddChannels { .. })
        ));
    }
}
