//! Parameter initialization.

use rand_distr::{Distribution, Normal};

use crate::model::params::{ModelParameters, ParamKind};
use crate::seed::rng_for;
use crate::tensor::Real;

/// Standard deviation of the zero-mean Gaussian used for conv kernels.
pub const CONV_INIT_STD: f64 = 0.01;

/// One axis of the bilinear upsampling kernel: `w(i) = 1 - |i - c| / f` with
/// `f = ceil(k / 2)` and `c = (2f - 1 - f mod 2) / 2`.
pub fn bilinear_weights(k: usize) -> Vec<f64> {
    let f = k.div_ceil(2) as f64;
    let c = (2.0 * f - 1.0 - (f % 2.0)) / 2.0;
    (0..k).map(|i| 1.0 - (i as f64 - c).abs() / f).collect()
}

/// Separable `kh × kw` bilinear kernel, row-major.
pub fn init_bilinear(kh: usize, kw: usize, stride: usize) -> Vec<f64> {
    assert!(stride >= 1, "stride must be positive");
    let (wy, wx) = (bilinear_weights(kh), bilinear_weights(kw));
    wy.iter().flat_map(|a| wx.iter().map(move |b| a * b)).collect()
}

/// Gaussian conv kernels, zero biases, unit/zero batch-norm affine terms, and
/// channel-diagonal bilinear upsampling kernels. Deterministic in `seed`.
pub fn init_weights<T: Real>(params: &mut ModelParameters<T>, seed: u64) {
    let normal = Normal::new(0.0, CONV_INIT_STD).expect("finite std");
    let mut rng = rng_for(seed, &[0x696e_6974]);
    for (_, p) in params.iter_mut() {
        let shape = p.tensor.shape().to_vec();
        let data = p.tensor.data_mut();
        match p.kind {
            ParamKind::ConvWeight => data.iter_mut().for_each(|v| *v = T::from_f64(normal.sample(&mut rng))),
            ParamKind::ConvBias | ParamKind::NormBeta => data.fill(T::zero()),
            ParamKind::NormGamma => data.fill(T::one()),
            ParamKind::UpsampleWeight => {
                let (cin, cout, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
                let kernel = init_bilinear(kh, kw, 2);
                data.fill(T::zero());
                for c in 0..cin.min(cout) {
                    let off = (c * cout + c) * kh * kw;
                    for (d, &k) in data[off..off + kh * kw].iter_mut().zip(&kernel) {
                        *d = T::from_f64(k);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::model::RedNetConfig;
    use crate::tensor::Tensor;

    #[test]
    fn bilinear_values() {
        assert_eq!(bilinear_weights(4), vec![0.25, 0.75, 0.75, 0.25]);
        let k = init_bilinear(4, 4, 2);
        assert_eq!(k[5], 0.5625);
        assert_eq!(k[1 * 4 + 2], 0.5625);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(k[y * 4 + x], k[y * 4 + 3 - x]);
                assert_eq!(k[y * 4 + x], k[(3 - y) * 4 + x]);
            }
        }
        assert_eq!(bilinear_weights(3), vec![0.25, 0.75, 0.75]);
        assert_eq!(bilinear_weights(2), vec![1.0, 0.0]);
    }

    #[test]
    fn bilinear_partition_of_unity() {
        // Under stride-2 overlap, taps of the same phase sum to one.
        let w = bilinear_weights(4);
        assert_eq!(w[0] + w[2], 1.0);
        assert_eq!(w[1] + w[3], 1.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 8, 8], 0.7));
        let k = tape.leaf(Tensor::new(vec![1, 1, 4, 4], init_bilinear(4, 4, 2)).unwrap());
        let y = tape.conv_transpose2d(x, k, 2, 1).unwrap();
        let out = tape.value(y);
        for r in 1..15 {
            for c in 1..15 {
                assert!((out.data()[r * 16 + c] - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_follow_their_roles() {
        let mut p = ModelParameters::<f64>::zeros(&RedNetConfig::desk()).unwrap();
        init_weights(&mut p, 9);
        let mut sample = Vec::new();
        for (name, q) in p.iter() {
            match q.kind {
                ParamKind::ConvWeight => sample.extend_from_slice(q.tensor.data()),
                ParamKind::ConvBias | ParamKind::NormBeta => assert!(q.tensor.data().iter().all(|&v| v == 0.0), "{name}"),
                ParamKind::NormGamma => assert!(q.tensor.data().iter().all(|&v| v == 1.0), "{name}"),
                ParamKind::UpsampleWeight => {
                    let s = q.tensor.shape();
                    assert_eq!(q.tensor.data()[..16], init_bilinear(4, 4, 2)[..]);
                    assert!(q.tensor.data()[16..32].iter().all(|&v| v == 0.0), "off-diagonal of {name} {s:?}");
                }
            }
        }
        assert!(sample.len() > 100_000);
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        let std = (sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sample.len() as f64).sqrt();
        assert!((std / CONV_INIT_STD - 1.0).abs() < 0.05, "std {std}");
        let mut again = ModelParameters::<f64>::zeros(&RedNetConfig::desk()).unwrap();
        init_weights(&mut again, 9);
        assert_eq!(again, p);
    }
}
