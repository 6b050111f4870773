//! Channel softmax over the class axis of a 6-D tensor, stabilized by
//! per-voxel max subtraction.
//!
//! Channel blocks are contiguous, so instead of gathering strided per-voxel
//! channel vectors the kernel walks all channel blocks of one sample as
//! parallel streams, one pass for the max, one for exp-and-sum, one to
//! normalize. C is small (3 classes), so the streams stay cache-resident.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let nd = x.dims6()?;
    if !x.all_finite() {
        return Err(Error::NonFinite {
            op: "softmax_channels",
            detail: "input tensor".to_string(),
        });
    }
    let spatial = nd.spatial();
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for n in 0..nd.n {
        let base = n * nd.c * spatial;
        for v in 0..spatial {
            let mut m = xd[base + v];
            for c in 1..nd.c {
                m = m.max(xd[base + c * spatial + v]);
            }
            let mut sum = S::zero();
            for c in 0..nd.c {
                let e = (xd[base + c * spatial + v] - m).exp();
                od[base + c * spatial + v] = e;
                sum += e;
            }
            let inv = S::one() / sum;
            for c in 0..nd.c {
                od[base + c * spatial + v] *= inv;
            }
        }
    }
    Ok(out)
}

/// `dx_c = y_c * (g_c - sum_c' g_c' * y_c')` per voxel.
pub fn backward<S: Scalar>(y: &Tensor<S>, grad_out: &[S]) -> Result<Vec<S>> {
    let nd = y.dims6()?;
    let spatial = nd.spatial();
    let yd = y.data();
    let mut gx = vec![S::zero(); y.numel()];
    for n in 0..nd.n {
        let base = n * nd.c * spatial;
        for v in 0..spatial {
            let mut dot = S::zero();
            for c in 0..nd.c {
                let i = base + c * spatial + v;
                dot = yd[i].mul_add(grad_out[i], dot);
            }
            for c in 0..nd.c {
                let i = base + c * spatial + v;
                gx[i] = yd[i] * (grad_out[i] - dot);
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_uniform() {
        let x = Tensor::<f64>::zeros(&[1, 3, 1, 1, 1, 1]);
        let y = forward(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_logit_does_not_overflow() {
        let x = Tensor::<f64>::new(vec![1, 3, 1, 1, 1, 1], vec![1000.0, 0.0, 0.0]).unwrap();
        let y = forward(&x).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn sums_to_one_per_voxel() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 2, 2, 4], |i| ((i * 17) % 23) as f64 * 0.37 - 4.0);
        let y = forward(&x).unwrap();
        let nd = y.dims6().unwrap();
        let spatial = nd.spatial();
        for n in 0..nd.n {
            for v in 0..spatial {
                let s: f64 = (0..nd.c)
                    .map(|c| y.data()[(n * nd.c + c) * spatial + v])
                    .sum();
                assert!((s - 1.0).abs() < 1e-6);
                for c in 0..nd.c {
                    let p = y.data()[(n * nd.c + c) * spatial + v];
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}
