//! Pointwise (1x1x1x1) convolution: a per-voxel linear mix of channels.
//!
//! Functionally identical to [`super::conv`] with unit kernel extents, but
//! because no spatial taps exist the whole operation collapses to
//! channel-block `axpy`/dot calls over contiguous `(x,y,z,t)` blocks, which
//! is substantially faster than running the general kernel. Tests verify it
//! reduces exactly to the general convolution given the same weights.
//!
//! The weight tensor keeps the 6-D layout `[cout, cin, 1, 1, 1, 1]` so
//! checkpoints treat every convolution uniformly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rayon::prelude::*;

fn check<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<(usize, usize)> {
    let nd = x.dims6()?;
    let ws = w.shape();
    if ws.len() != 6 || ws[2..] != [1, 1, 1, 1] {
        return Err(Error::shape(
            op,
            format!("weight must be [cout, cin, 1, 1, 1, 1], got {:?}", ws),
        ));
    }
    if ws[1] != nd.c {
        return Err(Error::shape(
            op,
            format!("weight expects {} input channels, input has {}", ws[1], nd.c),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{}]", b.shape(), ws[0]),
            ));
        }
    }
    Ok((ws[0], ws[1]))
}

pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let (cout, cin) = check("conv_pointwise", x, w, bias)?;
    if !x.all_finite() || !w.all_finite() || bias.is_some_and(|b| !b.all_finite()) {
        return Err(Error::NonFinite {
            op: "conv_pointwise",
            detail: "input, weight, or bias".to_string(),
        });
    }
    let nd = x.dims6()?;
    let spatial = nd.spatial();
    let xd = x.data();
    let wd = w.data();
    let bd = bias.map(|b| b.data());
    let mut out = Tensor::zeros(&[nd.n, cout, nd.x, nd.y, nd.z, nd.t]);
    out.data_mut()
        .par_chunks_mut(spatial)
        .enumerate()
        .for_each(|(idx, blk)| {
            let co = idx % cout;
            let n = idx / cout;
            blk.fill(bd.map_or(S::zero(), |b| b[co]));
            for ci in 0..cin {
                let wv = wd[co * cin + ci];
                let xblk = &xd[(n * cin + ci) * spatial..(n * cin + ci + 1) * spatial];
                for (o, &v) in blk.iter_mut().zip(xblk) {
                    *o = wv.mul_add(v, *o);
                }
            }
        });
    Ok(out)
}

pub struct PointwiseGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad_out: &[S],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> Result<PointwiseGrads<S>> {
    let (cout, cin) = check("conv_pointwise_backward", x, w, None)?;
    let nd = x.dims6()?;
    let expect = nd.n * cout * nd.spatial();
    if grad_out.len() != expect {
        return Err(Error::shape(
            "conv_pointwise_backward",
            format!("grad_out has {} elements, expected {}", grad_out.len(), expect),
        ));
    }
    let spatial = nd.spatial();
    let xd = x.data();
    let wd = w.data();
    let go = grad_out;

    let input = if need_input {
        let mut gx = vec![S::zero(); x.numel()];
        gx.par_chunks_mut(spatial).enumerate().for_each(|(idx, blk)| {
            let ci = idx % cin;
            let n = idx / cin;
            for co in 0..cout {
                let wv = wd[co * cin + ci];
                let goblk = &go[(n * cout + co) * spatial..(n * cout + co + 1) * spatial];
                for (o, &v) in blk.iter_mut().zip(goblk) {
                    *o = wv.mul_add(v, *o);
                }
            }
        });
        Some(gx)
    } else {
        None
    };

    let weight = if need_weight {
        let mut gw = vec![S::zero(); cout * cin];
        gw.par_chunks_mut(cin).enumerate().for_each(|(co, row)| {
            for n in 0..nd.n {
                let goblk = &go[(n * cout + co) * spatial..(n * cout + co + 1) * spatial];
                for (ci, gv) in row.iter_mut().enumerate() {
                    let xblk = &xd[(n * cin + ci) * spatial..(n * cin + ci + 1) * spatial];
                    let mut acc = S::zero();
                    for (&g, &v) in goblk.iter().zip(xblk) {
                        acc = g.mul_add(v, acc);
                    }
                    *gv += acc;
                }
            }
        });
        Some(gw)
    } else {
        None
    };

    let bias = if need_bias {
        let mut gb = vec![S::zero(); cout];
        for n in 0..nd.n {
            for (co, gbv) in gb.iter_mut().enumerate() {
                let base = (n * cout + co) * spatial;
                *gbv += go[base..base + spatial].iter().copied().sum::<S>();
            }
        }
        Some(gb)
    } else {
        None
    };

    Ok(PointwiseGrads { input, weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::{self, ConvSpec};

    /// The specialized kernel must match the general convolution with a
    /// 1x1x1x1 spec, weight for weight.
    #[test]
    fn reduces_to_general_conv() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 3, 2, 5], |i| ((i * 31) % 83) as f64 * 0.03 - 1.0);
        let w = Tensor::<f64>::from_fn(&[5, 3, 1, 1, 1, 1], |i| (i as f64) * 0.11 - 0.7);
        let b = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.4 - 1.0);
        let fast = forward(&x, &w, Some(&b)).unwrap();
        let general = conv::forward(&x, &w, Some(&b), &ConvSpec::pointwise()).unwrap();
        assert_eq!(fast.shape(), general.shape());
        for (&a, &g) in fast.data().iter().zip(general.data()) {
            assert!((a - g).abs() < 1e-12);
        }
    }

    #[test]
    fn single_voxel_mix_by_hand() {
        // One voxel, two input channels (values 2 and -1), one output channel
        // with weights (3, 5) and bias 10: 3*2 + 5*(-1) + 10 = 11.
        let x = Tensor::<f32>::new(vec![1, 2, 1, 1, 1, 1], vec![2.0, -1.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 2, 1, 1, 1, 1], vec![3.0, 5.0]).unwrap();
        let b = Tensor::<f32>::new(vec![1], vec![10.0]).unwrap();
        let y = forward(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn wrong_weight_rank_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 2, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 2]);
        assert!(forward(&x, &w, None).is_err());
    }
}
