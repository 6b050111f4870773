//! Nearest-neighbor upsampling of 6-D activations.
//!
//! The canonical decoder step doubles every spatial/temporal axis (each voxel
//! becomes a 2x2x2x2 block). Factors are per-axis 1 or 2 so the
//! spatial-only variant can skip the temporal axis, mirroring how the
//! convolution collapses its temporal extent in that mode.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims6, Tensor};

fn out_dims(nd: Dims6, f: [usize; 4]) -> Result<Dims6> {
    for &v in &f {
        if v != 1 && v != 2 {
            return Err(Error::InvalidConfig(format!(
                "upsample factors must be 1 or 2, got {:?}",
                f
            )));
        }
    }
    Ok(Dims6 {
        n: nd.n,
        c: nd.c,
        x: nd.x * f[0],
        y: nd.y * f[1],
        z: nd.z * f[2],
        t: nd.t * f[3],
    })
}

pub fn forward<S: Scalar>(x: &Tensor<S>, factors: [usize; 4]) -> Result<Tensor<S>> {
    let nd = x.dims6()?;
    let od = out_dims(nd, factors)?;
    let xd = x.data();
    let mut out = Tensor::zeros(&od.to_vec());
    let o = out.data_mut();
    let ft = factors[3];
    for n in 0..od.n {
        for c in 0..od.c {
            for ox in 0..od.x {
                for oy in 0..od.y {
                    for oz in 0..od.z {
                        let src = nd.row_offset(n, c, ox / factors[0], oy / factors[1], oz / factors[2]);
                        let dst = od.row_offset(n, c, ox, oy, oz);
                        if ft == 1 {
                            o[dst..dst + nd.t].copy_from_slice(&xd[src..src + nd.t]);
                        } else {
                            for it in 0..nd.t {
                                let v = xd[src + it];
                                o[dst + 2 * it] = v;
                                o[dst + 2 * it + 1] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of replication: every source voxel sums the gradients of the
/// (up to 16) output voxels it fed.
pub fn backward<S: Scalar>(
    input_shape: &[usize],
    factors: [usize; 4],
    grad_out: &[S],
) -> Result<Vec<S>> {
    let nd = Tensor::<S>::zeros(input_shape).dims6()?;
    let od = out_dims(nd, factors)?;
    let mut gx = vec![S::zero(); nd.numel()];
    let ft = factors[3];
    for n in 0..od.n {
        for c in 0..od.c {
            for ox in 0..od.x {
                for oy in 0..od.y {
                    for oz in 0..od.z {
                        let src = nd.row_offset(n, c, ox / factors[0], oy / factors[1], oz / factors[2]);
                        let dst = od.row_offset(n, c, ox, oy, oz);
                        if ft == 1 {
                            for it in 0..nd.t {
                                gx[src + it] += grad_out[dst + it];
                            }
                        } else {
                            for it in 0..nd.t {
                                gx[src + it] += grad_out[dst + 2 * it] + grad_out[dst + 2 * it + 1];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_becomes_full_block() {
        let x = Tensor::<f32>::full(&[1, 1, 1, 1, 1, 1], 7.0);
        let y = forward(&x, [2, 2, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn replication_preserves_scaled_sum() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 3, 2, 2], |i| i as f64 * 0.3 - 1.0);
        let y = forward(&x, [2, 2, 2, 2]).unwrap();
        let sx: f64 = x.data().iter().sum();
        let sy: f64 = y.data().iter().sum();
        assert!((sy - 16.0 * sx).abs() < 1e-9);
    }

    #[test]
    fn backward_of_ones_counts_block_size() {
        let shape = [1usize, 1, 2, 2, 2, 2];
        let go = vec![1.0f64; 16 * 16];
        let gx = backward(&shape, [2, 2, 2, 2], &go).unwrap();
        assert!(gx.iter().all(|&v| v == 16.0));
    }

    #[test]
    fn spatial_only_factors_leave_t_alone() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 2, 2, 2, 3], |i| i as f64);
        let y = forward(&x, [2, 2, 2, 1]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4, 4, 3]);
        // t rows are copied verbatim
        assert_eq!(
            &y.data()[..3],
            &x.data()[..3],
        );
    }

    #[test]
    fn bad_factor_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2, 2, 2]);
        assert!(forward(&x, [3, 1, 1, 1]).is_err());
    }
}
