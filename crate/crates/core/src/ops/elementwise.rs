//! Elementwise primitives: ReLU and tensor addition (skip connections).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|&v| v.max(S::zero())).collect(),
    )
    .expect("same shape")
}

/// `grad_in = grad_out` where the *input* was strictly positive, else 0.
/// The subgradient at exactly 0 is taken as 0.
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &[S]) -> Vec<S> {
    x.data()
        .iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect()
}

pub fn add_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives_and_zero() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let x = Tensor::<f64>::from_fn(&[10], |i| i as f64 + 1.0);
        assert_eq!(relu_forward(&x).data(), x.data());
    }

    #[test]
    fn relu_gradient_masks_nonpositive_input() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &[1.0, 1.0, 1.0]);
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_zero_is_identity_and_shape_checked() {
        let x = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 - 2.5);
        let z = Tensor::<f32>::zeros(&[2, 3]);
        assert_eq!(add_forward(&x, &z).unwrap().data(), x.data());
        let bad = Tensor::<f32>::zeros(&[3, 2]);
        assert!(add_forward(&x, &bad).is_err());
    }

    #[test]
    fn add_with_negation_cancels() {
        let x = Tensor::<f64>::from_fn(&[4], |i| (i as f64) * 1.5 - 2.0);
        let nx = Tensor::<f64>::new(vec![4], x.data().iter().map(|v| -v).collect()).unwrap();
        assert!(add_forward(&x, &nx).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
