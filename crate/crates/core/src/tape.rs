//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends one node holding its output tensor and a record
//! of which earlier nodes fed it (a Wengert list). [`Tape::backward`] walks
//! the list once in reverse, accumulating gradients additively so a tensor
//! feeding several consumers receives the sum of their contributions.
//!
//! Nodes know at record time whether any trainable leaf lies beneath them;
//! backward skips gradient computation for branches that reach none. In
//! particular the first convolution never computes its (large) input-image
//! gradient during training, since the input volume is a non-trainable leaf.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvSpec};
use crate::ops::loss::{self, DiceStats, SparseTarget, TemporalNorm};
use crate::ops::norm::{self, GroupStats};
use crate::ops::{elementwise, pointwise, softmax, upsample};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv4d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Pointwise {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: GroupStats,
    },
    SoftmaxChannels {
        x: Var,
    },
    Upsample {
        x: Var,
        factors: [usize; 4],
    },
    SparseDice {
        p: Var,
        target: SparseTarget,
        stats: DiceStats,
    },
    Temporal {
        p: Var,
        norm: TemporalNorm,
    },
    Sum {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op,
    /// True when a trainable leaf is reachable from this node.
    needs_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    spent: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Only leaves with `requires_grad` receive
    /// gradients; everything derived from them does automatically.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass w.r.t. node `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Move a gradient out of the tape (optimizer hand-off).
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push(&mut self, value: Tensor<S>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Autodiff(format!(
                "{}: variable #{} does not belong to this tape",
                op, v.0
            )));
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn conv4d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x, "conv4d")?;
        self.check(w, "conv4d")?;
        if let Some(bv) = b {
            self.check(bv, "conv4d")?;
        }
        let out = conv::forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|bv| &self.nodes[bv.0].value),
            &spec,
        )?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|bv| self.needs(bv));
        Ok(self.push(out, Op::Conv4d { x, w, b, spec }, ng))
    }

    pub fn conv_pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x, "conv_pointwise")?;
        self.check(w, "conv_pointwise")?;
        if let Some(bv) = b {
            self.check(bv, "conv_pointwise")?;
        }
        let out = pointwise::forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            b.map(|bv| &self.nodes[bv.0].value),
        )?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|bv| self.needs(bv));
        Ok(self.push(out, Op::Pointwise { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "relu")?;
        let out = elementwise::relu_forward(&self.nodes[x.0].value);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Relu { x }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let out = elementwise::add_forward(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    ) -> Result<Var> {
        self.check(x, "group_norm")?;
        self.check(gamma, "group_norm")?;
        self.check(beta, "group_norm")?;
        let (out, stats) = norm::forward(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
            groups,
            eps,
        )?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            ng,
        ))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        self.check(x, "softmax_channels")?;
        let out = softmax::forward(&self.nodes[x.0].value)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SoftmaxChannels { x }, ng))
    }

    pub fn upsample_nearest(&mut self, x: Var, factors: [usize; 4]) -> Result<Var> {
        self.check(x, "upsample_nearest")?;
        let out = upsample::forward(&self.nodes[x.0].value, factors)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Upsample { x, factors }, ng))
    }

    /// Dice loss over the labeled frames of `target`; scalar output node.
    pub fn sparse_dice(&mut self, p: Var, target: &SparseTarget, eps: f64) -> Result<Var> {
        self.check(p, "sparse_dice")?;
        let (value, stats) = loss::sparse_dice_forward(&self.nodes[p.0].value, target, eps)?;
        let out = Tensor::new(vec![1], vec![S::from_f64(value)])?;
        let ng = self.needs(p);
        Ok(self.push(
            out,
            Op::SparseDice {
                p,
                target: target.clone(),
                stats,
            },
            ng,
        ))
    }

    /// Temporal-consistency penalty; scalar output node.
    pub fn temporal_consistency(&mut self, p: Var, norm: TemporalNorm) -> Result<Var> {
        self.check(p, "temporal_consistency")?;
        let value = loss::temporal_forward(&self.nodes[p.0].value, norm)?;
        let out = Tensor::new(vec![1], vec![S::from_f64(value)])?;
        let ng = self.needs(p);
        Ok(self.push(out, Op::Temporal { p, norm }, ng))
    }

    /// Sum of all elements; scalar output node.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sum")?;
        let s: S = self.nodes[x.0].value.data().iter().copied().sum();
        let out = Tensor::new(vec![1], vec![s])?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Sum { x }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect(),
        )?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul { a, b }, ng))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.check(x, "scale")?;
        let ks = S::from_f64(k);
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| v * ks).collect(),
        )?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Scale { x, k }, ng))
    }

    /// Reverse pass from a scalar loss node. Populates gradients for every
    /// node on the path down to trainable leaves. A tape can be replayed
    /// backward once; build a fresh tape per step.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss, "backward")?;
        if self.spent {
            return Err(Error::Autodiff(
                "backward already ran on this tape; record a fresh tape per step".to_string(),
            ));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.needs_grad {
            return Err(Error::Autodiff(
                "loss does not depend on any tensor requiring gradients (detached graph)"
                    .to_string(),
            ));
        }
        self.spent = true;
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize) -> Result<()> {
        // Take the node's gradient out (and put it back at the end) so we can
        // mutate other slots without aliasing it.
        let go = self.grads[i].take().expect("checked by caller");
        let Tape { nodes, grads, .. } = self;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv4d { x, w, b, spec } => {
                let (nx, nw) = (nodes[x.0].needs_grad, nodes[w.0].needs_grad);
                let nb = b.map(|bv| nodes[bv.0].needs_grad).unwrap_or(false);
                let g = conv::backward(&nodes[x.0].value, &nodes[w.0].value, spec, &go, nx, nw, nb)?;
                if let Some(gx) = g.input {
                    accumulate(&mut grads[x.0], gx);
                }
                if let Some(gw) = g.kernel {
                    accumulate(&mut grads[w.0], gw);
                }
                if let (Some(gb), Some(bv)) = (g.bias, b) {
                    accumulate(&mut grads[bv.0], gb);
                }
            }
            Op::Pointwise { x, w, b } => {
                let (nx, nw) = (nodes[x.0].needs_grad, nodes[w.0].needs_grad);
                let nb = b.map(|bv| nodes[bv.0].needs_grad).unwrap_or(false);
                let g = pointwise::backward(&nodes[x.0].value, &nodes[w.0].value, &go, nx, nw, nb)?;
                if let Some(gx) = g.input {
                    accumulate(&mut grads[x.0], gx);
                }
                if let Some(gw) = g.weight {
                    accumulate(&mut grads[w.0], gw);
                }
                if let (Some(gb), Some(bv)) = (g.bias, b) {
                    accumulate(&mut grads[bv.0], gb);
                }
            }
            Op::Relu { x } => {
                let gx = elementwise::relu_backward(&nodes[x.0].value, &go);
                accumulate(&mut grads[x.0], gx);
            }
            Op::Add { a, b } => {
                if nodes[b.0].needs_grad {
                    accumulate(&mut grads[b.0], go.clone());
                }
                if nodes[a.0].needs_grad {
                    accumulate(&mut grads[a.0], go.clone());
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let g = norm::backward(
                    &nodes[x.0].value,
                    &nodes[gamma.0].value,
                    &nodes[beta.0].value,
                    *groups,
                    stats,
                    &go,
                )?;
                if nodes[x.0].needs_grad {
                    accumulate(&mut grads[x.0], g.input);
                }
                if nodes[gamma.0].needs_grad {
                    accumulate(&mut grads[gamma.0], g.gamma);
                }
                if nodes[beta.0].needs_grad {
                    accumulate(&mut grads[beta.0], g.beta);
                }
            }
            Op::SoftmaxChannels { x } => {
                let gx = softmax::backward(&node.value, &go)?;
                accumulate(&mut grads[x.0], gx);
            }
            Op::Upsample { x, factors } => {
                let gx = upsample::backward(nodes[x.0].value.shape(), *factors, &go)?;
                accumulate(&mut grads[x.0], gx);
            }
            Op::SparseDice {
                p, target, stats, ..
            } => {
                let gp =
                    loss::sparse_dice_backward(&nodes[p.0].value, target, stats, go[0].as_f64())?;
                accumulate(&mut grads[p.0], gp);
            }
            Op::Temporal { p, norm } => {
                let gp = loss::temporal_backward(&nodes[p.0].value, *norm, go[0].as_f64())?;
                accumulate(&mut grads[p.0], gp);
            }
            Op::Sum { x } => {
                let gx = vec![go[0]; nodes[x.0].value.numel()];
                accumulate(&mut grads[x.0], gx);
            }
            Op::Mul { a, b } => {
                if nodes[a.0].needs_grad {
                    let ga: Vec<S> = go
                        .iter()
                        .zip(nodes[b.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    accumulate(&mut grads[a.0], ga);
                }
                if nodes[b.0].needs_grad {
                    let gb: Vec<S> = go
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Scale { x, k } => {
                let ks = S::from_f64(*k);
                let gx: Vec<S> = go.iter().map(|&g| g * ks).collect();
                accumulate(&mut grads[x.0], gx);
            }
        }
        self.grads[i] = Some(go);
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            debug_assert_eq!(acc.len(), g.len());
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
}

/// Result of a finite-difference check: worst relative error per input
/// tensor, `|analytic - numeric| / max(1, |numeric|)`.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
}

/// Compare the tape's analytic gradients against central finite differences
/// with step `1e-4`, in `f64` (single precision drowns a central difference
/// in rounding noise).
///
/// `f` builds the computation from leaf variables (one per input, in order)
/// and returns the scalar loss node. With `samples_per_input = None` every
/// element is perturbed; for large inputs pass `Some(k)` to check `k`
/// deterministically chosen random elements per tensor.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    samples_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    use rand::SeedableRng;

    let eval = |tensors: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).numel() != 1 {
            return Err(Error::Autodiff(
                "grad_check requires a scalar loss".to_string(),
            ));
        }
        Ok((tape, vars, loss))
    };

    // Analytic gradients once.
    let (mut tape, vars, loss) = eval(inputs)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();

    let loss_of = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let (tape, _, loss) = eval(tensors)?;
        Ok(tape.value(loss).data()[0])
    };

    let h = 1e-4;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let numel = inputs[i].numel();
        let indices: Vec<usize> = match samples_per_input {
            Some(k) if k < numel => rand::seq::index::sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        let mut worst = 0.0f64;
        for j in indices {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = loss_of(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = loss_of(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i][j] - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 * 0.7 - 1.0), true);
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn half_sum_of_squares_gradient_is_x() {
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let x = tape.leaf(xt.clone(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), xt.data());
    }

    #[test]
    fn fanout_gradients_accumulate() {
        // loss = sum(x) + sum(x) → grad = 2 everywhere.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[4], 3.0), true);
        let s1 = tape.sum(x).unwrap();
        let s2 = tape.sum(x).unwrap();
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[4], 1.0), true);
        assert!(matches!(tape.backward(x), Err(Error::Autodiff(_))));
    }

    #[test]
    fn second_backward_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0), true);
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Autodiff(_))));
    }

    #[test]
    fn detached_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0), false);
        let loss = tape.sum(x).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Autodiff(_))));
    }

    #[test]
    fn no_grad_leaf_receives_nothing() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0), false);
        let y = tape.leaf(Tensor::full(&[2], 2.0), true);
        let p = tape.mul(x, y).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(y).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn grad_check_identity_is_near_exact() {
        // d(sum)/dx_i = 1 exactly; the central difference only carries the
        // rounding of x_i +/- h, so the relative error sits at ~1e-13.
        let x = Tensor::<f64>::from_fn(&[3], |i| i as f64 * 1.3 - 1.0);
        let report = grad_check(
            |tape, vars| tape.sum(vars[0]),
            std::slice::from_ref(&x),
            None,
            7,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-11, "rel {}", report.max_rel_error);
    }
}
