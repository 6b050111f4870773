//! Training: the composite loss, the Adam optimizer with polynomial
//! learning-rate decay, and the epoch loop.
//!
//! The loss has two equally weighted summands. The dice term sums a soft
//! Dice loss (averaged over the two foreground classes) over exactly the
//! labeled frames of the crop; unlabeled frames contribute nothing — not
//! even through rounding — to the value or any gradient. The temporal term
//! penalizes the mean squared difference between consecutive probability
//! frames across *all* frames of the crop, which is how unlabeled frames
//! shape the solution indirectly.
//!
//! The crop extents come from the network config (a crop is an inference
//! tile), so there is a single source of truth for the window geometry.
//! Crop sampling structurally guarantees at least one labeled frame per
//! window — the temporal origin is clamped around a voxel drawn from an
//! annotated frame — so a dice-free step cannot occur.

pub use crate::ops::loss::soft_dice;

use crate::data::{CropSampler, Volume4DSequence};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ops::loss::{SparseTarget, TemporalNorm};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Initial learning rate α₀.
    pub alpha0: f64,
    /// Total epoch budget N (the schedule reaches zero here).
    pub epochs: usize,
    /// Probability that a crop centers on a foreground voxel.
    pub fg_prob: f64,
    /// Fixed at 1; recorded to make the setting explicit.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dice_eps: f64,
    /// Normalization of the temporal term. `Mean` keeps the two loss
    /// summands comparable across crop sizes; `Sum` is the literal
    /// unnormalized reading.
    pub temporal_norm: TemporalNorm,
    /// Seed for crop sampling and epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha0: 1e-3,
            epochs: 500,
            fg_prob: 0.6,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dice_eps: 1e-5,
            temporal_norm: TemporalNorm::Mean,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.fg_prob > 0.0 && self.fg_prob <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fg_prob must be in (0, 1], got {}",
                self.fg_prob
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::InvalidConfig(format!(
                "training is defined for batch size 1, got {}",
                self.batch_size
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{} must be in [0, 1), got {}", name, b)));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be positive".into()));
        }
        if !(self.dice_eps.is_finite() && self.dice_eps > 0.0) {
            return Err(Error::InvalidConfig("dice_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Polynomial decay `α₀ · (1 − η/N)^0.9`, defined for `0 ≤ η ≤ N`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch > config.epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {} is beyond the schedule's budget of {}",
            epoch, config.epochs
        )));
    }
    let frac = 1.0 - epoch as f64 / config.epochs as f64;
    Ok(config.alpha0 * frac.powf(0.9))
}

/// The two loss summands at one step, as reported values. `total` is the
/// f64 sum of the two terms; the differentiated total lives on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub dice_term: f64,
    pub temporal_term: f64,
    pub total: f64,
    pub labeled_frames_used: usize,
}

/// Record `dice + temporal` on the tape and report the breakdown.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    probs: Var,
    target: &SparseTarget,
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let dice = tape.sparse_dice(probs, target, config.dice_eps)?;
    let temporal = tape.temporal_consistency(probs, config.temporal_norm)?;
    let total = tape.add(dice, temporal)?;
    let dice_term = tape.value(dice).data()[0].as_f64();
    let temporal_term = tape.value(temporal).data()[0].as_f64();
    let breakdown = LossBreakdown {
        dice_term,
        temporal_term,
        total: dice_term + temporal_term,
        labeled_frames_used: target.labeled.iter().filter(|&&b| b).count(),
    };
    Ok((total, breakdown))
}

/// Adam with bias correction. Moment state is kept in f64 regardless of the
/// parameter scalar type; slot `i` tracks parameter `i` of the visitation
/// order external to this struct.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, slot_sizes: &[usize]) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all slots: `p -= lr · m̂ / (√v̂ + eps)`.
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut [(String, &mut Tensor<S>)],
        grads: &[Vec<S>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, ((path, tensor), grad)) in params.iter_mut().zip(grads).enumerate() {
            if grad.len() != tensor.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{}: {} gradient values for {} parameters", path, grad.len(), tensor.numel()),
                ));
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p = S::from_f64(p.as_f64() - lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch log; loss fields are means over the epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub dice_term: f64,
    pub temporal_term: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<S: Scalar> {
    pub params: ModelParams<S>,
    pub log: Vec<EpochRow>,
}

/// Run one optimizer step on one crop. Exposed for tests that need
/// step-level control; `train_loop` is the epoch-level driver.
pub fn train_step<S: Scalar>(
    params: &mut ModelParams<S>,
    adam: &mut Adam,
    input: &Tensor<S>,
    target: &SparseTarget,
    lr: f64,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let vars = params.bind(&mut tape);
    let probs = vars.forward(&mut tape, x)?;
    let (loss, breakdown) = total_loss(&mut tape, probs, target, config)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!(
            "loss became non-finite (dice {}, temporal {})",
            breakdown.dice_term, breakdown.temporal_term
        )));
    }
    tape.backward(loss)?;
    let leaves = vars.trainable();
    let mut grads = Vec::with_capacity(leaves.len());
    for (i, &leaf) in leaves.iter().enumerate() {
        let g = tape
            .take_grad(leaf)
            .unwrap_or_else(|| vec![S::zero(); tape.value(leaf).numel()]);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of parameter {} became non-finite",
                i
            )));
        }
        grads.push(g);
    }
    let mut slots = params.visit_mut();
    adam.step(&mut slots, &grads, lr)
        .map(|()| breakdown)
}

/// Train for the full epoch budget: each epoch shuffles the sequences and
/// draws one crop from each. Deterministic for a given config seed.
pub fn train_loop<S: Scalar>(
    mut params: ModelParams<S>,
    sequences: &[Volume4DSequence],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Data("training requires at least one sequence".into()));
    }
    let samplers: Vec<CropSampler> = sequences
        .iter()
        .map(CropSampler::new)
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = params.visit().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(config.beta1, config.beta2, config.adam_eps, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let crop = params.config.crop;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samplers.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config)?;
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for &i in &order {
            let sample = samplers[i].sample::<S>(crop, config.fg_prob, &mut rng)?;
            let b = train_step(&mut params, &mut adam, &sample.input, &sample.target, lr, config)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("epoch {}, sequence {}: {}", epoch, sequences[i].id, msg))
                    }
                    other => other,
                })?;
            sums[0] += b.dice_term;
            sums[1] += b.temporal_term;
            sums[2] += b.total;
        }
        let n = order.len() as f64;
        log.push(EpochRow {
            epoch,
            lr,
            dice_term: sums[0] / n,
            temporal_term: sums[1] / n,
            total: sums[2] / n,
        });
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{phantom_generate, sparsify, PhantomSpec};
    use crate::model::{build, NetConfig};

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let c = cfg(500);
        assert_eq!(lr_schedule(0, &c).unwrap(), 1e-3);
        assert_eq!(lr_schedule(500, &c).unwrap(), 0.0);
        let mid = lr_schedule(250, &c).unwrap();
        assert!((mid - 1e-3 * 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!((mid - 5.3589e-4).abs() < 1e-7);
        assert!(lr_schedule(501, &c).is_err());
    }

    #[test]
    fn schedule_is_strictly_decreasing() {
        let c = cfg(100);
        let mut prev = f64::INFINITY;
        for epoch in 0..=100 {
            let lr = lr_schedule(epoch, &c).unwrap();
            assert!(lr < prev, "epoch {}: {} !< {}", epoch, lr, prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_zero_gradient_changes_nothing() {
        let mut p = Tensor::<f64>::from_fn(&[4], |i| i as f64);
        let before = p.data().to_vec();
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[4]);
        for _ in 0..10 {
            let mut slots = vec![("p".to_string(), &mut p)];
            adam.step(&mut slots, &[vec![0.0; 4]], 1e-3).unwrap();
        }
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::from_fn(&[1], |_| 5.0);
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[1]);
        let mut slots = vec![("p".to_string(), &mut p)];
        adam.step(&mut slots, &[vec![1.0]], 0.01).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr/(1+eps) ≈ lr.
        assert!((p.data()[0] - (5.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(x) = x², gradient 2x: Adam should settle near 0.
        let mut p = Tensor::<f64>::from_fn(&[1], |_| 3.0);
        let mut adam = Adam::new(0.9, 0.999, 1e-8, &[1]);
        for _ in 0..2000 {
            let g = 2.0 * p.data()[0];
            let mut slots = vec![("p".to_string(), &mut p)];
            adam.step(&mut slots, &[vec![g]], 0.05).unwrap();
        }
        assert!(p.data()[0].abs() < 1e-2, "ended at {}", p.data()[0]);
    }

    #[test]
    fn breakdown_sums_exactly() {
        let mut tape = Tape::<f64>::new();
        // Imperfect probabilities over 2 frames so both terms are nonzero.
        let dims = [2, 2, 1, 2];
        let vox = 8;
        let probs = Tensor::from_fn(&[1, 3, 2, 2, 1, 2], |i| match i / vox {
            0 => 0.5,
            1 => 0.3,
            _ => 0.2,
        });
        let p = tape.leaf(probs, true);
        let mut labels = vec![0u8; vox];
        labels[0] = 1;
        labels[3] = 2;
        let target = SparseTarget::new(dims, labels, vec![true, false]).unwrap();
        let c = cfg(10);
        let (_, b) = total_loss(&mut tape, p, &target, &c).unwrap();
        assert_eq!(b.total, b.dice_term + b.temporal_term);
        assert_eq!(b.labeled_frames_used, 1);
        assert!(b.dice_term > 0.0);
        // Constant-in-time probabilities: the temporal term vanishes.
        assert_eq!(b.temporal_term, 0.0);
    }

    #[test]
    fn perfect_constant_prediction_has_near_zero_loss() {
        let dims = [2, 2, 2, 3];
        let vox: usize = dims.iter().product();
        // Both foreground classes present in every frame: an absent class
        // scores the full empty-class penalty no matter the prediction, which
        // would hide what this test is after.
        let mut labels = vec![0u8; vox];
        for row in 0..4 {
            for t in 0..3 {
                labels[row * 3 + t] = 1 + (row % 2) as u8;
            }
        }
        let probs = Tensor::from_fn(&[1, 3, 2, 2, 2, 3], |i| {
            let c = i / vox;
            let v = i % vox;
            let truth = labels[v] as usize;
            if c == truth {
                1.0f64
            } else {
                0.0
            }
        });
        let mut tape = Tape::new();
        let p = tape.leaf(probs, true);
        let target = SparseTarget::new(dims, labels, vec![true; 3]).unwrap();
        let (_, b) = total_loss(&mut tape, p, &target, &cfg(10)).unwrap();
        // Floor: 3 frames * eps/(4 + eps) from the denominator epsilon.
        assert!(b.total < 1e-4, "total {}", b.total);
        assert_eq!(b.temporal_term, 0.0);
    }

    fn tiny_setup() -> (NetConfig, Vec<Volume4DSequence>) {
        let net = NetConfig {
            base_filters: 2,
            levels: 2,
            blocks_per_level: vec![1, 1],
            crop: [8, 8, 8, 4],
            ..NetConfig::desk_4d()
        };
        let spec = PhantomSpec {
            grid: [24, 24, 20],
            frames: 6,
            r_ed: [7.0, 6.0, 5.0],
            wall: 2.0,
            ..PhantomSpec::default()
        };
        let seq = phantom_generate(&spec, "train-test", 31).unwrap();
        let seq = sparsify(seq, &[0, 3]).unwrap();
        (net, vec![seq])
    }

    #[test]
    fn train_loop_is_deterministic_and_logs_every_epoch() {
        let (net, seqs) = tiny_setup();
        let c = TrainConfig {
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let params = build::<f32>(&net, 1).unwrap();
            train_loop(params, &seqs, &c).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.log, b.log);
        for (pa, pb) in a.params.visit().iter().zip(b.params.visit().iter()) {
            assert_eq!(pa.1.data(), pb.1.data());
        }
        assert!(a.log[1].lr < a.log[0].lr);
        assert!(a.log.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn empty_dataset_rejected() {
        let (net, _) = tiny_setup();
        let params = build::<f32>(&net, 1).unwrap();
        assert!(matches!(
            train_loop(params, &[], &cfg(1)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn bad_configs_rejected() {
        for mutate in [
            |c: &mut TrainConfig| c.alpha0 = 0.0,
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.fg_prob = 0.0,
            |c: &mut TrainConfig| c.fg_prob = 1.5,
            |c: &mut TrainConfig| c.batch_size = 2,
            |c: &mut TrainConfig| c.beta1 = 1.0,
            |c: &mut TrainConfig| c.dice_eps = 0.0,
        ] {
            let mut c = TrainConfig::default();
            mutate(&mut c);
            assert!(c.validate().is_err());
        }
        TrainConfig::default().validate().unwrap();
    }
}
