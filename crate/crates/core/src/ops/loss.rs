//! Training-loss kernels: soft Dice on sparsely labeled frames and the
//! temporal-consistency penalty on consecutive-frame probabilities.
//!
//! The Dice term reads *only* frames flagged as labeled. Unlabeled frames are
//! never touched by value or gradient — changing their label content cannot
//! change anything, bit for bit. That structural sparsity is what lets a
//! sequence with a handful of annotated frames train the whole network; the
//! temporal term is the only channel through which unlabeled frames
//! contribute.
//!
//! Sums are accumulated in `f64` so loss values are stable in `f32` training.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of segmentation classes: background, blood pool, myocardium.
pub const NUM_CLASSES: usize = 3;
/// Foreground class ids (everything except background 0).
pub const FG_CLASSES: [u8; 2] = [1, 2];

/// Ground truth for one crop: per-voxel class ids in `(x, y, z, t)` layout
/// (t fastest, matching activations) plus a per-frame "is labeled" mask.
#[derive(Debug, Clone)]
pub struct SparseTarget {
    pub dims: [usize; 4],
    pub labels: Vec<u8>,
    pub labeled: Vec<bool>,
}

impl SparseTarget {
    pub fn new(dims: [usize; 4], labels: Vec<u8>, labeled: Vec<bool>) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                "sparse_target",
                format!("{} labels for dims {:?}", labels.len(), dims),
            ));
        }
        if labeled.len() != dims[3] {
            return Err(Error::shape(
                "sparse_target",
                format!("{} mask entries for {} frames", labeled.len(), dims[3]),
            ));
        }
        if labels.iter().any(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!(
                "label id out of range (classes are 0..{})",
                NUM_CLASSES - 1
            )));
        }
        Ok(SparseTarget {
            dims,
            labels,
            labeled,
        })
    }

    pub fn labeled_frames(&self) -> usize {
        self.labeled.iter().filter(|&&b| b).count()
    }
}

/// Per labeled frame and foreground class: the overlap numerator `A` and the
/// denominator `|truth| + sum(p^2) + eps`, saved for the backward pass.
#[derive(Debug, Clone)]
pub struct DiceStats {
    pub frames: Vec<FrameStat>,
}

#[derive(Debug, Clone)]
pub struct FrameStat {
    pub t: usize,
    /// `(a, denom)` for each foreground class, in FG_CLASSES order.
    pub classes: [(f64, f64); 2],
}

fn check_pred<S: Scalar>(op: &'static str, p: &Tensor<S>, dims: [usize; 4]) -> Result<()> {
    let expect = [1, NUM_CLASSES, dims[0], dims[1], dims[2], dims[3]];
    if p.shape() != expect {
        return Err(Error::shape(
            op,
            format!("prediction shape {:?}, expected {:?}", p.shape(), expect),
        ));
    }
    Ok(())
}

/// Soft Dice summed over labeled frames.
///
/// Per labeled frame and foreground class `c`:
/// `D_c = 1 - 2*sum(p_c * [label==c]) / (|label==c| + sum(p_c^2) + eps)`,
/// averaged over the two foreground classes, then summed over frames.
/// The epsilon sits in the denominator only, so a frame whose truth is empty
/// scores 1 against any prediction with foreground mass — and still (almost
/// exactly) 1 when the prediction is empty too, which keeps D in [0, 1].
pub fn sparse_dice_forward<S: Scalar>(
    p: &Tensor<S>,
    target: &SparseTarget,
    eps: f64,
) -> Result<(f64, DiceStats)> {
    check_pred("sparse_dice", p, target.dims)?;
    let [dx, dy, dz, dt] = target.dims;
    let voxels = dx * dy * dz;
    let pd = p.data();
    let mut frames = Vec::with_capacity(target.labeled_frames());
    let mut total = 0.0f64;
    // Per-(class, t) accumulators for one pass over the contiguous t rows.
    let mut a = vec![0.0f64; 2 * dt];
    let mut p2 = vec![0.0f64; 2 * dt];
    let mut cnt = vec![0u64; 2 * dt];
    for (ci, &class) in FG_CLASSES.iter().enumerate() {
        let ch = (ci + 1) * voxels * dt; // channel block for this class
        for row in 0..voxels {
            let prow = &pd[ch + row * dt..ch + (row + 1) * dt];
            let lrow = &target.labels[row * dt..(row + 1) * dt];
            for t in 0..dt {
                if !target.labeled[t] {
                    continue;
                }
                let v = prow[t].as_f64();
                let slot = ci * dt + t;
                p2[slot] += v * v;
                if lrow[t] == class {
                    a[slot] += v;
                    cnt[slot] += 1;
                }
            }
        }
    }
    for t in 0..dt {
        if !target.labeled[t] {
            continue;
        }
        let mut classes = [(0.0, 0.0); 2];
        let mut frame_dice = 0.0;
        for ci in 0..2 {
            let slot = ci * dt + t;
            let denom = cnt[slot] as f64 + p2[slot] + eps;
            classes[ci] = (a[slot], denom);
            frame_dice += 1.0 - 2.0 * a[slot] / denom;
        }
        total += frame_dice / 2.0;
        frames.push(FrameStat { t, classes });
    }
    Ok((total, DiceStats { frames }))
}

/// Gradient of [`sparse_dice_forward`] w.r.t. the prediction tensor.
///
/// For a labeled frame and class with stats `(a, denom)`:
/// `dD/dp_v = (4*a*p_v - 2*q_v*denom) / denom^2`, scaled by the 1/2 class
/// average and the upstream gradient. Background channel and unlabeled
/// frames receive exactly zero.
pub fn sparse_dice_backward<S: Scalar>(
    p: &Tensor<S>,
    target: &SparseTarget,
    stats: &DiceStats,
    grad_out: f64,
) -> Result<Vec<S>> {
    check_pred("sparse_dice_backward", p, target.dims)?;
    let [dx, dy, dz, dt] = target.dims;
    let voxels = dx * dy * dz;
    let pd = p.data();
    let mut gp = vec![S::zero(); p.numel()];
    // Per-(class, t) coefficients: grad = k1*p - k2*q.
    let mut k1 = vec![0.0f64; 2 * dt];
    let mut k2 = vec![0.0f64; 2 * dt];
    let mut active = vec![false; dt];
    for fs in &stats.frames {
        active[fs.t] = true;
        for ci in 0..2 {
            let (a, denom) = fs.classes[ci];
            k1[ci * dt + fs.t] = grad_out * 0.5 * 4.0 * a / (denom * denom);
            k2[ci * dt + fs.t] = grad_out * 0.5 * 2.0 / denom;
        }
    }
    for (ci, &class) in FG_CLASSES.iter().enumerate() {
        let ch = (ci + 1) * voxels * dt;
        for row in 0..voxels {
            let prow = &pd[ch + row * dt..ch + (row + 1) * dt];
            let grow = &mut gp[ch + row * dt..ch + (row + 1) * dt];
            let lrow = &target.labels[row * dt..(row + 1) * dt];
            for t in 0..dt {
                if !active[t] {
                    continue;
                }
                let mut g = k1[ci * dt + t] * prow[t].as_f64();
                if lrow[t] == class {
                    g -= k2[ci * dt + t];
                }
                grow[t] = S::from_f64(g);
            }
        }
    }
    Ok(gp)
}

/// How the squared consecutive-frame difference is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalNorm {
    /// Mean over voxels and channels per frame pair (default): keeps the
    /// dice/temporal balance independent of crop size.
    Mean,
    /// Literal unnormalized sum, the rawest reading of the penalty.
    Sum,
}

/// `sum over frame pairs of ||p[t+1] - p[t]||^2`, normalized per
/// [`TemporalNorm`]. All channels participate, labeled or not; a single
/// frame has no pairs and scores 0.
pub fn temporal_forward<S: Scalar>(p: &Tensor<S>, norm: TemporalNorm) -> Result<f64> {
    let nd = p.dims6()?;
    if nd.n != 1 {
        return Err(Error::shape("temporal_consistency", "batch must be 1".to_string()));
    }
    if nd.t < 2 {
        return Ok(0.0);
    }
    let pd = p.data();
    let mut total = 0.0f64;
    for row in pd.chunks_exact(nd.t) {
        for t in 0..nd.t - 1 {
            let d = row[t + 1].as_f64() - row[t].as_f64();
            total += d * d;
        }
    }
    let scale = match norm {
        TemporalNorm::Mean => 1.0 / (nd.c * nd.x * nd.y * nd.z) as f64,
        TemporalNorm::Sum => 1.0,
    };
    Ok(total * scale)
}

pub fn temporal_backward<S: Scalar>(
    p: &Tensor<S>,
    norm: TemporalNorm,
    grad_out: f64,
) -> Result<Vec<S>> {
    let nd = p.dims6()?;
    let mut gp = vec![S::zero(); p.numel()];
    if nd.t < 2 {
        return Ok(gp);
    }
    let scale = grad_out
        * match norm {
            TemporalNorm::Mean => 1.0 / (nd.c * nd.x * nd.y * nd.z) as f64,
            TemporalNorm::Sum => 1.0,
        };
    let pd = p.data();
    for (prow, grow) in pd.chunks_exact(nd.t).zip(gp.chunks_exact_mut(nd.t)) {
        for t in 0..nd.t {
            let mut g = 0.0;
            if t > 0 {
                g += 2.0 * (prow[t].as_f64() - prow[t - 1].as_f64());
            }
            if t + 1 < nd.t {
                g -= 2.0 * (prow[t + 1].as_f64() - prow[t].as_f64());
            }
            grow[t] = S::from_f64(scale * g);
        }
    }
    Ok(gp)
}

/// Standalone soft Dice between a one-hot truth frame and a probability
/// frame, both `[3, X, Y, Z]`: per foreground class
/// `1 - 2*sum(pt*pp)/(sum(pt^2) + sum(pp^2) + eps)`, averaged over the two
/// foreground classes.
pub fn soft_dice<S: Scalar>(p_true: &Tensor<S>, p_pred: &Tensor<S>, eps: f64) -> Result<f64> {
    if p_true.shape() != p_pred.shape() {
        return Err(Error::shape(
            "soft_dice",
            format!("{:?} vs {:?}", p_true.shape(), p_pred.shape()),
        ));
    }
    if p_true.shape().len() != 4 || p_true.shape()[0] != NUM_CLASSES {
        return Err(Error::shape(
            "soft_dice",
            format!("expected [3, X, Y, Z] frames, got {:?}", p_true.shape()),
        ));
    }
    let voxels: usize = p_true.shape()[1..].iter().product();
    let mut total = 0.0;
    for ci in 1..NUM_CLASSES {
        let tch = &p_true.data()[ci * voxels..(ci + 1) * voxels];
        let pch = &p_pred.data()[ci * voxels..(ci + 1) * voxels];
        let mut inter = 0.0f64;
        let mut t2 = 0.0f64;
        let mut q2 = 0.0f64;
        for (&tv, &pv) in tch.iter().zip(pch) {
            let (tf, pf) = (tv.as_f64(), pv.as_f64());
            inter += tf * pf;
            t2 += tf * tf;
            q2 += pf * pf;
        }
        total += 1.0 - 2.0 * inter / (t2 + q2 + eps);
    }
    Ok(total / (NUM_CLASSES - 1) as f64)
}
