//! Evaluation metrics over hard label sequences: per-frame Dice, two
//! temporal-smoothness measures, and ejection fraction with reduced-EF
//! classification.
//!
//! Smoothness conventions (fixed here because reporting conventions vary):
//! * [`temporal_l2`] — mean over consecutive frame pairs of
//!   `sqrt(Σ_voxels Σ_fg-classes (onehot^{t+1} − onehot^t)²)`, divided by
//!   `sqrt(max(1, mean foreground voxel count))` so values are comparable
//!   across resolutions. Foreground classes pool inside the square root by
//!   default; [`ClassAggregation::PerClassMean`] computes the metric per
//!   class (each with its own normalizer) and averages.
//! * [`surface_distance_consecutive`] — mean over (frame pair, foreground
//!   class) cells of the symmetric average surface distance between
//!   6-connectivity boundary voxel sets, Euclidean in voxel units, by exact
//!   brute force. A cell with both frames empty agrees perfectly and
//!   contributes 0; a cell where exactly one frame is empty has no defined
//!   distance, so it is excluded from the mean and counted separately.
//!
//! These values are meant for relative comparison between models evaluated
//! on the same data, not for matching any externally reported absolute
//! numbers.

use crate::data::{LabelField, Volume4DSequence};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ops::loss::{FG_CLASSES, NUM_CLASSES};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::Serialize;

/// EF below this fraction is classified as reduced.
pub const EF_REDUCED_THRESHOLD: f64 = 0.55;

/// Overlap of one class between two hard label frames:
/// `2|A∩B| / (|A|+|B|)`, with both-empty defined as perfect agreement (1.0).
pub fn dice_score(pred: &[u8], truth: &[u8], class_id: u8) -> Result<f64> {
    if class_id as usize >= NUM_CLASSES {
        return Err(Error::Data(format!(
            "unknown class id {} (classes are 0..={})",
            class_id,
            NUM_CLASSES - 1
        )));
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "dice_score",
            format!("{} prediction voxels vs {} truth voxels", pred.len(), truth.len()),
        ));
    }
    let mut a = 0u64;
    let mut b = 0u64;
    let mut inter = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        let pm = p == class_id;
        let tm = t == class_id;
        a += pm as u64;
        b += tm as u64;
        inter += (pm && tm) as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassAggregation {
    /// Foreground classes pool inside the square root (default).
    Pooled,
    /// Metric computed per foreground class, then averaged.
    PerClassMean,
}

fn check_field(labels: &LabelField, op: &'static str) -> Result<()> {
    let numel: usize = labels.dims.iter().product();
    if labels.data.len() != numel {
        return Err(Error::shape(
            op,
            format!("dims {:?} need {} values, got {}", labels.dims, numel, labels.data.len()),
        ));
    }
    if let Some(&bad) = labels.data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return Err(Error::Data(format!("{}: label id {} out of range", op, bad)));
    }
    Ok(())
}

/// L2 smoothness of a label sequence; see the module docs for the formula.
pub fn temporal_l2(labels: &LabelField, agg: ClassAggregation) -> Result<f64> {
    check_field(labels, "temporal_l2")?;
    let t_len = labels.dims[3];
    if t_len < 2 {
        return Err(Error::Data(format!(
            "temporal_l2 needs at least 2 frames, got {}",
            t_len
        )));
    }
    let pairs = t_len - 1;
    match agg {
        ClassAggregation::Pooled => {
            let mut pair_sq = vec![0u64; pairs];
            let mut fg_total = 0u64;
            for row in labels.data.chunks_exact(t_len) {
                for &v in row {
                    fg_total += (v != 0) as u64;
                }
                for i in 0..pairs {
                    let (a, b) = (row[i], row[i + 1]);
                    if a != b {
                        // 1↔2 flips both one-hot channels; 0↔fg flips one.
                        pair_sq[i] += if a != 0 && b != 0 { 2 } else { 1 };
                    }
                }
            }
            let mean_fg = fg_total as f64 / t_len as f64;
            let norm = mean_fg.max(1.0).sqrt();
            let mean_pair =
                pair_sq.iter().map(|&s| (s as f64).sqrt()).sum::<f64>() / pairs as f64;
            Ok(mean_pair / norm)
        }
        ClassAggregation::PerClassMean => {
            let mut acc = 0.0;
            for &class in &FG_CLASSES {
                let mut pair_sq = vec![0u64; pairs];
                let mut count = 0u64;
                for row in labels.data.chunks_exact(t_len) {
                    for &v in row {
                        count += (v == class) as u64;
                    }
                    for i in 0..pairs {
                        pair_sq[i] += ((row[i] == class) != (row[i + 1] == class)) as u64;
                    }
                }
                let norm = (count as f64 / t_len as f64).max(1.0).sqrt();
                let mean_pair =
                    pair_sq.iter().map(|&s| (s as f64).sqrt()).sum::<f64>() / pairs as f64;
                acc += mean_pair / norm;
            }
            Ok(acc / FG_CLASSES.len() as f64)
        }
    }
}

/// Result of [`surface_distance_consecutive`]: the mean over defined
/// (pair, class) cells and the number of cells that had to be excluded
/// because exactly one frame lacked the class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceSmoothness {
    pub value: f64,
    pub undefined_pairs: usize,
}

/// Boundary voxels of one class in one frame: class voxels with at least
/// one 6-connected neighbor (out-of-volume counts as background) that is
/// not the class.
fn boundary_voxels(frame: &[u8], dims: [usize; 3], class: u8) -> Vec<[i32; 3]> {
    let [dx, dy, dz] = dims;
    let at = |x: usize, y: usize, z: usize| frame[(x * dy + y) * dz + z];
    let mut out = Vec::new();
    for x in 0..dx {
        for y in 0..dy {
            for z in 0..dz {
                if at(x, y, z) != class {
                    continue;
                }
                let exposed = x == 0
                    || at(x - 1, y, z) != class
                    || x + 1 == dx
                    || at(x + 1, y, z) != class
                    || y == 0
                    || at(x, y - 1, z) != class
                    || y + 1 == dy
                    || at(x, y + 1, z) != class
                    || z == 0
                    || at(x, y, z - 1) != class
                    || z + 1 == dz
                    || at(x, y, z + 1) != class;
                if exposed {
                    out.push([x as i32, y as i32, z as i32]);
                }
            }
        }
    }
    out
}

/// Sum over `from` of the Euclidean distance to the nearest voxel of `to`.
fn directed_distance_sum(from: &[[i32; 3]], to: &[[i32; 3]]) -> f64 {
    from.iter()
        .map(|a| {
            let mut best = i64::MAX;
            for b in to {
                let dx = (a[0] - b[0]) as i64;
                let dy = (a[1] - b[1]) as i64;
                let dz = (a[2] - b[2]) as i64;
                let d = dx * dx + dy * dy + dz * dz;
                if d < best {
                    best = d;
                }
            }
            (best as f64).sqrt()
        })
        .sum()
}

fn symmetric_asd(a: &[[i32; 3]], b: &[[i32; 3]]) -> f64 {
    (directed_distance_sum(a, b) + directed_distance_sum(b, a)) / (a.len() + b.len()) as f64
}

/// Surface-distance smoothness of a label sequence; see the module docs.
pub fn surface_distance_consecutive(labels: &LabelField) -> Result<SurfaceSmoothness> {
    check_field(labels, "surface_distance_consecutive")?;
    let t_len = labels.dims[3];
    if t_len < 2 {
        return Err(Error::Data(format!(
            "surface_distance_consecutive needs at least 2 frames, got {}",
            t_len
        )));
    }
    let spatial = [labels.dims[0], labels.dims[1], labels.dims[2]];
    let frames: Vec<Vec<u8>> = (0..t_len).map(|t| labels.frame(t)).collect();
    let boundaries: Vec<[Vec<[i32; 3]>; 2]> = frames
        .par_iter()
        .map(|f| {
            [
                boundary_voxels(f, spatial, FG_CLASSES[0]),
                boundary_voxels(f, spatial, FG_CLASSES[1]),
            ]
        })
        .collect();
    // One cell per (consecutive pair, foreground class); evaluated in
    // parallel, reduced in order so the result is deterministic.
    let cells: Vec<Option<f64>> = (0..(t_len - 1) * FG_CLASSES.len())
        .into_par_iter()
        .map(|idx| {
            let (t, c) = (idx / FG_CLASSES.len(), idx % FG_CLASSES.len());
            let a = &boundaries[t][c];
            let b = &boundaries[t + 1][c];
            match (a.is_empty(), b.is_empty()) {
                (true, true) => Some(0.0),
                (true, false) | (false, true) => None,
                (false, false) => Some(symmetric_asd(a, b)),
            }
        })
        .collect();
    let defined: Vec<f64> = cells.iter().filter_map(|&c| c).collect();
    let undefined_pairs = cells.len() - defined.len();
    let value = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(SurfaceSmoothness {
        value,
        undefined_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EjectionFraction {
    /// `1 − min_t V₁(t) / max_t V₁(t)`.
    pub ef: f64,
    pub reduced: bool,
    /// Smallest/largest LV cavity volume over the cycle, in `voxel_volume`
    /// units (mm³ when given a physical voxel volume).
    pub min_volume: f64,
    pub max_volume: f64,
}

/// Ejection fraction from the LV cavity (class 1) volume curve.
pub fn ejection_fraction(labels: &LabelField, voxel_volume: f64) -> Result<EjectionFraction> {
    check_field(labels, "ejection_fraction")?;
    let t_len = labels.dims[3];
    let mut counts = vec![0u64; t_len];
    for row in labels.data.chunks_exact(t_len) {
        for (t, &v) in row.iter().enumerate() {
            counts[t] += (v == 1) as u64;
        }
    }
    let max = *counts.iter().max().expect("t_len >= 1");
    if max == 0 {
        return Err(Error::Data(
            "ejection fraction undefined: no LV cavity voxels in any frame".into(),
        ));
    }
    let min = *counts.iter().min().expect("t_len >= 1");
    let ef = 1.0 - min as f64 / max as f64;
    Ok(EjectionFraction {
        ef,
        reduced: ef < EF_REDUCED_THRESHOLD,
        min_volume: min as f64 * voxel_volume,
        max_volume: max as f64 * voxel_volume,
    })
}

/// Anything that can segment a full sequence. Implementations must only
/// read the intensities; ground-truth labels are for the oracle below.
pub trait Predictor {
    fn predict(&self, seq: &Volume4DSequence) -> Result<LabelField>;
}

/// A trained network, applied via overlapping-tile inference.
pub struct ModelPredictor<'a, S: Scalar>(pub &'a ModelParams<S>);

impl<S: Scalar> Predictor for ModelPredictor<'_, S> {
    fn predict(&self, seq: &Volume4DSequence) -> Result<LabelField> {
        self.0.predict_labels(&seq.normalized())
    }
}

/// Emits the ground truth — pins down the metric pipeline's fixed points.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, seq: &Volume4DSequence) -> Result<LabelField> {
        Ok(seq.label_field())
    }
}

/// Emits one constant class everywhere — the degenerate-smooth baseline.
pub struct ConstantPredictor(pub u8);

impl Predictor for ConstantPredictor {
    fn predict(&self, seq: &Volume4DSequence) -> Result<LabelField> {
        Ok(LabelField {
            dims: seq.dims,
            data: vec![self.0; seq.intensities.len()],
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceMetrics {
    pub id: String,
    /// Mean Dice over the sequence's annotated frames, per foreground class.
    pub dice_lv: f64,
    pub dice_lvm: f64,
    /// Smoothness of the full predicted sequence (pooled variant).
    pub smoothness_l2: f64,
    pub smoothness_surface: f64,
    pub surface_undefined_pairs: usize,
    /// None when the prediction contains no LV cavity in any frame.
    pub ef: Option<f64>,
    pub ef_reduced: Option<bool>,
    pub min_volume_mm3: Option<f64>,
    pub max_volume_mm3: Option<f64>,
    /// Ground-truth EF when the dataset provides it.
    pub analytic_ef: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub sequences: Vec<SequenceMetrics>,
    /// Unweighted means over sequences.
    pub mean_dice_lv: f64,
    pub mean_dice_lvm: f64,
    pub mean_smoothness_l2: f64,
    pub mean_smoothness_surface: f64,
}

/// Evaluate a predictor over a validation set: Dice restricted to annotated
/// frames, smoothness over the full predicted sequence, EF from predicted
/// class-1 volumes.
pub fn evaluate(predictor: &dyn Predictor, sequences: &[Volume4DSequence]) -> Result<MetricsReport> {
    if sequences.is_empty() {
        return Err(Error::Data("evaluation requires at least one sequence".into()));
    }
    let mut rows = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let pred = predictor.predict(seq)?;
        if pred.dims != seq.dims {
            return Err(Error::shape(
                "evaluate",
                format!(
                    "prediction dims {:?} do not match sequence dims {:?} for {}",
                    pred.dims, seq.dims, seq.id
                ),
            ));
        }
        check_field(&pred, "evaluate")?;
        let truth = seq.label_field();
        let annotated: Vec<usize> = (0..seq.dims[3]).filter(|&t| seq.annotated[t]).collect();
        if annotated.is_empty() {
            return Err(Error::Data(format!("sequence {} has no annotated frames", seq.id)));
        }
        let mut dice = [0.0f64; 2];
        for &t in &annotated {
            let pf = pred.frame(t);
            let tf = truth.frame(t);
            for (k, &class) in FG_CLASSES.iter().enumerate() {
                dice[k] += dice_score(&pf, &tf, class)?;
            }
        }
        let n = annotated.len() as f64;
        let smooth_l2 = temporal_l2(&pred, ClassAggregation::Pooled)?;
        let smooth_surf = surface_distance_consecutive(&pred)?;
        let ef = ejection_fraction(&pred, seq.voxel_volume_mm3()).ok();
        rows.push(SequenceMetrics {
            id: seq.id.clone(),
            dice_lv: dice[0] / n,
            dice_lvm: dice[1] / n,
            smoothness_l2: smooth_l2,
            smoothness_surface: smooth_surf.value,
            surface_undefined_pairs: smooth_surf.undefined_pairs,
            ef: ef.map(|e| e.ef),
            ef_reduced: ef.map(|e| e.reduced),
            min_volume_mm3: ef.map(|e| e.min_volume),
            max_volume_mm3: ef.map(|e| e.max_volume),
            analytic_ef: seq.analytic_ef,
        });
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&SequenceMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mean_dice_lv: mean(|r| r.dice_lv),
        mean_dice_lvm: mean(|r| r.dice_lvm),
        mean_smoothness_l2: mean(|r| r.smoothness_l2),
        mean_smoothness_surface: mean(|r| r.smoothness_surface),
        sequences: rows,
    })
}
