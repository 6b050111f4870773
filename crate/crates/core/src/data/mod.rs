//! Synthetic 4-D cardiac phantoms with analytically known ejection fraction,
//! sparse temporal annotation, intensity normalization, and crop sampling.
//!
//! A phantom's left-ventricle cavity is a time-varying ellipsoid whose radii
//! contract as `r(t) = r_ed - (r_ed - r_es) * sin^2(pi t / T)` — maximal at
//! frame 0 (end-diastole), minimal mid-cycle (end-systole) — wrapped in a
//! myocardial shell of fixed radial thickness. Because end-systolic radii are
//! derived as `r_es = r_ed * (1 - EF)^(1/3)`, the volume ratio of the two
//! extreme frames gives the requested ejection fraction exactly, so every
//! dataset ships with a ground-truth EF the evaluation pipeline can be
//! checked against.
//!
//! Intensities use CT-like contrast (cavity 350 HU, myocardium 50 HU,
//! background -50 HU, additive Gaussian noise sigma 25 HU). All arrays are
//! `(x, y, z, t)` row-major with `t` fastest, matching tensor layout.

pub mod manifest;
pub mod volio;

use crate::error::{Error, Result};
use crate::ops::loss::SparseTarget;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One 4-D study: an intensity sequence in Hounsfield units, voxel labels
/// (0 background, 1 LV cavity, 2 myocardium), and per-frame annotation flags.
/// Label data for unannotated frames stays present — evaluation needs it —
/// but training must treat those frames as unlabeled via `annotated`.
#[derive(Debug, Clone)]
pub struct Volume4DSequence {
    pub id: String,
    /// Extents ordered (x, y, z, t).
    pub dims: [usize; 4],
    pub spacing_mm: [f32; 3],
    pub frame_ms: f32,
    pub intensities: Vec<f32>,
    pub labels: Vec<u8>,
    pub annotated: Vec<bool>,
    /// Ground-truth ejection fraction when synthetic.
    pub analytic_ef: Option<f64>,
}

/// Normalized intensities ready for the network, `(x,y,z,t)` t-fastest.
#[derive(Debug, Clone)]
pub struct IntensityField {
    pub dims: [usize; 4],
    pub data: Vec<f32>,
}

/// Per-voxel class ids, `(x,y,z,t)` t-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    pub dims: [usize; 4],
    pub data: Vec<u8>,
}

impl LabelField {
    pub fn frame(&self, t: usize) -> Vec<u8> {
        let [dx, dy, dz, dt] = self.dims;
        let mut out = Vec::with_capacity(dx * dy * dz);
        for row in 0..dx * dy * dz {
            out.push(self.data[row * dt + t]);
        }
        out
    }
}

impl Volume4DSequence {
    pub fn voxels_per_frame(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().map(|&s| s as f64).product()
    }

    /// Intensities mapped through [`normalize_intensity`].
    pub fn normalized(&self) -> IntensityField {
        IntensityField {
            dims: self.dims,
            data: self.intensities.iter().map(|&v| normalize_intensity(v)).collect(),
        }
    }

    pub fn label_field(&self) -> LabelField {
        LabelField {
            dims: self.dims,
            data: self.labels.clone(),
        }
    }
}

/// Fixed CT windowing: clamp to [-1024, 1024] HU, scale into [-1, 1].
pub fn normalize_intensity(v: f32) -> f32 {
    v.clamp(-1024.0, 1024.0) / 1024.0
}

/// Geometry and acquisition parameters of one synthetic phantom.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub grid: [usize; 3],
    pub frames: usize,
    /// End-diastolic cavity radii in voxels, per axis.
    pub r_ed: [f64; 3],
    /// Target ejection fraction in [0, 1).
    pub ef: f64,
    /// Myocardial shell thickness in voxels (radial offset).
    pub wall: f64,
    pub hu_cavity: f64,
    pub hu_myocardium: f64,
    pub hu_background: f64,
    pub noise_sigma: f64,
    pub spacing_mm: [f32; 3],
    pub frame_ms: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            grid: [48, 48, 32],
            frames: 20,
            r_ed: [11.0, 10.0, 8.0],
            ef: 0.6,
            wall: 3.0,
            hu_cavity: 350.0,
            hu_myocardium: 50.0,
            hu_background: -50.0,
            noise_sigma: 25.0,
            spacing_mm: [1.0, 1.0, 1.0],
            frame_ms: 50.0,
        }
    }
}

impl PhantomSpec {
    /// End-systolic radii; the cube root keeps the EF exact for ellipsoid
    /// volumes since V scales with the radii product.
    pub fn r_es(&self) -> [f64; 3] {
        let k = (1.0 - self.ef).powf(1.0 / 3.0);
        self.r_ed.map(|r| r * k)
    }

    /// Cavity radii at frame `t` of `frames`.
    pub fn radii_at(&self, t: usize) -> [f64; 3] {
        let s = (std::f64::consts::PI * t as f64 / self.frames as f64).sin();
        let shrink = s * s;
        let r_es = self.r_es();
        [0, 1, 2].map(|i| self.r_ed[i] - (self.r_ed[i] - r_es[i]) * shrink)
    }
}

/// Generate one phantom. Deterministic per seed.
pub fn phantom_generate(spec: &PhantomSpec, id: &str, seed: u64) -> Result<Volume4DSequence> {
    if !(0.0..1.0).contains(&spec.ef) {
        return Err(Error::InvalidConfig(format!(
            "phantom EF must be in [0,1), got {}",
            spec.ef
        )));
    }
    if spec.frames == 0 {
        return Err(Error::InvalidConfig("phantom needs at least 1 frame".into()));
    }
    let center = spec.grid.map(|d| (d as f64 - 1.0) / 2.0);
    for axis in 0..3 {
        let needed = spec.r_ed[axis] + spec.wall;
        let room = center[axis].min(spec.grid[axis] as f64 - 1.0 - center[axis]);
        if needed >= room {
            return Err(Error::Data(format!(
                "phantom shell (radius {} + wall {}) exceeds grid extent {} on axis {}",
                spec.r_ed[axis], spec.wall, spec.grid[axis], axis
            )));
        }
    }
    let [gx, gy, gz] = spec.grid;
    let t_len = spec.frames;
    let numel = gx * gy * gz * t_len;
    let mut labels = vec![0u8; numel];
    let mut intensities = vec![0f32; numel];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma >= 0");

    // Per-frame radii (cavity) and shell radii (cavity + wall).
    let radii: Vec<[f64; 3]> = (0..t_len).map(|t| spec.radii_at(t)).collect();
    for ix in 0..gx {
        let dx = ix as f64 - center[0];
        for iy in 0..gy {
            let dy = iy as f64 - center[1];
            for iz in 0..gz {
                let dz = iz as f64 - center[2];
                let base = ((ix * gy + iy) * gz + iz) * t_len;
                for (t, r) in radii.iter().enumerate() {
                    let q_cav = (dx / r[0]).powi(2) + (dy / r[1]).powi(2) + (dz / r[2]).powi(2);
                    let label = if q_cav <= 1.0 {
                        1
                    } else {
                        let q_shell = (dx / (r[0] + spec.wall)).powi(2)
                            + (dy / (r[1] + spec.wall)).powi(2)
                            + (dz / (r[2] + spec.wall)).powi(2);
                        if q_shell <= 1.0 {
                            2
                        } else {
                            0
                        }
                    };
                    labels[base + t] = label;
                    let hu = match label {
                        1 => spec.hu_cavity,
                        2 => spec.hu_myocardium,
                        _ => spec.hu_background,
                    };
                    intensities[base + t] = (hu + noise.sample(&mut rng)) as f32;
                }
            }
        }
    }
    Ok(Volume4DSequence {
        id: id.to_string(),
        dims: [gx, gy, gz, t_len],
        spacing_mm: spec.spacing_mm,
        frame_ms: spec.frame_ms,
        intensities,
        labels,
        annotated: vec![true; t_len],
        analytic_ef: Some(spec.ef),
    })
}

/// Restrict a sequence's annotation to the given frames. Labels stay in the
/// struct for evaluation oracles; training honors only the flags.
pub fn sparsify(mut seq: Volume4DSequence, keep: &[usize]) -> Result<Volume4DSequence> {
    if keep.is_empty() {
        return Err(Error::Data("sparsify: empty keep set".to_string()));
    }
    let t_len = seq.dims[3];
    for &t in keep {
        if t >= t_len {
            return Err(Error::Data(format!(
                "sparsify: frame {} out of range ({} frames)",
                t, t_len
            )));
        }
    }
    seq.annotated = (0..t_len).map(|t| keep.contains(&t)).collect();
    Ok(seq)
}

/// Temporal annotation density patterns for the generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationPattern {
    /// Only end-diastole (frame 0) and end-systole (mid-cycle).
    EndPoints,
    EveryFourth,
    EverySecond,
    All,
}

impl AnnotationPattern {
    pub fn frames(&self, t_len: usize) -> Vec<usize> {
        match self {
            AnnotationPattern::EndPoints => vec![0, t_len / 2],
            AnnotationPattern::EveryFourth => (0..t_len).step_by(4).collect(),
            AnnotationPattern::EverySecond => (0..t_len).step_by(2).collect(),
            AnnotationPattern::All => (0..t_len).collect(),
        }
    }
}

/// One training example: a normalized intensity crop and its sparse target.
#[derive(Debug, Clone)]
pub struct CropSample<S: Scalar> {
    /// Shape `[1, 1, X, Y, Z, K]`, values in [-1, 1].
    pub input: Tensor<S>,
    pub target: SparseTarget,
    pub origin: [usize; 4],
    /// Whether the center voxel was drawn from foreground (the 0.6 branch).
    pub fg_centered: bool,
}

/// Draws training crops from one sequence. Foreground voxel indices of
/// annotated frames are collected once up front so each draw is O(crop).
pub struct CropSampler<'a> {
    seq: &'a Volume4DSequence,
    /// (frame, flat spatial indices of foreground voxels in that frame).
    fg: Vec<(usize, Vec<u32>)>,
    total_fg: usize,
    annotated_frames: Vec<usize>,
}

impl<'a> CropSampler<'a> {
    pub fn new(seq: &'a Volume4DSequence) -> Result<Self> {
        let t_len = seq.dims[3];
        let annotated_frames: Vec<usize> =
            (0..t_len).filter(|&t| seq.annotated[t]).collect();
        if annotated_frames.is_empty() {
            return Err(Error::Data(format!(
                "sequence {} has no annotated frames",
                seq.id
            )));
        }
        let voxels = seq.voxels_per_frame();
        let mut fg = Vec::with_capacity(annotated_frames.len());
        let mut total_fg = 0;
        for &t in &annotated_frames {
            let mut idx = Vec::new();
            for v in 0..voxels {
                if seq.labels[v * t_len + t] != 0 {
                    idx.push(v as u32);
                }
            }
            total_fg += idx.len();
            fg.push((t, idx));
        }
        Ok(CropSampler {
            seq,
            fg,
            total_fg,
            annotated_frames,
        })
    }

    /// Whether any annotated frame contains foreground. When false every crop
    /// is background-centered regardless of `fg_prob`.
    pub fn has_foreground(&self) -> bool {
        self.total_fg > 0
    }

    /// Draw one crop. With probability `fg_prob` the crop is centered on a
    /// uniformly chosen foreground voxel of an annotated frame, otherwise on
    /// a uniformly chosen background voxel of an annotated frame. The window
    /// is clamped to the volume, which keeps the drawn frame inside the
    /// temporal window — so the crop always holds >= 1 labeled frame.
    pub fn sample<S: Scalar>(
        &self,
        crop: [usize; 4],
        fg_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CropSample<S>> {
        if crop.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!("degenerate crop {:?}", crop)));
        }
        let dims = self.seq.dims;
        let t_len = dims[3];
        let voxels = self.seq.voxels_per_frame();
        let fg_centered = self.total_fg > 0 && rng.random::<f64>() < fg_prob;
        let (frame, spatial) = if fg_centered {
            let mut k = rng.random_range(0..self.total_fg);
            let mut hit = None;
            for (t, idx) in &self.fg {
                if k < idx.len() {
                    hit = Some((*t, idx[k] as usize));
                    break;
                }
                k -= idx.len();
            }
            hit.expect("k < total_fg")
        } else {
            // Rejection-sample a background voxel over annotated frames;
            // foreground occupies a small fraction so this terminates fast.
            loop {
                let t = self.annotated_frames[rng.random_range(0..self.annotated_frames.len())];
                let v = rng.random_range(0..voxels);
                if self.seq.labels[v * t_len + t] == 0 {
                    break (t, v);
                }
            }
        };
        let cz = spatial % dims[2];
        let cy = (spatial / dims[2]) % dims[1];
        let cx = spatial / (dims[2] * dims[1]);
        let center = [cx, cy, cz, frame];
        let origin: [usize; 4] = std::array::from_fn(|a| {
            if dims[a] <= crop[a] {
                0
            } else {
                (center[a].saturating_sub(crop[a] / 2)).min(dims[a] - crop[a])
            }
        });
        Ok(self.extract::<S>(origin, crop, fg_centered))
    }

    fn extract<S: Scalar>(
        &self,
        origin: [usize; 4],
        crop: [usize; 4],
        fg_centered: bool,
    ) -> CropSample<S> {
        let seq = self.seq;
        let dims = seq.dims;
        let [ox, oy, oz, ot] = origin;
        let [kx, ky, kz, kt] = crop;
        let crop_voxels = kx * ky * kz * kt;
        let mut input = vec![S::from_f64(-1.0); crop_voxels];
        let mut labels = vec![0u8; crop_voxels];
        let labeled: Vec<bool> = (0..kt)
            .map(|i| ot + i < dims[3] && seq.annotated[ot + i])
            .collect();
        let t_span = kt.min(dims[3].saturating_sub(ot));
        for ix in 0..kx.min(dims[0].saturating_sub(ox)) {
            for iy in 0..ky.min(dims[1].saturating_sub(oy)) {
                for iz in 0..kz.min(dims[2].saturating_sub(oz)) {
                    let src = ((((ox + ix) * dims[1] + oy + iy) * dims[2]) + oz + iz) * dims[3] + ot;
                    let dst = ((ix * ky + iy) * kz + iz) * kt;
                    for i in 0..t_span {
                        input[dst + i] = S::from_f64(normalize_intensity(seq.intensities[src + i]) as f64);
                        // Unannotated frames keep label 0 here: training must
                        // never see their ground truth.
                        if labeled[i] {
                            labels[dst + i] = seq.labels[src + i];
                        }
                    }
                }
            }
        }
        let input = Tensor::new(vec![1, 1, kx, ky, kz, kt], input).expect("sized above");
        let target = SparseTarget::new([kx, ky, kz, kt], labels, labeled).expect("sized above");
        CropSample {
            input,
            target,
            origin,
            fg_centered,
        }
    }
}

/// Derive a per-sequence RNG seed from a base seed, so sequences are
/// independent of generation order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 over the combined value
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            grid: [32, 32, 28],
            frames: 8,
            r_ed: [9.0, 8.0, 8.0],
            ef: 0.6,
            wall: 2.0,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn normalize_endpoints_and_clamp() {
        assert_eq!(normalize_intensity(-1024.0), -1.0);
        assert_eq!(normalize_intensity(0.0), 0.0);
        assert_eq!(normalize_intensity(2000.0), 1.0);
        assert_eq!(normalize_intensity(-5000.0), -1.0);
        assert_eq!(normalize_intensity(512.0), 0.5);
    }

    #[test]
    fn normalize_is_monotone_and_bounded() {
        let mut prev = f32::NEG_INFINITY;
        for i in -300..300 {
            let v = normalize_intensity(i as f32 * 10.0);
            assert!((-1.0..=1.0).contains(&v));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ellipsoid_volume_close_to_analytic() {
        // Count cavity voxels at end-diastole vs (4/3) pi a b c.
        let spec = PhantomSpec {
            grid: [40, 40, 40],
            frames: 2,
            r_ed: [12.0, 10.0, 9.0],
            ef: 0.5,
            wall: 2.0,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let seq = phantom_generate(&spec, "p", 3).unwrap();
        let t_len = seq.dims[3];
        let count = seq
            .labels
            .iter()
            .skip(0)
            .step_by(t_len)
            .filter(|&&l| l == 1)
            .count() as f64;
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 12.0 * 10.0 * 9.0;
        assert!(
            (count - analytic).abs() / analytic < 0.03,
            "count {} vs analytic {}",
            count,
            analytic
        );
    }

    #[test]
    fn zero_ef_means_static_labels() {
        let spec = PhantomSpec {
            ef: 0.0,
            ..small_spec()
        };
        let seq = phantom_generate(&spec, "static", 5).unwrap();
        let t_len = seq.dims[3];
        for row in seq.labels.chunks(t_len) {
            for t in 1..t_len {
                assert_eq!(row[t], row[0]);
            }
        }
    }

    #[test]
    fn measured_label_ef_matches_analytic() {
        let spec = PhantomSpec::default(); // EF 0.6, radii >= 8
        let seq = phantom_generate(&spec, "ef", 9).unwrap();
        let t_len = seq.dims[3];
        let counts: Vec<usize> = (0..t_len)
            .map(|t| seq.labels.iter().skip(t).step_by(t_len).filter(|&&l| l == 1).count())
            .collect();
        let (min, max) = (
            *counts.iter().min().unwrap() as f64,
            *counts.iter().max().unwrap() as f64,
        );
        let measured = 1.0 - min / max;
        assert!(
            (measured - 0.6).abs() < 0.03,
            "measured EF {} vs analytic 0.6",
            measured
        );
    }

    #[test]
    fn cavity_volume_is_cycle_symmetric() {
        let seq = phantom_generate(&small_spec(), "sym", 1).unwrap();
        let t_len = seq.dims[3];
        let count = |t: usize| {
            seq.labels.iter().skip(t).step_by(t_len).filter(|&&l| l == 1).count() as f64
        };
        for t in 1..t_len / 2 {
            let (a, b) = (count(t), count(t_len - t));
            assert!((a - b).abs() / a.max(b) < 0.02, "frames {} vs {}", t, t_len - t);
        }
    }

    #[test]
    fn shell_encloses_cavity_and_classes_disjoint() {
        let seq = phantom_generate(&small_spec(), "shell", 2).unwrap();
        let [gx, gy, gz, t_len] = seq.dims;
        // Every 6-neighbor of a cavity voxel is cavity or myocardium: the
        // shell seals the cavity off from the background.
        let lbl = |x: usize, y: usize, z: usize, t: usize| {
            seq.labels[((x * gy + y) * gz + z) * t_len + t]
        };
        for t in [0, t_len / 2] {
            for x in 1..gx - 1 {
                for y in 1..gy - 1 {
                    for z in 1..gz - 1 {
                        if lbl(x, y, z, t) == 1 {
                            for (nx, ny, nz) in [
                                (x - 1, y, z),
                                (x + 1, y, z),
                                (x, y - 1, z),
                                (x, y + 1, z),
                                (x, y, z - 1),
                                (x, y, z + 1),
                            ] {
                                assert_ne!(lbl(nx, ny, nz, t), 0, "cavity touches background");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_shell_rejected() {
        let spec = PhantomSpec {
            grid: [20, 20, 20],
            r_ed: [9.0, 9.0, 9.0],
            wall: 3.0,
            ..PhantomSpec::default()
        };
        assert!(matches!(
            phantom_generate(&spec, "big", 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn phantom_is_deterministic_per_seed() {
        let a = phantom_generate(&small_spec(), "d", 42).unwrap();
        let b = phantom_generate(&small_spec(), "d", 42).unwrap();
        assert_eq!(a.intensities, b.intensities);
        assert_eq!(a.labels, b.labels);
        let c = phantom_generate(&small_spec(), "d", 43).unwrap();
        assert_ne!(a.intensities, c.intensities);
    }

    #[test]
    fn sparsify_patterns() {
        let seq = phantom_generate(&small_spec(), "s", 7).unwrap();
        let t_len = seq.dims[3];
        let all = sparsify(seq.clone(), &AnnotationPattern::All.frames(t_len)).unwrap();
        assert!(all.annotated.iter().all(|&a| a));
        let ends = sparsify(seq.clone(), &AnnotationPattern::EndPoints.frames(t_len)).unwrap();
        assert_eq!(ends.annotated.iter().filter(|&&a| a).count(), 2);
        assert!(ends.annotated[0] && ends.annotated[t_len / 2]);
        let evens = sparsify(seq.clone(), &AnnotationPattern::EverySecond.frames(t_len)).unwrap();
        assert_eq!(evens.annotated.iter().filter(|&&a| a).count(), t_len / 2);
        assert!(sparsify(seq, &[]).is_err());
    }

    #[test]
    fn crop_sampler_respects_fg_probability() {
        let seq = phantom_generate(&small_spec(), "mc", 11).unwrap();
        let seq = sparsify(seq, &[0, 4]).unwrap();
        let sampler = CropSampler::new(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut fg_count = 0;
        let draws = 10_000;
        for _ in 0..draws {
            let s: CropSample<f32> = sampler.sample([16, 16, 16, 4], 0.6, &mut rng).unwrap();
            if s.fg_centered {
                fg_count += 1;
            }
        }
        let frac = fg_count as f64 / draws as f64;
        assert!((0.57..=0.63).contains(&frac), "fg fraction {}", frac);
    }

    #[test]
    fn crops_stay_in_bounds_and_keep_a_labeled_frame() {
        let seq = phantom_generate(&small_spec(), "bounds", 13).unwrap();
        let seq = sparsify(seq, &[3]).unwrap();
        let sampler = CropSampler::new(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s: CropSample<f32> = sampler.sample([16, 16, 12, 4], 0.6, &mut rng).unwrap();
            for a in 0..4 {
                assert!(s.origin[a] + [16, 16, 12, 4][a] <= seq.dims[a]);
            }
            assert!(s.target.labeled.iter().any(|&b| b), "no labeled frame in window");
            assert!(s.input.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn full_volume_crop_has_zero_origin() {
        let seq = phantom_generate(&small_spec(), "full", 17).unwrap();
        let sampler = CropSampler::new(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: CropSample<f32> = sampler.sample(seq.dims, 0.6, &mut rng).unwrap();
        assert_eq!(s.origin, [0, 0, 0, 0]);
    }

    #[test]
    fn undersized_volume_is_padded() {
        let spec = PhantomSpec {
            grid: [20, 20, 16],
            frames: 3,
            r_ed: [6.0, 6.0, 5.0],
            wall: 2.0,
            ..PhantomSpec::default()
        };
        let seq = phantom_generate(&spec, "small", 23).unwrap();
        let sampler = CropSampler::new(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: CropSample<f32> = sampler.sample([24, 24, 16, 4], 0.6, &mut rng).unwrap();
        assert_eq!(s.input.shape(), &[1, 1, 24, 24, 16, 4]);
        // Padded region (x >= 20) reads -1 intensity and background label.
        let v = s.input.at(&[0, 0, 22, 0, 0, 0]).unwrap();
        assert_eq!(v, -1.0);
        // Padded frames (t >= 3) are unlabeled.
        assert!(!s.target.labeled[3]);
    }

    #[test]
    fn unannotated_frames_never_leak_labels() {
        let seq = phantom_generate(&small_spec(), "leak", 29).unwrap();
        let seq = sparsify(seq, &[0]).unwrap();
        let sampler = CropSampler::new(&seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: CropSample<f32> = sampler.sample([16, 16, 12, 8], 1.0, &mut rng).unwrap();
        let [kx, ky, kz, kt] = s.target.dims;
        for row in 0..kx * ky * kz {
            for t in 0..kt {
                if !s.target.labeled[t] {
                    assert_eq!(s.target.labels[row * kt + t], 0);
                }
            }
        }
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }
}
