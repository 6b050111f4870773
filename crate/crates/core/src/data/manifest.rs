//! Dataset manifests: a TOML index of volume pairs plus the dataset
//! generator that builds a phantom corpus on disk.
//!
//! ```toml
//! [[sequence]]
//! id = "phantom00"
//! intensity = "phantom00_img.vol4"
//! labels = "phantom00_lbl.vol4"
//! split = "train"
//! annotated_frames = [0, 10]
//! analytic_ef = 0.3          # optional, synthetic data only
//! ```
//!
//! Paths are relative to the manifest file. `analytic_ef` carries the
//! phantom's ground-truth ejection fraction through to evaluation.

use super::volio;
use super::{
    derive_seed, phantom_generate, sparsify, AnnotationPattern, PhantomSpec, Volume4DSequence,
};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Path of the intensity file, relative to the manifest.
    pub intensity: String,
    /// Path of the label file, relative to the manifest.
    pub labels: String,
    pub split: Split,
    pub annotated_frames: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_ef: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDoc {
    sequence: Vec<ManifestEntry>,
}

/// A parsed manifest, anchored at the directory containing it.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ManifestDoc = toml::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {}", path.display(), e)))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let manifest = Manifest {
            root,
            entries: doc.sequence,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = ManifestDoc {
            sequence: self.entries.clone(),
        };
        // Plain (non-pretty) TOML keeps frame-index arrays on one line.
        let text = toml::to_string(&doc)
            .map_err(|e| Error::Manifest(format!("serialize: {}", e)))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sequence id {:?}", e.id)));
            }
            if e.annotated_frames.is_empty() {
                return Err(Error::Manifest(format!(
                    "sequence {:?} lists no annotated frames",
                    e.id
                )));
            }
            for rel in [&e.intensity, &e.labels] {
                let p = self.root.join(rel);
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "sequence {:?} references missing file {}",
                        e.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Read one sequence's volume pair, cross-checking the two files against
    /// each other and the annotation flags against the manifest.
    pub fn load_sequence(&self, entry: &ManifestEntry) -> Result<Volume4DSequence> {
        let img = volio::read_intensity(&self.root.join(&entry.intensity))?;
        let lbl = volio::read_labels(&self.root.join(&entry.labels))?;
        if img.dims != lbl.dims {
            return Err(Error::Manifest(format!(
                "sequence {:?}: intensity dims {:?} != label dims {:?}",
                entry.id, img.dims, lbl.dims
            )));
        }
        let from_file: Vec<usize> = lbl
            .annotated
            .iter()
            .enumerate()
            .filter_map(|(t, &a)| a.then_some(t))
            .collect();
        let mut from_manifest = entry.annotated_frames.clone();
        from_manifest.sort_unstable();
        from_manifest.dedup();
        if from_file != from_manifest {
            return Err(Error::Manifest(format!(
                "sequence {:?}: label file annotates frames {:?} but manifest says {:?}",
                entry.id, from_file, entry.annotated_frames
            )));
        }
        Ok(Volume4DSequence {
            id: entry.id.clone(),
            dims: img.dims,
            spacing_mm: img.spacing_mm,
            frame_ms: img.frame_ms,
            intensities: img.data,
            labels: lbl.data,
            annotated: lbl.annotated,
            analytic_ef: entry.analytic_ef,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Volume4DSequence>> {
        self.entries_for(split)
            .map(|e| self.load_sequence(e))
            .collect()
    }
}

/// Parameters for the on-disk phantom corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub sequences: usize,
    pub validation: usize,
    pub grid: [usize; 3],
    pub frames: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sequences: 10,
            validation: 2,
            grid: [48, 48, 32],
            frames: 20,
            seed: 2024,
        }
    }
}

/// Ejection fractions cycled over generated sequences: spans [0.30, 0.70]
/// and alternates reduced (< 0.55) with normal so both outcomes appear in
/// every prefix of length >= 2.
const EF_TABLE: [f64; 10] = [0.30, 0.62, 0.40, 0.68, 0.35, 0.65, 0.45, 0.70, 0.33, 0.66];

/// Annotation density cycle for training sequences.
const TRAIN_PATTERNS: [AnnotationPattern; 4] = [
    AnnotationPattern::EndPoints,
    AnnotationPattern::EveryFourth,
    AnnotationPattern::EverySecond,
    AnnotationPattern::All,
];

/// Validation keeps the two extremes so evaluation sees both the sparsest
/// and the densest annotation.
const VAL_PATTERNS: [AnnotationPattern; 2] = [AnnotationPattern::EndPoints, AnnotationPattern::All];

/// Generate a phantom corpus under `dir` and write `manifest.toml` there.
/// Deterministic per `cfg.seed`, independent of generation order.
pub fn generate_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    if cfg.validation == 0 || cfg.validation >= cfg.sequences {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= validation < sequences, got validation {} of {}",
            cfg.validation, cfg.sequences
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_train = cfg.sequences - cfg.validation;
    let mut entries = Vec::with_capacity(cfg.sequences);
    for i in 0..cfg.sequences {
        let id = format!("phantom{:02}", i);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..1.0);
        let base = PhantomSpec::default();
        let spec = PhantomSpec {
            grid: cfg.grid,
            frames: cfg.frames,
            r_ed: [
                base.r_ed[0] + jitter(&mut rng),
                base.r_ed[1] + jitter(&mut rng),
                base.r_ed[2] + jitter(&mut rng),
            ],
            ef: EF_TABLE[i % EF_TABLE.len()],
            ..base
        };
        let noise_seed: u64 = rng.random();
        let seq = phantom_generate(&spec, &id, noise_seed)?;
        let (split, pattern) = if i < n_train {
            (Split::Train, TRAIN_PATTERNS[i % TRAIN_PATTERNS.len()])
        } else {
            (Split::Validation, VAL_PATTERNS[(i - n_train) % VAL_PATTERNS.len()])
        };
        let frames = pattern.frames(cfg.frames);
        let seq = sparsify(seq, &frames)?;
        let intensity = format!("{}_img.vol4", id);
        let labels = format!("{}_lbl.vol4", id);
        volio::write_intensity(
            &dir.join(&intensity),
            seq.dims,
            seq.spacing_mm,
            seq.frame_ms,
            &seq.intensities,
        )?;
        volio::write_labels(
            &dir.join(&labels),
            seq.dims,
            seq.spacing_mm,
            seq.frame_ms,
            &seq.annotated,
            &seq.labels,
        )?;
        entries.push(ManifestEntry {
            id,
            intensity,
            labels,
            split,
            annotated_frames: frames,
            analytic_ef: seq.analytic_ef,
        });
    }
    let manifest = Manifest {
        root: dir.to_path_buf(),
        entries,
    };
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}
