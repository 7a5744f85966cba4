//! Desk-scale synthetic datasets with a known split between class-semantic
//! structure and class-independent nuisance ("style") structure.
//!
//! Skeleton features are `f_x = A [s_c + e; u] + b` where `s_c` is a per-class
//! semantic code, `e` is Gaussian noise, `u` is a per-sample nuisance offset
//! drawn independently of the class, and `A` is a fixed full-rank mixing map.
//! Text features are `f_y = B s_c` plus a small amount of noise.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::format::{write_feature_matrix, write_labels};
use super::manifest::{ClassEntry, Dataset, DatasetManifest};
use crate::error::{ensure_arg, Error, Result};
use crate::rng::{self, RunRng, Stream};
use crate::tensor::{FeatureMatrix, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub signal_dim: usize,
    pub nuisance_dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
    /// Number of style prototypes the nuisance offsets are drawn around.
    pub num_styles: usize,
    /// Standard deviation of each style prototype coordinate.
    pub style_scale: f64,
    /// Half-width of the per-sample uniform jitter around a prototype.
    pub style_jitter: f64,
    pub text_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 40,
            samples_per_class: 200,
            d_x: 64,
            d_y: 32,
            signal_dim: 16,
            nuisance_dim: 48,
            noise_scale: 0.5,
            seed: 0,
            num_styles: 16,
            style_scale: 3.0,
            style_jitter: 1.0,
            text_noise: 0.01,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.num_classes >= 1
                && self.samples_per_class >= 1
                && self.d_x >= 1
                && self.d_y >= 1
                && self.signal_dim >= 1
                && self.num_styles >= 1,
            "all counts must be >= 1"
        );
        ensure_arg!(
            self.signal_dim + self.nuisance_dim <= self.d_x,
            "signal_dim + nuisance_dim = {} exceeds d_x = {}",
            self.signal_dim + self.nuisance_dim,
            self.d_x
        );
        ensure_arg!(
            self.noise_scale >= 0.0
                && self.style_scale >= 0.0
                && self.style_jitter >= 0.0
                && self.text_noise >= 0.0,
            "scales must be non-negative"
        );
        Ok(())
    }
}

/// Generator-side ground truth, for probes and diagnostics.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    /// Per-class semantic codes, `num_classes x signal_dim`.
    pub codes: Matrix<f64>,
    /// Per-sample `s_c + e`, `n x signal_dim`.
    pub signal: Matrix<f64>,
    /// Per-sample nuisance `u`, `n x nuisance_dim`.
    pub nuisance: Matrix<f64>,
    /// Style prototype index for each sample.
    pub styles: Vec<usize>,
    /// Mixing map `A`, `d_x x (signal_dim + nuisance_dim)`.
    pub mixing: Matrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truth: SyntheticTruth,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const SKELETON_FILE: &str = "skeleton.sadv";
const LABEL_FILE: &str = "labels.sadl";
const TEXT_FILE: &str = "text.sadv";

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut RunRng) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn full_rank_mixing(d_x: usize, width: usize, rng: &mut RunRng) -> Matrix<f64> {
    let scale = 1.0 / (width as f64).sqrt();
    loop {
        let m = gaussian(d_x, width, scale, rng);
        let dm = DMatrix::from_row_slice(d_x, width, m.data());
        let sv = dm.singular_values();
        let max = sv.max();
        let min = sv.min();
        if max > 0.0 && min > 1e-3 * max {
            return m;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synthetic);
    let (c, s, u) = (spec.num_classes, spec.signal_dim, spec.nuisance_dim);
    let n = c * spec.samples_per_class;

    let codes = gaussian(c, s, 1.0, &mut rng);
    let mixing = full_rank_mixing(spec.d_x, s + u, &mut rng);
    let offset = gaussian(1, spec.d_x, 1.0, &mut rng);
    let text_map = gaussian(spec.d_y, s, 1.0 / (s as f64).sqrt(), &mut rng);
    let prototypes = gaussian(spec.num_styles, u, spec.style_scale, &mut rng);

    let mut text = FeatureMatrix::zeros(c, spec.d_y);
    for class in 0..c {
        let code = codes.row(class);
        for j in 0..spec.d_y {
            let clean: f64 = text_map.row(j).iter().zip(code).map(|(a, b)| a * b).sum();
            let z: f64 = StandardNormal.sample(&mut rng);
            text.set(class, j, (clean + spec.text_noise * z) as f32);
        }
    }

    let jitter = Uniform::new_inclusive(-spec.style_jitter, spec.style_jitter)
        .map_err(|e| Error::Argument(e.to_string()))?;
    let mut signal = Matrix::zeros(n, s);
    let mut nuisance = Matrix::zeros(n, u);
    let mut styles = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut features = FeatureMatrix::zeros(n, spec.d_x);
    let mut latent = vec![0.0f64; s + u];
    for class in 0..c {
        // Styles are dealt round-robin within each class so that style
        // frequencies are identical across classes.
        let start = rng.random_range(0..spec.num_styles);
        let mut order: Vec<usize> = (0..spec.samples_per_class)
            .map(|i| (start + i) % spec.num_styles)
            .collect();
        rng::shuffle_in_place(&mut order, &mut rng);
        for &style in &order {
            let i = labels.len();
            for j in 0..s {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = codes.get(class, j) + spec.noise_scale * z;
                signal.set(i, j, v);
                latent[j] = v;
            }
            for j in 0..u {
                let v = prototypes.get(style, j) + jitter.sample(&mut rng);
                nuisance.set(i, j, v);
                latent[s + j] = v;
            }
            for k in 0..spec.d_x {
                let mixed: f64 = mixing.row(k).iter().zip(&latent).map(|(a, b)| a * b).sum();
                features.set(i, k, (mixed + offset.get(0, k)) as f32);
            }
            styles.push(style);
            labels.push(class as u32);
        }
    }

    let manifest = DatasetManifest {
        classes: (0..c)
            .map(|id| ClassEntry {
                id: id as u32,
                label: format!("synthetic action {id}"),
            })
            .collect(),
        skeleton_features: PathBuf::from(SKELETON_FILE),
        skeleton_labels: PathBuf::from(LABEL_FILE),
        text_features: PathBuf::from(TEXT_FILE),
        d_x: spec.d_x,
        d_y: spec.d_y,
    };
    let dataset = Dataset::new(manifest, features, labels, text)?;
    Ok(SyntheticDataset {
        dataset,
        truth: SyntheticTruth {
            codes,
            signal,
            nuisance,
            styles,
            mixing,
        },
    })
}

/// Writes a dataset's matrices and manifest into `dir`; returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &dataset.manifest;
    write_feature_matrix(&dataset.features, dir.join(&m.skeleton_features))?;
    write_labels(&dataset.labels, dir.join(&m.skeleton_labels))?;
    write_feature_matrix(&dataset.text, dir.join(&m.text_features))?;
    let path = dir.join(MANIFEST_FILE);
    m.write(&path)?;
    Ok(path)
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let synth = generate_synthetic(spec)?;
    write_dataset(&synth.dataset, dir)
}
