//! Naive / FD / FD+TC comparison on a fixed split, and a canonical-correlation
//! diagnostic of the dependence between the two skeleton latent parts.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    assemble_predictor, calibrate_gzsl, class_text, train_unseen_classifier, ClassifierSettings,
    ZslPredictor,
};
use crate::config::{RunConfig, Variant};
use crate::data_io::{ClassSplit, Dataset, SamplePartition};
use crate::error::{ensure_arg, Result};
use crate::evaluation::{accuracy, evaluate_predictor, GzslReport};
use crate::model::{encode_skeleton, VaeParams};
use crate::parallel;
use crate::rng::{self, Stream};
use crate::tensor::FeatureMatrix;
use crate::trainer;

/// Largest canonical correlation between two blocks, or a degenerate flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dependence {
    pub value: f64,
    /// Set when either block has no variance; `value` is then 0.
    pub degenerate: bool,
}

/// `Σ^{-1/2}` restricted to the non-null eigenspace, as `k x p`.
fn whitening(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.is_empty() {
        return DMatrix::zeros(0, cov.nrows());
    }
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = max * 1e-10 * cov.nrows() as f64;
    let keep: Vec<usize> = (0..cov.nrows())
        .filter(|&i| max > 0.0 && eig.eigenvalues[i] > tol)
        .collect();
    let mut w = DMatrix::zeros(keep.len(), cov.nrows());
    for (row, &i) in keep.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        for j in 0..cov.nrows() {
            w[(row, j)] = eig.eigenvectors[(j, i)] * s;
        }
    }
    w
}

fn centered(m: &FeatureMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) as f64);
    for mut col in d.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    d
}

/// Largest canonical correlation between the rows of `a` and `b`.
pub fn max_canonical_correlation(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<Dependence> {
    ensure_arg!(a.rows() == b.rows(), "blocks have different sample counts");
    ensure_arg!(a.rows() >= 10, "need at least 10 samples, got {}", a.rows());
    let (x, y) = (centered(a), centered(b));
    let n = (a.rows() - 1) as f64;
    let wx = whitening(&(x.transpose() * &x / n));
    let wy = whitening(&(y.transpose() * &y / n));
    if wx.nrows() == 0 || wy.nrows() == 0 {
        log::warn!("latent dependence: a block has zero variance; reporting 0");
        return Ok(Dependence {
            value: 0.0,
            degenerate: true,
        });
    }
    let cross = &wx * (x.transpose() * &y / n) * wy.transpose();
    let top = cross.singular_values().iter().copied().fold(0.0, f64::max);
    Ok(Dependence {
        value: top.clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Dependence between r and v posterior means of a trained model.
pub fn latent_dependence(vae: &VaeParams<f32>, fx: &FeatureMatrix) -> Result<Dependence> {
    let (r, v) = encode_skeleton(vae, fx)?;
    max_canonical_correlation(&r.mean, &v.mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub zsl_accuracy: f64,
    pub gzsl: Option<GzslReport>,
    pub latent_dependence: f64,
    pub dependence_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMean {
    pub variant: Variant,
    pub zsl_accuracy: f64,
    pub harmonic_mean: Option<f64>,
    pub latent_dependence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: ClassSplit,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    /// Means over seeds, one per variant in first-seen order.
    pub fn means(&self) -> Vec<VariantMean> {
        let mut order: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !order.contains(&r.variant) {
                order.push(r.variant);
            }
        }
        order
            .into_iter()
            .map(|v| {
                let runs: Vec<&AblationRun> = self.runs.iter().filter(|r| r.variant == v).collect();
                let n = runs.len() as f64;
                let h: Option<Vec<f64>> = runs.iter().map(|r| r.gzsl.map(|g| g.harmonic_mean)).collect();
                VariantMean {
                    variant: v,
                    zsl_accuracy: runs.iter().map(|r| r.zsl_accuracy).sum::<f64>() / n,
                    harmonic_mean: h.map(|h| h.iter().sum::<f64>() / n),
                    latent_dependence: runs.iter().map(|r| r.latent_dependence).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn mean_zsl(&self, variant: Variant) -> Option<f64> {
        self.means()
            .into_iter()
            .find(|m| m.variant == variant)
            .map(|m| m.zsl_accuracy)
    }

    /// One row per (variant, seed).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,seed,zsl_accuracy,acc_seen,acc_unseen,harmonic_mean,latent_dependence,dependence_degenerate\n",
        );
        for r in &self.runs {
            let (a, b, h) = match r.gzsl {
                Some(g) => (
                    g.acc_seen.to_string(),
                    g.acc_unseen.to_string(),
                    g.harmonic_mean.to_string(),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{a},{b},{h},{},{}",
                r.variant, r.seed, r.zsl_accuracy, r.latent_dependence, r.dependence_degenerate
            );
        }
        s
    }
}

/// Trains one variant under `config` and evaluates it on `split`.
pub fn run_variant(
    dataset: &Dataset,
    split: &ClassSplit,
    config: &RunConfig,
    with_gzsl: bool,
) -> Result<AblationRun> {
    let part = SamplePartition::new(dataset, split, config.holdout_fraction, config.seed)?;
    let trained = trainer::train(dataset, &part.train, config)?;
    let vae = &trained.state.vae;
    let train_fx = dataset.features.select_rows(&part.train);
    let dep = latent_dependence(vae, &train_fx)?;
    let (zsl_accuracy, gzsl) = if with_gzsl {
        let gate = calibrate_gzsl(dataset, split, config)?.gate;
        let predictor = assemble_predictor(dataset, split, config, vae, gate)?;
        let (zsl, gzsl, _) = evaluate_predictor(dataset, split, config, &predictor)?;
        (zsl, Some(gzsl))
    } else {
        let mut rng = rng::stream(config.seed, Stream::Classifier);
        let unseen = train_unseen_classifier(
            vae,
            &class_text(dataset, &split.unseen_ids),
            &split.unseen_ids,
            config.samples_per_class,
            ClassifierSettings::from_config(config),
            &mut rng,
        )?;
        let zsl = ZslPredictor::new(vae, unseen)?;
        let fx = dataset.features.select_rows(&part.test_unseen);
        let truth: Vec<u32> = part.test_unseen.iter().map(|&i| dataset.labels[i]).collect();
        (accuracy(&zsl.predict(&fx)?, &truth), None)
    };
    Ok(AblationRun {
        variant: config.variant,
        seed: config.seed,
        zsl_accuracy,
        gzsl,
        latent_dependence: dep.value,
        dependence_degenerate: dep.degenerate,
    })
}

/// Runs every `(variant, seed)` pair on the same data and split. Only the
/// variant changes between runs sharing a seed.
pub fn run_ablation(
    dataset: &Dataset,
    split: &ClassSplit,
    config: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    with_gzsl: bool,
) -> Result<AblationReport> {
    ensure_arg!(!variants.is_empty(), "no variants requested");
    ensure_arg!(!seeds.is_empty(), "no seeds requested");
    let jobs: Vec<RunConfig> = seeds
        .iter()
        .flat_map(|&seed| {
            variants.iter().map(move |&variant| RunConfig {
                seed,
                variant,
                ..config.clone()
            })
        })
        .collect();
    let runs = parallel::map(&jobs, parallel::thread_limit(), |_, cfg| {
        run_variant(dataset, split, cfg, with_gzsl)
    });
    Ok(AblationReport {
        split: split.clone(),
        runs: runs.into_iter().collect::<Result<Vec<_>>>()?,
    })
}
