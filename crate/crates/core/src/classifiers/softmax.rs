use rand::Rng;

use crate::config::RunConfig;
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::model::{encode_text, reparameterize, Affine, Layers, VaeParams};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{FeatureMatrix, Matrix};

/// Single affine layer followed by softmax over an ordered list of class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier {
    pub layer: Affine<f32>,
    pub class_ids: Vec<u32>,
}

/// Numerically stable softmax of one row, in double precision.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the smallest `ids[i]`.
pub fn argmax_by_id(values: &[f64], ids: &[u32]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] || (values[i] == values[best] && ids[i] < ids[best]) {
            best = i;
        }
    }
    best
}

impl SoftmaxClassifier {
    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer.input_dim()
    }

    pub fn logits(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.layer.forward(x)
    }

    /// Class probabilities, one row per input.
    pub fn probabilities(&self, x: &FeatureMatrix) -> Result<Matrix<f64>> {
        let logits = self.logits(x)?;
        let mut out = Matrix::zeros(x.rows(), self.num_classes());
        for i in 0..x.rows() {
            let l: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
            out.row_mut(i).copy_from_slice(&softmax(&l));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<u32>> {
        let p = self.probabilities(x)?;
        Ok((0..p.rows())
            .map(|i| self.class_ids[argmax_by_id(p.row(i), &self.class_ids)])
            .collect())
    }
}

/// Budget for training a softmax classifier with Adam on cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ClassifierSettings {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            epochs: c.classifier_epochs,
            learning_rate: c.classifier_learning_rate,
            batch_size: c.classifier_batch_size,
        }
    }
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self::from_config(&RunConfig::default())
    }
}

/// Fits `layer` to `targets` (indices into the output) by mini-batch Adam.
fn fit(
    inputs: &FeatureMatrix,
    targets: &[usize],
    num_classes: usize,
    settings: ClassifierSettings,
    rng: &mut impl Rng,
) -> Result<Affine<f32>> {
    ensure_arg!(settings.batch_size >= 1, "batch size must be >= 1");
    let mut layer = Affine::init(inputs.cols(), num_classes, rng);
    let mut opt = Adam::new(&layer, settings.learning_rate);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    for _ in 0..settings.epochs {
        rng::shuffle_in_place(&mut order, rng);
        for batch in order.chunks(settings.batch_size) {
            let x = inputs.select_rows(batch);
            let mut d = layer.forward(&x)?;
            let inv = 1.0 / batch.len() as f32;
            for (r, &i) in batch.iter().enumerate() {
                let row = d.row_mut(r);
                let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f32;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v = *v / sum * inv;
                }
                row[targets[i]] -= inv;
            }
            let mut grad = layer.zeros_like();
            layer.backward(&x, &d, Some(&mut grad), false);
            opt.update(&mut layer, &grad)?;
        }
    }
    if !layer.is_finite() {
        return Err(Error::Data("classifier training diverged".into()));
    }
    Ok(layer)
}

/// Trains the unseen-class classifier on reparameterized text latents:
/// `samples_per_class` draws of `z_y` per class. `text` holds one row per
/// entry of `unseen_ids`, in the same order.
pub fn train_unseen_classifier(
    vae: &VaeParams<f32>,
    text: &FeatureMatrix,
    unseen_ids: &[u32],
    samples_per_class: usize,
    settings: ClassifierSettings,
    rng: &mut impl Rng,
) -> Result<SoftmaxClassifier> {
    ensure_arg!(!unseen_ids.is_empty(), "unseen class set is empty");
    ensure_shape!(
        text.rows() == unseen_ids.len(),
        "{} text rows for {} unseen classes",
        text.rows(),
        unseen_ids.len()
    );
    ensure_arg!(samples_per_class >= 1, "samples_per_class must be >= 1");
    let rows: Vec<usize> = (0..unseen_ids.len())
        .flat_map(|c| std::iter::repeat_n(c, samples_per_class))
        .collect();
    let fy = text.select_rows(&rows);
    let post = encode_text(vae, &fy)?;
    let noise = rng::standard_normal(rows.len(), post.width(), rng);
    let z = reparameterize(&post, &noise)?;
    let layer = fit(&z, &rows, unseen_ids.len(), settings, rng)?;
    Ok(SoftmaxClassifier {
        layer,
        class_ids: unseen_ids.to_vec(),
    })
}

/// Trains the seen-class classifier on raw skeleton features.
///
/// Samples are put into a canonical order (by label, then feature bits)
/// before seeded shuffling, so the result does not depend on input order.
pub fn train_seen_classifier(
    fx: &FeatureMatrix,
    labels: &[u32],
    seen_ids: &[u32],
    settings: ClassifierSettings,
    rng: &mut impl Rng,
) -> Result<SoftmaxClassifier> {
    ensure_arg!(!seen_ids.is_empty(), "seen class set is empty");
    ensure_shape!(
        fx.rows() == labels.len(),
        "{} samples but {} labels",
        fx.rows(),
        labels.len()
    );
    let mut ids = seen_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut targets = Vec::with_capacity(labels.len());
    for &l in labels {
        match ids.binary_search(&l) {
            Ok(i) => targets.push(i),
            Err(_) => return Err(Error::Data(format!("label {l} is not a seen class"))),
        }
    }
    let mut canonical: Vec<usize> = (0..fx.rows()).collect();
    canonical.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            let ka = fx.row(a).iter().map(|v| v.to_bits());
            let kb = fx.row(b).iter().map(|v| v.to_bits());
            ka.cmp(kb)
        })
    });
    let x = fx.select_rows(&canonical);
    let t: Vec<usize> = canonical.iter().map(|&i| targets[i]).collect();
    let layer = fit(&x, &t, ids.len(), settings, rng)?;
    Ok(SoftmaxClassifier {
        layer,
        class_ids: ids,
    })
}

/// `softmax(logits / T)` sorted descending and truncated to `k` entries.
pub fn temperature_topk_pool(logits: &[f64], temperature: f64, k: usize) -> Result<Vec<f64>> {
    ensure_arg!(
        temperature.is_finite() && temperature > 0.0,
        "temperature must be > 0, got {temperature}"
    );
    ensure_arg!(
        k <= logits.len(),
        "cannot pool top {k} of {} classes",
        logits.len()
    );
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let mut p = softmax(&scaled);
    p.sort_by(|a, b| b.total_cmp(a));
    p.truncate(k);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn pooling_cases() {
        let full = temperature_topk_pool(&[0.3, 2.0, -1.0], 1.0, 3).unwrap();
        let mut expect = softmax(&[0.3, 2.0, -1.0]);
        expect.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(full, expect);
        let uniform = temperature_topk_pool(&[1.5; 4], 3.0, 2).unwrap();
        assert!(uniform.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(matches!(temperature_topk_pool(&[1.0, 2.0], 1.0, 3), Err(Error::Argument(_))));
        assert!(matches!(temperature_topk_pool(&[1.0, 2.0], 0.0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn pooling_worked_example() {
        // softmax(1, 0.5, 0): e^1, e^0.5, e^0 over their sum.
        let (a, b, c) = (1f64.exp(), 0.5f64.exp(), 1.0);
        let s = a + b + c;
        let p = temperature_topk_pool(&[2.0, 1.0, 0.0], 2.0, 2).unwrap();
        assert!((p[0] - a / s).abs() < 1e-12 && (p[1] - b / s).abs() < 1e-12);
        assert!((p[0] - 0.506480).abs() < 1e-6 && (p[1] - 0.307196).abs() < 1e-6);
    }

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        assert_eq!(argmax_by_id(&[0.5, 0.5], &[9, 3]), 1);
        assert_eq!(argmax_by_id(&[0.2, 0.5, 0.5], &[1, 4, 7]), 1);
    }

    #[test]
    fn seen_classifier_rejects_foreign_label() {
        let x = FeatureMatrix::zeros(2, 3);
        let err = train_seen_classifier(
            &x,
            &[0, 5],
            &[0, 1],
            ClassifierSettings::default(),
            &mut stream(0, Stream::Classifier),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
