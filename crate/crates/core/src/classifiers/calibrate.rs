use crate::config::RunConfig;
use crate::data_io::{ClassSplit, Dataset, SamplePartition};
use crate::error::{ensure_arg, Result};
use crate::model::VaeParams;
use crate::rng::{self, Stream};
use crate::tensor::{FeatureMatrix, Matrix};
use crate::trainer;

use super::gate::{train_domain_gate, DomainGate};
use super::predictor::{GzslPredictor, ZslPredictor};
use super::softmax::{
    temperature_topk_pool, train_seen_classifier, train_unseen_classifier, ClassifierSettings,
    SoftmaxClassifier,
};

/// One text row per class id, in the given order.
pub fn class_text(dataset: &Dataset, ids: &[u32]) -> FeatureMatrix {
    let rows: Vec<usize> = ids.iter().map(|&c| c as usize).collect();
    dataset.text.select_rows(&rows)
}

/// Trains C_u (on text latents of `unseen_ids`) and C_s (on `train_samples`).
pub fn train_classifiers(
    dataset: &Dataset,
    vae: &VaeParams<f32>,
    train_samples: &[usize],
    split: &ClassSplit,
    config: &RunConfig,
) -> Result<(SoftmaxClassifier, SoftmaxClassifier)> {
    let settings = ClassifierSettings::from_config(config);
    let mut rng = rng::stream(config.seed, Stream::Classifier);
    let unseen = train_unseen_classifier(
        vae,
        &class_text(dataset, &split.unseen_ids),
        &split.unseen_ids,
        config.samples_per_class,
        settings,
        &mut rng,
    )?;
    let labels: Vec<u32> = train_samples.iter().map(|&i| dataset.labels[i]).collect();
    let seen = train_seen_classifier(
        &dataset.features.select_rows(train_samples),
        &labels,
        &split.seen_ids,
        settings,
        &mut rng,
    )?;
    Ok((unseen, seen))
}

/// Gate input rows `pool(C_s logits) ⊕ C_u probabilities` for each sample.
pub fn gate_rows(
    zsl: &ZslPredictor,
    seen: &SoftmaxClassifier,
    fx: &FeatureMatrix,
    temperature: f64,
) -> Result<Matrix<f64>> {
    let k = zsl.unseen.num_classes();
    let logits = seen.logits(fx)?;
    let p_u = zsl.unseen_probabilities(fx)?;
    let mut rows = Matrix::zeros(fx.rows(), 2 * k);
    for i in 0..fx.rows() {
        let l: Vec<f64> = logits.row(i).iter().map(|&v| v as f64).collect();
        let pooled = temperature_topk_pool(&l, temperature, k)?;
        let out = rows.row_mut(i);
        out[..k].copy_from_slice(&pooled);
        out[k..].copy_from_slice(p_u.row(i));
    }
    Ok(rows)
}

/// Everything produced while fitting the domain gate on a proxy split.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub gate: DomainGate,
    /// Proxy classes carved out of the seen set.
    pub proxy_split: ClassSplit,
    pub rows: Matrix<f64>,
    /// `true` for proxy-seen rows.
    pub labels: Vec<bool>,
}

impl Calibration {
    /// Fraction of gate rows classified on the correct side of 0.5.
    pub fn accuracy(&self) -> Result<f64> {
        let mut hits = 0usize;
        for (i, &y) in self.labels.iter().enumerate() {
            if (self.gate.probability(self.rows.row(i))? > 0.5) == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.labels.len() as f64)
    }
}

/// Draws `|unseen|` proxy-unseen classes from the seen set of `split`.
pub fn proxy_split(split: &ClassSplit, rng: &mut impl rand::Rng) -> Result<ClassSplit> {
    let k = split.unseen_ids.len();
    ensure_arg!(k >= 1, "unseen class set is empty");
    ensure_arg!(
        split.seen_ids.len() >= 2 * k,
        "calibration needs at least {} seen classes for {k} unseen (got {})",
        2 * k,
        split.seen_ids.len()
    );
    let mut ids = split.seen_ids.clone();
    rng::shuffle_in_place(&mut ids, rng);
    let (unseen, seen) = ids.split_at(k);
    ClassSplit::new(seen.to_vec(), unseen.to_vec())
}

/// Fits the domain gate on a proxy split carved from the seen classes.
///
/// Only training samples of `split` are touched: the model, C_u and C_s are
/// retrained on proxy-seen samples, and the gate learns to separate held-out
/// proxy-seen samples from proxy-unseen ones.
pub fn calibrate_gzsl(dataset: &Dataset, split: &ClassSplit, config: &RunConfig) -> Result<Calibration> {
    config.validate()?;
    split.validate_for(dataset.num_classes())?;
    let outer = SamplePartition::new(dataset, split, config.holdout_fraction, config.seed)?;
    let mut rng = rng::stream(config.seed, Stream::ProxySplit);
    let proxy = proxy_split(split, &mut rng)?;
    let part = SamplePartition::within(dataset, &outer.train, &proxy, config.holdout_fraction, &mut rng)?;
    ensure_arg!(
        !part.test_seen.is_empty(),
        "calibration needs held-out proxy-seen samples; raise holdout_fraction"
    );
    let model = trainer::train(dataset, &part.train, config)?;
    let (unseen, seen) = train_classifiers(dataset, &model.state.vae, &part.train, &proxy, config)?;
    let zsl = ZslPredictor::new(&model.state.vae, unseen)?;

    let samples: Vec<usize> = part.test_seen.iter().chain(&part.test_unseen).copied().collect();
    let labels: Vec<bool> = samples.iter().map(|&i| proxy.is_seen(dataset.labels[i])).collect();
    let rows = gate_rows(&zsl, &seen, &dataset.features.select_rows(&samples), config.temperature)?;
    let gate = train_domain_gate(&rows, &labels, config.temperature, config.gate_c)?;
    Ok(Calibration {
        gate,
        proxy_split: proxy,
        rows,
        labels,
    })
}

/// Trains the final classifiers for a trained model and attaches a gate.
pub fn assemble_predictor(
    dataset: &Dataset,
    split: &ClassSplit,
    config: &RunConfig,
    vae: &VaeParams<f32>,
    gate: DomainGate,
) -> Result<GzslPredictor> {
    let outer = SamplePartition::new(dataset, split, config.holdout_fraction, config.seed)?;
    let (unseen, seen) = train_classifiers(dataset, vae, &outer.train, split, config)?;
    GzslPredictor::new(ZslPredictor::new(vae, unseen)?, seen, gate)
}
