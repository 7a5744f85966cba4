//! ZSL and GZSL metrics and the repeated random-split protocol.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{assemble_predictor, calibrate_gzsl, GzslPredictor, ZslPredictor};
use crate::config::RunConfig;
use crate::data_io::{make_random_split, ClassSplit, Dataset, SamplePartition};
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::parallel;
use crate::tensor::FeatureMatrix;
use crate::trainer::{self, MetricsLog};

/// Anything that maps skeleton features to class ids.
pub trait Classify {
    fn classify(&self, fx: &FeatureMatrix) -> Result<Vec<u32>>;
}

impl Classify for ZslPredictor {
    fn classify(&self, fx: &FeatureMatrix) -> Result<Vec<u32>> {
        self.predict(fx)
    }
}

/// GZSL prediction over seen and unseen classes. Use `.zsl` for the
/// unseen-only view.
impl Classify for GzslPredictor {
    fn classify(&self, fx: &FeatureMatrix) -> Result<Vec<u32>> {
        Ok(self.predict_gzsl(fx)?.predictions)
    }
}

/// Percentage of positions where `predicted == truth`.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    100.0 * hits as f64 / truth.len() as f64
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    let s = acc_seen + acc_unseen;
    if s > 0.0 {
        2.0 * acc_seen * acc_unseen / s
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslReport {
    pub acc_seen: f64,
    pub acc_unseen: f64,
    pub harmonic_mean: f64,
}

impl GzslReport {
    pub fn new(acc_seen: f64, acc_unseen: f64) -> Self {
        Self {
            acc_seen,
            acc_unseen,
            harmonic_mean: harmonic_mean(acc_seen, acc_unseen),
        }
    }
}

fn check_len(fx: &FeatureMatrix, labels: &[u32]) -> Result<()> {
    ensure_shape!(
        fx.rows() == labels.len(),
        "{} samples but {} labels",
        fx.rows(),
        labels.len()
    );
    Ok(())
}

pub fn zsl_accuracy(
    predictor: &impl Classify,
    fx: &FeatureMatrix,
    labels: &[u32],
    unseen_ids: &[u32],
) -> Result<f64> {
    check_len(fx, labels)?;
    if let Some(l) = labels.iter().find(|l| !unseen_ids.contains(l)) {
        return Err(Error::Data(format!("label {l} is not an unseen class")));
    }
    Ok(accuracy(&predictor.classify(fx)?, labels))
}

/// Sample-level seen and unseen accuracies from precomputed predictions.
pub fn gzsl_report_from(predicted: &[u32], labels: &[u32], split: &ClassSplit) -> Result<GzslReport> {
    ensure_shape!(predicted.len() == labels.len(), "prediction/label count mismatch");
    let (mut seen_hit, mut seen_n, mut unseen_hit, mut unseen_n) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predicted.iter().zip(labels) {
        if split.is_seen(l) {
            seen_n += 1;
            seen_hit += (p == l) as usize;
        } else if split.is_unseen(l) {
            unseen_n += 1;
            unseen_hit += (p == l) as usize;
        } else {
            return Err(Error::Data(format!("label {l} is in neither class set")));
        }
    }
    ensure_arg!(seen_n > 0, "no seen-class test samples");
    ensure_arg!(unseen_n > 0, "no unseen-class test samples");
    Ok(GzslReport::new(
        100.0 * seen_hit as f64 / seen_n as f64,
        100.0 * unseen_hit as f64 / unseen_n as f64,
    ))
}

pub fn gzsl_metrics(
    predictor: &impl Classify,
    fx: &FeatureMatrix,
    labels: &[u32],
    split: &ClassSplit,
) -> Result<GzslReport> {
    check_len(fx, labels)?;
    gzsl_report_from(&predictor.classify(fx)?, labels, split)
}

/// Hit rate per true class; classes absent from `labels` are omitted.
pub fn per_class_from(predicted: &[u32], labels: &[u32]) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in predicted.iter().zip(labels) {
        let e = counts.entry(l).or_default();
        e.0 += (p == l) as usize;
        e.1 += 1;
    }
    counts
        .into_iter()
        .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
        .collect()
}

pub fn per_class_accuracy(
    predictor: &impl Classify,
    fx: &FeatureMatrix,
    labels: &[u32],
) -> Result<BTreeMap<u32, f64>> {
    check_len(fx, labels)?;
    ensure_arg!(!labels.is_empty(), "empty test set");
    Ok(per_class_from(&predictor.classify(fx)?, labels))
}

/// Metrics of one train → calibrate → evaluate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub split: ClassSplit,
    pub zsl_accuracy: f64,
    pub gzsl: GzslReport,
    /// Gate accuracy on its own proxy-split training rows, in percent.
    pub gate_accuracy: f64,
    pub per_class_unseen: BTreeMap<u32, f64>,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub predictor: GzslPredictor,
    pub log: MetricsLog,
}

/// Evaluates a predictor on the held-out part of `split`.
pub fn evaluate_predictor(
    dataset: &Dataset,
    split: &ClassSplit,
    config: &RunConfig,
    predictor: &GzslPredictor,
) -> Result<(f64, GzslReport, BTreeMap<u32, f64>)> {
    let part = SamplePartition::new(dataset, split, config.holdout_fraction, config.seed)?;
    let labels = |idx: &[usize]| -> Vec<u32> { idx.iter().map(|&i| dataset.labels[i]).collect() };
    let fx_u = dataset.features.select_rows(&part.test_unseen);
    let y_u = labels(&part.test_unseen);
    let zsl_pred = predictor.zsl.classify(&fx_u)?;
    let zsl = accuracy(&zsl_pred, &y_u);
    let per_class = per_class_from(&zsl_pred, &y_u);
    let all = part.test_all();
    let gzsl = gzsl_metrics(predictor, &dataset.features.select_rows(&all), &labels(&all), split)?;
    Ok((zsl, gzsl, per_class))
}

/// Full pipeline for one split: train, fit classifiers, calibrate the
/// gate on a proxy split, then evaluate.
pub fn run_experiment(dataset: &Dataset, split: &ClassSplit, config: &RunConfig) -> Result<Experiment> {
    let trained = trainer::train_on_split(dataset, split, config)?;
    let calibration = calibrate_gzsl(dataset, split, config)?;
    let gate_accuracy = 100.0 * calibration.accuracy()?;
    let predictor = assemble_predictor(dataset, split, config, &trained.state.vae, calibration.gate)?;
    let (zsl_accuracy, gzsl, per_class_unseen) = evaluate_predictor(dataset, split, config, &predictor)?;
    Ok(Experiment {
        report: ExperimentReport {
            seed: config.seed,
            split: split.clone(),
            zsl_accuracy,
            gzsl,
            gate_accuracy,
            per_class_unseen,
        },
        predictor,
        log: trained.log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub zsl_accuracy: f64,
    pub acc_seen: f64,
    pub acc_unseen: f64,
    pub harmonic_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub num_unseen: usize,
    pub base_seed: u64,
    pub repeats: Vec<ExperimentReport>,
    pub average: AveragedMetrics,
}

/// Plain arithmetic mean of each metric over repeats.
pub fn average_reports(repeats: &[ExperimentReport]) -> AveragedMetrics {
    let n = repeats.len().max(1) as f64;
    let mean = |f: fn(&ExperimentReport) -> f64| repeats.iter().map(f).sum::<f64>() / n;
    AveragedMetrics {
        zsl_accuracy: mean(|r| r.zsl_accuracy),
        acc_seen: mean(|r| r.gzsl.acc_seen),
        acc_unseen: mean(|r| r.gzsl.acc_unseen),
        harmonic_mean: mean(|r| r.gzsl.harmonic_mean),
    }
}

/// Repeats the experiment on `num_repeats` random splits. Repeat `r` uses
/// `base_seed + r` both for the split and for training.
pub fn run_random_split_protocol(
    dataset: &Dataset,
    num_unseen: usize,
    num_repeats: usize,
    config: &RunConfig,
    base_seed: u64,
) -> Result<ProtocolReport> {
    ensure_arg!(num_repeats >= 1, "num_repeats must be >= 1");
    let seeds: Vec<u64> = (0..num_repeats as u64).map(|r| base_seed + r).collect();
    let runs = parallel::map(&seeds, parallel::thread_limit(), |_, &seed| {
        let split = make_random_split(dataset.num_classes(), num_unseen, seed)?;
        let cfg = RunConfig {
            seed,
            ..config.clone()
        };
        run_experiment(dataset, &split, &cfg).map(|e| e.report)
    });
    let repeats = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ProtocolReport {
        num_unseen,
        base_seed,
        average: average_reports(&repeats),
        repeats,
    })
}

impl ProtocolReport {
    /// One row per repeat plus an `average` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("repeat,seed,zsl_accuracy,acc_seen,acc_unseen,harmonic_mean\n");
        for (i, r) in self.repeats.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{}",
                r.seed, r.zsl_accuracy, r.gzsl.acc_seen, r.gzsl.acc_unseen, r.gzsl.harmonic_mean
            );
        }
        let a = &self.average;
        let _ = writeln!(
            s,
            "average,,{},{},{},{}",
            a.zsl_accuracy, a.acc_seen, a.acc_unseen, a.harmonic_mean
        );
        s
    }
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<u32>);

    impl Classify for Fixed {
        fn classify(&self, _: &FeatureMatrix) -> Result<Vec<u32>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn harmonic_mean_identities() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(42.5, 42.5) - 42.5).abs() < 1e-12);
        assert!((harmonic_mean(74.22, 34.73) - 47.32).abs() < 0.01);
        assert!((harmonic_mean(61.10, 59.75) - 60.42).abs() < 0.01);
    }

    #[test]
    fn seven_of_ten() {
        let truth = vec![3u32; 10];
        let mut pred = truth.clone();
        pred[0] = 4;
        pred[5] = 4;
        pred[9] = 4;
        let fx = FeatureMatrix::zeros(10, 1);
        assert_eq!(zsl_accuracy(&Fixed(pred), &fx, &truth, &[3, 4]).unwrap(), 70.0);
    }

    #[test]
    fn zsl_rejects_seen_label() {
        let fx = FeatureMatrix::zeros(2, 1);
        let err = zsl_accuracy(&Fixed(vec![3, 3]), &fx, &[3, 0], &[3]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn gzsl_fixture() {
        let split = ClassSplit::new(vec![0, 1], vec![2, 3]).unwrap();
        let labels = [0, 1, 0, 1, 2, 3];
        let pred = [0, 1, 0, 0, 2, 1];
        let r = gzsl_report_from(&pred, &labels, &split).unwrap();
        assert_eq!((r.acc_seen, r.acc_unseen), (75.0, 50.0));
        assert!((r.harmonic_mean - 60.0).abs() < 1e-12);
        let oracle = gzsl_report_from(&labels, &labels, &split).unwrap();
        assert_eq!(oracle, GzslReport::new(100.0, 100.0));
        assert!(matches!(
            gzsl_report_from(&[0, 1], &[0, 1], &split),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn per_class_weighted_mean_is_overall_accuracy() {
        use rand::Rng;
        let mut r = crate::rng::stream(0, crate::rng::Stream::Noise);
        let labels: Vec<u32> = (0..500).map(|_| r.random_range(0..7)).collect();
        let pred: Vec<u32> = labels
            .iter()
            .map(|&l| if r.random::<f64>() < 0.6 { l } else { r.random_range(0..7) })
            .collect();
        let per = per_class_from(&pred, &labels);
        let weighted: f64 = per
            .iter()
            .map(|(c, a)| a * labels.iter().filter(|&&l| l == *c).count() as f64)
            .sum::<f64>()
            / labels.len() as f64;
        assert!((weighted - accuracy(&pred, &labels)).abs() < 1e-9);
        let constant = per_class_from(&[2; 6], &[0, 1, 2, 2, 3, 3]);
        assert_eq!(constant[&2], 100.0);
        assert_eq!(constant[&0], 0.0);
        assert!(!constant.contains_key(&5));
    }

    #[test]
    fn protocol_average_is_plain_mean() {
        let mk = |z: f64| ExperimentReport {
            seed: 0,
            split: ClassSplit::new(vec![0], vec![1]).unwrap(),
            zsl_accuracy: z,
            gzsl: GzslReport::new(z, z),
            gate_accuracy: 0.0,
            per_class_unseen: BTreeMap::new(),
        };
        let avg = average_reports(&[mk(80.0), mk(82.0), mk(84.0)]);
        assert_eq!(avg.zsl_accuracy, 82.0);
        assert_eq!(average_reports(&[mk(71.5)]).zsl_accuracy, 71.5);
    }
}
