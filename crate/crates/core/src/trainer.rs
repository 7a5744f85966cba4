//! The optimization loop: annealed coefficients, the first-epoch gate on the
//! cross-alignment weight, and alternation between encoder/decoder updates
//! and discriminator updates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::config::RunConfig;
use crate::data_io::{ClassSplit, Dataset, SamplePartition};
use crate::error::{ensure_arg, Error, Result};
use crate::losses::{
    permute_rows, total_correlation_loss, total_objective, BatchNoise, Coefficients, LossBreakdown,
    TcInputs,
};
use crate::model::{Layers, ModelDims, ModelState};
use crate::rng::{self, Stream};
use crate::tensor::{FeatureMatrix, Matrix};

pub use crate::optim::Adam;

/// Ramp applied within each epoch: zero for the first third of the samples,
/// then linear up to `target` at `k = n`.
pub fn anneal_coefficient(k: usize, n: usize, target: f64) -> Result<f64> {
    ensure_arg!(n > 0, "samples per epoch must be positive");
    ensure_arg!(k <= n, "sample index {k} exceeds epoch size {n}");
    ensure_arg!(target >= 0.0, "target coefficient must be non-negative");
    // k < n/3  <=>  3k < n, kept in integers so the boundary is exact.
    if 3 * k < n {
        return Ok(0.0);
    }
    Ok(1.5 * (k as f64 / n as f64 - 1.0 / 3.0) * target)
}

/// Cross-alignment weight: off for the first epoch, on afterwards.
pub fn lambda1_for_epoch(epoch_index: usize) -> f64 {
    if epoch_index == 0 {
        0.0
    } else {
        1.0
    }
}

/// Effective coefficients for the batch ending at sample `k` of `n`.
pub fn coefficients_at(config: &RunConfig, epoch: usize, k: usize, n: usize) -> Result<Coefficients> {
    Ok(Coefficients {
        beta_x: anneal_coefficient(k, n, config.beta_x)?,
        beta_y: anneal_coefficient(k, n, config.beta_y)?,
        lambda1: lambda1_for_epoch(epoch),
        lambda2: anneal_coefficient(k, n, config.effective_lambda2())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub disc_updated: bool,
}

/// One encoder/decoder update on `(fx, fy)`, followed by a discriminator
/// update when `step_index % n_d == 0` and the discriminator is active.
///
/// The discriminator update maximizes the total-correlation loss on the
/// latents sampled for the encoder update, re-paired with a fresh shuffle.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    state: &mut ModelState,
    fx: &FeatureMatrix,
    fy: &FeatureMatrix,
    coeffs: Coefficients,
    step_index: u64,
    n_d: usize,
    use_discriminator: bool,
    noise_rng: &mut impl Rng,
    shuffle_rng: &mut impl Rng,
) -> Result<StepOutcome> {
    ensure_arg!(fx.rows() >= 1, "empty batch");
    ensure_arg!(n_d >= 1, "n_d must be >= 1");
    let dims = state.dims();
    let noise = BatchNoise::sample(fx.rows(), dims, noise_rng);
    let perm = if use_discriminator {
        Some(rng::permutation(fx.rows(), shuffle_rng))
    } else {
        None
    };
    let tc = perm.as_deref().map(|perm| TcInputs {
        disc: &state.disc,
        perm,
    });
    let out = total_objective(&state.vae, fx, fy, &noise, tc, coeffs)?;
    if !out.breakdown.total.is_finite() {
        return Err(Error::Data(format!(
            "training diverged at step {step_index}: loss {}",
            out.breakdown.total
        )));
    }
    state.vae_opt.update(&mut state.vae, &out.grads)?;

    let mut disc_updated = false;
    if use_discriminator && step_index.is_multiple_of(n_d as u64) {
        let fresh = rng::permutation(fx.rows(), shuffle_rng);
        let z = &out.forward.z_x;
        let z_tilde = Matrix::hconcat(&permute_rows(&out.forward.z_v, &fresh)?, &out.forward.z_r)?;
        let tc = total_correlation_loss(&state.disc, z, &z_tilde)?;
        // Gradient ascent on l_t.
        let mut neg = tc.disc_grad;
        for s in neg.slices_mut() {
            for v in s.iter_mut() {
                *v = -*v;
            }
        }
        state.disc_opt.update(&mut state.disc, &neg)?;
        disc_updated = true;
    }
    Ok(StepOutcome {
        breakdown: out.breakdown,
        disc_updated,
    })
}

/// One row of the training metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    pub coeffs: Coefficients,
    pub disc_updated: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<StepRecord>,
}

pub const METRICS_HEADER: &str = "step,epoch,l_x,l_y,l_c,l_t,total,lambda1,lambda2,beta_x,beta_y";

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.records {
            let b = &r.breakdown;
            let c = &r.coeffs;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.step, r.epoch, b.l_x, b.l_y, b.l_c, b.l_t, b.total, c.lambda1, c.lambda2, c.beta_x, c.beta_y
            );
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn discriminator_updates(&self) -> usize {
        self.records.iter().filter(|r| r.disc_updated).count()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub log: MetricsLog,
}

pub fn model_dims(dataset: &Dataset, config: &RunConfig) -> ModelDims {
    ModelDims {
        d_x: dataset.manifest.d_x,
        d_y: dataset.manifest.d_y,
        dim_r: config.dim_r,
        dim_v: config.effective_dim_v(),
    }
}

/// Trains on the given sample indices (which must all belong to seen classes).
/// Each sample is paired with its class's text feature row.
pub fn train(dataset: &Dataset, samples: &[usize], config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    ensure_arg!(!samples.is_empty(), "no training samples (empty seen set)");
    let dims = model_dims(dataset, config);
    let mut state = ModelState::init(dims, config.learning_rate, config.seed);
    let mut order_rng = rng::stream(config.seed, Stream::DataOrder);
    let mut noise_rng = rng::stream(config.seed, Stream::Noise);
    let mut shuffle_rng = rng::stream(config.seed, Stream::PairShuffle);
    let use_disc = config.uses_discriminator();
    let n = samples.len();
    let mut log = MetricsLog::default();
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let mut order = samples.to_vec();
        rng::shuffle_in_place(&mut order, &mut order_rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let k = ((b + 1) * config.batch_size).min(n);
            let coeffs = coefficients_at(config, epoch, k, n)?;
            let fx = dataset.features.select_rows(batch);
            let fy = dataset.text_rows_for(batch);
            let out = train_step(
                &mut state,
                &fx,
                &fy,
                coeffs,
                step,
                config.n_d,
                use_disc,
                &mut noise_rng,
                &mut shuffle_rng,
            )?;
            log.records.push(StepRecord {
                step,
                epoch,
                breakdown: out.breakdown,
                coeffs,
                disc_updated: out.disc_updated,
            });
            step += 1;
        }
        if let Some(last) = log.records.last() {
            log::debug!(
                "epoch {epoch}: l_vae {:.4} l_c {:.4} l_t {:.4}",
                last.breakdown.l_vae,
                last.breakdown.l_c,
                last.breakdown.l_t
            );
        }
    }
    Ok(TrainOutcome { state, log })
}

/// Trains on the training portion of the seen classes of `split`.
pub fn train_on_split(dataset: &Dataset, split: &ClassSplit, config: &RunConfig) -> Result<TrainOutcome> {
    ensure_arg!(!split.seen_ids.is_empty(), "seen class set is empty");
    let partition = SamplePartition::new(dataset, split, config.holdout_fraction, config.seed)?;
    train(dataset, &partition.train, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_schedule_points() {
        let n = 300;
        assert_eq!(anneal_coefficient(0, n, 0.5).unwrap(), 0.0);
        assert_eq!(anneal_coefficient(99, n, 0.5).unwrap(), 0.0);
        assert_eq!(anneal_coefficient(100, n, 0.5).unwrap(), 0.0);
        assert_eq!(anneal_coefficient(n, n, 0.5).unwrap(), 0.5);
        assert!((anneal_coefficient(200, n, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(anneal_coefficient(0, 0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(anneal_coefficient(5, 4, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn anneal_is_monotone() {
        let n = 97;
        let mut prev = 0.0;
        for k in 0..=n {
            let v = anneal_coefficient(k, n, 0.011).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lambda1_gate() {
        assert_eq!(lambda1_for_epoch(0), 0.0);
        assert_eq!(lambda1_for_epoch(1), 1.0);
        assert_eq!(lambda1_for_epoch(9), 1.0);
    }
}
