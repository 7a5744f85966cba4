//! Two-phase random hyperparameter search scored by validation GZSL
//! harmonic mean.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::proxy_split;
use crate::config::RunConfig;
use crate::data_io::{ClassSplit, Dataset};
use crate::error::{ensure_arg, Result};
use crate::evaluation::run_experiment;
use crate::parallel;
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Open interval for both KL weights.
    pub beta_range: (f64, f64),
    /// Learning rate is `10^e` with `e` uniform in this range.
    pub lr_exponent_range: (f64, f64),
    pub batch_sizes: Vec<usize>,
    pub n_d_values: Vec<usize>,
    pub dim_r_values: Vec<usize>,
    pub dim_v_values: Vec<usize>,
    /// Phase-1 and phase-2 trial counts.
    pub trials: (usize, usize),
    pub initial_lr_exponent: f64,
    pub initial_batch_size: usize,
    pub initial_n_d: usize,
    pub initial_dim_r: usize,
    pub initial_dim_v: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            beta_range: (0.0, 1.0),
            lr_exponent_range: (-6.0, -3.0),
            batch_sizes: vec![32, 64, 128, 256],
            n_d_values: (1..=16).collect(),
            dim_r_values: (128..=256).step_by(16).collect(),
            dim_v_values: (8..=32).step_by(4).collect(),
            trials: (5, 100),
            initial_lr_exponent: -5.0,
            initial_batch_size: 64,
            initial_n_d: 10,
            initial_dim_r: 192,
            initial_dim_v: 8,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (b0, b1) = self.beta_range;
        ensure_arg!(0.0 <= b0 && b0 < b1, "beta range must be a nonempty interval in [0, inf)");
        let (e0, e1) = self.lr_exponent_range;
        ensure_arg!(e0 < e1, "learning-rate exponent range is empty");
        ensure_arg!(
            !self.batch_sizes.is_empty()
                && !self.n_d_values.is_empty()
                && !self.dim_r_values.is_empty()
                && !self.dim_v_values.is_empty(),
            "discrete search sets must be nonempty"
        );
        ensure_arg!(self.trials.0 >= 1 && self.trials.1 >= 1, "trial counts must be >= 1");
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Betas,
    Structure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub beta_x: f64,
    pub beta_y: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_d: usize,
    pub dim_r: usize,
    pub dim_v: usize,
    pub harmonic_mean: f64,
}

impl Trial {
    fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            beta_x: self.beta_x,
            beta_y: self.beta_y,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            n_d: self.n_d,
            dim_r: self.dim_r,
            dim_v: self.dim_v,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: RunConfig,
    pub best_harmonic_mean: f64,
    /// Index into `trials` of the phase-1 winner.
    pub phase1_winner: usize,
    pub trials: Vec<Trial>,
}

/// First index of the largest score; NaN never wins.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

fn evaluate_all<F>(trials: &mut [Trial], base: &RunConfig, evaluate: &F) -> Result<()>
where
    F: Fn(&RunConfig) -> Result<f64> + Sync,
{
    let scores = parallel::map(trials, parallel::thread_limit(), |_, t| evaluate(&t.apply(base)));
    for (t, s) in trials.iter_mut().zip(scores) {
        t.harmonic_mean = s?;
    }
    Ok(())
}

/// Phase 1 samples the KL weights with the structural settings at their
/// initial values; phase 2 keeps the best KL weights and samples the rest.
/// The winner is the best phase-2 trial.
pub fn hyperparameter_search<F>(
    base: &RunConfig,
    space: &SearchSpace,
    seed: u64,
    evaluate: F,
) -> Result<SearchOutcome>
where
    F: Fn(&RunConfig) -> Result<f64> + Sync,
{
    space.validate()?;
    let mut rng = rng::stream(seed, Stream::Search);
    let (p1, p2) = space.trials;
    let (b0, b1) = space.beta_range;
    let mut phase1: Vec<Trial> = (0..p1)
        .map(|i| Trial {
            index: i,
            phase: Phase::Betas,
            beta_x: rng.random_range(b0..b1),
            beta_y: rng.random_range(b0..b1),
            learning_rate: 10f64.powf(space.initial_lr_exponent),
            batch_size: space.initial_batch_size,
            n_d: space.initial_n_d,
            dim_r: space.initial_dim_r,
            dim_v: space.initial_dim_v,
            harmonic_mean: f64::NAN,
        })
        .collect();
    evaluate_all(&mut phase1, base, &evaluate)?;
    let scores: Vec<f64> = phase1.iter().map(|t| t.harmonic_mean).collect();
    let w1 = argmax(&scores);
    let (bx, by) = (phase1[w1].beta_x, phase1[w1].beta_y);

    let (e0, e1) = space.lr_exponent_range;
    let pick = |v: &[usize], rng: &mut rng::RunRng| *v.choose(rng).expect("nonempty");
    let mut phase2: Vec<Trial> = (0..p2)
        .map(|i| Trial {
            index: p1 + i,
            phase: Phase::Structure,
            beta_x: bx,
            beta_y: by,
            learning_rate: 10f64.powf(rng.random_range(e0..e1)),
            batch_size: pick(&space.batch_sizes, &mut rng),
            n_d: pick(&space.n_d_values, &mut rng),
            dim_r: pick(&space.dim_r_values, &mut rng),
            dim_v: pick(&space.dim_v_values, &mut rng),
            harmonic_mean: f64::NAN,
        })
        .collect();
    evaluate_all(&mut phase2, base, &evaluate)?;
    let scores: Vec<f64> = phase2.iter().map(|t| t.harmonic_mean).collect();
    let w2 = argmax(&scores);
    let best = phase2[w2].apply(base);
    let best_harmonic_mean = phase2[w2].harmonic_mean;
    let mut trials = phase1;
    trials.extend(phase2);
    Ok(SearchOutcome {
        best,
        best_harmonic_mean,
        phase1_winner: w1,
        trials,
    })
}

/// Validation harmonic mean on a proxy split carved from the seen classes
/// of `split`. The unseen classes of `split` are never read.
pub fn validation_harmonic_mean(dataset: &Dataset, split: &ClassSplit, config: &RunConfig) -> Result<f64> {
    let mut rng = rng::stream(config.seed, Stream::ProxySplit);
    let proxy = proxy_split(split, &mut rng)?;
    let validation = ClassSplit::new(proxy.seen_ids, proxy.unseen_ids)?;
    Ok(run_experiment(dataset, &validation, config)?.report.gzsl.harmonic_mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(trials: (usize, usize)) -> SearchSpace {
        SearchSpace {
            trials,
            ..SearchSpace::default()
        }
    }

    #[test]
    fn single_trials_return_the_sampled_config() {
        let out = hyperparameter_search(&RunConfig::default(), &space((1, 1)), 3, |_| Ok(1.0)).unwrap();
        assert_eq!(out.trials.len(), 2);
        let t = &out.trials[1];
        assert_eq!(out.best, t.apply(&RunConfig::default()));
        assert_eq!(out.trials[0].learning_rate, 1e-5);
        assert_eq!(
            (out.trials[0].batch_size, out.trials[0].n_d, out.trials[0].dim_r, out.trials[0].dim_v),
            (64, 10, 192, 8)
        );
    }

    #[test]
    fn mock_objective_picks_closest_beta() {
        let out = hyperparameter_search(&RunConfig::default(), &space((5, 3)), 11, |c| {
            Ok(-(c.beta_x - 0.3).powi(2))
        })
        .unwrap();
        let phase1 = &out.trials[..5];
        let closest = (0..5)
            .min_by(|&a, &b| {
                (phase1[a].beta_x - 0.3).abs().total_cmp(&(phase1[b].beta_x - 0.3).abs())
            })
            .unwrap();
        assert_eq!(out.phase1_winner, closest);
        assert!(out.trials[5..].iter().all(|t| t.beta_x == phase1[closest].beta_x));
    }

    #[test]
    fn samples_stay_in_the_space() {
        let s = space((4, 40));
        let out = hyperparameter_search(&RunConfig::default(), &s, 5, |c| Ok(c.dim_r as f64)).unwrap();
        for t in &out.trials {
            assert!(t.beta_x > 0.0 && t.beta_x < 1.0);
            assert!(t.learning_rate >= 1e-6 && t.learning_rate < 1e-3);
            assert!(s.batch_sizes.contains(&t.batch_size));
            assert!(s.n_d_values.contains(&t.n_d));
            assert!(s.dim_r_values.contains(&t.dim_r));
            assert!(s.dim_v_values.contains(&t.dim_v));
        }
        assert_eq!(out.best.dim_r, out.trials[4..].iter().map(|t| t.dim_r).max().unwrap());
    }

    #[test]
    fn same_seed_same_sequence() {
        let run = |seed| {
            hyperparameter_search(&RunConfig::default(), &space((3, 4)), seed, |c| Ok(c.beta_y)).unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9).trials, run(10).trials);
    }
}
