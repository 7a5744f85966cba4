//! Run configuration, stored as a flat key-value TOML document.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};

/// Which parts of the disentangling machinery are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single skeleton head, no discriminator.
    Naive,
    /// Two skeleton heads, no discriminator.
    Fd,
    /// Two skeleton heads plus the adversarial total-correlation penalty.
    FdTc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Naive, Variant::Fd, Variant::FdTc];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Fd => "fd",
            Variant::FdTc => "fd_tc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Variant::Naive),
            "fd" => Ok(Variant::Fd),
            "fd_tc" => Ok(Variant::FdTc),
            other => Err(Error::Argument(format!(
                "unknown variant {other:?} (expected naive, fd or fd_tc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub beta_x: f64,
    pub beta_y: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub n_d: usize,
    pub dim_r: usize,
    pub dim_v: usize,
    pub temperature: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Fraction of each seen class's samples held out for seen-class testing.
    pub holdout_fraction: f64,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    pub classifier_batch_size: usize,
    /// Inverse L2 strength of the domain gate's logistic regression.
    pub gate_c: f64,
}

impl Default for RunConfig {
    /// NTU-60 predefined-split settings.
    fn default() -> Self {
        Self {
            beta_x: 0.023,
            beta_y: 0.011,
            lambda2: 0.011,
            learning_rate: 3.39e-5,
            batch_size: 32,
            epochs: 10,
            n_d: 5,
            dim_r: 160,
            dim_v: 8,
            temperature: 2.0,
            samples_per_class: 200,
            seed: 0,
            variant: Variant::FdTc,
            holdout_fraction: 0.2,
            classifier_epochs: 50,
            classifier_learning_rate: 1e-3,
            classifier_batch_size: 64,
            gate_c: 1.0,
        }
    }
}

impl RunConfig {
    /// Settings sized for the synthetic desk-scale datasets.
    ///
    /// Reconstruction errors here are sums over all feature dimensions, so
    /// the total-correlation weight is scaled up to stay commensurate.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            lambda2: 10.0,
            dim_r: 16,
            dim_v: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_x", self.beta_x),
            ("beta_y", self.beta_y),
            ("lambda2", self.lambda2),
        ] {
            ensure_arg!(v.is_finite() && v >= 0.0, "{name} must be >= 0, got {v}");
        }
        ensure_arg!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be > 0"
        );
        ensure_arg!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure_arg!(self.n_d >= 1, "n_d must be >= 1");
        ensure_arg!(self.dim_r >= 1, "dim_r must be >= 1");
        ensure_arg!(
            self.temperature.is_finite() && self.temperature > 0.0,
            "temperature must be > 0"
        );
        ensure_arg!(self.samples_per_class >= 1, "samples_per_class must be >= 1");
        ensure_arg!(
            (0.0..1.0).contains(&self.holdout_fraction),
            "holdout_fraction must be in [0, 1)"
        );
        ensure_arg!(
            self.classifier_batch_size >= 1
                && self.classifier_learning_rate.is_finite()
                && self.classifier_learning_rate > 0.0,
            "classifier settings must be positive"
        );
        ensure_arg!(self.gate_c.is_finite() && self.gate_c > 0.0, "gate_c must be > 0");
        Ok(())
    }

    /// Width of the semantic-irrelevant latent actually built for this variant.
    pub fn effective_dim_v(&self) -> usize {
        match self.variant {
            Variant::Naive => 0,
            Variant::Fd | Variant::FdTc => self.dim_v,
        }
    }

    /// Target weight of the total-correlation term for this variant.
    pub fn effective_lambda2(&self) -> f64 {
        match self.variant {
            Variant::FdTc => self.lambda2,
            Variant::Naive | Variant::Fd => 0.0,
        }
    }

    pub fn uses_discriminator(&self) -> bool {
        self.variant == Variant::FdTc
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}
