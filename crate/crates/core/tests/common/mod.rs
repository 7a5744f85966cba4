//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use sadvae_core::losses::{
    cross_alignment_loss, permute_rows, total_correlation_loss, total_objective, vae_loss, BatchNoise,
    Coefficients, TcInputs,
};
use sadvae_core::data_io::{generate_synthetic, Dataset, SyntheticSpec};
use sadvae_core::model::{Discriminator, Layers, ModelDims, VaeParams};
use sadvae_core::rng::{self, Stream};
use sadvae_core::{Matrix, RunConfig};

pub const FD_STEP: f64 = 1e-5;

pub fn small_dims() -> ModelDims {
    ModelDims {
        d_x: 12,
        d_y: 8,
        dim_r: 6,
        dim_v: 3,
    }
}

/// Elementwise relative error between analytic and numeric gradients.
/// Pairs whose magnitudes are both below `floor` are compared on the floor.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `f` around `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub struct GradCase {
    pub params: VaeParams<f64>,
    pub disc: Discriminator<f64>,
    pub fx: Matrix<f64>,
    pub fy: Matrix<f64>,
    pub noise: BatchNoise<f64>,
    pub perm: Vec<usize>,
    pub coeffs: Coefficients,
}

impl GradCase {
    pub fn new(seed: u64) -> Self {
        let dims = small_dims();
        let mut init = rng::stream(seed, Stream::Init);
        let params = VaeParams::init(dims, &mut init);
        let disc = Discriminator::init(dims.latent_x(), dims.latent_x(), &mut init);
        let mut data = rng::stream(seed, Stream::Synthetic);
        let fx = rng::standard_normal(4, dims.d_x, &mut data);
        let fy = rng::standard_normal(4, dims.d_y, &mut data);
        let noise = BatchNoise::sample(4, dims, &mut rng::stream(seed, Stream::Noise));
        // A derangement-free but non-identity permutation is not required;
        // any permutation exercises the shuffled path.
        let perm = vec![2, 0, 3, 1];
        let coeffs = Coefficients {
            beta_x: 0.3,
            beta_y: 0.7,
            lambda1: 1.0,
            lambda2: 0.9,
        };
        Self {
            params,
            disc,
            fx,
            fy,
            noise,
            perm,
            coeffs,
        }
    }
}

/// Max elementwise relative error for each differentiable loss on one seed:
/// (vae, cross, total, tc w.r.t. discriminator, tc w.r.t. z, tc w.r.t. z̃).
pub fn gradient_errors(seed: u64, floor: f64) -> [f64; 6] {
    let c = GradCase::new(seed);
    let x0 = c.params.flatten();
    let max_err = |a: &[f64], n: &[f64]| {
        a.iter()
            .zip(n)
            .map(|(&a, &n)| rel_err(a, n, floor))
            .fold(0.0f64, f64::max)
    };
    let with = |flat: &[f64]| {
        let mut p = c.params.clone();
        p.assign_flat(flat);
        p
    };

    let analytic = vae_loss(&c.params, &c.fx, &c.fy, c.coeffs.beta_x, c.coeffs.beta_y, &c.noise)
        .unwrap()
        .grads
        .flatten();
    let numeric = central_diff(&x0, |x| {
        vae_loss(&with(x), &c.fx, &c.fy, c.coeffs.beta_x, c.coeffs.beta_y, &c.noise)
            .unwrap()
            .breakdown
            .l_vae
    });
    let e_vae = max_err(&analytic, &numeric);

    let analytic = cross_alignment_loss(&c.params, &c.fx, &c.fy, &c.noise)
        .unwrap()
        .grads
        .flatten();
    let numeric = central_diff(&x0, |x| {
        cross_alignment_loss(&with(x), &c.fx, &c.fy, &c.noise)
            .unwrap()
            .breakdown
            .l_c
    });
    let e_cross = max_err(&analytic, &numeric);

    let tc = || {
        Some(TcInputs {
            disc: &c.disc,
            perm: &c.perm,
        })
    };
    let analytic = total_objective(&c.params, &c.fx, &c.fy, &c.noise, tc(), c.coeffs)
        .unwrap()
        .grads
        .flatten();
    let numeric = central_diff(&x0, |x| {
        total_objective(&with(x), &c.fx, &c.fy, &c.noise, tc(), c.coeffs)
            .unwrap()
            .breakdown
            .total
    });
    let e_total = max_err(&analytic, &numeric);

    // Total-correlation loss in isolation, on latents from the forward pass.
    let fwd = sadvae_core::losses::vae_forward(&c.params, &c.fx, &c.fy, &c.noise).unwrap();
    let z = fwd.z_x.clone();
    let z_tilde = Matrix::hconcat(&permute_rows(&fwd.z_v, &c.perm).unwrap(), &fwd.z_r).unwrap();
    let out = total_correlation_loss(&c.disc, &z, &z_tilde).unwrap();
    let d0 = c.disc.flatten();
    let numeric = central_diff(&d0, |x| {
        let mut d = c.disc.clone();
        d.assign_flat(x);
        total_correlation_loss(&d, &z, &z_tilde).unwrap().l_t
    });
    let e_disc = max_err(&out.disc_grad.flatten(), &numeric);
    let numeric = central_diff(z.data(), |x| {
        let zz = Matrix::from_vec(z.rows(), z.cols(), x.to_vec()).unwrap();
        total_correlation_loss(&c.disc, &zz, &z_tilde).unwrap().l_t
    });
    let e_z = max_err(out.dz.data(), &numeric);
    let numeric = central_diff(z_tilde.data(), |x| {
        let zz = Matrix::from_vec(z.rows(), z.cols(), x.to_vec()).unwrap();
        total_correlation_loss(&c.disc, &z, &zz).unwrap().l_t
    });
    let e_zt = max_err(out.dz_tilde.data(), &numeric);

    [e_vae, e_cross, e_total, e_disc, e_z, e_zt]
}

/// A small synthetic corpus: 12 classes of 40 samples.
pub fn tiny_dataset(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        num_classes: 12,
        samples_per_class: 40,
        d_x: 24,
        d_y: 12,
        signal_dim: 8,
        nuisance_dim: 16,
        num_styles: 6,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().dataset
}

/// Desk settings cut down so a full pipeline run takes well under a second.
pub fn quick_config(seed: u64) -> RunConfig {
    RunConfig {
        epochs: 3,
        dim_r: 8,
        dim_v: 4,
        samples_per_class: 40,
        classifier_epochs: 10,
        seed,
        ..RunConfig::desk()
    }
}
