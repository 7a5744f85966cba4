//! Training objectives and their analytic gradients.
//!
//! All quantities are minimized. Reconstruction terms are squared L2 summed
//! over feature dims and averaged over the batch; KL terms are the closed-form
//! divergence of a diagonal Gaussian from the standard normal prior, also
//! batch-averaged.

use rand::Rng;

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::model::{
    decode, discriminator_backward, discriminator_forward, encode_skeleton, encode_text,
    reparameterize, Discriminator, GaussianLatent, Layers, ModelDims, VaeParams,
};
use crate::rng;
use crate::tensor::{Matrix, Real};

/// Clamp applied to discriminator outputs before taking logs.
pub const DISC_EPS: f64 = 1e-7;

/// Per-batch loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_x: f64,
    pub l_y: f64,
    pub l_vae: f64,
    pub l_c: f64,
    pub l_t: f64,
    pub total: f64,
}

/// Effective (annealed) loss coefficients for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Coefficients {
    pub beta_x: f64,
    pub beta_y: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// `½ Σ (μ² + exp(lv) − 1 − lv)` for a single diagonal Gaussian.
pub fn kl_to_standard_normal<T: Real>(mean: &[T], log_var: &[T]) -> Result<T> {
    ensure_shape!(
        mean.len() == log_var.len(),
        "mean width {} != log-variance width {}",
        mean.len(),
        log_var.len()
    );
    if mean.iter().chain(log_var).any(|v| !v.is_finite()) {
        return Err(Error::Data("latent contains non-finite values".into()));
    }
    let half = T::lit(0.5);
    Ok(mean
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum())
}

/// Batch mean of the per-sample KL divergence.
pub fn mean_kl<T: Real>(latent: &GaussianLatent<T>) -> T {
    let n = latent.batch();
    if n == 0 {
        return T::zero();
    }
    let half = T::lit(0.5);
    let total: T = latent
        .mean
        .data()
        .iter()
        .zip(latent.log_var.data())
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum();
    total / T::lit(n as f64)
}

/// Squared error summed over dims, averaged over rows.
pub fn reconstruction_error<T: Real>(reconstruction: &Matrix<T>, target: &Matrix<T>) -> Result<T> {
    ensure_shape!(
        reconstruction.rows() == target.rows() && reconstruction.cols() == target.cols(),
        "reconstruction {}x{} vs target {}x{}",
        reconstruction.rows(),
        reconstruction.cols(),
        target.rows(),
        target.cols()
    );
    if target.rows() == 0 {
        return Ok(T::zero());
    }
    let sse: T = reconstruction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sse / T::lit(target.rows() as f64))
}

fn recon_grad<T: Real>(reconstruction: &Matrix<T>, target: &Matrix<T>, weight: T) -> Matrix<T> {
    let scale = weight * T::lit(2.0 / target.rows() as f64);
    let mut g = reconstruction.clone();
    for (gi, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *gi = scale * (*gi - t);
    }
    g
}

/// Standard-normal draws for the three latents of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise<T> {
    pub r: Matrix<T>,
    pub v: Matrix<T>,
    pub y: Matrix<T>,
}

impl<T: Real> BatchNoise<T> {
    pub fn sample(batch: usize, dims: ModelDims, rng: &mut impl Rng) -> Self {
        Self {
            r: rng::standard_normal(batch, dims.dim_r, rng),
            v: rng::standard_normal(batch, dims.dim_v, rng),
            y: rng::standard_normal(batch, dims.dim_r, rng),
        }
    }

    pub fn zeros(batch: usize, dims: ModelDims) -> Self {
        Self {
            r: Matrix::zeros(batch, dims.dim_r),
            v: Matrix::zeros(batch, dims.dim_v),
            y: Matrix::zeros(batch, dims.dim_r),
        }
    }
}

/// Cached forward pass through both VAEs, including the cross reconstructions.
#[derive(Clone, Debug)]
pub struct VaeForward<T> {
    pub post_r: GaussianLatent<T>,
    pub post_v: GaussianLatent<T>,
    pub post_y: GaussianLatent<T>,
    pub z_r: Matrix<T>,
    pub z_v: Matrix<T>,
    pub z_y: Matrix<T>,
    /// `z_v ⊕ z_r`
    pub z_x: Matrix<T>,
    /// `z_v ⊕ z_y`
    pub z_vy: Matrix<T>,
    /// `D_x(z_v ⊕ z_r)`
    pub recon_x: Matrix<T>,
    /// `D_y(z_y)`
    pub recon_y: Matrix<T>,
    /// `D_y(z_r)`
    pub cross_y: Matrix<T>,
    /// `D_x(z_v ⊕ z_y)`
    pub cross_x: Matrix<T>,
}

pub fn vae_forward<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
    fy: &Matrix<T>,
    noise: &BatchNoise<T>,
) -> Result<VaeForward<T>> {
    ensure_shape!(
        fx.rows() == fy.rows(),
        "{} skeleton rows but {} text rows",
        fx.rows(),
        fy.rows()
    );
    let (post_r, post_v) = encode_skeleton(params, fx)?;
    let post_y = encode_text(params, fy)?;
    let z_r = reparameterize(&post_r, &noise.r)?;
    let z_v = reparameterize(&post_v, &noise.v)?;
    let z_y = reparameterize(&post_y, &noise.y)?;
    let z_x = Matrix::hconcat(&z_v, &z_r)?;
    let z_vy = Matrix::hconcat(&z_v, &z_y)?;
    let recon_x = decode(&params.dec_x, &z_x)?;
    let recon_y = decode(&params.dec_y, &z_y)?;
    let cross_y = decode(&params.dec_y, &z_r)?;
    let cross_x = decode(&params.dec_x, &z_vy)?;
    Ok(VaeForward {
        post_r,
        post_v,
        post_y,
        z_r,
        z_v,
        z_y,
        z_x,
        z_vy,
        recon_x,
        recon_y,
        cross_y,
        cross_x,
    })
}

/// Reorders rows so that `out[i] = v[perm[i]]`.
pub fn permute_rows<T: Real>(v: &Matrix<T>, perm: &[usize]) -> Result<Matrix<T>> {
    ensure_shape!(
        perm.len() == v.rows(),
        "permutation of length {} for {} rows",
        perm.len(),
        v.rows()
    );
    Ok(v.select_rows(perm))
}

/// Shuffles the rows of `v` with a Fisher–Yates permutation drawn from `rng`.
/// Returns the shuffled rows and the permutation used.
pub fn shuffle_pairs<T: Real>(v: &Matrix<T>, rng: &mut impl Rng) -> Result<(Matrix<T>, Vec<usize>)> {
    ensure_arg!(v.rows() >= 1, "cannot shuffle an empty batch");
    let perm = rng::permutation(v.rows(), rng);
    Ok((v.select_rows(&perm), perm))
}

/// Value and gradients of `mean log D(z) + mean log(1 − D(z̃))`.
#[derive(Clone, Debug)]
pub struct TcOutput<T> {
    pub l_t: T,
    /// Gradient of `l_t` with respect to the discriminator parameters.
    pub disc_grad: Discriminator<T>,
    /// Gradient of `l_t` with respect to `z`.
    pub dz: Matrix<T>,
    /// Gradient of `l_t` with respect to `z̃`.
    pub dz_tilde: Matrix<T>,
}

pub fn total_correlation_loss<T: Real>(
    disc: &Discriminator<T>,
    z: &Matrix<T>,
    z_tilde: &Matrix<T>,
) -> Result<TcOutput<T>> {
    ensure_shape!(
        z.rows() == z_tilde.rows() && z.cols() == z_tilde.cols(),
        "matched and shuffled batches differ in shape"
    );
    ensure_arg!(z.rows() >= 1, "empty batch");
    let n = T::lit(z.rows() as f64);
    let eps = T::lit(DISC_EPS);
    let hi = T::one() - eps;
    let mut disc_grad = disc.zeros_like();

    let real = discriminator_forward(disc, z)?;
    let mut l_t = T::zero();
    let dreal: Vec<T> = real
        .prob
        .iter()
        .map(|&p| {
            l_t += p.max(eps).min(hi).ln() / n;
            if p < eps || p > hi {
                T::zero()
            } else {
                (T::one() - p) / n
            }
        })
        .collect();
    let dz = discriminator_backward(disc, z, &real, &dreal, Some(&mut disc_grad), true)
        .expect("requested");

    let fake = discriminator_forward(disc, z_tilde)?;
    let dfake: Vec<T> = fake
        .prob
        .iter()
        .map(|&p| {
            l_t += (T::one() - p.max(eps).min(hi)).ln() / n;
            if p < eps || p > hi {
                T::zero()
            } else {
                -p / n
            }
        })
        .collect();
    let dz_tilde = discriminator_backward(disc, z_tilde, &fake, &dfake, Some(&mut disc_grad), true)
        .expect("requested");

    Ok(TcOutput {
        l_t,
        disc_grad,
        dz,
        dz_tilde,
    })
}

/// `l_vae + λ1 l_c + λ2 l_t`.
pub fn total_loss(l_vae: f64, l_c: f64, l_t: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    ensure_arg!(
        lambda1 >= 0.0 && lambda2 >= 0.0,
        "loss coefficients must be non-negative (got {lambda1}, {lambda2})"
    );
    Ok(l_vae + lambda1 * l_c + lambda2 * l_t)
}

/// Weights of each term in the differentiated objective.
#[derive(Clone, Copy, Debug)]
struct TermWeights {
    self_x: f64,
    kl_x: f64,
    self_y: f64,
    kl_y: f64,
    cross: f64,
    tc: f64,
}

/// Total-correlation inputs for the encoder objective.
#[derive(Clone, Copy, Debug)]
pub struct TcInputs<'a, T> {
    pub disc: &'a Discriminator<T>,
    /// Row permutation applied to `z_v` to build `z̃`.
    pub perm: &'a [usize],
}

/// Result of evaluating and differentiating an objective on one batch.
#[derive(Clone, Debug)]
pub struct ObjectiveOutput<T> {
    pub breakdown: LossBreakdown,
    pub grads: VaeParams<T>,
    pub forward: VaeForward<T>,
}

/// Accumulates `dL/dz` into a posterior's head gradient through the
/// reparameterization and adds the weighted KL gradient.
fn latent_head_grad<T: Real>(
    post: &GaussianLatent<T>,
    noise: &Matrix<T>,
    dz: &Matrix<T>,
    kl_weight: T,
) -> Matrix<T> {
    let (n, w) = (post.batch(), post.width());
    let inv_n = T::lit(1.0 / n.max(1) as f64);
    let half = T::lit(0.5);
    let mut out = Matrix::zeros(n, 2 * w);
    for b in 0..n {
        let mu = post.mean.row(b);
        let lv = post.log_var.row(b);
        let e = noise.row(b);
        let d = dz.row(b);
        let row = out.row_mut(b);
        for i in 0..w {
            let sigma = (half * lv[i]).exp();
            row[i] = d[i] + kl_weight * mu[i] * inv_n;
            row[w + i] = d[i] * e[i] * half * sigma + kl_weight * half * (lv[i].exp() - T::one()) * inv_n;
        }
    }
    out
}

fn add_into<T: Real>(acc: &mut Matrix<T>, other: &Matrix<T>, scale: T) {
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += scale * b;
    }
}

fn evaluate<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
    fy: &Matrix<T>,
    noise: &BatchNoise<T>,
    tc: Option<TcInputs<'_, T>>,
    w: TermWeights,
) -> Result<ObjectiveOutput<T>> {
    ensure_arg!(fx.rows() >= 1, "empty batch");
    let dims = params.dims();
    let fwd = vae_forward(params, fx, fy, noise)?;

    let rec_x = reconstruction_error(&fwd.recon_x, fx)?;
    let rec_y = reconstruction_error(&fwd.recon_y, fy)?;
    let cross_y = reconstruction_error(&fwd.cross_y, fy)?;
    let cross_x = reconstruction_error(&fwd.cross_x, fx)?;
    let kl_r = mean_kl(&fwd.post_r);
    let kl_v = mean_kl(&fwd.post_v);
    let kl_y = mean_kl(&fwd.post_y);

    let l_x = rec_x.to_f64_lossy() + w.kl_x * (kl_r + kl_v).to_f64_lossy();
    let l_y = rec_y.to_f64_lossy() + w.kl_y * kl_y.to_f64_lossy();
    let l_c = (cross_y + cross_x).to_f64_lossy();

    let mut grads = params.zeros_like();

    // Decoder paths.
    let d_recon_x = recon_grad(&fwd.recon_x, fx, T::lit(w.self_x));
    let d_recon_y = recon_grad(&fwd.recon_y, fy, T::lit(w.self_y));
    let d_cross_y = recon_grad(&fwd.cross_y, fy, T::lit(w.cross));
    let d_cross_x = recon_grad(&fwd.cross_x, fx, T::lit(w.cross));
    let dz_x = params
        .dec_x
        .backward(&fwd.z_x, &d_recon_x, Some(&mut grads.dec_x), true)
        .expect("requested");
    let dz_vy = params
        .dec_x
        .backward(&fwd.z_vy, &d_cross_x, Some(&mut grads.dec_x), true)
        .expect("requested");
    let mut dz_y = params
        .dec_y
        .backward(&fwd.z_y, &d_recon_y, Some(&mut grads.dec_y), true)
        .expect("requested");
    let dz_r_cross = params
        .dec_y
        .backward(&fwd.z_r, &d_cross_y, Some(&mut grads.dec_y), true)
        .expect("requested");

    let (mut dz_v, mut dz_r) = dz_x.split_cols(dims.dim_v);
    add_into(&mut dz_r, &dz_r_cross, T::one());
    let (dz_v_cross, dz_y_cross) = dz_vy.split_cols(dims.dim_v);
    add_into(&mut dz_v, &dz_v_cross, T::one());
    add_into(&mut dz_y, &dz_y_cross, T::one());

    // Total-correlation path: z = z_v ⊕ z_r, z̃ = z_v[perm] ⊕ z_r.
    let mut l_t = 0.0;
    if let Some(tc) = tc {
        let z_tilde = Matrix::hconcat(&permute_rows(&fwd.z_v, tc.perm)?, &fwd.z_r)?;
        let out = total_correlation_loss(tc.disc, &fwd.z_x, &z_tilde)?;
        l_t = out.l_t.to_f64_lossy();
        if w.tc != 0.0 {
            let scale = T::lit(w.tc);
            let (tv, tr) = out.dz.split_cols(dims.dim_v);
            add_into(&mut dz_v, &tv, scale);
            add_into(&mut dz_r, &tr, scale);
            let (sv, sr) = out.dz_tilde.split_cols(dims.dim_v);
            add_into(&mut dz_r, &sr, scale);
            for (i, &src) in tc.perm.iter().enumerate() {
                let row = sv.row(i).to_vec();
                for (a, b) in dz_v.row_mut(src).iter_mut().zip(row) {
                    *a += scale * b;
                }
            }
        }
    }

    // Encoder heads.
    let d_head_r = latent_head_grad(&fwd.post_r, &noise.r, &dz_r, T::lit(w.kl_x));
    let d_head_v = latent_head_grad(&fwd.post_v, &noise.v, &dz_v, T::lit(w.kl_x));
    let d_head_y = latent_head_grad(&fwd.post_y, &noise.y, &dz_y, T::lit(w.kl_y));
    params.enc_r.backward(fx, &d_head_r, Some(&mut grads.enc_r), false);
    params.enc_v.backward(fx, &d_head_v, Some(&mut grads.enc_v), false);
    params.enc_y.backward(fy, &d_head_y, Some(&mut grads.enc_y), false);

    let l_vae = l_x + l_y;
    let total = w.self_x * rec_x.to_f64_lossy()
        + w.kl_x * (kl_r + kl_v).to_f64_lossy()
        + w.self_y * rec_y.to_f64_lossy()
        + w.kl_y * kl_y.to_f64_lossy()
        + w.cross * l_c
        + w.tc * l_t;
    Ok(ObjectiveOutput {
        breakdown: LossBreakdown {
            l_x,
            l_y,
            l_vae,
            l_c,
            l_t,
            total,
        },
        grads,
        forward: fwd,
    })
}

/// `l_x + l_y` and its gradient.
pub fn vae_loss<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
    fy: &Matrix<T>,
    beta_x: f64,
    beta_y: f64,
    noise: &BatchNoise<T>,
) -> Result<ObjectiveOutput<T>> {
    ensure_arg!(beta_x >= 0.0 && beta_y >= 0.0, "KL weights must be non-negative");
    evaluate(
        params,
        fx,
        fy,
        noise,
        None,
        TermWeights {
            self_x: 1.0,
            kl_x: beta_x,
            self_y: 1.0,
            kl_y: beta_y,
            cross: 0.0,
            tc: 0.0,
        },
    )
}

/// `‖D_y(z_r) − f_y‖² + ‖D_x(z_v ⊕ z_y) − f_x‖²` and its gradient.
pub fn cross_alignment_loss<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
    fy: &Matrix<T>,
    noise: &BatchNoise<T>,
) -> Result<ObjectiveOutput<T>> {
    let mut out = evaluate(
        params,
        fx,
        fy,
        noise,
        None,
        TermWeights {
            self_x: 0.0,
            kl_x: 0.0,
            self_y: 0.0,
            kl_y: 0.0,
            cross: 1.0,
            tc: 0.0,
        },
    )?;
    out.breakdown.total = out.breakdown.l_c;
    Ok(out)
}

/// The encoder/decoder objective `l_vae + λ1 l_c + λ2 l_t` under the given
/// effective coefficients. The discriminator is held fixed; `l_t` gradients
/// flow into both the matched and the shuffled latents.
pub fn total_objective<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
    fy: &Matrix<T>,
    noise: &BatchNoise<T>,
    tc: Option<TcInputs<'_, T>>,
    coeffs: Coefficients,
) -> Result<ObjectiveOutput<T>> {
    ensure_arg!(
        coeffs.beta_x >= 0.0 && coeffs.beta_y >= 0.0 && coeffs.lambda1 >= 0.0 && coeffs.lambda2 >= 0.0,
        "loss coefficients must be non-negative"
    );
    let tc_weight = if tc.is_some() { coeffs.lambda2 } else { 0.0 };
    let mut out = evaluate(
        params,
        fx,
        fy,
        noise,
        tc,
        TermWeights {
            self_x: 1.0,
            kl_x: coeffs.beta_x,
            self_y: 1.0,
            kl_y: coeffs.beta_y,
            cross: coeffs.lambda1,
            tc: tc_weight,
        },
    )?;
    let b = &mut out.breakdown;
    b.total = total_loss(b.l_vae, b.l_c, b.l_t, coeffs.lambda1, tc_weight)?;
    Ok(out)
}
