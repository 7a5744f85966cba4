//! Parameter containers and forward/backward passes for the skeleton
//! encoder (two heads), text encoder, both decoders and the
//! total-correlation discriminator.
//!
//! Every layer is a single affine map. Encoder heads emit `[mean ; log_variance]`
//! and the discriminator is `sigmoid(W2 relu(W1 z + b1) + b2)`.

use std::path::Path;

use rand::Rng;

use crate::container::{count_to_f32, f32_to_count, TensorBundle};
use crate::error::{ensure_shape, Error, Result};
use crate::optim::Adam;
use crate::rng::{self, Stream};
use crate::tensor::{axpy, dot, Matrix, Real};

pub const MODEL_MAGIC: [u8; 4] = *b"SADM";

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(input, output);
        if input > 0 {
            let bound = 1.0 / (input as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        ensure_shape!(
            x.cols() == self.input_dim(),
            "layer expects width {}, got {}",
            self.input_dim(),
            x.cols()
        );
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for b in 0..x.rows() {
            let xr = x.row(b);
            let orow = out.row_mut(b);
            for (o, slot) in orow.iter_mut().enumerate() {
                *slot = self.bias[o] + dot(self.weight.row(o), xr);
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`
    /// when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        grad: Option<&mut Affine<T>>,
        want_input_grad: bool,
    ) -> Option<Matrix<T>> {
        debug_assert_eq!(dy.cols(), self.output_dim());
        debug_assert_eq!(x.rows(), dy.rows());
        if let Some(g) = grad {
            for b in 0..x.rows() {
                let xr = x.row(b);
                let dyr = dy.row(b);
                for (o, &d) in dyr.iter().enumerate() {
                    if d != T::zero() {
                        axpy(d, xr, g.weight.row_mut(o));
                    }
                    g.bias[o] += d;
                }
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut dx = Matrix::zeros(x.rows(), self.input_dim());
        for b in 0..x.rows() {
            let dyr = dy.row(b);
            let dxr = dx.row_mut(b);
            for (o, &d) in dyr.iter().enumerate() {
                if d != T::zero() {
                    axpy(d, self.weight.row(o), dxr);
                }
            }
        }
        Some(dx)
    }

    pub fn cast<U: Real>(&self) -> Affine<U> {
        Affine {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    pub(crate) fn store(&self, bundle: &mut TensorBundle, prefix: &str) {
        bundle.push_matrix(format!("{prefix}.weight"), &self.weight);
        bundle.push_vector(format!("{prefix}.bias"), &self.bias);
    }
}

impl Affine<f32> {
    pub(crate) fn load(bundle: &TensorBundle, prefix: &str) -> Result<Self> {
        let weight = bundle.matrix(&format!("{prefix}.weight"))?;
        let bias = bundle.vector(&format!("{prefix}.bias"))?;
        if bias.len() != weight.rows() {
            return Err(Error::Format(format!("{prefix}: bias/weight size mismatch")));
        }
        Ok(Self { weight, bias })
    }
}

/// Any collection of affine layers with a fixed order.
pub trait Layers<T: Real>: Clone {
    fn layers(&self) -> Vec<(&'static str, &Affine<T>)>;
    fn layers_mut(&mut self) -> Vec<&mut Affine<T>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in z.layers_mut() {
            l.weight.data_mut().fill(T::zero());
            l.bias.fill(T::zero());
        }
        z
    }

    /// Parameter slices in checkpoint order: for each layer, weight then bias.
    fn slices(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|(_, l)| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| {
                let Affine { weight, bias } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn flatten(&self) -> Vec<T> {
        self.slices().concat()
    }

    fn assign_flat(&mut self, flat: &[T]) {
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        assert_eq!(off, flat.len());
    }
}

impl<T: Real> Layers<T> for Affine<T> {
    fn layers(&self) -> Vec<(&'static str, &Affine<T>)> {
        vec![("layer", self)]
    }

    fn layers_mut(&mut self) -> Vec<&mut Affine<T>> {
        vec![self]
    }
}

/// Diagonal Gaussian posteriors for a batch, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLatent<T> {
    pub mean: Matrix<T>,
    pub log_var: Matrix<T>,
}

impl<T: Real> GaussianLatent<T> {
    /// Splits a head output `[mean ; log_var]` down the middle.
    fn from_head(out: Matrix<T>) -> Self {
        let (mean, log_var) = out.split_cols(out.cols() / 2);
        Self { mean, log_var }
    }

    pub fn width(&self) -> usize {
        self.mean.cols()
    }

    pub fn batch(&self) -> usize {
        self.mean.rows()
    }
}

/// `sample = mean + exp(log_var / 2) * noise`, elementwise.
pub fn reparameterize<T: Real>(latent: &GaussianLatent<T>, noise: &Matrix<T>) -> Result<Matrix<T>> {
    ensure_shape!(
        noise.rows() == latent.batch() && noise.cols() == latent.width(),
        "noise {}x{} does not match latent {}x{}",
        noise.rows(),
        noise.cols(),
        latent.batch(),
        latent.width()
    );
    let half = T::lit(0.5);
    let mut z = latent.mean.clone();
    for ((zi, &lv), &e) in z
        .data_mut()
        .iter_mut()
        .zip(latent.log_var.data())
        .zip(noise.data())
    {
        *zi += (half * lv).exp() * e;
    }
    Ok(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d_x: usize,
    pub d_y: usize,
    pub dim_r: usize,
    pub dim_v: usize,
}

impl ModelDims {
    pub fn latent_x(&self) -> usize {
        self.dim_v + self.dim_r
    }

    /// Hidden width of the discriminator.
    pub fn disc_hidden(&self) -> usize {
        self.latent_x()
    }
}

/// Encoders and decoders of both VAEs.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T> {
    /// Semantic-related skeleton head, `d_x -> 2 dim_r`.
    pub enc_r: Affine<T>,
    /// Semantic-irrelevant skeleton head, `d_x -> 2 dim_v`.
    pub enc_v: Affine<T>,
    /// Text encoder, `d_y -> 2 dim_r`.
    pub enc_y: Affine<T>,
    /// Skeleton decoder, `dim_v + dim_r -> d_x`.
    pub dec_x: Affine<T>,
    /// Text decoder, `dim_r -> d_y`.
    pub dec_y: Affine<T>,
}

impl<T: Real> VaeParams<T> {
    pub fn zeros(d: ModelDims) -> Self {
        Self {
            enc_r: Affine::zeros(d.d_x, 2 * d.dim_r),
            enc_v: Affine::zeros(d.d_x, 2 * d.dim_v),
            enc_y: Affine::zeros(d.d_y, 2 * d.dim_r),
            dec_x: Affine::zeros(d.latent_x(), d.d_x),
            dec_y: Affine::zeros(d.dim_r, d.d_y),
        }
    }

    pub fn init(d: ModelDims, rng: &mut impl Rng) -> Self {
        Self {
            enc_r: Affine::init(d.d_x, 2 * d.dim_r, rng),
            enc_v: Affine::init(d.d_x, 2 * d.dim_v, rng),
            enc_y: Affine::init(d.d_y, 2 * d.dim_r, rng),
            dec_x: Affine::init(d.latent_x(), d.d_x, rng),
            dec_y: Affine::init(d.dim_r, d.d_y, rng),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_x: self.enc_r.input_dim(),
            d_y: self.enc_y.input_dim(),
            dim_r: self.enc_r.output_dim() / 2,
            dim_v: self.enc_v.output_dim() / 2,
        }
    }

    pub fn cast<U: Real>(&self) -> VaeParams<U> {
        VaeParams {
            enc_r: self.enc_r.cast(),
            enc_v: self.enc_v.cast(),
            enc_y: self.enc_y.cast(),
            dec_x: self.dec_x.cast(),
            dec_y: self.dec_y.cast(),
        }
    }

    fn check_consistent(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.enc_r.output_dim().is_multiple_of(2)
            && self.enc_v.output_dim().is_multiple_of(2)
            && self.enc_v.input_dim() == d.d_x
            && self.enc_y.output_dim() == 2 * d.dim_r
            && self.dec_x.input_dim() == d.latent_x()
            && self.dec_x.output_dim() == d.d_x
            && self.dec_y.input_dim() == d.dim_r
            && self.dec_y.output_dim() == d.d_y;
        if !ok {
            return Err(Error::Shape("inconsistent VAE parameter shapes".into()));
        }
        Ok(())
    }
}

impl<T: Real> Layers<T> for VaeParams<T> {
    fn layers(&self) -> Vec<(&'static str, &Affine<T>)> {
        vec![
            ("enc_r", &self.enc_r),
            ("enc_v", &self.enc_v),
            ("enc_y", &self.enc_y),
            ("dec_x", &self.dec_x),
            ("dec_y", &self.dec_y),
        ]
    }

    fn layers_mut(&mut self) -> Vec<&mut Affine<T>> {
        vec![
            &mut self.enc_r,
            &mut self.enc_v,
            &mut self.enc_y,
            &mut self.dec_x,
            &mut self.dec_y,
        ]
    }
}

/// Two-layer MLP with ReLU hidden activation and sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub hidden: Affine<T>,
    pub output: Affine<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            hidden: Affine::zeros(input, hidden),
            output: Affine::zeros(hidden, 1),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Affine::init(input, hidden, rng),
            output: Affine::init(hidden, 1, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            hidden: self.hidden.cast(),
            output: self.output.cast(),
        }
    }
}

impl<T: Real> Layers<T> for Discriminator<T> {
    fn layers(&self) -> Vec<(&'static str, &Affine<T>)> {
        vec![("disc_hidden", &self.hidden), ("disc_output", &self.output)]
    }

    fn layers_mut(&mut self) -> Vec<&mut Affine<T>> {
        vec![&mut self.hidden, &mut self.output]
    }
}

fn check_input<T: Real>(x: &Matrix<T>, width: usize, what: &str) -> Result<()> {
    ensure_shape!(
        x.cols() == width,
        "{what} expects width {width}, got {}",
        x.cols()
    );
    if !x.is_finite() {
        return Err(Error::Data(format!("{what} input contains non-finite values")));
    }
    Ok(())
}

/// Semantic-related posterior from the `r` head alone.
pub fn encode_semantic<T: Real>(enc_r: &Affine<T>, fx: &Matrix<T>) -> Result<GaussianLatent<T>> {
    check_input(fx, enc_r.input_dim(), "skeleton encoder")?;
    Ok(GaussianLatent::from_head(enc_r.forward(fx)?))
}

/// Semantic-related and semantic-irrelevant posteriors for each skeleton row.
pub fn encode_skeleton<T: Real>(
    params: &VaeParams<T>,
    fx: &Matrix<T>,
) -> Result<(GaussianLatent<T>, GaussianLatent<T>)> {
    check_input(fx, params.enc_r.input_dim(), "skeleton encoder")?;
    let r = GaussianLatent::from_head(params.enc_r.forward(fx)?);
    let v = GaussianLatent::from_head(params.enc_v.forward(fx)?);
    Ok((r, v))
}

pub fn encode_text<T: Real>(params: &VaeParams<T>, fy: &Matrix<T>) -> Result<GaussianLatent<T>> {
    check_input(fy, params.enc_y.input_dim(), "text encoder")?;
    Ok(GaussianLatent::from_head(params.enc_y.forward(fy)?))
}

pub fn decode<T: Real>(decoder: &Affine<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
    decoder.forward(z)
}

#[inline]
pub fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

/// Cached intermediate values of a discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscForward<T> {
    pub pre: Matrix<T>,
    pub hidden: Matrix<T>,
    pub logit: Vec<T>,
    pub prob: Vec<T>,
}

pub fn discriminator_forward<T: Real>(disc: &Discriminator<T>, z: &Matrix<T>) -> Result<DiscForward<T>> {
    ensure_shape!(
        z.cols() == disc.input_dim(),
        "discriminator expects width {}, got {}",
        disc.input_dim(),
        z.cols()
    );
    let pre = disc.hidden.forward(z)?;
    let hidden = pre.map(|v| v.max(T::zero()));
    let logit = disc.output.forward(&hidden)?.into_vec();
    let prob = logit.iter().map(|&a| sigmoid(a)).collect();
    Ok(DiscForward {
        pre,
        hidden,
        logit,
        prob,
    })
}

/// Probability that each row of `z = z_v ⊕ z_r` is a matched pair.
pub fn discriminate<T: Real>(disc: &Discriminator<T>, z: &Matrix<T>) -> Result<Vec<T>> {
    Ok(discriminator_forward(disc, z)?.prob)
}

/// Backpropagates `dL/dlogit` through the discriminator.
pub fn discriminator_backward<T: Real>(
    disc: &Discriminator<T>,
    z: &Matrix<T>,
    fwd: &DiscForward<T>,
    dlogit: &[T],
    grad: Option<&mut Discriminator<T>>,
    want_input_grad: bool,
) -> Option<Matrix<T>> {
    let dy = Matrix::from_vec(dlogit.len(), 1, dlogit.to_vec()).expect("column");
    let (g_hidden, g_out) = match grad {
        Some(g) => (Some(&mut g.hidden), Some(&mut g.output)),
        None => (None, None),
    };
    let mut dh = disc
        .output
        .backward(&fwd.hidden, &dy, g_out, true)
        .expect("requested");
    for (d, &p) in dh.data_mut().iter_mut().zip(fwd.pre.data()) {
        if p <= T::zero() {
            *d = T::zero();
        }
    }
    disc.hidden.backward(z, &dh, g_hidden, want_input_grad)
}

/// Full learnable state: both VAEs, the discriminator and their Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub vae: VaeParams<f32>,
    pub disc: Discriminator<f32>,
    pub vae_opt: Adam<f32>,
    pub disc_opt: Adam<f32>,
}

impl ModelState {
    /// Initializes every layer from the run's init stream, in a fixed order.
    pub fn init(dims: ModelDims, learning_rate: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Init);
        let vae = VaeParams::init(dims, &mut rng);
        let disc = Discriminator::init(dims.latent_x(), dims.disc_hidden(), &mut rng);
        let vae_opt = Adam::new(&vae, learning_rate);
        let disc_opt = Adam::new(&disc, learning_rate);
        Self {
            vae,
            disc,
            vae_opt,
            disc_opt,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.vae.dims()
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::default();
        for (name, layer) in self.vae.layers() {
            layer.store(&mut b, name);
        }
        for (name, layer) in self.disc.layers() {
            layer.store(&mut b, name);
        }
        self.vae_opt.store(&mut b, "opt_vae", &self.vae)?;
        self.disc_opt.store(&mut b, "opt_disc", &self.disc)?;
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let vae = VaeParams {
            enc_r: Affine::load(b, "enc_r")?,
            enc_v: Affine::load(b, "enc_v")?,
            enc_y: Affine::load(b, "enc_y")?,
            dec_x: Affine::load(b, "dec_x")?,
            dec_y: Affine::load(b, "dec_y")?,
        };
        vae.check_consistent()?;
        let disc = Discriminator {
            hidden: Affine::load(b, "disc_hidden")?,
            output: Affine::load(b, "disc_output")?,
        };
        if disc.input_dim() != vae.dims().latent_x()
            || disc.output.input_dim() != disc.hidden.output_dim()
            || disc.output.output_dim() != 1
        {
            return Err(Error::Format("discriminator shapes do not match the VAE".into()));
        }
        let vae_opt = Adam::load(b, "opt_vae", &vae)?;
        let disc_opt = Adam::load(b, "opt_disc", &disc)?;
        Ok(Self {
            vae,
            disc,
            vae_opt,
            disc_opt,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(self.to_bundle()?.encode(MODEL_MAGIC))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_bundle(&TensorBundle::decode(bytes, MODEL_MAGIC)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_bundle()?.write(path, MODEL_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bundle(&TensorBundle::read(path, MODEL_MAGIC)?)
    }
}

pub(crate) fn store_count(b: &mut TensorBundle, name: &str, v: u64) -> Result<()> {
    b.push(crate::container::NamedTensor::scalar(name, count_to_f32(name, v)?));
    Ok(())
}

pub(crate) fn load_count(b: &TensorBundle, name: &str) -> Result<u64> {
    f32_to_count(name, b.scalar(name)?)
}
