//! Bias-corrected Adam.

use crate::container::{NamedTensor, TensorBundle};
use crate::error::{ensure_shape, Error, Result};
use crate::model::{load_count, store_count, Layers};
use crate::tensor::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Layers<T>>(params: &P, learning_rate: f64) -> Self {
        Self::for_shapes(params.slices().iter().map(|s| s.len()), learning_rate)
    }

    pub fn for_shapes(lens: impl IntoIterator<Item = usize>, learning_rate: f64) -> Self {
        let first: Vec<Vec<T>> = lens.into_iter().map(|n| vec![T::zero(); n]).collect();
        let second = first.clone();
        Self {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(ADAM_BETA1),
            beta2: T::lit(ADAM_BETA2),
            epsilon: T::lit(ADAM_EPSILON),
            step: 0,
            first,
            second,
        }
    }

    pub fn update<P: Layers<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.slices();
        self.update_slices(params.slices_mut(), &g)
    }

    pub fn update_slices(&mut self, mut params: Vec<&mut [T]>, grads: &[&[T]]) -> Result<()> {
        ensure_shape!(
            params.len() == self.first.len() && grads.len() == self.first.len(),
            "optimizer tracks {} tensors, got {} params and {} grads",
            self.first.len(),
            params.len(),
            grads.len()
        );
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            ensure_shape!(
                p.len() == self.first[i].len() && g.len() == p.len(),
                "tensor {i}: moment size {}, param size {}, grad size {}",
                self.first[i].len(),
                p.len(),
                g.len()
            );
        }
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

impl Adam<f32> {
    pub(crate) fn store<P: Layers<f32>>(&self, b: &mut TensorBundle, prefix: &str, params: &P) -> Result<()> {
        store_count(b, &format!("{prefix}.step"), self.step)?;
        b.push(NamedTensor::scalar(format!("{prefix}.learning_rate"), self.learning_rate));
        let mut k = 0;
        for (name, layer) in params.layers() {
            for (part, len) in [("weight", layer.weight.data().len()), ("bias", layer.bias.len())] {
                debug_assert_eq!(self.first[k].len(), len);
                b.push_vector(format!("{prefix}.m.{name}.{part}"), &self.first[k]);
                b.push_vector(format!("{prefix}.v.{name}.{part}"), &self.second[k]);
                k += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn load<P: Layers<f32>>(b: &TensorBundle, prefix: &str, params: &P) -> Result<Self> {
        let lr = b.scalar(&format!("{prefix}.learning_rate"))?;
        let mut opt = Self::new(params, 0.0);
        opt.learning_rate = lr;
        opt.step = load_count(b, &format!("{prefix}.step"))?;
        let mut k = 0;
        for (name, _) in params.layers() {
            for part in ["weight", "bias"] {
                let m = b.vector(&format!("{prefix}.m.{name}.{part}"))?;
                let v = b.vector(&format!("{prefix}.v.{name}.{part}"))?;
                if m.len() != opt.first[k].len() || v.len() != opt.first[k].len() {
                    return Err(Error::Format(format!("{prefix}: moment shape mismatch for {name}")));
                }
                opt.first[k] = m;
                opt.second[k] = v;
                k += 1;
            }
        }
        Ok(opt)
    }
}
