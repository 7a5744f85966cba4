use std::path::Path;

use crate::container::TensorBundle;
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::model::{encode_semantic, Affine, VaeParams};
use crate::tensor::{FeatureMatrix, Matrix};

use super::gate::DomainGate;
use super::softmax::{argmax_by_id, SoftmaxClassifier};

pub const PREDICTOR_MAGIC: [u8; 4] = *b"SADC";

/// Frozen semantic-related encoder head plus the unseen classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ZslPredictor {
    /// Emits `[mean ; log_variance]`; only the mean half is used.
    pub encoder_r: Affine<f32>,
    pub unseen: SoftmaxClassifier,
}

impl ZslPredictor {
    pub fn new(vae: &VaeParams<f32>, unseen: SoftmaxClassifier) -> Result<Self> {
        let p = Self {
            encoder_r: vae.enc_r.clone(),
            unseen,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        ensure_arg!(!self.unseen.class_ids.is_empty(), "unseen class set is empty");
        ensure_shape!(
            self.encoder_r.output_dim() == 2 * self.unseen.input_dim(),
            "encoder emits width {} but the unseen classifier takes {}",
            self.encoder_r.output_dim() / 2,
            self.unseen.input_dim()
        );
        ensure_shape!(
            self.unseen.layer.output_dim() == self.unseen.class_ids.len(),
            "unseen classifier width does not match its class table"
        );
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_r.input_dim()
    }

    /// Posterior means of the semantic-related latent.
    pub fn r_means(&self, fx: &FeatureMatrix) -> Result<FeatureMatrix> {
        Ok(encode_semantic(&self.encoder_r, fx)?.mean)
    }

    pub fn unseen_probabilities(&self, fx: &FeatureMatrix) -> Result<Matrix<f64>> {
        self.unseen.probabilities(&self.r_means(fx)?)
    }

    pub fn predict(&self, fx: &FeatureMatrix) -> Result<Vec<u32>> {
        self.unseen.predict(&self.r_means(fx)?)
    }
}

/// `p_d·p_s ⊕ (1−p_d)·p_u`.
pub fn fuse(p_seen: &[f64], p_unseen: &[f64], p_d: f64) -> Vec<f64> {
    p_seen
        .iter()
        .map(|p| p_d * p)
        .chain(p_unseen.iter().map(|p| (1.0 - p_d) * p))
        .collect()
}

/// Per-sample outputs of the GZSL predictor. Columns of `fused` follow
/// `class_ids`: seen classes first, then unseen.
#[derive(Clone, Debug, PartialEq)]
pub struct GzslOutput {
    pub class_ids: Vec<u32>,
    pub p_d: Vec<f64>,
    pub fused: Matrix<f64>,
    pub predictions: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GzslPredictor {
    pub zsl: ZslPredictor,
    pub seen: SoftmaxClassifier,
    pub gate: DomainGate,
}

impl GzslPredictor {
    pub fn new(zsl: ZslPredictor, seen: SoftmaxClassifier, gate: DomainGate) -> Result<Self> {
        let p = Self { zsl, seen, gate };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        self.zsl.validate()?;
        ensure_arg!(!self.seen.class_ids.is_empty(), "seen class set is empty");
        ensure_shape!(
            self.gate.k == self.zsl.unseen.num_classes(),
            "gate pools k = {} but there are {} unseen classes",
            self.gate.k,
            self.zsl.unseen.num_classes()
        );
        ensure_shape!(
            self.gate.weights.len() == 2 * self.gate.k,
            "gate weight width does not match k"
        );
        ensure_arg!(
            self.gate.k <= self.seen.num_classes(),
            "cannot pool {} of {} seen classes",
            self.gate.k,
            self.seen.num_classes()
        );
        ensure_shape!(
            self.seen.input_dim() == self.zsl.input_dim(),
            "seen classifier takes width {} but the encoder takes {}",
            self.seen.input_dim(),
            self.zsl.input_dim()
        );
        ensure_arg!(
            self.seen
                .class_ids
                .iter()
                .all(|c| !self.zsl.unseen.class_ids.contains(c)),
            "seen and unseen class tables overlap"
        );
        Ok(())
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.seen
            .class_ids
            .iter()
            .chain(&self.zsl.unseen.class_ids)
            .copied()
            .collect()
    }

    pub fn predict_zsl(&self, fx: &FeatureMatrix) -> Result<Vec<u32>> {
        self.zsl.predict(fx)
    }

    pub fn predict_gzsl(&self, fx: &FeatureMatrix) -> Result<GzslOutput> {
        let seen_logits = self.seen.logits(fx)?;
        let p_u = self.zsl.unseen_probabilities(fx)?;
        let class_ids = self.class_ids();
        let mut fused = Matrix::zeros(fx.rows(), class_ids.len());
        let mut p_d = Vec::with_capacity(fx.rows());
        let mut predictions = Vec::with_capacity(fx.rows());
        for i in 0..fx.rows() {
            let logits: Vec<f64> = seen_logits.row(i).iter().map(|&v| v as f64).collect();
            let p_s = super::softmax::softmax(&logits);
            let gate_row = self.gate.features(&logits, p_u.row(i))?;
            let d = self.gate.probability(&gate_row)?;
            let row = fuse(&p_s, p_u.row(i), d);
            predictions.push(class_ids[argmax_by_id(&row, &class_ids)]);
            fused.row_mut(i).copy_from_slice(&row);
            p_d.push(d);
        }
        Ok(GzslOutput {
            class_ids,
            p_d,
            fused,
            predictions,
        })
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::default();
        self.zsl.encoder_r.store(&mut b, "enc_r");
        self.seen.layer.store(&mut b, "seen");
        self.zsl.unseen.layer.store(&mut b, "unseen");
        b.push_vector("seen.class_ids", &ids_to_f32(&self.seen.class_ids)?);
        b.push_vector("unseen.class_ids", &ids_to_f32(&self.zsl.unseen.class_ids)?);
        self.gate.store(&mut b, "gate")?;
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let zsl = ZslPredictor {
            encoder_r: Affine::load(b, "enc_r")?,
            unseen: SoftmaxClassifier {
                layer: Affine::load(b, "unseen")?,
                class_ids: ids_from_f32(&b.vector("unseen.class_ids")?)?,
            },
        };
        let seen = SoftmaxClassifier {
            layer: Affine::load(b, "seen")?,
            class_ids: ids_from_f32(&b.vector("seen.class_ids")?)?,
        };
        let gate = DomainGate::load(b, "gate")?;
        Self::new(zsl, seen, gate).map_err(|e| Error::Format(format!("inconsistent predictor: {e}")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(self.to_bundle()?.encode(PREDICTOR_MAGIC))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_bundle(&TensorBundle::decode(bytes, PREDICTOR_MAGIC)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_bundle()?.write(path, PREDICTOR_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bundle(&TensorBundle::read(path, PREDICTOR_MAGIC)?)
    }
}

fn ids_to_f32(ids: &[u32]) -> Result<Vec<f32>> {
    ids.iter()
        .map(|&c| crate::container::count_to_f32("class id", c as u64))
        .collect()
}

fn ids_from_f32(v: &[f32]) -> Result<Vec<u32>> {
    v.iter()
        .map(|&x| crate::container::f32_to_count("class id", x).map(|c| c as u32))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn random_predictor(seed: u64, d_x: usize, dim_r: usize, seen: &[u32], unseen: &[u32]) -> GzslPredictor {
        let mut r = stream(seed, Stream::Init);
        let zsl = ZslPredictor {
            encoder_r: Affine::init(d_x, 2 * dim_r, &mut r),
            unseen: SoftmaxClassifier {
                layer: Affine::init(dim_r, unseen.len(), &mut r),
                class_ids: unseen.to_vec(),
            },
        };
        let seen_c = SoftmaxClassifier {
            layer: Affine::init(d_x, seen.len(), &mut r),
            class_ids: seen.to_vec(),
        };
        let gate = DomainGate {
            weights: Affine::<f32>::init(1, 2 * unseen.len(), &mut r).weight.into_vec(),
            bias: 0.1,
            temperature: 2.0,
            k: unseen.len(),
        };
        GzslPredictor::new(zsl, seen_c, gate).unwrap()
    }

    #[test]
    fn fused_worked_example() {
        let f = fuse(&[0.6, 0.4], &[0.9, 0.1], 0.5);
        let expect = [0.30, 0.20, 0.45, 0.05];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(argmax_by_id(&f, &[0, 1, 2, 3]), 2);
    }

    #[test]
    fn dominant_logit_wins_zsl() {
        let mut p = random_predictor(0, 6, 3, &[0, 1, 2], &[3, 4]);
        p.zsl.unseen.layer.weight = Matrix::zeros(2, 3);
        p.zsl.unseen.layer.bias = vec![0.0, 10.0];
        let x = crate::rng::standard_normal::<f32>(20, 6, &mut stream(1, Stream::Noise));
        assert!(p.predict_zsl(&x).unwrap().iter().all(|&c| c == 4));
    }

    #[test]
    fn single_unseen_class_is_always_predicted() {
        let p = random_predictor(2, 5, 2, &[0, 2], &[1]);
        let x = crate::rng::standard_normal::<f32>(30, 5, &mut stream(3, Stream::Noise));
        assert!(p.predict_zsl(&x).unwrap().iter().all(|&c| c == 1));
    }

    #[test]
    fn zsl_matches_straight_line_recomputation() {
        let p = random_predictor(4, 7, 3, &[0, 1, 2, 3], &[4, 5, 6]);
        let x = crate::rng::standard_normal::<f32>(100, 7, &mut stream(5, Stream::Noise));
        let got = p.predict_zsl(&x).unwrap();
        let e = &p.zsl.encoder_r;
        let c = &p.zsl.unseen.layer;
        for i in 0..100 {
            let mean: Vec<f64> = (0..3)
                .map(|j| {
                    e.bias[j] as f64
                        + (0..7).map(|t| e.weight.get(j, t) as f64 * x.get(i, t) as f64).sum::<f64>()
                })
                .collect();
            let logits: Vec<f64> = (0..3)
                .map(|o| c.bias[o] as f64 + (0..3).map(|j| c.weight.get(o, j) as f64 * mean[j]).sum::<f64>())
                .collect();
            let best = (0..3).fold(0, |b, o| if logits[o] > logits[b] { o } else { b });
            assert_eq!(got[i], p.zsl.unseen.class_ids[best]);
        }
    }

    #[test]
    fn zsl_ignores_seen_side() {
        let p = random_predictor(6, 5, 2, &[0, 1, 2], &[3, 4]);
        let mut q = p.clone();
        q.seen.layer.bias[0] += 5.0;
        q.gate.bias = -3.0;
        let x = crate::rng::standard_normal::<f32>(50, 5, &mut stream(7, Stream::Noise));
        assert_eq!(p.predict_zsl(&x).unwrap(), q.predict_zsl(&x).unwrap());
    }

    #[test]
    fn saturated_gate_follows_one_side() {
        let mut p = random_predictor(8, 5, 2, &[0, 1, 2], &[3, 4]);
        let x = crate::rng::standard_normal::<f32>(50, 5, &mut stream(9, Stream::Noise));
        p.gate.weights.iter_mut().for_each(|w| *w = 0.0);
        p.gate.bias = 100.0;
        let out = p.predict_gzsl(&x).unwrap();
        let seen = p.seen.predict(&x).unwrap();
        assert_eq!(out.predictions, seen);
        p.gate.bias = -100.0;
        let out = p.predict_gzsl(&x).unwrap();
        assert_eq!(out.predictions, p.predict_zsl(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = random_predictor(10, 6, 3, &[0, 1, 5], &[2, 3]);
        let bytes = p.encode().unwrap();
        let q = GzslPredictor::decode(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(bytes, q.encode().unwrap());
        assert!(GzslPredictor::decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn empty_unseen_set_is_rejected() {
        let mut p = random_predictor(11, 4, 2, &[0, 1], &[2]);
        p.zsl.unseen.class_ids.clear();
        p.zsl.unseen.layer = Affine::zeros(2, 0);
        p.gate.k = 0;
        p.gate.weights.clear();
        assert!(GzslPredictor::new(p.zsl, p.seen, p.gate).is_err());
    }
}
