use crate::container::TensorBundle;
use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::tensor::Matrix;

use super::lbfgs::{self, LbfgsOptions};
use super::softmax::temperature_topk_pool;

/// Logistic regression over `pooled seen probs ⊕ unseen probs` (width `2k`)
/// giving the probability that a sample belongs to a seen class.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGate {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub temperature: f32,
    pub k: usize,
}

fn stable_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

impl DomainGate {
    pub fn input_dim(&self) -> usize {
        2 * self.k
    }

    /// Gate input for one sample: top-k pooled seen logits followed by the
    /// unseen-class probabilities.
    pub fn features(&self, seen_logits: &[f64], unseen_probs: &[f64]) -> Result<Vec<f64>> {
        ensure_shape!(
            unseen_probs.len() == self.k,
            "gate expects {} unseen probabilities, got {}",
            self.k,
            unseen_probs.len()
        );
        let mut row = temperature_topk_pool(seen_logits, self.temperature as f64, self.k)?;
        row.extend_from_slice(unseen_probs);
        Ok(row)
    }

    /// `p_d`, kept strictly inside `(0, 1)`.
    pub fn probability(&self, row: &[f64]) -> Result<f64> {
        ensure_shape!(
            row.len() == self.input_dim(),
            "gate expects width {}, got {}",
            self.input_dim(),
            row.len()
        );
        let a = self.bias as f64
            + self
                .weights
                .iter()
                .zip(row)
                .map(|(&w, &x)| w as f64 * x)
                .sum::<f64>();
        Ok(stable_sigmoid(a).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
    }

    pub(crate) fn store(&self, b: &mut TensorBundle, prefix: &str) -> Result<()> {
        b.push_vector(format!("{prefix}.weight"), &self.weights);
        b.push_vector(format!("{prefix}.bias"), &[self.bias]);
        b.push_vector(format!("{prefix}.temperature"), &[self.temperature]);
        crate::model::store_count(b, &format!("{prefix}.k"), self.k as u64)
    }

    pub(crate) fn load(b: &TensorBundle, prefix: &str) -> Result<Self> {
        let weights = b.vector(&format!("{prefix}.weight"))?;
        let bias = b.scalar(&format!("{prefix}.bias"))?;
        let temperature = b.scalar(&format!("{prefix}.temperature"))?;
        let k = crate::model::load_count(b, &format!("{prefix}.k"))? as usize;
        if weights.len() != 2 * k || !(temperature > 0.0) {
            return Err(Error::Format("inconsistent domain gate tensors".into()));
        }
        Ok(Self {
            weights,
            bias,
            temperature,
            k,
        })
    }
}

/// Fits the gate by L-BFGS on `C·Σ log-loss + ‖w‖²/2` (divided by the row
/// count for conditioning); the bias is not penalized. `labels` are `true`
/// for seen-class rows.
pub fn train_domain_gate(
    rows: &Matrix<f64>,
    labels: &[bool],
    temperature: f64,
    c: f64,
) -> Result<DomainGate> {
    ensure_shape!(
        rows.rows() == labels.len(),
        "{} gate rows but {} labels",
        rows.rows(),
        labels.len()
    );
    ensure_shape!(
        rows.cols().is_multiple_of(2) && rows.cols() > 0,
        "gate rows must have even nonzero width, got {}",
        rows.cols()
    );
    ensure_arg!(c > 0.0, "gate regularization C must be > 0");
    ensure_arg!(
        labels.iter().any(|&l| l) && labels.iter().any(|&l| !l),
        "gate training needs both seen and unseen rows"
    );
    ensure_arg!(rows.is_finite(), "gate rows contain non-finite values");
    let d = rows.cols();
    let n = rows.rows() as f64;
    let alpha = 1.0 / (c * n);
    let objective = |p: &[f64], g: &mut [f64]| -> f64 {
        let (w, b) = p.split_at(d);
        g.fill(0.0);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let x = rows.row(i);
            let a = b[0] + x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>();
            // -log p(y|x) = softplus(a) - y·a
            let t = if y { 1.0 } else { 0.0 };
            loss += softplus(a) - t * a;
            let r = stable_sigmoid(a) - t;
            for (gj, xj) in g[..d].iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for gj in g.iter_mut() {
            *gj /= n;
        }
        let mut reg = 0.0;
        for (gj, wj) in g[..d].iter_mut().zip(w) {
            *gj += alpha * wj;
            reg += wj * wj;
        }
        loss / n + 0.5 * alpha * reg
    };
    let res = lbfgs::minimize(objective, vec![0.0; d + 1], LbfgsOptions::default());
    if !res.converged {
        log::warn!(
            "domain gate stopped at gradient norm {:.3e} after {} iterations",
            res.gradient_norm,
            res.iterations
        );
    }
    Ok(DomainGate {
        weights: res.x[..d].iter().map(|&v| v as f32).collect(),
        bias: res.x[d] as f32,
        temperature: temperature as f32,
        k: d / 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn rows_from(v: Vec<Vec<f64>>) -> Matrix<f64> {
        { let cols = v[0].len(); Matrix::from_rows(&v, cols).unwrap() }
    }

    #[test]
    fn separable_projection_is_fit_exactly() {
        let mut r = stream(1, Stream::Classifier);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let seen = i % 2 == 0;
            let s = if seen { 1.0 } else { -1.0 };
            rows.push(vec![s * r.random_range(0.5..1.0), r.random_range(-1.0..1.0)]);
            labels.push(seen);
        }
        let m = rows_from(rows);
        let gate = train_domain_gate(&m, &labels, 1.0, 1.0).unwrap();
        let mut last_gap = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = gate.probability(m.row(i)).unwrap();
            assert_eq!(p > 0.5, y);
            last_gap = (p - 0.5f64).abs().max(last_gap);
        }
        assert!(last_gap > 0.4, "{last_gap}");
    }

    #[test]
    fn weaker_regularization_saturates_further() {
        let rows = rows_from(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let labels = [true, false];
        let p1 = train_domain_gate(&rows, &labels, 1.0, 1.0).unwrap().probability(rows.row(0)).unwrap();
        let p2 = train_domain_gate(&rows, &labels, 1.0, 100.0).unwrap().probability(rows.row(0)).unwrap();
        assert!(p2 > p1 && p2 > 0.95);
    }

    #[test]
    fn uninformative_inputs_give_the_prior() {
        let mut r = stream(2, Stream::Classifier);
        let n = 20000;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            rows.push((0..4).map(|_| r.random::<f64>()).collect());
            labels.push(r.random::<f64>() < 0.3);
        }
        let prior = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        let m = rows_from(rows);
        let gate = train_domain_gate(&m, &labels, 2.0, 1.0).unwrap();
        for i in 0..n {
            assert!((gate.probability(m.row(i)).unwrap() - prior).abs() < 0.05);
        }
    }

    #[test]
    fn duplicating_rows_matches_halving_c() {
        let mut r = stream(3, Stream::Classifier);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60 {
            let y = r.random::<bool>();
            let shift = if y { 0.3 } else { -0.3 };
            rows.push(vec![r.random::<f64>() + shift, r.random::<f64>(), r.random::<f64>(), r.random::<f64>() - shift]);
            labels.push(y);
        }
        let once = train_domain_gate(&rows_from(rows.clone()), &labels, 2.0, 1.0).unwrap();
        // Σ over duplicated rows doubles the data term, so C/2 restores the objective.
        let twice_rows: Vec<Vec<f64>> = rows.iter().flat_map(|x| [x.clone(), x.clone()]).collect();
        let twice_labels: Vec<bool> = labels.iter().flat_map(|&y| [y, y]).collect();
        let twice = train_domain_gate(&rows_from(twice_rows), &twice_labels, 2.0, 0.5).unwrap();
        for (a, b) in once.weights.iter().zip(&twice.weights) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!((once.bias - twice.bias).abs() < 1e-5);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = rows_from(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert!(matches!(
            train_domain_gate(&rows, &[true, true], 1.0, 1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn probability_stays_open() {
        let gate = DomainGate {
            weights: vec![1e6, 0.0],
            bias: 0.0,
            temperature: 1.0,
            k: 1,
        };
        let hi = gate.probability(&[1.0, 0.0]).unwrap();
        let lo = gate.probability(&[-1.0, 0.0]).unwrap();
        assert!(hi < 1.0 && lo > 0.0);
    }
}
