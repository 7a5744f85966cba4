use proptest::prelude::*;
use sadvae_core::ablation::max_canonical_correlation;
use sadvae_core::classifiers::{fuse, temperature_topk_pool};
use sadvae_core::data_io::make_random_split;
use sadvae_core::evaluation::harmonic_mean;
use sadvae_core::losses::{kl_to_standard_normal, shuffle_pairs, total_correlation_loss};
use sadvae_core::model::Discriminator;
use sadvae_core::rng::{self, Stream};
use sadvae_core::trainer::anneal_coefficient;
use sadvae_core::{FeatureMatrix, Matrix};

fn pairs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-5.0f64..5.0, n),
        prop::collection::vec(-5.0f64..5.0, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kl_is_non_negative((m, lv) in (1usize..12).prop_flat_map(pairs)) {
        let kl = kl_to_standard_normal(&m, &lv).unwrap();
        prop_assert!(kl >= 0.0);
        let zero = m.iter().chain(&lv).all(|&v| v == 0.0);
        prop_assert_eq!(kl == 0.0, zero);
    }

    #[test]
    fn kl_vanishes_only_at_the_prior(i in 0usize..6, eps in prop_oneof![-1e-3f64..-1e-6, 1e-6f64..1e-3], which in 0usize..2) {
        let mut m = vec![0.0; 6];
        let mut lv = vec![0.0; 6];
        prop_assert_eq!(kl_to_standard_normal(&m, &lv).unwrap(), 0.0);
        if which == 0 { m[i] = eps } else { lv[i] = eps }
        prop_assert!(kl_to_standard_normal(&m, &lv).unwrap() > 0.0);
    }

    #[test]
    fn shuffle_preserves_the_row_multiset(rows in 1usize..40, seed in any::<u64>()) {
        let v: Matrix<f64> = rng::standard_normal(rows, 3, &mut rng::stream(seed, Stream::Synthetic));
        let (s, perm) = shuffle_pairs(&v, &mut rng::stream(seed, Stream::PairShuffle)).unwrap();
        let key = |m: &Matrix<f64>| {
            let mut r: Vec<Vec<u64>> = m.iter_rows().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
            r.sort();
            r
        };
        prop_assert_eq!(key(&v), key(&s));
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..rows).collect::<Vec<_>>());
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(s.row(i), v.row(p));
        }
    }

    #[test]
    fn tc_loss_is_finite_and_non_positive(scale in prop_oneof![Just(1e-6f64), Just(1.0), Just(1e3), Just(1e6)], seed in any::<u64>()) {
        let mut r = rng::stream(seed, Stream::Init);
        let mut d = Discriminator::<f64>::init(4, 4, &mut r);
        for w in d.output.weight.data_mut() {
            *w *= scale;
        }
        d.output.bias[0] = scale;
        let z = rng::standard_normal::<f64>(8, 4, &mut r).map(|x| x * scale);
        let zt = rng::standard_normal::<f64>(8, 4, &mut r).map(|x| x * scale);
        let out = total_correlation_loss(&d, &z, &zt).unwrap();
        prop_assert!(out.l_t.is_finite() && out.l_t <= 0.0);
        prop_assert!(out.dz.is_finite() && out.dz_tilde.is_finite());
    }

    #[test]
    fn anneal_is_monotone_and_continuous(n in 3usize..2000, target in 0.0f64..20.0) {
        let mut prev = 0.0;
        for k in 0..=n {
            let c = anneal_coefficient(k, n, target).unwrap();
            prop_assert!(c >= prev);
            // Each step moves by at most 1.5 * target / n.
            prop_assert!(c - prev <= 1.5 * target / n as f64 + 1e-12);
            prev = c;
        }
        prop_assert!((prev - target).abs() <= 1e-12 * target.max(1.0));
    }

    #[test]
    fn harmonic_mean_bounds(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let h = harmonic_mean(a, b);
        prop_assert!(h <= (a + b) / 2.0 + 1e-12);
        prop_assert!(h <= 2.0 * a.min(b) + 1e-12);
        prop_assert!(h >= 0.0);
        prop_assert_eq!(h, harmonic_mean(b, a));
    }

    #[test]
    fn pooled_probabilities_are_sorted_and_open(logits in prop::collection::vec(-10.0f64..10.0, 2..20), t in 1.0f64..50.0, kf in 0.0f64..1.0) {
        let k = 1 + (kf * (logits.len() - 1) as f64) as usize;
        let p = temperature_topk_pool(&logits, t, k).unwrap();
        prop_assert_eq!(p.len(), k);
        prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn huge_temperature_is_uniform(logits in prop::collection::vec(-10.0f64..10.0, 2..20)) {
        let c = logits.len();
        let p = temperature_topk_pool(&logits, 1e6, c).unwrap();
        for v in p {
            prop_assert!((v - 1.0 / c as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn fused_distribution_sums_to_one(
        seen in prop::collection::vec(0.0f64..1.0, 1..10),
        unseen in prop::collection::vec(0.0f64..1.0, 1..10),
        p_d in 0.0f64..=1.0,
    ) {
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9 * v.len() as f64;
            v.iter().map(|x| (x + 1e-9) / s).collect::<Vec<_>>()
        };
        let (ps, pu) = (norm(seen), norm(unseen));
        let f = fuse(&ps, &pu, p_d);
        prop_assert_eq!(f.len(), ps.len() + pu.len());
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(f.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn random_splits_are_disjoint_and_complete(num_classes in 2usize..120, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let u = 1 + (frac * (num_classes - 1) as f64) as usize;
        let s = make_random_split(num_classes, u, seed).unwrap();
        prop_assert_eq!(s.unseen_ids.len(), u);
        prop_assert_eq!(s.seen_ids.len(), num_classes - u);
        let mut all: Vec<u32> = s.seen_ids.iter().chain(&s.unseen_ids).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..num_classes as u32).collect::<Vec<_>>());
        prop_assert_eq!(s.clone(), make_random_split(num_classes, u, seed).unwrap());
    }
}

fn correlated(seed: u64, n: usize) -> (FeatureMatrix, FeatureMatrix) {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let a: FeatureMatrix = rng::standard_normal(n, 3, &mut r);
    let e: FeatureMatrix = rng::standard_normal(n, 2, &mut r);
    let mut b = FeatureMatrix::zeros(n, 2);
    for i in 0..n {
        b.set(i, 0, 0.6 * a.get(i, 0) + 0.8 * e.get(i, 0));
        b.set(i, 1, e.get(i, 1) - 0.3 * a.get(i, 2));
    }
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn canonical_correlation_is_bounded_and_affine_invariant(seed in any::<u64>(), s0 in 0.2f32..5.0, s1 in -5.0f32..-0.2, shift in -10.0f32..10.0) {
        let (a, b) = correlated(seed, 400);
        let rho = max_canonical_correlation(&a, &b).unwrap();
        prop_assert!(!rho.degenerate);
        prop_assert!((0.0..=1.0).contains(&rho.value));
        // Invertible affine map on each block.
        let mut a2 = a.clone();
        for i in 0..a.rows() {
            let (x, y, z) = (a.get(i, 0), a.get(i, 1), a.get(i, 2));
            a2.set(i, 0, s0 * x + y + shift);
            a2.set(i, 1, s1 * y - shift);
            a2.set(i, 2, z + 0.5 * x);
        }
        let b2 = b.map(|v| s1 * v + shift);
        let rho2 = max_canonical_correlation(&a2, &b2).unwrap();
        prop_assert!((rho.value - rho2.value).abs() < 1e-3, "{} vs {}", rho.value, rho2.value);
    }
}

#[test]
fn split_membership_frequency_is_uniform() {
    let (classes, unseen, draws) = (60usize, 5usize, 10_000u64);
    let mut hits = vec![0u32; classes];
    for seed in 0..draws {
        for &c in &make_random_split(classes, unseen, seed).unwrap().unseen_ids {
            hits[c as usize] += 1;
        }
    }
    let p = unseen as f64 / classes as f64;
    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
    for (c, &h) in hits.iter().enumerate() {
        let f = h as f64 / draws as f64;
        assert!((f - p).abs() <= 3.0 * sigma + 1e-12, "class {c}: {f}");
    }
}

#[test]
fn pinned_shuffle_trace() {
    let v = Matrix::from_vec(4, 1, vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
    let (_, perm) = shuffle_pairs(&v, &mut rng::stream(0, Stream::PairShuffle)).unwrap();
    assert_eq!(perm, vec![0, 1, 3, 2]);
}
