use approx::assert_abs_diff_eq;
use mocd_core::diffnet::{one_hot, soft_cross_entropy};
use mocd_core::mass::{adaptive_uncertainty, ambiguity_entropy, omix_masses, omix_soft_label, OMixConfig};
use mocd_core::model::{perception_loss, PerceptionTargets};
use mocd_core::omix::{mix_batch_indices, mix_with};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0_f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn masses_form_a_distribution(lambda in unit(), c in unit()) {
        let u = adaptive_uncertainty(lambda, c).unwrap();
        let m = omix_masses(lambda, u).unwrap();
        prop_assert!((m.total() - 1.0).abs() < 1e-12);
        for x in [m.m_i, m.m_j, m.m_amb, m.m_empty] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!((m.m_i + m.m_j - (1.0 - u)).abs() < 1e-12);
    }

    #[test]
    fn soft_labels_are_distributions(lambda in unit(), c in unit(), k in 2usize..8, i in 0usize..8, j in 0usize..8) {
        let (i, j) = (i % k, j % k);
        let y = one_hot(&[i, j], k);
        let m = omix_masses(lambda, adaptive_uncertainty(lambda, c).unwrap()).unwrap();
        let label = omix_soft_label(&m, y.row(0).as_slice().unwrap(), y.row(1).as_slice().unwrap()).unwrap();
        prop_assert!((label.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(label.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn zero_budget_is_bitwise_vanilla(lambda in unit(), k in 2usize..6, i in 0usize..6, j in 0usize..6) {
        let (i, j) = (i % k, j % k);
        let y = one_hot(&[i, j], k);
        let u = adaptive_uncertainty(lambda, 0.0).unwrap();
        prop_assert_eq!(u, 0.0);
        let m = omix_masses(lambda, u).unwrap();
        let label = omix_soft_label(&m, y.row(0).as_slice().unwrap(), y.row(1).as_slice().unwrap()).unwrap();
        let vanilla: Vec<f64> = y.row(0).iter().zip(y.row(1)).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        prop_assert_eq!(label, vanilla);
    }

    #[test]
    fn perception_loss_is_ce_against_soft_label(seed in any::<u64>(), c in unit(), n in 2usize..10, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..k)).collect();
        let cfg = OMixConfig::new(1.0, c).unwrap();
        let b = mix_batch_indices(&[x.view()], &labels, k, &cfg, &mut rng).unwrap();
        let logits = Array2::from_shape_fn((n, k), |_| rand::Rng::random_range(&mut rng, -5.0..5.0));
        let direct = soft_cross_entropy(logits.view(), b.views[0].soft_labels.view()).unwrap();
        let split = perception_loss(logits.view(), &PerceptionTargets::from_batch(&b, 0)).unwrap();
        prop_assert!((direct - split).abs() < 1e-10, "{} vs {}", direct, split);
    }
}

#[test]
fn vanilla_loss_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = 6;
        let k = 4;
        let x = Array2::from_shape_fn((n, 2), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..k)).collect();
        let b = mix_batch_indices(&[x.view()], &labels, k, &OMixConfig::vanilla(1.0).unwrap(), &mut rng).unwrap();
        let v = &b.views[0];
        let y = one_hot(&labels, k);
        let mut expected = Array2::zeros((n, k));
        for r in 0..n {
            let l = v.lambda[r];
            for c in 0..k {
                expected[[r, c]] = l * y[[r, c]] + (1.0 - l) * y[[b.pair_index[r], c]];
            }
            assert_eq!(v.coeff_unk[r], 0.0);
            assert_eq!(v.coeff_i[r], l);
        }
        assert_eq!(v.soft_labels, expected);
        let logits = Array2::from_shape_fn((n, k), |_| rand::Rng::random_range(&mut rng, -3.0..3.0));
        let mixup = soft_cross_entropy(logits.view(), expected.view()).unwrap();
        let ours = perception_loss(logits.view(), &PerceptionTargets::from_batch(&b, 0)).unwrap();
        assert_abs_diff_eq!(mixup, ours, epsilon = 1e-12);
    }
}

#[test]
fn entropy_peaks_at_half_budget() {
    for step in 1..=9 {
        let u = step as f64 / 10.0;
        let grid: Vec<f64> = (1..=1000).map(|g| u * g as f64 / 1000.0).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| ambiguity_entropy(*a, u).total_cmp(&ambiguity_entropy(*b, u)))
            .unwrap();
        let nearest = grid
            .iter()
            .copied()
            .min_by(|a, b| (a - u / 2.0).abs().total_cmp(&(b - u / 2.0).abs()))
            .unwrap();
        assert_eq!(best, nearest, "u = {u}");
    }
}

#[test]
fn views_get_independent_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 4000;
    let x = Array2::<f64>::zeros((n, 1));
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let views: Vec<ArrayView2<f64>> = vec![x.view(), x.view()];
    let b = mix_batch_indices(&views, &labels, 3, &OMixConfig::default(), &mut rng).unwrap();
    let (a, c) = (&b.views[0].lambda, &b.views[1].lambda);
    assert_ne!(a, c);
    let (ma, mc) = (a.mean().unwrap(), c.mean().unwrap());
    let cov = a.iter().zip(c).map(|(p, q)| (p - ma) * (q - mc)).sum::<f64>() / n as f64;
    let corr = cov / (a.std(0.0) * c.std(0.0));
    // |r| under independence is about N(0, 1/n); 4 standard errors.
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
}

#[test]
fn same_seed_same_batch() {
    let x = Array2::from_shape_fn((10, 2), |(i, j)| (i + 2 * j) as f64);
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mix_batch_indices(&[x.view()], &labels, 2, &OMixConfig::default(), &mut rng).unwrap()
    };
    assert_eq!(run(5), run(5));
    let explicit = mix_with(
        &[x.view()],
        &labels,
        2,
        &run(5).pair_index,
        &[run(5).views[0].lambda.to_vec()],
        0.5,
    )
    .unwrap();
    assert_eq!(explicit, run(5));
}
