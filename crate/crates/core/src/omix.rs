//! Per-view O-Mix virtual batches.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::diffnet::class_indices;
use crate::error::{Error, Result};
use crate::mass::{adaptive_uncertainty, omix_masses, omix_soft_label_into, OMixConfig};

/// Draws a mixing coefficient from `Beta(tau, tau)`.
pub fn sample_lambda<R: Rng + ?Sized>(rng: &mut R, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("tau = {tau} must be positive")));
    }
    let beta = Beta::new(tau, tau).map_err(|e| Error::domain(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Weights of the three cross-entropy terms of the perception loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionCoefficients {
    pub w_i: f64,
    pub w_j: f64,
    pub w_unk: f64,
}

/// The ambiguous-pair mass is split evenly between the two parents
/// (`u/4` each) and the out-of-frame mass goes to the uniform target.
pub fn perception_coefficients(lambda: f64, u: f64) -> Result<PerceptionCoefficients> {
    let m = omix_masses(lambda, u)?;
    Ok(PerceptionCoefficients {
        w_i: m.m_i + m.m_amb / 2.0,
        w_j: m.m_j + m.m_amb / 2.0,
        w_unk: m.m_empty,
    })
}

/// One view of an O-Mix batch.
#[derive(Debug, Clone, PartialEq)]
pub struct OMixView {
    pub mixed_features: Array2<f64>,
    pub lambda: Array1<f64>,
    pub u: Array1<f64>,
    /// Row-stochastic `n x K`.
    pub soft_labels: Array2<f64>,
    pub coeff_i: Array1<f64>,
    pub coeff_j: Array1<f64>,
    pub coeff_unk: Array1<f64>,
}

/// Mixed samples for every view, all built from the same pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct OMixBatch {
    pub views: Vec<OMixView>,
    /// `pair_index[r]` is the row mixed into row `r`.
    pub pair_index: Vec<usize>,
    /// Class of the first parent of each row.
    pub class_i: Vec<usize>,
    /// Class of the partner of each row.
    pub class_j: Vec<usize>,
    pub classes: usize,
}

impl OMixBatch {
    pub fn len(&self) -> usize {
        self.pair_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_index.is_empty()
    }
}

fn check_views(features: &[ArrayView2<f64>], rows: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::domain("at least one view is required"));
    }
    for (v, x) in features.iter().enumerate() {
        if x.nrows() != rows {
            return Err(Error::domain(format!(
                "view {v} has {} rows, expected {rows}",
                x.nrows()
            )));
        }
    }
    Ok(())
}

/// Builds a batch with one random pairing shared across views and an
/// independent coefficient per view per sample.
///
/// `labels` is a one-hot `n x K` matrix.
pub fn mix_batch<R: Rng + ?Sized>(
    features: &[ArrayView2<f64>],
    labels: ArrayView2<f64>,
    config: &OMixConfig,
    rng: &mut R,
) -> Result<OMixBatch> {
    let classes = class_indices(labels)?;
    mix_batch_indices(features, &classes, labels.ncols(), config, rng)
}

/// [`mix_batch`] with integer class labels.
pub fn mix_batch_indices<R: Rng + ?Sized>(
    features: &[ArrayView2<f64>],
    labels: &[usize],
    classes: usize,
    config: &OMixConfig,
    rng: &mut R,
) -> Result<OMixBatch> {
    config.validate()?;
    check_views(features, labels.len())?;
    let n = labels.len();
    let mut pair_index: Vec<usize> = (0..n).collect();
    pair_index.shuffle(rng);
    let beta = Beta::new(config.tau, config.tau).map_err(|e| Error::domain(e.to_string()))?;
    let lambdas: Vec<Vec<f64>> = (0..features.len())
        .map(|_| {
            let mut view_rng = ChaCha8Rng::seed_from_u64(rng.random());
            (0..n).map(|_| beta.sample(&mut view_rng)).collect()
        })
        .collect();
    mix_with(features, labels, classes, &pair_index, &lambdas, config.c)
}

/// Deterministic core of [`mix_batch`] for a given pairing and per-view
/// coefficients.
pub fn mix_with(
    features: &[ArrayView2<f64>],
    labels: &[usize],
    classes: usize,
    pair_index: &[usize],
    lambdas: &[Vec<f64>],
    c: f64,
) -> Result<OMixBatch> {
    let n = labels.len();
    check_views(features, n)?;
    if classes < 2 {
        return Err(Error::domain("at least two classes are required"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::domain(format!("label {bad} out of range for {classes} classes")));
    }
    if pair_index.len() != n {
        return Err(Error::shape(format!(
            "pairing has {} entries for {n} rows",
            pair_index.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in pair_index {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::domain("pair_index is not a permutation"));
        }
    }
    if lambdas.len() != features.len() || lambdas.iter().any(|l| l.len() != n) {
        return Err(Error::shape("one coefficient per view per sample is required"));
    }

    let class_j: Vec<usize> = pair_index.iter().map(|&p| labels[p]).collect();
    let views = features
        .iter()
        .zip(lambdas)
        .map(|(x, lam)| {
            let mut mixed = Array2::zeros(x.raw_dim());
            let mut soft = Array2::zeros((n, classes));
            let mut u = Array1::zeros(n);
            let mut ci = Array1::zeros(n);
            let mut cj = Array1::zeros(n);
            let mut cu = Array1::zeros(n);
            for r in 0..n {
                let l = lam[r];
                let partner = x.row(pair_index[r]);
                for ((dst, &a), &b) in mixed.row_mut(r).iter_mut().zip(x.row(r)).zip(partner) {
                    *dst = l * a + (1.0 - l) * b;
                }
                u[r] = adaptive_uncertainty(l, c)?;
                let mass = omix_masses(l, u[r])?;
                omix_soft_label_into(&mass, labels[r], class_j[r], soft.row_mut(r).as_slice_mut().unwrap());
                let w = perception_coefficients(l, u[r])?;
                ci[r] = w.w_i;
                cj[r] = w.w_j;
                cu[r] = w.w_unk;
            }
            Ok(OMixView {
                mixed_features: mixed,
                lambda: Array1::from(lam.clone()),
                u,
                soft_labels: soft,
                coeff_i: ci,
                coeff_j: cj,
                coeff_unk: cu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OMixBatch {
        views,
        pair_index: pair_index.to_vec(),
        class_i: labels.to_vec(),
        class_j,
        classes,
    })
}

impl OMixView {
    /// Largest deviation of a soft-label row sum from one.
    pub fn max_label_defect(&self) -> f64 {
        self.soft_labels
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::one_hot;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn coefficient_examples() {
        let w = perception_coefficients(0.5, 0.2).unwrap();
        assert_abs_diff_eq!(w.w_i, 0.45, epsilon = 1e-15);
        assert_abs_diff_eq!(w.w_j, 0.45, epsilon = 1e-15);
        assert_abs_diff_eq!(w.w_unk, 0.10, epsilon = 1e-15);

        let w = perception_coefficients(0.7, 0.0).unwrap();
        assert_eq!((w.w_i, w.w_j, w.w_unk), (0.7, 1.0 - 0.7, 0.0));

        let w = perception_coefficients(1.0, 0.4).unwrap();
        assert_abs_diff_eq!(w.w_i, 0.70, epsilon = 1e-15);
        assert_abs_diff_eq!(w.w_j, 0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(w.w_unk, 0.20, epsilon = 1e-15);
    }

    #[test]
    fn hand_interpolation() {
        let x = array![[0.0], [2.0]];
        let b = mix_with(&[x.view()], &[0, 1], 2, &[1, 0], &[vec![0.25, 0.25]], 0.5).unwrap();
        assert_eq!(b.views[0].mixed_features, array![[1.5], [0.5]]);
        assert_eq!(b.class_j, vec![1, 0]);
    }

    #[test]
    fn self_pairing_reproduces_inputs() {
        let x = array![[0.3, -1.0], [2.0, 4.5], [7.0, 0.1]];
        let b = mix_with(&[x.view()], &[0, 1, 2], 3, &[0, 1, 2], &[vec![0.1, 0.77, 0.5]], 0.5).unwrap();
        for (a, e) in b.views[0].mixed_features.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_budget_is_vanilla_mixup() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let labels = one_hot(&[0, 1, 2, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = OMixConfig::new(1.0, 0.0).unwrap();
        let b = mix_batch(&[x.view(), x.view()], labels.view(), &cfg, &mut rng).unwrap();
        for view in &b.views {
            for r in 0..4 {
                let l = view.lambda[r];
                for k in 0..3 {
                    let vanilla = l * labels[[r, k]] + (1.0 - l) * labels[[b.pair_index[r], k]];
                    assert_eq!(view.soft_labels[[r, k]], vanilla);
                }
            }
        }
    }

    #[test]
    fn batch_invariants_and_determinism() {
        let x0 = Array2::from_shape_fn((16, 3), |(i, j)| (i * 3 + j) as f64);
        let x1 = Array2::from_shape_fn((16, 2), |(i, j)| (i as f64).sin() + j as f64);
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let cfg = OMixConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            mix_batch_indices(&[x0.view(), x1.view()], &labels, 4, &cfg, &mut rng).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let mut sorted = a.pair_index.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        assert_ne!(a.views[0].lambda, a.views[1].lambda);
        for v in &a.views {
            assert!(v.max_label_defect() < 1e-12);
            for r in 0..16 {
                assert_abs_diff_eq!(v.coeff_i[r] + v.coeff_j[r] + v.coeff_unk[r], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_views() {
        let a = Array2::<f64>::zeros((4, 2));
        let b = Array2::<f64>::zeros((3, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = OMixConfig::default();
        assert!(mix_batch_indices(&[a.view(), b.view()], &[0, 1, 0, 1], 2, &cfg, &mut rng).is_err());
        assert!(mix_batch_indices(&[], &[0, 1], 2, &cfg, &mut rng).is_err());
        assert!(mix_with(&[a.view()], &[0, 1, 0, 1], 2, &[0, 0, 1, 2], &[vec![0.5; 4]], 0.1).is_err());
    }

    #[test]
    fn lambda_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_lambda(&mut rng, 0.0).is_err());
        assert!(sample_lambda(&mut rng, -1.0).is_err());
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(sample_lambda(&mut a, 1.0).unwrap(), sample_lambda(&mut b, 1.0).unwrap());
        }
    }

    #[test]
    fn uniform_lambda_statistics() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut draws: Vec<f64> = (0..n).map(|_| sample_lambda(&mut rng, 1.0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        draws.sort_by(f64::total_cmp);
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((hi - x).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic Kolmogorov-Smirnov critical value at significance 0.01.
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn small_tau_concentrates_at_the_ends() {
        let central = |tau: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..20_000)
                .filter(|_| (0.4..=0.6).contains(&sample_lambda(&mut rng, tau).unwrap()))
                .count()
        };
        assert!(central(0.2) < central(1.0));
    }
}
