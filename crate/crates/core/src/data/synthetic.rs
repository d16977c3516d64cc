use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};

/// Parameters of the synthetic generator. Classes `0..known_classes` are the
/// known ones; the remaining `unknown_classes` follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub known_classes: usize,
    pub unknown_classes: usize,
    pub samples_per_class: usize,
    pub views: usize,
    pub view_dims: Vec<usize>,
    pub latent_dim: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub bias_view_index: Option<usize>,
    #[serde(default)]
    pub bias_strength: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            known_classes: 6,
            unknown_classes: 2,
            samples_per_class: 300,
            views: 3,
            view_dims: vec![16, 16, 6],
            latent_dim: 8,
            noise_std: 1.0,
            bias_view_index: Some(2),
            bias_strength: 60.0,
        }
    }
}

impl SyntheticSpec {
    pub fn classes(&self) -> usize {
        self.known_classes + self.unknown_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.known_classes == 0 || self.samples_per_class == 0 || self.views == 0 || self.latent_dim == 0 {
            return Err(Error::domain("class, sample, view, and latent counts must be positive"));
        }
        if self.view_dims.len() != self.views {
            return Err(Error::domain(format!(
                "{} view dims for {} views",
                self.view_dims.len(),
                self.views
            )));
        }
        if self.view_dims.contains(&0) {
            return Err(Error::domain("view dims must be positive"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::domain("noise_std must be finite and non-negative"));
        }
        if !(self.bias_strength >= 0.0) || !self.bias_strength.is_finite() {
            return Err(Error::domain("bias_strength must be finite and non-negative"));
        }
        if let Some(b) = self.bias_view_index {
            if b >= self.views {
                return Err(Error::domain(format!("bias view {b} out of range")));
            }
            if self.view_dims[b] < self.known_classes {
                return Err(Error::domain(format!(
                    "biased view has {} dims, needs at least {} for the class code",
                    self.view_dims[b], self.known_classes
                )));
            }
        }
        Ok(())
    }
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

/// Latent Gaussian classes seen through random linear views.
///
/// Each class has a latent prototype; prototypes are spread so every pair is
/// at least `4 * noise_std` apart. A sample is its prototype plus isotropic
/// noise, and view `v` is a fixed random linear map of the latent sample plus
/// fresh noise. The biased view additionally carries `bias_strength` times a
/// one-hot code of the class on its first `known_classes` coordinates for
/// known-class samples; unknown-class samples get the code of a random known
/// class, so the code carries no information about them.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<MultiViewDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.classes();

    let mut prototypes = normal_matrix(&mut rng, classes, spec.latent_dim, 1.0);
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d = (&prototypes.row(a) - &prototypes.row(b)).mapv(|x| x * x).sum().sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if min_dist.is_finite() && min_dist > 0.0 {
        prototypes *= (4.0 * spec.noise_std / min_dist).max(1.0);
    }

    let maps: Vec<Array2<f64>> = spec
        .view_dims
        .iter()
        .map(|&d| normal_matrix(&mut rng, spec.latent_dim, d, (1.0 / spec.latent_dim as f64).sqrt()))
        .collect();

    let n = classes * spec.samples_per_class;
    let labels: Vec<usize> = (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, spec.samples_per_class))
        .collect();
    let mut latent = Array2::zeros((n, spec.latent_dim));
    for (mut row, &y) in latent.rows_mut().into_iter().zip(&labels) {
        let noise: Array1<f64> = (0..spec.latent_dim)
            .map(|_| spec.noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        row.assign(&(&prototypes.row(y) + &noise));
    }
    let mut views: Vec<Array2<f64>> = maps
        .iter()
        .map(|a| latent.dot(a) + normal_matrix(&mut rng, n, a.ncols(), spec.noise_std))
        .collect();

    if let Some(b) = spec.bias_view_index {
        let mut code_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for (i, &y) in labels.iter().enumerate() {
            let code = if y < spec.known_classes {
                y
            } else {
                code_rng.random_range(0..spec.known_classes)
            };
            views[b][[i, code]] += spec.bias_strength;
        }
    }

    MultiViewDataset::new("synthetic", views, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            known_classes: 3,
            unknown_classes: 1,
            samples_per_class: 20,
            views: 2,
            view_dims: vec![4, 5],
            latent_dim: 3,
            noise_std: 0.5,
            bias_view_index: Some(1),
            bias_strength: 2.0,
        }
    }

    #[test]
    fn dimensions_and_determinism() {
        let d = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(d.len(), 80);
        assert_eq!(d.view_dims(), vec![4, 5]);
        assert_eq!(d.class_count, 4);
        assert!(d.views.iter().all(|x| x.iter().all(|v| v.is_finite())));
        assert_eq!(generate_synthetic(&small(), 3).unwrap(), d);
        assert_ne!(generate_synthetic(&small(), 4).unwrap(), d);
    }

    #[test]
    fn zero_strength_equals_no_bias() {
        let mut a = small();
        a.bias_strength = 0.0;
        let mut b = small();
        b.bias_view_index = None;
        assert_eq!(generate_synthetic(&a, 9).unwrap(), generate_synthetic(&b, 9).unwrap());
    }

    #[test]
    fn infeasible_specs() {
        let mut s = small();
        s.view_dims = vec![4, 2];
        assert!(generate_synthetic(&s, 0).is_err());
        let mut s = small();
        s.bias_view_index = Some(2);
        assert!(generate_synthetic(&s, 0).is_err());
        let mut s = small();
        s.view_dims = vec![4];
        assert!(generate_synthetic(&s, 0).is_err());
    }
}
