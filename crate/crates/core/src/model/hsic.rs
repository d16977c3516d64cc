//! Biased HSIC estimator with Gaussian kernels.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the Gaussian kernel width of each argument is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median pairwise Euclidean distance of the argument, recomputed per
    /// call and held constant under differentiation.
    #[default]
    Median,
    Fixed(f64),
}

impl Bandwidth {
    pub fn sigma_for(self, x: ArrayView2<f64>) -> f64 {
        match self {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Median => median_distance(x),
        }
    }
}

fn squared_distance_matrix(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let norms: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = x.dot(&x.t());
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0)
        }
    })
}

/// Median of the pairwise distances; 1 when every pair coincides.
pub fn median_distance(x: ArrayView2<f64>) -> f64 {
    let d2 = squared_distance_matrix(x);
    let n = x.nrows();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| d2[[i, j]].sqrt())
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 1e-12 {
        med
    } else {
        1.0
    }
}

pub fn gaussian_kernel(x: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    let scale = -1.0 / (2.0 * sigma * sigma);
    squared_distance_matrix(x).mapv(|d| (d * scale).exp())
}

/// `C K C` for the centering matrix `C = I - 11ᵀ/n`.
fn double_center(k: &Array2<f64>) -> Array2<f64> {
    let row = k.mean_axis(Axis(1)).unwrap();
    let col = k.mean_axis(Axis(0)).unwrap();
    let all = k.mean().unwrap();
    Array2::from_shape_fn(k.raw_dim(), |(i, j)| k[[i, j]] - row[i] - col[j] + all)
}

fn check(z: ArrayView2<f64>, h: ArrayView2<f64>, policy: Bandwidth) -> Result<()> {
    if z.nrows() != h.nrows() {
        return Err(Error::shape(format!(
            "HSIC arguments have {} and {} rows",
            z.nrows(),
            h.nrows()
        )));
    }
    if z.nrows() < 2 {
        return Err(Error::domain("HSIC needs at least two samples"));
    }
    if let Bandwidth::Fixed(s) = policy {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::domain(format!("bandwidth {s} must be positive")));
        }
    }
    Ok(())
}

/// `Tr(K_Z C K_H C) / (n - 1)^2`.
pub fn hsic(z: ArrayView2<f64>, h: ArrayView2<f64>, policy: Bandwidth) -> Result<f64> {
    check(z, h, policy)?;
    let kz = gaussian_kernel(z, policy.sigma_for(z));
    let kh = gaussian_kernel(h, policy.sigma_for(h));
    let n1 = (z.nrows() - 1) as f64;
    Ok((double_center(&kz) * &kh).sum() / (n1 * n1))
}

/// HSIC value and its gradients with respect to both arguments.
#[derive(Debug, Clone)]
pub struct HsicGrad {
    pub value: f64,
    pub dz: Array2<f64>,
    pub dh: Array2<f64>,
}

/// Gradient of `Σ_ab G_ab k(x_a, x_b)` with respect to `x` for symmetric `G`.
fn kernel_input_grad(x: ArrayView2<f64>, k: &Array2<f64>, g: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let m = g * k;
    let row_sums = m.sum_axis(Axis(1));
    let mut out = m.dot(&x);
    for (mut r, (xr, s)) in out.rows_mut().into_iter().zip(x.rows().into_iter().zip(&row_sums)) {
        r.scaled_add(-s, &xr);
    }
    out * (2.0 / (sigma * sigma))
}

pub fn hsic_with_grad(z: ArrayView2<f64>, h: ArrayView2<f64>, policy: Bandwidth) -> Result<HsicGrad> {
    check(z, h, policy)?;
    let (sz, sh) = (policy.sigma_for(z), policy.sigma_for(h));
    let kz = gaussian_kernel(z, sz);
    let kh = gaussian_kernel(h, sh);
    let n1 = (z.nrows() - 1) as f64;
    let norm = 1.0 / (n1 * n1);
    let gz = double_center(&kh) * norm;
    let gh = double_center(&kz) * norm;
    let value = (&gh * &kh).sum();
    Ok(HsicGrad {
        value,
        dz: kernel_input_grad(z, &kz, &gz, sz),
        dh: kernel_input_grad(h, &kh, &gh, sh),
    })
}
