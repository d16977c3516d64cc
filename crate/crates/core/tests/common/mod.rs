#![allow(dead_code)]

use mocd_core::diffnet::Activation;
use mocd_core::graph::{aggregate, build_graph};
use mocd_core::mass::OMixConfig;
use mocd_core::model::{Bandwidth, ModelConfig, ModelState};
use mocd_core::omix::{mix_batch_indices, OMixBatch};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)`; the floor keeps entries that
/// are zero up to round-off from dominating.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Two views, three classes, eight samples, hidden widths [5, 4].
pub struct Micro {
    pub model: ModelState,
    pub views: Vec<Array2<f64>>,
    pub aggregated: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub omix: OMixBatch,
}

impl Micro {
    pub fn view_refs(&self) -> Vec<ArrayView2<'_, f64>> {
        self.views.iter().map(|x| x.view()).collect()
    }

    pub fn agg_refs(&self) -> Vec<ArrayView2<'_, f64>> {
        self.aggregated.iter().map(|x| x.view()).collect()
    }
}

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        classes: 3,
        view_dims: vec![4, 3],
        hidden: vec![5, 4],
        apn_hidden: vec![3],
        activation: Activation::Tanh,
        gamma: 0.7,
        learnable_gamma: true,
        structural: true,
        alpha: 1.0,
        beta: 1.0,
        bandwidth: Bandwidth::Fixed(1.5),
        k_neighbors: 3,
    }
}

pub fn micro(seed: u64, config: ModelConfig) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let model = ModelState::init(config, &mut rng).unwrap();
    let views: Vec<Array2<f64>> = model
        .config
        .view_dims
        .iter()
        .map(|&d| random_matrix(&mut rng, n, d, 1.5))
        .collect();
    let aggregated = views
        .iter()
        .map(|x| aggregate(&build_graph(x.view(), 3).unwrap(), x.view()).unwrap())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let refs: Vec<ArrayView2<f64>> = views.iter().map(|x| x.view()).collect();
    let omix = mix_batch_indices(&refs, &labels, 3, &OMixConfig::new(1.0, 0.5).unwrap(), &mut rng).unwrap();
    Micro {
        model,
        views,
        aggregated,
        labels,
        omix,
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projected gradient descent on `d·s + γ‖s‖²` over the simplex.
pub fn qp_oracle(d: &[f64], gamma: f64) -> Vec<f64> {
    let m = d.len();
    let mut s = vec![1.0 / m as f64; m];
    let step = 0.25 / gamma;
    for _ in 0..5000 {
        let moved: Vec<f64> = s.iter().zip(d).map(|(s, d)| s - step * (d + 2.0 * gamma * s)).collect();
        s = project_simplex(&moved);
    }
    s
}

pub fn kernel_loops(x: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * sigma * sigma)).exp()
    })
}

/// `Tr(K_Z C K_H C) / (n-1)^2` with an explicit centering matrix.
pub fn hsic_trace(z: ArrayView2<f64>, h: ArrayView2<f64>, sz: f64, sh: f64) -> f64 {
    let n = z.nrows();
    let c = Array2::<f64>::eye(n) - Array2::<f64>::from_elem((n, n), 1.0 / n as f64);
    let m = kernel_loops(z, sz).dot(&c).dot(&kernel_loops(h, sh)).dot(&c);
    m.diag().sum() / ((n - 1) as f64).powi(2)
}

/// The same statistic as a double sum over sample pairs.
pub fn hsic_double_sum(z: ArrayView2<f64>, h: ArrayView2<f64>, sz: f64, sh: f64) -> f64 {
    let n = z.nrows();
    let (kz, kh) = (kernel_loops(z, sz), kernel_loops(h, sh));
    let nf = n as f64;
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..n {
        let (mut rz, mut rh) = (0.0, 0.0);
        for j in 0..n {
            a += kz[[i, j]] * kh[[i, j]];
            rz += kz[[i, j]];
            rh += kh[[i, j]];
        }
        b += rz * rh;
    }
    let total = kz.sum() * kh.sum();
    (a - 2.0 * b / nf + total / (nf * nf)) / ((nf - 1.0) * (nf - 1.0))
}
