//! Multi-view datasets: synthetic generation, directory storage, open-set
//! splits, and per-view standardization.

mod io;
mod split;
mod synthetic;

pub use io::{load_dataset, save_dataset, DatasetMeta};
pub use split::{open_split, OpenSplit, SplitRatios};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `views[v]` is `N x d_v`; `labels` are class ids below `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    pub views: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl MultiViewDataset {
    pub fn new(
        name: impl Into<String>,
        views: Vec<Array2<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::domain("a dataset needs at least one view"));
        }
        for (v, x) in views.iter().enumerate() {
            if x.nrows() != labels.len() {
                return Err(Error::shape(format!(
                    "view {v} has {} rows for {} labels",
                    x.nrows(),
                    labels.len()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::domain(format!(
                "label {bad} is not below class count {class_count}"
            )));
        }
        Ok(Self {
            name: name.into(),
            views,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|x| x.ncols()).collect()
    }

    pub fn view_refs(&self) -> Vec<ArrayView2<'_, f64>> {
        self.views.iter().map(|x| x.view()).collect()
    }

    /// Rows `indices` of every view, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::domain(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(Self {
            name: self.name.clone(),
            views: self.views.iter().map(|x| x.select(Axis(0), indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        })
    }
}

/// Per-view z-scoring with statistics taken from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<Array1<f64>>,
    pub scales: Vec<Array1<f64>>,
}

impl Standardizer {
    pub fn new(means: Vec<Array1<f64>>, scales: Vec<Array1<f64>>) -> Result<Self> {
        if means.len() != scales.len() {
            return Err(Error::shape("means and scales disagree on the number of views"));
        }
        for (m, s) in means.iter().zip(&scales) {
            if m.len() != s.len() {
                return Err(Error::shape("mean and scale lengths differ"));
            }
            if s.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || m.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain("scales must be positive and finite"));
            }
        }
        Ok(Self { means, scales })
    }

    pub fn identity(view_dims: &[usize]) -> Self {
        Self {
            means: view_dims.iter().map(|&d| Array1::zeros(d)).collect(),
            scales: view_dims.iter().map(|&d| Array1::ones(d)).collect(),
        }
    }

    /// Column means and population standard deviations; near-constant
    /// columns keep scale 1.
    pub fn fit(views: &[ArrayView2<f64>]) -> Result<Self> {
        let mut means = Vec::with_capacity(views.len());
        let mut scales = Vec::with_capacity(views.len());
        for x in views {
            if x.nrows() == 0 {
                return Err(Error::domain("cannot standardize an empty view"));
            }
            let mean = x.mean_axis(Axis(0)).expect("non-empty");
            let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s < 1e-12 { 1.0 } else { s });
            means.push(mean);
            scales.push(std);
        }
        Self::new(means, scales)
    }

    pub fn apply(&self, view: usize, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (m, s) = match (self.means.get(view), self.scales.get(view)) {
            (Some(m), Some(s)) => (m, s),
            _ => return Err(Error::shape(format!("no statistics for view {view}"))),
        };
        if x.ncols() != m.len() {
            return Err(Error::shape(format!(
                "view {view} has {} columns, expected {}",
                x.ncols(),
                m.len()
            )));
        }
        Ok((&x - m) / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_invariants() {
        let x = array![[1.0], [2.0]];
        assert!(MultiViewDataset::new("d", vec![x.clone()], vec![0, 2], 2).is_err());
        assert!(MultiViewDataset::new("d", vec![x.clone()], vec![0], 2).is_err());
        let d = MultiViewDataset::new("d", vec![x], vec![0, 1], 2).unwrap();
        let s = d.subset(&[1]).unwrap();
        assert_eq!(s.views[0], array![[2.0]]);
        assert_eq!(s.labels, vec![1]);
        assert!(d.subset(&[2]).is_err());
    }

    #[test]
    fn standardizer_uses_given_statistics() {
        let train = array![[0.0, 5.0], [2.0, 5.0]];
        let s = Standardizer::fit(&[train.view()]).unwrap();
        assert_eq!(s.means[0], array![1.0, 5.0]);
        assert_eq!(s.scales[0], array![1.0, 1.0]);
        let out = s.apply(0, array![[3.0, 7.0]].view()).unwrap();
        assert_eq!(out, array![[2.0, 2.0]]);
        assert!(s.apply(1, train.view()).is_err());
    }
}
