use ndarray::{Array2, ArrayView2};

use crate::diffnet::{log_softmax, one_hot, soft_cross_entropy_with_grad};
use crate::error::{Error, Result};
use crate::omix::OMixBatch;

/// Cross-entropy of view logits against one-hot labels.
pub fn closed_set_loss(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    Ok(closed_set_loss_with_grad(logits, labels)?.0)
}

pub fn closed_set_loss_with_grad(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.nrows()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::domain(format!("label {y} out of range")));
    }
    soft_cross_entropy_with_grad(logits, one_hot(labels, logits.ncols()).view())
}

/// Per-row targets of the perception loss: the two parent classes and the
/// weights of the three cross-entropy terms.
#[derive(Debug, Clone, Copy)]
pub struct PerceptionTargets<'a> {
    pub class_i: &'a [usize],
    pub class_j: &'a [usize],
    pub w_i: &'a [f64],
    pub w_j: &'a [f64],
    pub w_unk: &'a [f64],
}

impl<'a> PerceptionTargets<'a> {
    pub fn from_batch(batch: &'a OMixBatch, view: usize) -> Self {
        let v = &batch.views[view];
        Self {
            class_i: &batch.class_i,
            class_j: &batch.class_j,
            w_i: v.coeff_i.as_slice().expect("standard layout"),
            w_j: v.coeff_j.as_slice().expect("standard layout"),
            w_unk: v.coeff_unk.as_slice().expect("standard layout"),
        }
    }

    fn validate(&self, rows: usize, classes: usize) -> Result<()> {
        let lens = [
            self.class_i.len(),
            self.class_j.len(),
            self.w_i.len(),
            self.w_j.len(),
            self.w_unk.len(),
        ];
        if lens.iter().any(|&l| l != rows) {
            return Err(Error::shape(format!("perception targets {lens:?} for {rows} rows")));
        }
        for r in 0..rows {
            let (a, b, c) = (self.w_i[r], self.w_j[r], self.w_unk[r]);
            if !(a >= 0.0 && b >= 0.0 && c >= 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "coefficient row {r} is not a convex combination"
                )));
            }
            if self.class_i[r] >= classes || self.class_j[r] >= classes {
                return Err(Error::domain(format!("class out of range in row {r}")));
            }
        }
        Ok(())
    }
}

/// Mean over rows of `w_i CE(z, y_i) + w_j CE(z, y_j) + w_unk CE(z, 1/K)`.
pub fn perception_loss(logits: ArrayView2<f64>, targets: &PerceptionTargets) -> Result<f64> {
    Ok(perception_loss_with_grad(logits, targets)?.0)
}

pub fn perception_loss_with_grad(logits: ArrayView2<f64>, targets: &PerceptionTargets) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if n == 0 {
        return Err(Error::domain("empty batch"));
    }
    targets.validate(n, k)?;
    let logp = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, k));
    let uniform = 1.0 / k as f64;
    for r in 0..n {
        let lp = logp.row(r);
        let (wi, wj, wu) = (targets.w_i[r], targets.w_j[r], targets.w_unk[r]);
        let ce_i = -lp[targets.class_i[r]];
        let ce_j = -lp[targets.class_j[r]];
        let ce_u = -lp.sum() * uniform;
        loss += wi * ce_i + wj * ce_j + wu * ce_u;

        let mut g = grad.row_mut(r);
        for (c, slot) in g.iter_mut().enumerate() {
            *slot = (wi + wj + wu) * lp[c].exp() - wu * uniform;
        }
        g[targets.class_i[r]] -= wi;
        g[targets.class_j[r]] -= wj;
    }
    Ok((loss / n as f64, grad / n as f64))
}
