use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (r, &y) in labels.iter().enumerate() {
        out[[r, y]] = 1.0;
    }
    out
}

/// Class index of every row of a one-hot matrix.
pub fn class_indices(one_hot: ArrayView2<f64>) -> Result<Vec<usize>> {
    one_hot
        .rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            let mut hot = None;
            for (k, &v) in row.iter().enumerate() {
                match v {
                    v if v == 1.0 && hot.is_none() => hot = Some(k),
                    0.0 => {}
                    _ => return Err(Error::domain(format!("row {r} is not one-hot"))),
                }
            }
            hot.ok_or_else(|| Error::domain(format!("row {r} is not one-hot")))
        })
        .collect()
}

pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

fn check_targets(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
    if logits.dim() != targets.dim() {
        return Err(Error::shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.dim()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::domain("empty batch"));
    }
    for (r, row) in targets.axis_iter(Axis(0)).enumerate() {
        let sum: f64 = row.sum();
        if row.iter().any(|&t| !(t >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("target row {r} is not a probability vector")));
        }
    }
    Ok(())
}

/// Mean over rows of `-Σ_k t_k log softmax(z)_k`.
pub fn soft_cross_entropy(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    check_targets(logits, targets)?;
    let logp = log_softmax(logits);
    Ok(-(&logp * &targets).sum() / logits.nrows() as f64)
}

/// Loss and its gradient with respect to the logits.
pub fn soft_cross_entropy_with_grad(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_targets(logits, targets)?;
    let n = logits.nrows() as f64;
    let logp = log_softmax(logits);
    let loss = -(&logp * &targets).sum() / n;
    let grad = (logp.mapv(f64::exp) - targets) / n;
    Ok((loss, grad))
}
