use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{closed_set_loss_with_grad, perception_loss_with_grad, PerceptionTargets};
use super::{
    fuse, hsic_with_grad, msan_backward, msan_forward, ApnView, ModelParams, ModelState, MsanTape, ViewParams,
};
use crate::diffnet::{backward, mlp_forward, GradTape};
use crate::error::{Error, Result};
use crate::omix::OMixBatch;

/// Data of one optimization step. Features are already standardized and
/// `aggregated` holds the graph-aggregated rows matching `views`.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub views: &'a [ArrayView2<'a, f64>],
    pub aggregated: Option<&'a [ArrayView2<'a, f64>]>,
    pub labels: &'a [usize],
    pub omix: Option<&'a OMixBatch>,
}

/// Loss components summed over views.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cc: f64,
    pub om: f64,
    pub cd: f64,
    pub total: f64,
}

struct ViewPass {
    tape: MsanTape,
    logits: Array2<f64>,
    cc: f64,
    d_cc: Array2<f64>,
    apn: Option<ApnPass>,
}

struct ApnPass {
    tape: GradTape,
    output: Array2<f64>,
    om: f64,
    d_om: Option<Array2<f64>>,
}

/// Total objective and its gradient with respect to every parameter.
///
/// The perception term needs `inputs.omix`; without it the term is zero. The
/// perception encoder is skipped entirely when both `alpha` and `beta` are
/// zero, so its gradient is exactly zero.
pub fn total_loss(model: &ModelState, inputs: &BatchInputs) -> Result<(LossBreakdown, ModelParams)> {
    let cfg = &model.config;
    let n = inputs.labels.len();
    if n < 2 {
        return Err(Error::domain("a training batch needs at least two samples"));
    }
    if inputs.views.len() != model.views() {
        return Err(Error::shape(format!(
            "{} views given, model has {}",
            inputs.views.len(),
            model.views()
        )));
    }
    if cfg.structural != inputs.aggregated.is_some() {
        return Err(Error::shape(
            "aggregated features must be given exactly when the structural branch is enabled",
        ));
    }
    if let Some(b) = inputs.omix {
        if b.len() != n || b.views.len() != model.views() {
            return Err(Error::shape("mixed batch does not match the step data"));
        }
    }
    let use_om = cfg.alpha > 0.0 && inputs.omix.is_some();
    let use_cd = cfg.beta > 0.0;
    let use_apn = use_om || use_cd;

    let passes = (0..model.views())
        .into_par_iter()
        .map(|v| -> Result<ViewPass> {
            let params = &model.params.views[v];
            let mut tape = MsanTape::default();
            let agg = inputs.aggregated.map(|a| a[v]);
            let logits = msan_forward(&params.msan, model.gamma(v), inputs.views[v], agg, Some(&mut tape))?;
            let (cc, d_cc) = closed_set_loss_with_grad(logits.view(), inputs.labels)?;
            let apn = if use_apn {
                let x = match inputs.omix {
                    Some(b) => b.views[v].mixed_features.view(),
                    None => inputs.views[v],
                };
                let mut apn_tape = GradTape::new();
                let output = mlp_forward(&params.apn.vartheta, x, Some(&mut apn_tape))?;
                let (om, d_om) = match inputs.omix {
                    Some(b) if use_om => {
                        let (l, g) = perception_loss_with_grad(output.view(), &PerceptionTargets::from_batch(b, v))?;
                        (l, Some(g))
                    }
                    _ => (0.0, None),
                };
                Some(ApnPass {
                    tape: apn_tape,
                    output,
                    om,
                    d_om,
                })
            } else {
                None
            };
            Ok(ViewPass {
                tape,
                logits,
                cc,
                d_cc,
                apn,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut breakdown = LossBreakdown::default();
    for p in &passes {
        breakdown.cc += p.cc;
        breakdown.om += p.apn.as_ref().map_or(0.0, |a| a.om);
    }

    let views = model.views() as f64;
    let mut d_fused = Array2::<f64>::zeros(passes[0].logits.raw_dim());
    let mut d_apn_hsic: Vec<Option<Array2<f64>>> = vec![None; passes.len()];
    if use_cd {
        let logits: Vec<Array2<f64>> = passes.iter().map(|p| p.logits.clone()).collect();
        let z = fuse(&logits)?;
        let grads = passes
            .par_iter()
            .map(|p| {
                let h = &p.apn.as_ref().expect("perception pass present").output;
                hsic_with_grad(z.view(), h.view(), cfg.bandwidth)
            })
            .collect::<Result<Vec<_>>>()?;
        for (v, g) in grads.into_iter().enumerate() {
            breakdown.cd += g.value;
            d_fused.scaled_add(cfg.beta, &g.dz);
            d_apn_hsic[v] = Some(g.dh * cfg.beta);
        }
    }
    breakdown.total = breakdown.cc + cfg.alpha * breakdown.om + cfg.beta * breakdown.cd;
    let d_view_from_fused = d_fused / views;

    let grads = passes
        .par_iter()
        .zip(d_apn_hsic.par_iter())
        .enumerate()
        .map(|(v, (p, d_hsic))| -> Result<ViewParams> {
            let params = &model.params.views[v];
            let d_e = &p.d_cc + &d_view_from_fused;
            let msan = msan_backward(&params.msan, model.gamma(v), cfg.learnable_gamma, &p.tape, d_e.view())?;
            let vartheta = match &p.apn {
                Some(a) => {
                    let mut d_out = Array2::<f64>::zeros(a.output.raw_dim());
                    if let Some(d) = &a.d_om {
                        d_out.scaled_add(cfg.alpha, d);
                    }
                    if let Some(d) = d_hsic {
                        d_out += d;
                    }
                    backward(&params.apn.vartheta, &a.tape, d_out.view(), false)?.params
                }
                None => params.apn.vartheta.zeros_like(),
            };
            Ok(ViewParams {
                msan,
                apn: ApnView { vartheta },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((breakdown, ModelParams { views: grads }))
}
