//! Two-branch multi-view network: per-view semantic alignment encoders,
//! ambiguity perception encoders, the training objective, and inference.

mod hsic;
mod losses;
mod objective;

pub use hsic::{gaussian_kernel, hsic, hsic_with_grad, median_distance, Bandwidth, HsicGrad};
pub use losses::{
    closed_set_loss, closed_set_loss_with_grad, perception_loss, perception_loss_with_grad, PerceptionTargets,
};
pub use objective::{total_loss, BatchInputs, LossBreakdown};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::diffnet::checkpoint::Checkpoint;
use crate::diffnet::{backward, init_params, mlp_forward, softmax, Activation, GradTape, NetSpec, Params, Tensors};
use crate::error::{Error, Result};
use crate::graph::{aggregate, build_graph, AffinityGraph};

/// Architecture and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub classes: usize,
    pub view_dims: Vec<usize>,
    /// Hidden widths of both semantic-alignment branches.
    pub hidden: Vec<usize>,
    /// Hidden widths of the perception encoder.
    pub apn_hidden: Vec<usize>,
    pub activation: Activation,
    /// Blend between feature and structural branch.
    pub gamma: f64,
    pub learnable_gamma: bool,
    /// Whether the graph-aggregated structural branch is present.
    pub structural: bool,
    pub alpha: f64,
    pub beta: f64,
    pub bandwidth: Bandwidth,
    pub k_neighbors: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() {
            return Err(Error::domain("at least one view is required"));
        }
        if self.classes < 2 {
            return Err(Error::domain("at least two classes are required"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::domain(format!("gamma = {} is outside [0, 1]", self.gamma)));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::domain("alpha and beta must be non-negative"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::domain("k_neighbors must be positive"));
        }
        Ok(())
    }

    fn net(&self, input: usize, hidden: &[usize]) -> Result<NetSpec> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(self.classes);
        NetSpec::new(dims, self.activation)
    }
}

/// Semantic-alignment encoder of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MsanView {
    /// Feature branch `h`.
    pub theta: Params,
    /// Structural branch `g`, applied to graph-aggregated features.
    pub phi: Option<Params>,
    /// Blend logit; only trained in learnable-blend mode.
    pub gamma_logit: f64,
}

/// Ambiguity perception encoder of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ApnView {
    pub vartheta: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewParams {
    pub msan: MsanView,
    pub apn: ApnView,
}

/// Every trainable parameter. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub views: Vec<ViewParams>,
}

impl Tensors for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for v in &self.views {
            out.extend(v.msan.theta.tensors());
            if let Some(phi) = &v.msan.phi {
                out.extend(phi.tensors());
            }
            out.push(std::slice::from_ref(&v.msan.gamma_logit));
            out.extend(v.apn.vartheta.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for v in &mut self.views {
            out.extend(v.msan.theta.tensors_mut());
            if let Some(phi) = &mut v.msan.phi {
                out.extend(phi.tensors_mut());
            }
            out.push(std::slice::from_mut(&mut v.msan.gamma_logit));
            out.extend(v.apn.vartheta.tensors_mut());
        }
        out
    }
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            views: self
                .views
                .iter()
                .map(|v| ViewParams {
                    msan: MsanView {
                        theta: v.msan.theta.zeros_like(),
                        phi: v.msan.phi.as_ref().map(Params::zeros_like),
                        gamma_logit: 0.0,
                    },
                    apn: ApnView {
                        vartheta: v.apn.vartheta.zeros_like(),
                    },
                })
                .collect(),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trained (or freshly initialized) model together with its input
/// standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

/// Forward intermediates of one semantic-alignment encoder.
#[derive(Debug, Clone, Default)]
pub struct MsanTape {
    pub h_tape: GradTape,
    pub g_tape: GradTape,
    pub h_out: Option<Array2<f64>>,
    pub g_out: Option<Array2<f64>>,
}

/// `e = γ h(x) + (1 - γ) g(Agg x)`; the feature branch alone when the
/// structural branch is absent.
pub fn msan_forward(
    view: &MsanView,
    gamma: f64,
    x: ArrayView2<f64>,
    aggregated: Option<ArrayView2<f64>>,
    tape: Option<&mut MsanTape>,
) -> Result<Array2<f64>> {
    let mut local = MsanTape::default();
    let t = match tape {
        Some(t) => t,
        None => &mut local,
    };
    let h = mlp_forward(&view.theta, x, Some(&mut t.h_tape))?;
    let out = match (&view.phi, aggregated) {
        (Some(phi), Some(agg)) => {
            if agg.nrows() != x.nrows() {
                return Err(Error::shape(format!(
                    "aggregated input has {} rows, features have {}",
                    agg.nrows(),
                    x.nrows()
                )));
            }
            let g = mlp_forward(phi, agg, Some(&mut t.g_tape))?;
            let e = &h * gamma + &g * (1.0 - gamma);
            t.g_out = Some(g);
            e
        }
        (Some(_), None) => {
            return Err(Error::shape("structural branch needs aggregated features"));
        }
        (None, _) => h.clone(),
    };
    t.h_out = Some(h);
    Ok(out)
}

/// Gradients of one encoder from `dL/de`.
pub(crate) fn msan_backward(
    view: &MsanView,
    gamma: f64,
    learnable_gamma: bool,
    tape: &MsanTape,
    d_e: ArrayView2<f64>,
) -> Result<MsanView> {
    let h_out = tape
        .h_out
        .as_ref()
        .ok_or_else(|| Error::state("encoder tape is empty"))?;
    match &view.phi {
        None => Ok(MsanView {
            theta: backward(&view.theta, &tape.h_tape, d_e, false)?.params,
            phi: None,
            gamma_logit: 0.0,
        }),
        Some(phi) => {
            let g_out = tape
                .g_out
                .as_ref()
                .ok_or_else(|| Error::state("structural tape is empty"))?;
            let d_h = &d_e * gamma;
            let d_g = &d_e * (1.0 - gamma);
            let gamma_logit = if learnable_gamma {
                (&d_e * &(h_out - g_out)).sum() * gamma * (1.0 - gamma)
            } else {
                0.0
            };
            Ok(MsanView {
                theta: backward(&view.theta, &tape.h_tape, d_h.view(), false)?.params,
                phi: Some(backward(phi, &tape.g_tape, d_g.view(), false)?.params),
                gamma_logit,
            })
        }
    }
}

/// Entrywise mean over views.
pub fn fuse(views: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = views
        .first()
        .ok_or_else(|| Error::domain("fusion needs at least one view"))?;
    let mut z = Array2::zeros(first.raw_dim());
    for e in views {
        if e.dim() != first.dim() {
            return Err(Error::shape(format!("view logits {:?} vs {:?}", e.dim(), first.dim())));
        }
        z += e;
    }
    Ok(z / views.len() as f64)
}

/// Standardized features per view and, with the structural branch, their
/// graph-aggregated counterparts.
pub type Prepared = (Vec<Array2<f64>>, Option<Vec<Array2<f64>>>);

/// Output of [`ModelState::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Fused logits.
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
    /// Largest class probability of each sample.
    pub scores: Array1<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Array2<f64>) -> Self {
        let probabilities = softmax(logits.view());
        let scores = probabilities
            .axis_iter(Axis(0))
            .map(|r| r.fold(0.0_f64, |a, &b| a.max(b)))
            .collect();
        Self {
            logits,
            probabilities,
            scores,
        }
    }

    pub fn predicted(&self) -> Vec<usize> {
        self.probabilities
            .axis_iter(Axis(0))
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (k, &p)| if p > best.1 { (k, p) } else { best },
                    )
                    .0
            })
            .collect()
    }
}

impl ModelState {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let views = config
            .view_dims
            .iter()
            .map(|&d| {
                let msan_spec = config.net(d, &config.hidden)?;
                let theta = init_params(&msan_spec, rng);
                let phi = config.structural.then(|| init_params(&msan_spec, rng));
                let vartheta = init_params(&config.net(d, &config.apn_hidden)?, rng);
                Ok(ViewParams {
                    msan: MsanView {
                        theta,
                        phi,
                        gamma_logit: logit(config.gamma),
                    },
                    apn: ApnView { vartheta },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let standardizer = Standardizer::identity(&config.view_dims);
        Ok(Self {
            config,
            params: ModelParams { views },
            standardizer,
        })
    }

    pub fn views(&self) -> usize {
        self.params.views.len()
    }

    /// Effective blend factor of view `v`.
    pub fn gamma(&self, v: usize) -> f64 {
        if self.config.learnable_gamma {
            sigmoid(self.params.views[v].msan.gamma_logit)
        } else {
            self.config.gamma
        }
    }

    fn check_views(&self, views: &[ArrayView2<f64>]) -> Result<usize> {
        if views.len() != self.views() {
            return Err(Error::shape(format!(
                "{} views given, model has {}",
                views.len(),
                self.views()
            )));
        }
        let n = views[0].nrows();
        for (v, (x, &d)) in views.iter().zip(&self.config.view_dims).enumerate() {
            if x.dim() != (n, d) {
                return Err(Error::shape(format!("view {v} is {:?}, expected ({n}, {d})", x.dim())));
            }
        }
        Ok(n)
    }

    /// Per-view logits for already standardized inputs and their aggregates.
    pub fn view_logits(
        &self,
        views: &[ArrayView2<f64>],
        aggregated: Option<&[Array2<f64>]>,
    ) -> Result<Vec<Array2<f64>>> {
        self.check_views(views)?;
        views
            .iter()
            .enumerate()
            .map(|(v, x)| {
                let agg = aggregated.map(|a| a[v].view());
                msan_forward(&self.params.views[v].msan, self.gamma(v), *x, agg, None)
            })
            .collect()
    }

    /// Standardizes raw features and, with the structural branch, builds an
    /// adaptive-neighbor graph over the given samples per view.
    pub fn prepare(&self, views: &[ArrayView2<f64>]) -> Result<Prepared> {
        let n = self.check_views(views)?;
        let standardized = views
            .iter()
            .enumerate()
            .map(|(v, x)| self.standardizer.apply(v, *x))
            .collect::<Result<Vec<_>>>()?;
        let aggregated = if self.config.structural {
            if n < 3 {
                return Err(Error::domain(
                    "structural branch needs at least three samples to build a graph",
                ));
            }
            let k = self.config.k_neighbors.min(n - 2);
            Some(
                standardized
                    .iter()
                    .map(|x| aggregate(&build_graph(x.view(), k)?, x.view()))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok((standardized, aggregated))
    }

    /// Fused prediction over raw (unstandardized) features.
    pub fn predict(&self, views: &[ArrayView2<f64>]) -> Result<Prediction> {
        if !self.params.all_finite() {
            return Err(Error::state("model parameters are not finite"));
        }
        let (standardized, aggregated) = self.prepare(views)?;
        let sv: Vec<_> = standardized.iter().map(|x| x.view()).collect();
        self.predict_prepared(&sv, aggregated.as_deref())
    }

    /// Fused prediction over standardized features with precomputed graphs.
    pub fn predict_with_graphs(
        &self,
        standardized: &[ArrayView2<f64>],
        graphs: &[AffinityGraph],
    ) -> Result<Prediction> {
        let aggregated = if self.config.structural {
            Some(
                standardized
                    .iter()
                    .zip(graphs)
                    .map(|(x, g)| aggregate(g, *x))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        self.predict_prepared(standardized, aggregated.as_deref())
    }

    pub fn predict_prepared(
        &self,
        standardized: &[ArrayView2<f64>],
        aggregated: Option<&[Array2<f64>]>,
    ) -> Result<Prediction> {
        if !self.params.all_finite() {
            return Err(Error::state("model parameters are not finite"));
        }
        let logits = self.view_logits(standardized, aggregated)?;
        Ok(Prediction::from_logits(fuse(&logits)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        ck.put_scalar("classes", c.classes as f64);
        ck.put_scalar("views", c.view_dims.len() as f64);
        ck.put_scalar("gamma", c.gamma);
        ck.put_scalar("learnable_gamma", f64::from(u8::from(c.learnable_gamma)));
        ck.put_scalar("structural", f64::from(u8::from(c.structural)));
        ck.put_scalar("alpha", c.alpha);
        ck.put_scalar("beta", c.beta);
        ck.put_scalar(
            "bandwidth",
            match c.bandwidth {
                Bandwidth::Median => 0.0,
                Bandwidth::Fixed(s) => s,
            },
        );
        ck.put_scalar("k_neighbors", c.k_neighbors as f64);
        ck.put_scalar("activation", c.activation.code());
        for (v, view) in self.params.views.iter().enumerate() {
            ck.put_params(&format!("view{v}.theta"), &view.msan.theta);
            if let Some(phi) = &view.msan.phi {
                ck.put_params(&format!("view{v}.phi"), phi);
            }
            ck.put_scalar(format!("view{v}.gamma_logit"), view.msan.gamma_logit);
            ck.put_params(&format!("view{v}.apn"), &view.apn.vartheta);
            ck.put_array1(format!("view{v}.input_mean"), &self.standardizer.means[v]);
            ck.put_array1(format!("view{v}.input_scale"), &self.standardizer.scales[v]);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let flag = |name: &str| -> Result<bool> { Ok(ck.scalar(name)? != 0.0) };
        let views = ck.scalar("views")? as usize;
        let structural = flag("structural")?;
        let bandwidth = match ck.scalar("bandwidth")? {
            s if s > 0.0 => Bandwidth::Fixed(s),
            _ => Bandwidth::Median,
        };
        let mut params = Vec::with_capacity(views);
        let mut means = Vec::with_capacity(views);
        let mut scales = Vec::with_capacity(views);
        for v in 0..views {
            let theta = ck.params(&format!("view{v}.theta"))?;
            let phi = if structural {
                Some(ck.params(&format!("view{v}.phi"))?)
            } else {
                None
            };
            let vartheta = ck.params(&format!("view{v}.apn"))?;
            params.push(ViewParams {
                msan: MsanView {
                    theta,
                    phi,
                    gamma_logit: ck.scalar(&format!("view{v}.gamma_logit"))?,
                },
                apn: ApnView { vartheta },
            });
            means.push(ck.array1(&format!("view{v}.input_mean"))?);
            scales.push(ck.array1(&format!("view{v}.input_scale"))?);
        }
        let first = params.first().ok_or_else(|| Error::Checkpoint("no views".into()))?;
        let spec = first.msan.theta.spec();
        let apn_spec = first.apn.vartheta.spec();
        let inner = |s: &NetSpec| s.layer_dims[1..s.layer_dims.len() - 1].to_vec();
        let config = ModelConfig {
            classes: ck.scalar("classes")? as usize,
            view_dims: params.iter().map(|p| p.msan.theta.input_dim()).collect(),
            hidden: inner(&spec),
            apn_hidden: inner(&apn_spec),
            activation: Activation::from_code(ck.scalar("activation")?)?,
            gamma: ck.scalar("gamma")?,
            learnable_gamma: flag("learnable_gamma")?,
            structural,
            alpha: ck.scalar("alpha")?,
            beta: ck.scalar("beta")?,
            bandwidth,
            k_neighbors: ck.scalar("k_neighbors")? as usize,
        };
        config.validate()?;
        for p in &params {
            if p.msan.theta.output_dim() != config.classes || p.apn.vartheta.output_dim() != config.classes {
                return Err(Error::Checkpoint("network outputs do not match class count".into()));
            }
        }
        let standardizer = Standardizer::new(means, scales)?;
        Ok(Self {
            config,
            params: ModelParams { views: params },
            standardizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
