//! Generalized mass assignments over the two-label frame of a mixed sample.
//!
//! A mixed sample built from `(x_i, y_i)` and `(x_j, y_j)` carries belief on
//! the singletons `{y_i}` and `{y_j}`, on the ambiguous pair `{y_i, y_j}`, and
//! on the out-of-frame element `∅` that stands for classes never seen during
//! training. Unlike a classical basic probability assignment, `∅` may carry
//! positive mass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

fn check_unit(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::domain(format!("{name} = {value} is outside [0, 1]")));
    }
    Ok(())
}

/// A focal element of a generalized assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FocalElement {
    /// The element outside the frame of discernment.
    OutOfFrame,
    /// A non-empty subset of known class indices.
    Classes(BTreeSet<usize>),
}

impl FocalElement {
    pub fn singleton(class: usize) -> Self {
        FocalElement::Classes(BTreeSet::from([class]))
    }

    pub fn pair(a: usize, b: usize) -> Self {
        FocalElement::Classes(BTreeSet::from([a, b]))
    }
}

/// Generalized basic probability assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Gbpa {
    masses: BTreeMap<FocalElement, f64>,
}

impl Gbpa {
    /// Builds an assignment, merging repeated focal elements. Masses must be
    /// non-negative and sum to one.
    pub fn new(entries: impl IntoIterator<Item = (FocalElement, f64)>) -> Result<Self> {
        let mut masses = BTreeMap::new();
        for (focal, mass) in entries {
            if let FocalElement::Classes(set) = &focal {
                if set.is_empty() {
                    return Err(Error::domain(
                        "an empty class set is not a focal element; use OutOfFrame",
                    ));
                }
            }
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(Error::domain(format!("mass {mass} is not a finite non-negative value")));
            }
            *masses.entry(focal).or_insert(0.0) += mass;
        }
        let total: f64 = masses.values().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { masses })
    }

    pub fn mass(&self, focal: &FocalElement) -> f64 {
        self.masses.get(focal).copied().unwrap_or(0.0)
    }

    pub fn out_of_frame(&self) -> f64 {
        self.mass(&FocalElement::OutOfFrame)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FocalElement, f64)> {
        self.masses.iter().map(|(f, m)| (f, *m))
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }
}

/// Mixup hyperparameters: Beta shape `tau` and uncertainty scale `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OMixConfig {
    pub tau: f64,
    pub c: f64,
}

impl OMixConfig {
    pub fn new(tau: f64, c: f64) -> Result<Self> {
        let cfg = Self { tau, c };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Vanilla mixup: the same sampling with no uncertainty budget.
    pub fn vanilla(tau: f64) -> Result<Self> {
        Self::new(tau, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::domain(format!("tau = {} must be positive", self.tau)));
        }
        check_unit("c", self.c)
    }
}

impl Default for OMixConfig {
    fn default() -> Self {
        Self { tau: 1.0, c: 0.5 }
    }
}

/// Masses of the four focal elements of a mixed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAssignment {
    /// Mass on `{y_i}`.
    pub m_i: f64,
    /// Mass on `{y_j}`.
    pub m_j: f64,
    /// Mass on the ambiguous pair `{y_i, y_j}`.
    pub m_amb: f64,
    /// Mass on the out-of-frame element.
    pub m_empty: f64,
    pub lambda: f64,
    pub u: f64,
}

impl MassAssignment {
    pub fn total(&self) -> f64 {
        self.m_i + self.m_j + self.m_amb + self.m_empty
    }

    /// The assignment as a [`Gbpa`] over concrete class indices. A same-class
    /// pair collapses the singletons and the pair onto one focal element.
    pub fn to_gbpa(&self, class_i: usize, class_j: usize) -> Result<Gbpa> {
        Gbpa::new([
            (FocalElement::singleton(class_i), self.m_i),
            (FocalElement::singleton(class_j), self.m_j),
            (FocalElement::pair(class_i, class_j), self.m_amb),
            (FocalElement::OutOfFrame, self.m_empty),
        ])
    }
}

/// Uncertainty budget `u = c * (1 - |lambda - 0.5|)`; largest at an even mix.
pub fn adaptive_uncertainty(lambda: f64, c: f64) -> Result<f64> {
    check_unit("lambda", lambda)?;
    check_unit("c", c)?;
    Ok(c * (1.0 - (lambda - 0.5).abs()))
}

/// Mass placed on the ambiguous pair; the rest of `u` goes to `∅`.
///
/// The split maximizes [`ambiguity_entropy`], which is symmetric in `a` and
/// `u - a`, so the optimum is the midpoint.
pub fn ambiguity_split(u: f64) -> Result<f64> {
    check_unit("u", u)?;
    Ok(u / 2.0)
}

/// `H(a) = -a ln a - (u - a) ln(u - a)`, with `0 ln 0 = 0`.
pub fn ambiguity_entropy(a: f64, u: f64) -> f64 {
    fn xlogx(x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            x * x.ln()
        }
    }
    -xlogx(a) - xlogx(u - a)
}

pub fn omix_masses(lambda: f64, u: f64) -> Result<MassAssignment> {
    check_unit("lambda", lambda)?;
    let a = ambiguity_split(u)?;
    Ok(MassAssignment {
        m_i: lambda * (1.0 - u),
        m_j: (1.0 - lambda) * (1.0 - u),
        m_amb: a,
        m_empty: u - a,
        lambda,
        u,
    })
}

fn one_hot_index(y: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (k, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(k);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

/// Soft label of a mixed sample from one-hot parents.
///
/// The out-of-frame mass is spread uniformly over the `K` known classes, so
/// the label is a probability vector.
pub fn omix_soft_label(mass: &MassAssignment, y_i: &[f64], y_j: &[f64]) -> Result<Vec<f64>> {
    if y_i.len() != y_j.len() {
        return Err(Error::shape(format!(
            "label lengths differ: {} vs {}",
            y_i.len(),
            y_j.len()
        )));
    }
    if y_i.len() < 2 {
        return Err(Error::domain("at least two classes are required"));
    }
    if one_hot_index(y_i).is_none() || one_hot_index(y_j).is_none() {
        return Err(Error::domain("labels must be one-hot"));
    }
    let uniform = 1.0 / y_i.len() as f64;
    Ok(y_i
        .iter()
        .zip(y_j)
        .map(|(&a, &b)| mass.m_i * a + mass.m_j * b + mass.m_amb * ((a + b) / 2.0) + mass.m_empty * uniform)
        .collect())
}

/// [`omix_soft_label`] for class indices, writing into `out` (length `K`).
pub fn omix_soft_label_into(mass: &MassAssignment, class_i: usize, class_j: usize, out: &mut [f64]) {
    let uniform = 1.0 / out.len() as f64;
    for (k, slot) in out.iter_mut().enumerate() {
        let a = if k == class_i { 1.0 } else { 0.0 };
        let b = if k == class_j { 1.0 } else { 0.0 };
        *slot = mass.m_i * a + mass.m_j * b + mass.m_amb * ((a + b) / 2.0) + mass.m_empty * uniform;
    }
}
