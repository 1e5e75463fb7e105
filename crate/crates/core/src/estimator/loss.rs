use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::mlp::Backbone;
use crate::error::{Error, Result};

/// Default weight of the cross-branch agreement term.
pub const DEFAULT_MU: f64 = 0.001;

/// Batch means of the three squared-error terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Target vs random-branch prediction.
    pub l_r: f64,
    /// Target vs uniform-branch prediction.
    pub l_u: f64,
    /// Random-branch vs uniform-branch prediction.
    pub l_ru: f64,
}

impl LossTerms {
    /// `w_r·L_r + w_u·L_u + w_ru·L_ru`.
    pub fn combine(&self, w: LossWeights) -> f64 {
        w.r * self.l_r + w.u * self.l_u + w.ru * self.l_ru
    }
}

/// `(1/N) Σ‖y−ŷʳ‖², (1/N) Σ‖y−ŷᵘ‖², (1/N) Σ‖ŷʳ−ŷᵘ‖²` with samples as columns.
pub fn loss_terms(y: &DMatrix<f64>, yhat_r: &DMatrix<f64>, yhat_u: &DMatrix<f64>) -> Result<LossTerms> {
    if y.shape() != yhat_r.shape() || y.shape() != yhat_u.shape() {
        return Err(Error::shape(format!(
            "loss inputs differ in shape: {:?}, {:?}, {:?}",
            y.shape(),
            yhat_r.shape(),
            yhat_u.shape()
        )));
    }
    let n = y.ncols();
    if n == 0 {
        return Err(Error::shape("loss needs at least one sample"));
    }
    let sq = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm_squared() / n as f64;
    Ok(LossTerms {
        l_r: sq(y, yhat_r),
        l_u: sq(y, yhat_u),
        l_ru: sq(yhat_r, yhat_u),
    })
}

/// `L_r + L_u + μ·L_ru`.
pub fn consistency_loss(terms: LossTerms, mu: f64) -> f64 {
    terms.l_r + terms.l_u + mu * terms.l_ru
}

/// Coefficients of the three terms in the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub r: f64,
    pub u: f64,
    pub ru: f64,
}

/// The four training objectives compared in the loss ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Random branch only.
    Random,
    /// Uniform branch only.
    Uniform,
    /// Both branches, no agreement term.
    RandomPlusUniform,
    /// Both branches plus `μ·L_ru`.
    Consistency,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [
        LossMode::Random,
        LossMode::Uniform,
        LossMode::RandomPlusUniform,
        LossMode::Consistency,
    ];

    pub fn weights(self, mu: f64) -> LossWeights {
        let (r, u, ru) = match self {
            LossMode::Random => (1.0, 0.0, 0.0),
            LossMode::Uniform => (0.0, 1.0, 0.0),
            LossMode::RandomPlusUniform => (1.0, 1.0, 0.0),
            LossMode::Consistency => (1.0, 1.0, mu),
        };
        LossWeights { r, u, ru }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Random => "lr",
            LossMode::Uniform => "lu",
            LossMode::RandomPlusUniform => "lr+lu",
            LossMode::Consistency => "consis",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(LossMode::Random),
            "lu" => Ok(LossMode::Uniform),
            "lr+lu" => Ok(LossMode::RandomPlusUniform),
            "consis" => Ok(LossMode::Consistency),
            other => Err(Error::invalid(format!(
                "unknown loss mode {other:?}; expected one of lr, lu, lr+lu, consis"
            ))),
        }
    }
}

/// `∂L/∂ŷʳ` and `∂L/∂ŷᵘ` of the weighted objective.
pub fn output_gradients(
    y: &DMatrix<f64>,
    yhat_r: &DMatrix<f64>,
    yhat_u: &DMatrix<f64>,
    w: LossWeights,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let scale = 2.0 / y.ncols() as f64;
    let diff_ru = yhat_r - yhat_u;
    let gr = (yhat_r - y) * (scale * w.r) + &diff_ru * (scale * w.ru);
    let gu = (yhat_u - y) * (scale * w.u) - diff_ru * (scale * w.ru);
    (gr, gu)
}

/// Loss terms and exact parameter gradients of the weighted objective.
///
/// Both branches run through the same parameters, so their contributions
/// add; no gradient is stopped on either side of `L_ru`.
pub fn consistency_gradients<B: Backbone>(
    model: &B,
    inputs_r: &DMatrix<f64>,
    inputs_u: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    w: LossWeights,
) -> Result<(LossTerms, Vec<f64>)> {
    let (yr, trace_r) = model.forward_trace(inputs_r)?;
    let (yu, trace_u) = model.forward_trace(inputs_u)?;
    let terms = loss_terms(targets, &yr, &yu)?;
    if !terms.combine(w).is_finite() {
        return Err(Error::Numerical("non-finite loss".into()));
    }
    let (gr, gu) = output_gradients(targets, &yr, &yu, w);
    let mut grads = vec![0.0; model.params().len()];
    if w.r != 0.0 || w.ru != 0.0 {
        model.accumulate_gradients(&trace_r, &gr, &mut grads)?;
    }
    if w.u != 0.0 || w.ru != 0.0 {
        model.accumulate_gradients(&trace_u, &gu, &mut grads)?;
    }
    Ok((terms, grads))
}
