//! Base losses and the aleatoric attenuated multi-loss.
//!
//! Every regression component carries its own log-variance `s = ln sigma^2`.
//! With attenuation enabled a component contributes
//! `c * exp(-s) * L + s`, where `L` is its smooth-L1 residual loss and
//! `c = 1/2` for the Gaussian form or `c = 1` for the Laplace form. The
//! baseline (attenuation disabled) contributes `c * L`, which is the same
//! expression evaluated at `s = 0` without the `+ s` penalty.

use crate::error::{Error, Result};

/// Which observation likelihood the attenuated term is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Likelihood {
    /// `0.5 * exp(-s) * L + s`
    #[default]
    Gaussian,
    /// `exp(-s) * L + s`
    Laplace,
}

impl Likelihood {
    /// Residual weight at `s = 0`.
    pub fn base_weight(self) -> f64 {
        match self {
            Likelihood::Gaussian => 0.5,
            Likelihood::Laplace => 1.0,
        }
    }

    /// Log-variance minimizing the attenuated term for a fixed residual loss.
    pub fn optimal_log_variance(self, residual_loss: f64) -> f64 {
        (self.base_weight() * residual_loss).ln()
    }
}

impl std::str::FromStr for Likelihood {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Likelihood::Gaussian),
            "laplace" => Ok(Likelihood::Laplace),
            other => Err(format!("unknown likelihood `{other}`")),
        }
    }
}

impl std::fmt::Display for Likelihood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Likelihood::Gaussian => "gaussian",
            Likelihood::Laplace => "laplace",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub likelihood: Likelihood,
    /// When false, log-variances are ignored and receive zero gradient.
    pub attenuation: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            likelihood: Likelihood::Gaussian,
            attenuation: true,
        }
    }
}

/// Smooth L1 and its derivative.
pub fn smooth_l1(r: f64) -> (f64, f64) {
    if r.abs() < 1.0 {
        (0.5 * r * r, r)
    } else {
        (r.abs() - 0.5, r.signum())
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// `-ln softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let value = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuatedTerm {
    pub value: f64,
    pub d_log_var: f64,
    pub d_residual: f64,
}

/// One attenuated component and its partials.
pub fn attenuated_term(residual_loss: f64, s: f64, likelihood: Likelihood) -> AttenuatedTerm {
    let weight = likelihood.base_weight() * (-s).exp();
    AttenuatedTerm {
        value: weight * residual_loss + s,
        d_log_var: 1.0 - weight * residual_loss,
        d_residual: weight,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegSample<'a> {
    pub pred: &'a [f64],
    pub target: &'a [f64],
    pub log_var: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct ClsSample<'a> {
    pub logits: &'a [f64],
    pub label: usize,
}

/// Per-task samples for one multi-loss evaluation. Regression groups hold
/// only positive samples; classification groups hold every non-ignored one.
#[derive(Debug, Clone, Default)]
pub struct MultiLossInput<'a> {
    pub rpn_reg: Vec<RegSample<'a>>,
    pub rpn_cls: Vec<ClsSample<'a>>,
    pub frh_loc: Vec<RegSample<'a>>,
    pub frh_cls: Vec<ClsSample<'a>>,
    pub frh_orient: Vec<RegSample<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rpn_reg: f64,
    pub rpn_cls: f64,
    pub frh_loc: f64,
    pub frh_cls: f64,
    pub frh_orient: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(rpn_reg: f64, rpn_cls: f64, frh_loc: f64, frh_cls: f64, frh_orient: f64) -> Self {
        LossBreakdown {
            rpn_reg,
            rpn_cls,
            frh_loc,
            frh_cls,
            frh_orient,
            total: rpn_reg + rpn_cls + frh_loc + frh_cls + frh_orient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegGrad {
    pub d_pred: Vec<f64>,
    pub d_log_var: Vec<f64>,
}

/// Gradients aligned one-to-one with the samples of [`MultiLossInput`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiLossGrad {
    pub rpn_reg: Vec<RegGrad>,
    pub rpn_cls: Vec<Vec<f64>>,
    pub frh_loc: Vec<RegGrad>,
    pub frh_cls: Vec<Vec<f64>>,
    pub frh_orient: Vec<RegGrad>,
}

fn regression_group(
    name: &str,
    samples: &[RegSample<'_>],
    opts: LossOptions,
) -> Result<(f64, Vec<RegGrad>)> {
    if samples.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let dim = samples[0].pred.len();
    let inv_n = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.pred.len() != dim || s.target.len() != dim || s.log_var.len() != dim {
            return Err(Error::Shape(format!(
                "{name} sample {i}: pred {}, target {}, log-variance {} (expected {dim})",
                s.pred.len(),
                s.target.len(),
                s.log_var.len()
            )));
        }
        let mut sample_loss = 0.0;
        let mut g = RegGrad {
            d_pred: vec![0.0; dim],
            d_log_var: vec![0.0; dim],
        };
        for c in 0..dim {
            let (l, dl) = smooth_l1(s.pred[c] - s.target[c]);
            if opts.attenuation {
                let t = attenuated_term(l, s.log_var[c], opts.likelihood);
                sample_loss += t.value;
                g.d_pred[c] = inv_n * t.d_residual * dl;
                g.d_log_var[c] = inv_n * t.d_log_var;
            } else {
                let w = opts.likelihood.base_weight();
                sample_loss += w * l;
                g.d_pred[c] = inv_n * w * dl;
            }
        }
        total += sample_loss;
        grads.push(g);
    }
    Ok((total * inv_n, grads))
}

fn classification_group(name: &str, samples: &[ClsSample<'_>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.logits.len() < 2 || s.label >= s.logits.len() {
            return Err(Error::Shape(format!(
                "{name} sample {i}: {} logits with label {}",
                s.logits.len(),
                s.label
            )));
        }
        let (v, mut g) = cross_entropy(s.logits, s.label);
        total += v;
        g.iter_mut().for_each(|x| *x *= inv_n);
        grads.push(g);
    }
    Ok((total * inv_n, grads))
}

/// Evaluates the five-term multi-loss and its gradient with respect to every
/// prediction, logit and log-variance in `input`.
pub fn multi_loss(input: &MultiLossInput<'_>, opts: LossOptions) -> Result<(LossBreakdown, MultiLossGrad)> {
    let (rpn_reg, g_rpn_reg) = regression_group("rpn_reg", &input.rpn_reg, opts)?;
    let (rpn_cls, g_rpn_cls) = classification_group("rpn_cls", &input.rpn_cls)?;
    let (frh_loc, g_frh_loc) = regression_group("frh_loc", &input.frh_loc, opts)?;
    let (frh_cls, g_frh_cls) = classification_group("frh_cls", &input.frh_cls)?;
    let (frh_orient, g_frh_orient) = regression_group("frh_orient", &input.frh_orient, opts)?;
    Ok((
        LossBreakdown::from_terms(rpn_reg, rpn_cls, frh_loc, frh_cls, frh_orient),
        MultiLossGrad {
            rpn_reg: g_rpn_reg,
            rpn_cls: g_rpn_cls,
            frh_loc: g_frh_loc,
            frh_cls: g_frh_cls,
            frh_orient: g_frh_orient,
        },
    ))
}
