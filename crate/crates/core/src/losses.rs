//! Margin losses and the empirical risk assemblies built from them.
//!
//! Every assembly is evaluated through the same per-instance term function,
//! which returns both the contribution to the risk and its derivative with
//! respect to the instance score. Gradients for a linear model follow by the
//! chain rule through `g(x) = w·φ(x) + b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ClassPriors, LabelState};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::model::LinearModel;
use crate::negativity::{ConfidenceScore, NegativityScore};
use crate::numeric::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseLoss {
    Hinge,
    DoubleHinge,
    Logistic,
}

impl BaseLoss {
    pub const ALL: [BaseLoss; 3] = [BaseLoss::Hinge, BaseLoss::DoubleHinge, BaseLoss::Logistic];

    pub fn value(self, z: f64) -> f64 {
        match self {
            BaseLoss::Hinge => (1.0 - z).max(0.0),
            BaseLoss::DoubleHinge => (-z).max((0.5 - 0.5 * z).max(0.0)),
            BaseLoss::Logistic => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative in `z`. At kinks the flat-side slope is used: hinge takes 0
    /// at `z = 1`; double hinge takes 0 at `z = 1` and -1/2 at `z = -1`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            BaseLoss::Hinge => {
                if z < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            BaseLoss::DoubleHinge => {
                if z < -1.0 {
                    -1.0
                } else if z < 1.0 {
                    -0.5
                } else {
                    0.0
                }
            }
            BaseLoss::Logistic => -1.0 / (1.0 + z.exp()),
        }
    }

    /// Margins where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            BaseLoss::Hinge => &[1.0],
            BaseLoss::DoubleHinge => &[-1.0, 1.0],
            BaseLoss::Logistic => &[],
        }
    }
}

pub fn eval_loss(base: BaseLoss, z: f64) -> f64 {
    base.value(z)
}

impl FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(BaseLoss::Hinge),
            "double-hinge" | "double_hinge" => Ok(BaseLoss::DoubleHinge),
            "logistic" | "cross-entropy" => Ok(BaseLoss::Logistic),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

impl fmt::Display for BaseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseLoss::Hinge => "hinge",
            BaseLoss::DoubleHinge => "double-hinge",
            BaseLoss::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiskAssembly {
    /// Unlabelled read as negative.
    Naive,
    /// Negativity-weighted unlabelled risk.
    Ncws,
    /// Convex PU risk with composite positive loss `ℓ(z) - ℓ(-z)`.
    Cpu,
    /// Positive-confidence risk over labelled positives only.
    PConf,
    /// Class-ratio penalty on the positive class.
    WeightedPenalty,
}

impl RiskAssembly {
    pub const ALL: [RiskAssembly; 5] = [
        RiskAssembly::Naive,
        RiskAssembly::Ncws,
        RiskAssembly::Cpu,
        RiskAssembly::PConf,
        RiskAssembly::WeightedPenalty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RiskAssembly::Naive => "naive",
            RiskAssembly::Ncws => "ncws",
            RiskAssembly::Cpu => "cpu",
            RiskAssembly::PConf => "pconf",
            RiskAssembly::WeightedPenalty => "svmp",
        }
    }
}

impl FromStr for RiskAssembly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RiskAssembly::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .or_else(|| (s == "weighted-penalty").then_some(RiskAssembly::WeightedPenalty))
            .ok_or_else(|| Error::invalid(format!("unknown risk `{s}`")))
    }
}

impl fmt::Display for RiskAssembly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully parameterised risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub assembly: RiskAssembly,
    pub base: BaseLoss,
    pub prior: Option<ClassPriors>,
    pub penalty_ratio: Option<f64>,
}

impl RiskSpec {
    pub fn naive(base: BaseLoss) -> Self {
        Self::plain(RiskAssembly::Naive, base)
    }

    pub fn ncws(base: BaseLoss) -> Self {
        Self::plain(RiskAssembly::Ncws, base)
    }

    pub fn pconf(base: BaseLoss) -> Self {
        Self::plain(RiskAssembly::PConf, base)
    }

    pub fn cpu(base: BaseLoss, prior: ClassPriors) -> Self {
        RiskSpec {
            prior: Some(prior),
            ..Self::plain(RiskAssembly::Cpu, base)
        }
    }

    pub fn weighted_penalty(base: BaseLoss, penalty_ratio: f64) -> Self {
        RiskSpec {
            penalty_ratio: Some(penalty_ratio),
            ..Self::plain(RiskAssembly::WeightedPenalty, base)
        }
    }

    fn plain(assembly: RiskAssembly, base: BaseLoss) -> Self {
        RiskSpec {
            assembly,
            base,
            prior: None,
            penalty_ratio: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.assembly {
            RiskAssembly::Cpu if self.prior.is_none() => {
                Err(Error::invalid("C-PU risk requires a class prior"))
            }
            RiskAssembly::WeightedPenalty => match self.penalty_ratio {
                Some(r) if r > 0.0 && r.is_finite() => Ok(()),
                Some(r) => Err(Error::invalid(format!("penalty ratio {r} must be > 0"))),
                None => Err(Error::invalid("weighted penalty risk requires a ratio")),
            },
            _ => Ok(()),
        }
    }

    pub fn needs_negativity(&self) -> bool {
        self.assembly == RiskAssembly::Ncws
    }

    pub fn needs_confidence(&self) -> bool {
        self.assembly == RiskAssembly::PConf
    }
}

/// Per-instance side information. Slices, when present, are indexed like
/// the labels; entries may be `None` where the assembly ignores them
/// (negativity on positives, confidence on unlabelled).
#[derive(Debug, Clone, Copy, Default)]
pub struct RiskAux<'a> {
    pub negativity: Option<&'a [Option<NegativityScore>]>,
    pub confidence: Option<&'a [Option<ConfidenceScore>]>,
}

impl<'a> RiskAux<'a> {
    pub fn with_negativity(negativity: &'a [Option<NegativityScore>]) -> Self {
        RiskAux {
            negativity: Some(negativity),
            confidence: None,
        }
    }

    pub fn with_confidence(confidence: &'a [Option<ConfidenceScore>]) -> Self {
        RiskAux {
            negativity: None,
            confidence: Some(confidence),
        }
    }

    fn negativity_at(&self, i: usize) -> Option<f64> {
        self.negativity.and_then(|n| n.get(i).copied().flatten()).map(NegativityScore::value)
    }

    fn confidence_at(&self, i: usize) -> Option<f64> {
        self.confidence.and_then(|c| c.get(i).copied().flatten()).map(ConfidenceScore::value)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let lens = [self.negativity.map(<[_]>::len), self.confidence.map(<[_]>::len)];
        match lens.into_iter().flatten().find(|&l| l != n) {
            Some(l) => Err(Error::LengthMismatch { left: n, right: l }),
            None => Ok(()),
        }
    }
}

/// Risk value with an optional gradient over `(weights..., bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Class sizes used to normalise the per-instance terms.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Norms {
    all: f64,
    pos: f64,
    unl: f64,
}

impl Norms {
    pub(crate) fn from_labels<'a>(labels: impl Iterator<Item = &'a LabelState>) -> Self {
        let (mut pos, mut unl) = (0usize, 0usize);
        for l in labels {
            if l.is_positive() {
                pos += 1;
            } else {
                unl += 1;
            }
        }
        Norms {
            all: (pos + unl) as f64,
            pos: pos as f64,
            unl: unl as f64,
        }
    }
}

/// Contribution of one instance to the risk and its derivative in the score.
/// `negativity` and `confidence` are only read where the assembly needs them.
pub(crate) fn instance_term(
    spec: &RiskSpec,
    label: LabelState,
    g: f64,
    negativity: Option<f64>,
    confidence: Option<f64>,
    norms: Norms,
    index: usize,
) -> Result<(f64, f64)> {
    let l = spec.base;
    let pos = label.is_positive();
    let term = match spec.assembly {
        RiskAssembly::Naive => {
            let y = label.sign();
            (l.value(y * g) / norms.all, y * l.derivative(y * g) / norms.all)
        }
        RiskAssembly::Ncws => {
            if pos {
                (l.value(g) / norms.all, l.derivative(g) / norms.all)
            } else {
                let n = negativity.ok_or(Error::MissingAux {
                    what: "negativity",
                    index,
                })?;
                let w = (1.0 - n) / n;
                (
                    (w * l.value(g) + l.value(-g)) / norms.all,
                    (w * l.derivative(g) - l.derivative(-g)) / norms.all,
                )
            }
        }
        RiskAssembly::Cpu => {
            let pi = spec.prior.map_or(0.0, |p| p.pi_plus());
            cpu_term(l, pi, pos, g, norms)
        }
        RiskAssembly::PConf => {
            if pos {
                let r = confidence.ok_or(Error::MissingAux {
                    what: "confidence",
                    index,
                })?;
                let k = (1.0 - r) / r;
                (
                    (l.value(g) + k * l.value(-g)) / norms.pos,
                    (l.derivative(g) - k * l.derivative(-g)) / norms.pos,
                )
            } else {
                (0.0, 0.0)
            }
        }
        RiskAssembly::WeightedPenalty => {
            let ratio = spec.penalty_ratio.unwrap_or(1.0);
            if pos {
                (ratio * l.value(g) / norms.all, ratio * l.derivative(g) / norms.all)
            } else {
                (l.value(-g) / norms.all, -l.derivative(-g) / norms.all)
            }
        }
    };
    Ok(term)
}

fn cpu_term(l: BaseLoss, pi_plus: f64, pos: bool, g: f64, norms: Norms) -> (f64, f64) {
    if pos {
        (
            pi_plus * (l.value(g) - l.value(-g)) / norms.pos,
            pi_plus * (l.derivative(g) + l.derivative(-g)) / norms.pos,
        )
    } else {
        (l.value(-g) / norms.unl, -l.derivative(-g) / norms.unl)
    }
}

fn check_class_support(spec: &RiskSpec, norms: Norms) -> Result<()> {
    match spec.assembly {
        RiskAssembly::Cpu if norms.pos == 0.0 || norms.unl == 0.0 => Err(Error::invalid(
            "C-PU risk needs at least one positive and one unlabelled instance",
        )),
        RiskAssembly::PConf if norms.pos == 0.0 => {
            Err(Error::invalid("P-conf risk needs at least one positive instance"))
        }
        _ => Ok(()),
    }
}

/// Risk value and its derivative with respect to each instance score.
pub fn risk_with_score_gradient(
    spec: &RiskSpec,
    scores: &[f64],
    labels: &[LabelState],
    aux: RiskAux<'_>,
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    aux.check_len(labels.len())?;
    let norms = Norms::from_labels(labels.iter());
    check_class_support(spec, norms)?;

    let mut values = Vec::with_capacity(scores.len());
    let mut derivs = Vec::with_capacity(scores.len());
    for (i, (&g, &label)) in scores.iter().zip(labels).enumerate() {
        let (v, d) = instance_term(
            spec,
            label,
            g,
            aux.negativity_at(i),
            aux.confidence_at(i),
            norms,
            i,
        )?;
        values.push(v);
        derivs.push(d);
    }
    Ok((pairwise_sum(&values), derivs))
}

/// Risk of `scores` under `spec`, without gradient.
pub fn evaluate_risk(
    spec: &RiskSpec,
    scores: &[f64],
    labels: &[LabelState],
    aux: RiskAux<'_>,
) -> Result<RiskValue> {
    let (value, _) = risk_with_score_gradient(spec, scores, labels, aux)?;
    Ok(RiskValue {
        value,
        gradient: None,
    })
}

pub fn risk_naive(scores: &[f64], labels: &[LabelState], base: BaseLoss) -> Result<RiskValue> {
    evaluate_risk(&RiskSpec::naive(base), scores, labels, RiskAux::default())
}

pub fn risk_ncws(
    scores: &[f64],
    labels: &[LabelState],
    negativity: &[Option<NegativityScore>],
    base: BaseLoss,
) -> Result<RiskValue> {
    evaluate_risk(
        &RiskSpec::ncws(base),
        scores,
        labels,
        RiskAux::with_negativity(negativity),
    )
}

pub fn risk_cpu(
    scores: &[f64],
    labels: &[LabelState],
    prior: ClassPriors,
    base: BaseLoss,
) -> Result<RiskValue> {
    evaluate_risk(&RiskSpec::cpu(base, prior), scores, labels, RiskAux::default())
}

/// Only positive instances contribute; unlabelled entries may carry `None`.
pub fn risk_pconf(
    scores: &[f64],
    labels: &[LabelState],
    confidence: &[Option<ConfidenceScore>],
    base: BaseLoss,
) -> Result<RiskValue> {
    evaluate_risk(
        &RiskSpec::pconf(base),
        scores,
        labels,
        RiskAux::with_confidence(confidence),
    )
}

pub fn risk_weighted_penalty(
    scores: &[f64],
    labels: &[LabelState],
    penalty_ratio: f64,
    base: BaseLoss,
) -> Result<RiskValue> {
    evaluate_risk(
        &RiskSpec::weighted_penalty(base, penalty_ratio),
        scores,
        labels,
        RiskAux::default(),
    )
}

/// Default penalty ratio: unlabelled count over positive count.
pub fn auto_penalty_ratio(labels: &[LabelState]) -> Result<f64> {
    let norms = Norms::from_labels(labels.iter());
    if norms.pos == 0.0 || norms.unl == 0.0 {
        return Err(Error::invalid(
            "penalty ratio needs both positive and unlabelled instances",
        ));
    }
    Ok(norms.unl / norms.pos)
}

/// Risk and its gradient over `(weights..., bias)` for a linear model.
pub fn risk_gradient(
    spec: &RiskSpec,
    model: &LinearModel,
    features: &FeatureMatrix,
    labels: &[LabelState],
    aux: RiskAux<'_>,
) -> Result<RiskValue> {
    let scores = model.decision_values(features)?;
    let (value, dscores) = risk_with_score_gradient(spec, &scores, labels, aux)?;
    let mut grad = vec![0.0; model.feature_dim() + 1];
    accumulate_linear_gradient(&mut grad, features.iter_rows().zip(dscores.iter().copied()));
    Ok(RiskValue {
        value,
        gradient: Some(grad),
    })
}

/// `grad[j] += Σ d_i φ_ij`, `grad[last] += Σ d_i`.
pub(crate) fn accumulate_linear_gradient<'a>(
    grad: &mut [f64],
    rows: impl Iterator<Item = (&'a [f64], f64)>,
) {
    let dim = grad.len() - 1;
    for (row, d) in rows {
        if d == 0.0 {
            continue;
        }
        for (gj, xj) in grad[..dim].iter_mut().zip(row) {
            *gj += d * xj;
        }
        grad[dim] += d;
    }
}
