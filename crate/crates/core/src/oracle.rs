//! Exact risks on finite distributions.
//!
//! On a finite support the class-conditional risk and its
//! negativity-weighted rewrite can both be summed exactly, which makes the
//! rewrite checkable to rounding error for any model and loss.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::BinaryLabel;
use crate::error::{Error, Result};
use crate::losses::BaseLoss;
use crate::model::LinearModel;

pub const MAX_SUPPORT: usize = 64;

/// A joint distribution `p(x, y)` over finitely many feature points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<Vec<f64>>,
    /// `[p(x, +1), p(x, -1)]` per support point.
    p_joint: Vec<[f64; 2]>,
}

/// Which side of the rewrite to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskForm {
    /// `π₊ E₊[ℓ(g)] + π₋ E₋[ℓ(-g)]`.
    ClassConditional,
    /// `π₋ E₋[((1 - n)/n) ℓ(g) + ℓ(-g)]` with `n(x) = p(y = -1 | x)`.
    NegativityWeighted,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<Vec<f64>>, p_joint: Vec<[f64; 2]>) -> Result<Self> {
        if support.is_empty() || support.len() != p_joint.len() {
            return Err(Error::invalid("support and probabilities must be non-empty and aligned"));
        }
        if support.len() > MAX_SUPPORT {
            return Err(Error::invalid(format!("support larger than {MAX_SUPPORT} points")));
        }
        let dim = support[0].len();
        if support.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid("support points differ in dimension"));
        }
        if p_joint.iter().flatten().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = p_joint.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        if p_joint.iter().any(|[a, b]| a + b == 0.0) {
            return Err(Error::invalid("support point with zero mass"));
        }
        Ok(DiscreteDistribution { support, p_joint })
    }

    /// Random distribution with Gaussian support points and joint masses
    /// bounded away from zero.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_points: usize, dim: usize) -> Result<Self> {
        if n_points == 0 || n_points > MAX_SUPPORT {
            return Err(Error::invalid("support size must lie in 1..=64"));
        }
        let support = (0..n_points)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let raw: Vec<[f64; 2]> = (0..n_points)
            .map(|_| [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)])
            .collect();
        let total: f64 = raw.iter().flatten().sum();
        let p_joint = raw.iter().map(|[a, b]| [a / total, b / total]).collect();
        DiscreteDistribution::new(support, p_joint)
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn p_x(&self, i: usize) -> f64 {
        self.p_joint[i][0] + self.p_joint[i][1]
    }

    pub fn pi_plus(&self) -> f64 {
        self.p_joint.iter().map(|p| p[0]).sum()
    }

    pub fn pi_minus(&self) -> f64 {
        self.p_joint.iter().map(|p| p[1]).sum()
    }

    /// `p(x | y = +1)`.
    pub fn p_x_given_pos(&self, i: usize) -> f64 {
        self.p_joint[i][0] / self.pi_plus()
    }

    /// `p(x | y = -1)`.
    pub fn p_x_given_neg(&self, i: usize) -> f64 {
        self.p_joint[i][1] / self.pi_minus()
    }

    /// Exact negativity `p(y = -1 | x)`.
    pub fn negativity(&self, i: usize) -> f64 {
        self.p_joint[i][1] / self.p_x(i)
    }

    pub fn posterior_positive(&self, i: usize) -> f64 {
        self.p_joint[i][0] / self.p_x(i)
    }

    fn check_negativity(&self) -> Result<()> {
        for i in 0..self.len() {
            let n = self.negativity(i);
            if !(n > 0.0 && n < 1.0) {
                return Err(Error::invalid(format!(
                    "p(y=-1|x) = {n} at support point {i}; must lie strictly inside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    fn check_model(&self, model: &LinearModel) -> Result<()> {
        if model.feature_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: model.feature_dim(),
            });
        }
        Ok(())
    }
}

/// Exact risk of `model` under `dist` in the requested form.
pub fn exact_risk(
    dist: &DiscreteDistribution,
    model: &LinearModel,
    form: RiskForm,
    base: BaseLoss,
) -> Result<f64> {
    dist.check_negativity()?;
    dist.check_model(model)?;
    match form {
        RiskForm::ClassConditional => {
            let (pi_p, pi_n) = (dist.pi_plus(), dist.pi_minus());
            let mut pos = 0.0;
            let mut neg = 0.0;
            for (i, x) in dist.support().iter().enumerate() {
                let g = model.score(x);
                pos += dist.p_x_given_pos(i) * base.value(g);
                neg += dist.p_x_given_neg(i) * base.value(-g);
            }
            Ok(pi_p * pos + pi_n * neg)
        }
        RiskForm::NegativityWeighted => {
            negativity_weighted_risk(dist, model, base, |i| dist.negativity(i))
        }
    }
}

fn negativity_weighted_risk(
    dist: &DiscreteDistribution,
    model: &LinearModel,
    base: BaseLoss,
    negativity: impl Fn(usize) -> f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for (i, x) in dist.support().iter().enumerate() {
        let g = model.score(x);
        let n = negativity(i);
        acc += dist.p_x_given_neg(i) * ((1.0 - n) / n * base.value(g) + base.value(-g));
    }
    Ok(dist.pi_minus() * acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    /// Largest `|class-conditional − negativity-weighted|` over the models.
    pub max_abs_diff: f64,
    /// Largest pointwise gap `|π₊ p(x|+1) − π₋ p(x|−1)(1−n)/n|`.
    pub max_pointwise_diff: f64,
}

/// Evaluate both risk forms for every model and report the largest gap,
/// together with the pointwise density identity behind the rewrite.
pub fn verify_identity(
    dist: &DiscreteDistribution,
    models: &[LinearModel],
    base: BaseLoss,
) -> Result<IdentityReport> {
    dist.check_negativity()?;
    let mut max_abs_diff: f64 = 0.0;
    for m in models {
        let a = exact_risk(dist, m, RiskForm::ClassConditional, base)?;
        let b = exact_risk(dist, m, RiskForm::NegativityWeighted, base)?;
        max_abs_diff = max_abs_diff.max((a - b).abs());
    }
    Ok(IdentityReport {
        max_abs_diff,
        max_pointwise_diff: pointwise_gap(dist),
    })
}

pub fn pointwise_gap(dist: &DiscreteDistribution) -> f64 {
    (0..dist.len())
        .map(|i| {
            let n = dist.negativity(i);
            let lhs = dist.pi_plus() * dist.p_x_given_pos(i);
            let rhs = dist.pi_minus() * dist.p_x_given_neg(i) * (1.0 - n) / n;
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Same as [`verify_identity`] but with the negativity clamped to
/// `[epsilon, 1 - epsilon]` in the weighted form, measuring the bias the
/// clamp introduces.
pub fn clamped_identity_gap(
    dist: &DiscreteDistribution,
    models: &[LinearModel],
    base: BaseLoss,
    epsilon: f64,
) -> Result<f64> {
    dist.check_negativity()?;
    let mut worst: f64 = 0.0;
    for m in models {
        dist.check_model(m)?;
        let a = exact_risk(dist, m, RiskForm::ClassConditional, base)?;
        let b = negativity_weighted_risk(dist, m, base, |i| {
            dist.negativity(i).clamp(epsilon, 1.0 - epsilon)
        })?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Bayes classifier: positive iff `p(y = +1 | x) > 0.5`.
pub fn bayes_labels(dist: &DiscreteDistribution) -> Vec<BinaryLabel> {
    (0..dist.len())
        .map(|i| BinaryLabel::from_sign(dist.posterior_positive(i) > 0.5))
        .collect()
}
