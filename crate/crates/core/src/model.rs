//! Linear scoring model and its mini-batch subgradient trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BinaryLabel, LabelState};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::losses::{accumulate_linear_gradient, instance_term, Norms, RiskAux, RiskSpec};
use crate::matrix::FeatureMatrix;
use crate::numeric::{derive_seed, mix64};

/// `g(x) = w·φ(x) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(LinearModel { weights, bias })
    }

    pub fn zeros(feature_dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; feature_dim],
            bias: 0.0,
        }
    }

    /// Build from a flat `(weights..., bias)` parameter vector.
    pub fn from_params(params: &[f64]) -> Result<Self> {
        let (bias, weights) = params
            .split_last()
            .ok_or_else(|| Error::invalid("parameter vector is empty"))?;
        LinearModel::new(weights.to_vec(), *bias)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).fold(self.bias, |acc, (w, v)| acc + w * v)
    }

    /// Raw scores for every row of `features`.
    pub fn decision_values(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.cols() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: features.cols(),
            });
        }
        Ok(features.iter_rows().map(|r| self.score(r)).collect())
    }

    fn l2_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Raw decision values with a `tanh`-squashed copy in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub raw: Vec<f64>,
    pub squashed: Vec<f64>,
}

pub fn predict_scores(model: &LinearModel, features: &FeatureMatrix) -> Result<Scores> {
    let raw = model.decision_values(features)?;
    let squashed = raw.iter().map(|s| s.tanh()).collect();
    Ok(Scores { raw, squashed })
}

/// `+1` iff `score > threshold`; ties go negative.
pub fn predict_labels(scores: &[f64], threshold: f64) -> Vec<BinaryLabel> {
    scores
        .iter()
        .map(|&s| BinaryLabel::from_sign(s > threshold))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 100,
            l2_lambda: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::invalid("l2 lambda must be non-negative"));
        }
        Ok(())
    }
}

const MIN_STEP: f64 = 1e-8;

/// Regularised training objective: risk plus `λ/2 ‖w‖²`.
pub fn objective(
    spec: &RiskSpec,
    model: &LinearModel,
    features: &FeatureMatrix,
    labels: &[LabelState],
    aux: RiskAux<'_>,
    l2_lambda: f64,
) -> Result<f64> {
    let scores = model.decision_values(features)?;
    let (risk, _) = crate::losses::risk_with_score_gradient(spec, &scores, labels, aux)?;
    Ok(risk + 0.5 * l2_lambda * model.l2_norm_sq())
}

/// Minimise the regularised risk by mini-batch subgradient descent from the
/// zero model.
///
/// Each epoch visits rows in an order keyed on `(seed, epoch, row content)`,
/// so the result does not depend on the order rows are supplied in. After
/// every epoch the full objective is re-evaluated; an epoch that raises it
/// is discarded and the step halved. Training stops early once the step
/// falls below `1e-8`.
pub fn train(
    features: &FeatureMatrix,
    labels: &[LabelState],
    aux: RiskAux<'_>,
    spec: &RiskSpec,
    config: &TrainConfig,
) -> Result<LinearModel> {
    config.validate()?;
    spec.validate()?;
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: features.rows(),
        });
    }
    if labels.len() < 2 {
        return Err(Error::invalid("training needs at least two instances"));
    }
    if !features.all_finite() {
        return Err(Error::NonFinite {
            epoch: 0,
            detail: "input features".into(),
        });
    }

    let negativity: Vec<Option<f64>> = (0..labels.len())
        .map(|i| aux.negativity.and_then(|n| n.get(i).copied().flatten()).map(|n| n.value()))
        .collect();
    let confidence: Vec<Option<f64>> = (0..labels.len())
        .map(|i| aux.confidence.and_then(|c| c.get(i).copied().flatten()).map(|c| c.value()))
        .collect();

    let dim = features.cols();
    let mut model = LinearModel::zeros(dim);
    let mut best = objective(spec, &model, features, labels, aux, config.l2_lambda)?;
    let mut step = config.learning_rate;
    let mut grad = vec![0.0; dim + 1];

    for epoch in 0..config.epochs {
        let order = epoch_order(features, labels, &negativity, &confidence, config.seed, epoch);
        let mut candidate = model.clone();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let norms = Norms::from_labels(batch.iter().map(|&i| &labels[i]));
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let g = candidate.score(features.row(i));
                let (_, d) =
                    instance_term(spec, labels[i], g, negativity[i], confidence[i], norms, i)?;
                terms.push((features.row(i), d));
            }
            accumulate_linear_gradient(&mut grad, terms.into_iter());
            for (w, g) in candidate.weights.iter_mut().zip(&grad) {
                *w -= step * (g + config.l2_lambda * *w);
            }
            candidate.bias -= step * grad[dim];
            if !candidate.bias.is_finite() || candidate.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite {
                    epoch,
                    detail: format!("parameters diverged at step size {step:e}"),
                });
            }
        }
        let value = objective(spec, &candidate, features, labels, aux, config.l2_lambda)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                detail: "objective".into(),
            });
        }
        if value <= best {
            model = candidate;
            best = value;
        } else {
            step *= 0.5;
            log::debug!("epoch {epoch}: objective rose to {value:e}; step halved to {step:e}");
            if step < MIN_STEP {
                break;
            }
        }
    }
    Ok(model)
}

fn epoch_order(
    features: &FeatureMatrix,
    labels: &[LabelState],
    negativity: &[Option<f64>],
    confidence: &[Option<f64>],
    seed: u64,
    epoch: usize,
) -> Vec<usize> {
    let epoch_key = derive_seed(seed, epoch as u64);
    let key = |i: usize| {
        let mut h = mix64(epoch_key ^ u64::from(labels[i].is_positive()));
        for v in features.row(i) {
            h = mix64(h ^ v.to_bits());
        }
        for v in [negativity[i], confidence[i]] {
            h = mix64(h ^ v.map_or(u64::MAX, f64::to_bits));
        }
        h
    };
    let mut keyed: Vec<(u64, usize)> = (0..labels.len()).map(|i| (key(i), i)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Per-column standardisation fitted on a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Zero mean, unit (population) variance. Constant columns keep scale 1.
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything needed to score new reviews: model, column schema,
/// standardisation statistics and the fitted feature pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub schema: Vec<String>,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    #[serde(default)]
    pub pipeline: Option<FeaturePipeline>,
    pub risk: RiskSpec,
}

impl ModelArtifact {
    pub fn new(
        model: &LinearModel,
        schema: Vec<String>,
        standardizer: Option<Standardizer>,
        pipeline: Option<FeaturePipeline>,
        risk: RiskSpec,
    ) -> Self {
        ModelArtifact {
            version: MODEL_FORMAT_VERSION,
            feature_dim: model.feature_dim(),
            weights: model.weights.clone(),
            bias: model.bias,
            schema,
            standardizer,
            pipeline,
            risk,
        }
    }

    pub fn model(&self) -> Result<LinearModel> {
        if self.weights.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: self.weights.len(),
            });
        }
        LinearModel::new(self.weights.clone(), self.bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        if artifact.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                artifact.version
            )));
        }
        artifact.model()?;
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::BaseLoss;
    use approx::assert_abs_diff_eq;
    use LabelState::{Positive as P, Unlabelled as U};

    fn separable() -> (FeatureMatrix, Vec<LabelState>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64) * 0.01;
            rows.push(vec![1.0 + jitter, 1.0 - jitter]);
            labels.push(P);
            rows.push(vec![-1.0 - jitter, -1.0 + jitter]);
            labels.push(U);
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_set_is_learned() {
        let (x, y) = separable();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let m = train(&x, &y, RiskAux::default(), &RiskSpec::naive(BaseLoss::Hinge), &cfg).unwrap();
        let pred = predict_labels(&m.decision_values(&x).unwrap(), 0.0);
        assert!(pred.iter().zip(&y).all(|(p, l)| p.is_positive() == l.is_positive()));
    }

    #[test]
    fn one_class_degenerate() {
        let x = FeatureMatrix::from_rows(&[vec![0.5], vec![-0.2], vec![1.0]]).unwrap();
        let y = [P, P, P];
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 50,
            batch_size: 3,
            l2_lambda: 0.0,
            seed: 0,
        };
        let spec = RiskSpec::naive(BaseLoss::Hinge);
        let m = train(&x, &y, RiskAux::default(), &spec, &cfg).unwrap();
        let scores = m.decision_values(&x).unwrap();
        assert!(scores.iter().all(|&s| s > 0.0));
        assert_eq!(objective(&spec, &m, &x, &y, RiskAux::default(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_runs() {
        let (x, y) = separable();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            seed: 9,
            ..TrainConfig::default()
        };
        let spec = RiskSpec::weighted_penalty(BaseLoss::Logistic, 2.0);
        let a = train(&x, &y, RiskAux::default(), &spec, &cfg).unwrap();
        let b = train(&x, &y, RiskAux::default(), &spec, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let bits = |m: &LinearModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn training_errors() {
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let spec = RiskSpec::naive(BaseLoss::Hinge);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&x, &[P], RiskAux::default(), &spec, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = FeatureMatrix::from_rows(&[vec![f64::NAN], vec![2.0]]).unwrap();
        assert!(matches!(
            train(&bad, &[P, U], RiskAux::default(), &spec, &cfg),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            train(&x, &[P, U], RiskAux::default(), &RiskSpec::ncws(BaseLoss::Hinge), &cfg),
            Err(Error::MissingAux { .. })
        ));
    }

    #[test]
    fn prediction_examples() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let x = FeatureMatrix::from_rows(&[vec![2.0, 5.0]]).unwrap();
        let s = predict_scores(&m, &x).unwrap();
        assert_eq!(s.raw, vec![2.0]);
        assert_abs_diff_eq!(s.squashed[0], 0.96403, epsilon = 5e-6);

        let zero = LinearModel::zeros(2);
        assert_eq!(zero.decision_values(&x).unwrap(), vec![0.0]);

        let shifted = LinearModel::new(vec![1.0, 0.0], -2.0).unwrap();
        let x0 = FeatureMatrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(shifted.decision_values(&x0).unwrap(), vec![0.0]);

        let wrong = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(predict_scores(&m, &wrong).is_err());
    }

    #[test]
    fn label_thresholding() {
        use BinaryLabel::{Negative as N, Positive as Y};
        assert_eq!(predict_labels(&[0.2, -0.3], 0.0), vec![Y, N]);
        assert_eq!(predict_labels(&[0.0], 0.0), vec![N]);
        assert_eq!(predict_labels(&[0.4], 0.5), vec![N]);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 3.0]]).unwrap();
        let st = Standardizer::fit(&x);
        let z = st.transform(&x).unwrap();
        assert_eq!(z.row(0), &[-1.0, 0.0]);
        assert_eq!(z.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn artifact_round_trip() {
        let m = LinearModel::new(vec![0.25, -1.5], 0.125).unwrap();
        let art = ModelArtifact::new(
            &m,
            vec!["a".into(), "b".into()],
            None,
            None,
            RiskSpec::ncws(BaseLoss::Hinge),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        art.save(&path).unwrap();
        let back = ModelArtifact::load(&path).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.model().unwrap(), m);
    }
}
