//! Python bindings. Labels cross the boundary as booleans: `True` means an
//! observed (or true) positive, `False` unlabelled (or negative).

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};

use ncws::data::{apply_threshold, load_reviews, InputFormat};
use ncws::eval;
use ncws::experiment::{
    run_compare, score_records, text_report, train_artifact, write_reports, AutoOr,
    ExperimentConfig, TrainOptions,
};
use ncws::features::{FeatureSet, DEFAULT_MAX_VOCAB};
use ncws::losses::{risk_with_score_gradient, RiskAux};
use ncws::model::{predict_labels, ModelArtifact};
use ncws::negativity::{NegativitySpec, DEFAULT_EPSILON};
use ncws::oracle::{verify_identity as verify, DiscreteDistribution};
use ncws::synth::{generate, Exposure, SynthConfig};
use ncws::{
    BaseLoss, BinaryLabel, ClassPriors, ConfidenceScore, Dataset, LabelState, LinearModel,
    NegativityScore, ReviewRecord, RiskAssembly, RiskSpec, TrainConfig,
};
use rand::SeedableRng;

fn py_err(e: ncws::Error) -> PyErr {
    match e {
        ncws::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| PyValueError::new_err(e.to_string()))
}

fn states(labels: &[bool]) -> Vec<LabelState> {
    labels
        .iter()
        .map(|&p| if p { LabelState::Positive } else { LabelState::Unlabelled })
        .collect()
}

fn binary(labels: &[bool]) -> Vec<BinaryLabel> {
    labels.iter().map(|&p| BinaryLabel::from_sign(p)).collect()
}

/// A thresholded review corpus.
#[pyclass(name = "Dataset", module = "ncws", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Load JSONL or CSV and label reviews with at least `threshold` votes.
    #[staticmethod]
    #[pyo3(signature = (path, format=None, threshold=1))]
    fn load(path: &str, format: Option<&str>, threshold: u64) -> PyResult<Self> {
        let format = match format {
            Some(f) => parse::<InputFormat>(f)?,
            None => InputFormat::from_path(path.as_ref()),
        };
        let report = load_reviews(path, format).map_err(py_err)?;
        let inner = apply_threshold(report.records, threshold).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("<Dataset {}>", self.inner.summary("corpus"))
    }

    #[pyo3(signature = (name="corpus"))]
    fn summary(&self, name: &str) -> String {
        self.inner.summary(name)
    }

    #[getter]
    fn n_positive(&self) -> usize {
        self.inner.n_positive()
    }

    #[getter]
    fn n_unlabelled(&self) -> usize {
        self.inner.n_unlabelled()
    }

    #[getter]
    fn max_age_days(&self) -> u64 {
        self.inner.max_age_days()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records().map(|r| r.id.clone()).collect()
    }

    fn ages(&self) -> Vec<u64> {
        self.inner.records().map(|r| r.age_days).collect()
    }

    fn labels(&self) -> Vec<bool> {
        self.inner.labels().into_iter().map(LabelState::is_positive).collect()
    }

    fn write_jsonl(&self, path: &str) -> PyResult<()> {
        ncws::synth::write_jsonl(self.inner.records(), path).map_err(py_err)
    }

    /// Pearson and Spearman correlation of age against helpful probability.
    #[pyo3(signature = (bin_days=30))]
    fn age_correlation(&self, bin_days: u64) -> PyResult<(f64, f64)> {
        let curve = eval::age_helpfulness_curve(&self.inner, bin_days).map_err(py_err)?;
        eval::curve_correlations(&curve).map_err(py_err)
    }
}

/// Synthetic corpus with age-dependent exposure. Returns the dataset and
/// the hidden true labels.
#[pyfunction]
#[pyo3(signature = (n=20_000, positive_fraction=0.45, max_age_days=3650, exposure="linear", noise=1.0, seed=1))]
fn synth(
    n: usize,
    positive_fraction: f64,
    max_age_days: u64,
    exposure: &str,
    noise: f64,
    seed: u64,
) -> PyResult<(PyDataset, Vec<bool>)> {
    let cfg = SynthConfig {
        n_instances: n,
        positive_fraction,
        max_age_days,
        exposure: parse::<Exposure>(exposure)?,
        feature_noise: noise,
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg).map_err(py_err)?;
    let truth = data.truth.iter().map(|t| t.is_positive()).collect();
    Ok((PyDataset { inner: data.dataset }, truth))
}

#[pyfunction]
#[pyo3(signature = (age_days, max_age_days, epsilon=DEFAULT_EPSILON))]
fn negativity_age(age_days: u64, max_age_days: u64, epsilon: f64) -> PyResult<f64> {
    ncws::negativity::negativity_age(age_days, max_age_days, epsilon)
        .map(NegativityScore::value)
        .map_err(py_err)
}

/// `(1 - n) / n`, after clamping `n` into `[epsilon, 1 - epsilon]`.
#[pyfunction]
#[pyo3(signature = (n, epsilon=DEFAULT_EPSILON))]
fn negativity_weight(n: f64, epsilon: f64) -> PyResult<f64> {
    NegativityScore::new(n, epsilon)
        .map(NegativityScore::weight)
        .map_err(py_err)
}

#[pyfunction]
fn loss_value(loss: &str, z: f64) -> PyResult<f64> {
    Ok(parse::<BaseLoss>(loss)?.value(z))
}

/// Empirical risk and its derivative with respect to each score.
#[pyfunction]
#[pyo3(signature = (assembly, scores, labels, loss="hinge", negativity=None, confidence=None, prior=None, penalty_ratio=None, epsilon=DEFAULT_EPSILON))]
#[allow(clippy::too_many_arguments)]
fn risk(
    assembly: &str,
    scores: Vec<f64>,
    labels: Vec<bool>,
    loss: &str,
    negativity: Option<Vec<Option<f64>>>,
    confidence: Option<Vec<Option<f64>>>,
    prior: Option<f64>,
    penalty_ratio: Option<f64>,
    epsilon: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let base = parse::<BaseLoss>(loss)?;
    let labels = states(&labels);
    let spec = match parse::<RiskAssembly>(assembly)? {
        RiskAssembly::Naive => RiskSpec::naive(base),
        RiskAssembly::Ncws => RiskSpec::ncws(base),
        RiskAssembly::PConf => RiskSpec::pconf(base),
        RiskAssembly::Cpu => {
            let pi = match prior {
                Some(p) => ClassPriors::new(p),
                None => ClassPriors::from_labels(&labels),
            };
            RiskSpec::cpu(base, pi.map_err(py_err)?)
        }
        RiskAssembly::WeightedPenalty => {
            let ratio = match penalty_ratio {
                Some(r) => r,
                None => ncws::losses::auto_penalty_ratio(&labels).map_err(py_err)?,
            };
            RiskSpec::weighted_penalty(base, ratio)
        }
    };
    let neg = negativity
        .map(|v| {
            v.into_iter()
                .map(|n| n.map(|n| NegativityScore::new(n, epsilon)).transpose())
                .collect::<ncws::Result<Vec<_>>>()
        })
        .transpose()
        .map_err(py_err)?;
    let conf = confidence
        .map(|v| {
            v.into_iter()
                .map(|c| c.map(|c| ConfidenceScore::new(c, epsilon)).transpose())
                .collect::<ncws::Result<Vec<_>>>()
        })
        .transpose()
        .map_err(py_err)?;
    let aux = RiskAux {
        negativity: neg.as_deref(),
        confidence: conf.as_deref(),
    };
    risk_with_score_gradient(&spec, &scores, &labels, aux).map_err(py_err)
}

/// A trained linear scorer together with its feature pipeline.
#[pyclass(name = "Model", module = "ncws", frozen)]
struct PyModel {
    artifact: ModelArtifact,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            artifact: ModelArtifact::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.artifact.save(path).map_err(py_err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.artifact.weights.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.artifact.bias
    }

    #[getter]
    fn schema(&self) -> Vec<String> {
        self.artifact.schema.clone()
    }

    #[getter]
    fn risk(&self) -> String {
        format!("{} ({})", self.artifact.risk.assembly, self.artifact.risk.base)
    }

    /// Raw decision values and their tanh-squashed counterparts.
    fn score(&self, dataset: &PyDataset) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let records: Vec<&ReviewRecord> = dataset.inner.records().collect();
        let s = score_records(&self.artifact, &records).map_err(py_err)?;
        Ok((s.raw, s.squashed))
    }

    #[pyo3(signature = (dataset, threshold=0.0))]
    fn predict(&self, dataset: &PyDataset, threshold: f64) -> PyResult<Vec<bool>> {
        let (raw, _) = self.score(dataset)?;
        Ok(predict_labels(&raw, threshold)
            .into_iter()
            .map(BinaryLabel::is_positive)
            .collect())
    }

    /// Score raw feature vectors, bypassing the pipeline and standardiser.
    fn decision_function(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let model: LinearModel = self.artifact.model().map_err(py_err)?;
        rows.iter()
            .map(|x| {
                if x.len() != model.feature_dim() {
                    return Err(PyValueError::new_err(format!(
                        "expected {} features, got {}",
                        model.feature_dim(),
                        x.len()
                    )));
                }
                Ok(model.score(x))
            })
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, risk="ncws", loss="hinge", features="all", max_vocab=DEFAULT_MAX_VOCAB, prior=None, penalty_ratio=None, negativity="age", epsilon=DEFAULT_EPSILON, confidence=None, lr=None, epochs=None, batch_size=None, l2=None, seed=0, standardize=true, downsample=true))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    risk: &str,
    loss: &str,
    features: &str,
    max_vocab: usize,
    prior: Option<f64>,
    penalty_ratio: Option<f64>,
    negativity: &str,
    epsilon: f64,
    confidence: Option<String>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    l2: Option<f64>,
    seed: u64,
    standardize: bool,
    downsample: bool,
) -> PyResult<PyModel> {
    let d = TrainConfig::default();
    let auto = |v: Option<f64>| v.map_or(AutoOr::Auto, AutoOr::Value);
    let opts = TrainOptions {
        features: parse::<FeatureSet>(features)?,
        max_vocab,
        assembly: parse::<RiskAssembly>(risk)?,
        loss: parse::<BaseLoss>(loss)?,
        prior: auto(prior),
        penalty_ratio: auto(penalty_ratio),
        negativity: parse::<NegativitySpec>(negativity)?,
        epsilon,
        confidence,
        train: TrainConfig {
            learning_rate: lr.unwrap_or(d.learning_rate),
            epochs: epochs.unwrap_or(d.epochs),
            batch_size: batch_size.unwrap_or(d.batch_size),
            l2_lambda: l2.unwrap_or(d.l2_lambda),
            seed,
        },
        standardize,
        downsample,
    };
    let data = &dataset.inner;
    let artifact = py
        .detach(|| train_artifact(data, &opts))
        .map_err(py_err)?;
    Ok(PyModel { artifact })
}

fn prf1_dict<'py>(py: Python<'py>, m: &eval::Prf1) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("tp", m.tp)?;
    d.set_item("fp", m.fp)?;
    d.set_item("fn", m.fn_)?;
    d.set_item("tn", m.tn)?;
    Ok(d)
}

#[pyfunction]
fn prf1<'py>(py: Python<'py>, predicted: Vec<bool>, truth: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::prf1(&binary(&predicted), &binary(&truth)).map_err(py_err)?;
    prf1_dict(py, &m)
}

/// Paired test of two prediction vectors against the same reference.
#[pyfunction]
fn mcnemar<'py>(
    py: Python<'py>,
    pred_a: Vec<bool>,
    pred_b: Vec<bool>,
    truth: Vec<bool>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = eval::mcnemar(&binary(&pred_a), &binary(&pred_b), &binary(&truth)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("b", r.b)?;
    d.set_item("c", r.c)?;
    d.set_item("statistic", r.statistic)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("significant", r.significant_05)?;
    Ok(d)
}

/// Check the negativity-weighted rewrite of the risk on a random finite
/// distribution. Returns the largest risk and pointwise density gaps.
#[pyfunction]
#[pyo3(signature = (seed=0, n_points=8, dim=2, n_models=10, loss="logistic"))]
fn verify_identity(
    seed: u64,
    n_points: usize,
    dim: usize,
    n_models: usize,
    loss: &str,
) -> PyResult<(f64, f64)> {
    use rand::Rng;
    let base = parse::<BaseLoss>(loss)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = DiscreteDistribution::random(&mut rng, n_points, dim).map_err(py_err)?;
    let models = (0..n_models)
        .map(|_| {
            let w = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            LinearModel::new(w, rng.random_range(-3.0..3.0))
        })
        .collect::<ncws::Result<Vec<_>>>()
        .map_err(py_err)?;
    let r = verify(&dist, &models, base).map_err(py_err)?;
    Ok((r.max_abs_diff, r.max_pointwise_diff))
}

/// Run the cross-validated comparison. `config` is either a config
/// document or a mapping of config keys to values.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn compare<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    out: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = if let Ok(text) = config.cast::<PyString>() {
        ExperimentConfig::parse_document(&text.to_cow()?).map_err(py_err)?
    } else {
        let pairs: HashMap<String, Bound<'py, PyAny>> = config.extract()?;
        let mut keys: Vec<_> = pairs.keys().cloned().collect();
        keys.sort();
        let mut cfg = ExperimentConfig::default();
        for k in keys {
            let v = pairs[&k].str()?.to_cow()?.into_owned();
            cfg.set(&k, &v).map_err(py_err)?;
        }
        cfg
    };
    cfg.validate().map_err(py_err)?;
    let report = py.detach(|| run_compare(&cfg)).map_err(py_err)?;
    if let Some(dir) = out {
        write_reports(&report, dir).map_err(py_err)?;
    }

    let result = PyDict::new(py);
    result.set_item("config_hash", &report.config_hash)?;
    result.set_item("summary", &report.summary)?;
    result.set_item("report", text_report(&report))?;
    result.set_item("age_correlation", report.age_correlation)?;
    let approaches = PyDict::new(py);
    for a in &report.approaches {
        let d = PyDict::new(py);
        d.set_item("loss", a.loss.to_string())?;
        d.set_item("f1_observed", a.mean_f1_observed())?;
        d.set_item("f1_truth", a.mean_f1_truth())?;
        d.set_item("scores", a.scores.raw.clone())?;
        d.set_item(
            "predictions",
            a.predictions.iter().map(|p| p.is_positive()).collect::<Vec<_>>(),
        )?;
        d.set_item("positive_scores", a.positive_scores())?;
        if let Some(m) = &a.mcnemar {
            d.set_item("mcnemar_statistic", m.statistic)?;
            d.set_item("mcnemar_p", m.p_value)?;
        }
        if let Some(f) = &a.flips {
            d.set_item("flipped", f.flipped)?;
            d.set_item("flip_base", f.base_negative)?;
        }
        approaches.set_item(a.assembly.to_string(), d)?;
    }
    result.set_item("approaches", approaches)?;
    Ok(result)
}

/// Canonical rendering and hash of a config document, after validation.
#[pyfunction]
fn resolve_config(text: &str) -> PyResult<(String, String)> {
    let cfg = ExperimentConfig::parse_document(text).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    Ok((cfg.resolved(), cfg.hash()))
}

#[pyfunction]
fn config_keys() -> Vec<&'static str> {
    ExperimentConfig::KEYS.to_vec()
}

#[pymodule]
#[pyo3(name = "ncws")]
fn ncws_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(negativity_age, m)?)?;
    m.add_function(wrap_pyfunction!(negativity_weight, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(risk, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(prf1, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(verify_identity, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_keys, m)?)?;
    m.add("DEFAULT_EPSILON", DEFAULT_EPSILON)?;
    Ok(())
}
