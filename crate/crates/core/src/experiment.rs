//! Experiment configuration and the cross-validated comparison protocol.
//!
//! Configs are flat `key = value` documents whose keys carry a section
//! prefix (`data.`, `features.`, `risk.`, `train.`, `eval.`). The resolved
//! config is rendered canonically and hashed; every report file carries the
//! hash, and equal hashes give byte-identical reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{
    downsample_indices, load_reviews, split_folds, BinaryLabel, ClassPriors, Dataset,
    InputFormat, LabelState, ReviewRecord,
};
use crate::error::{Error, Result};
use crate::eval::{
    age_helpfulness_curve, curve_correlations, flip_report, mcnemar, prf1, score_histogram,
    AgeBin, FlipStats, Histogram, McNemarResult, Prf1,
};
use crate::features::{FeaturePipeline, FeatureSet, DEFAULT_MAX_VOCAB};
use crate::losses::{auto_penalty_ratio, BaseLoss, RiskAssembly, RiskAux, RiskSpec};
use crate::matrix::FeatureMatrix;
use crate::model::{
    predict_labels, predict_scores, train, LinearModel, ModelArtifact, Scores, Standardizer,
    TrainConfig,
};
use crate::negativity::{
    positivity_default, ConfidenceScore, ConfidenceTable, NegativityScore, NegativitySource,
    NegativitySpec, DEFAULT_EPSILON,
};
use crate::numeric::derive_seed;
use crate::synth::read_truth;

/// Either a fixed value or one derived from the training fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

impl FromStr for AutoOr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(AutoOr::Auto);
        }
        s.parse()
            .map(AutoOr::Value)
            .map_err(|_| Error::Config(format!("expected `auto` or a number, got `{s}`")))
    }
}

impl std::fmt::Display for AutoOr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AutoOr::Auto => f.write_str("auto"),
            AutoOr::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub input: String,
    /// `None` infers the format from the file extension.
    pub format: Option<InputFormat>,
    /// Optional `id,true_label` sidecar for synthetic runs.
    pub truth: Option<String>,
    pub threshold: u64,
    pub folds: usize,
    pub seed: u64,
    pub features: FeatureSet,
    pub max_vocab: usize,
    pub standardize: bool,
    pub loss: BaseLoss,
    pub approaches: Vec<RiskAssembly>,
    pub negativity: NegativitySpec,
    pub epsilon: f64,
    /// Per-id positive confidences for P-conf; `None` uses `1 - n`.
    pub confidence: Option<String>,
    pub prior: AutoOr,
    pub penalty_ratio: AutoOr,
    pub train: TrainConfig,
    pub hist_bins: usize,
    pub age_bin_days: u64,
    pub decision_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: String::new(),
            format: None,
            truth: None,
            threshold: 1,
            folds: 5,
            seed: 1,
            features: FeatureSet::All,
            max_vocab: DEFAULT_MAX_VOCAB,
            standardize: true,
            loss: BaseLoss::Hinge,
            approaches: RiskAssembly::ALL.to_vec(),
            negativity: NegativitySpec::Age,
            epsilon: DEFAULT_EPSILON,
            confidence: None,
            prior: AutoOr::Auto,
            penalty_ratio: AutoOr::Auto,
            // plain SGD needs a larger step than the library default to
            // make progress in ten epochs
            train: TrainConfig {
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
            hist_bins: 20,
            age_bin_days: 30,
            decision_threshold: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 24] = [
        "data.input",
        "data.format",
        "data.truth",
        "data.threshold",
        "data.folds",
        "data.seed",
        "features.set",
        "features.max_vocab",
        "features.standardize",
        "risk.loss",
        "risk.approaches",
        "risk.negativity",
        "risk.epsilon",
        "risk.confidence",
        "risk.prior",
        "risk.penalty_ratio",
        "train.lr",
        "train.epochs",
        "train.batch_size",
        "train.l2",
        "train.seed",
        "eval.hist_bins",
        "eval.age_bin_days",
        "eval.decision_threshold",
    ];

    /// Set one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let opt = |v: &str| (!v.is_empty() && v != "none").then(|| v.to_string());
        match key {
            "data.input" => self.input = value.to_string(),
            "data.format" => {
                self.format = match value {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "data.truth" => self.truth = opt(value),
            "data.threshold" => self.threshold = parse(key, value)?,
            "data.folds" => self.folds = parse(key, value)?,
            "data.seed" => self.seed = parse(key, value)?,
            "features.set" => self.features = parse(key, value)?,
            "features.max_vocab" => self.max_vocab = parse(key, value)?,
            "features.standardize" => self.standardize = parse_bool(key, value)?,
            "risk.loss" => self.loss = parse(key, value)?,
            "risk.approaches" => {
                self.approaches = value
                    .split(',')
                    .map(|a| parse(key, a.trim()))
                    .collect::<Result<_>>()?
            }
            "risk.negativity" => self.negativity = parse(key, value)?,
            "risk.epsilon" => self.epsilon = parse(key, value)?,
            "risk.confidence" => {
                self.confidence = match value {
                    "default" | "" => None,
                    v => Some(
                        v.strip_prefix("file:")
                            .ok_or_else(|| {
                                Error::Config(format!("bad value `{v}` for `{key}`"))
                            })?
                            .to_string(),
                    ),
                }
            }
            "risk.prior" => self.prior = parse(key, value)?,
            "risk.penalty_ratio" => self.penalty_ratio = parse(key, value)?,
            "train.lr" => self.train.learning_rate = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.l2" => self.train.l2_lambda = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "eval.hist_bins" => self.hist_bins = parse(key, value)?,
            "eval.age_bin_days" => self.age_bin_days = parse(key, value)?,
            "eval.decision_threshold" => self.decision_threshold = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a `key = value` document on top of the defaults. Blank lines
    /// and `#` comments are ignored; repeated keys are rejected.
    pub fn parse_document(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_document(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::Config("data.input is required".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("data.folds must be at least 2".into()));
        }
        if self.approaches.first() != Some(&RiskAssembly::Naive) {
            return Err(Error::Config(
                "risk.approaches must start with naive, the baseline".into(),
            ));
        }
        let unique: BTreeSet<_> = self.approaches.iter().map(|a| a.name()).collect();
        if unique.len() != self.approaches.len() {
            return Err(Error::Config("risk.approaches lists an approach twice".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config("risk.epsilon must lie in (0, 0.5)".into()));
        }
        if let AutoOr::Value(p) = self.prior {
            ClassPriors::new(p)?;
        }
        if let AutoOr::Value(r) = self.penalty_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("risk.penalty_ratio must be positive".into()));
            }
        }
        if self.hist_bins < 2 || self.age_bin_days < 1 {
            return Err(Error::Config(
                "eval.hist_bins must be >= 2 and eval.age_bin_days >= 1".into(),
            ));
        }
        self.train.validate()
    }

    /// Canonical `key = value` rendering with every key present.
    pub fn resolved(&self) -> String {
        let approaches: Vec<&str> = self.approaches.iter().map(|a| a.name()).collect();
        let entries = [
            ("data.input", self.input.clone()),
            (
                "data.format",
                self.format.map_or("auto".into(), |f| format!("{f:?}").to_lowercase()),
            ),
            ("data.truth", self.truth.clone().unwrap_or_else(|| "none".into())),
            ("data.threshold", self.threshold.to_string()),
            ("data.folds", self.folds.to_string()),
            ("data.seed", self.seed.to_string()),
            ("features.set", self.features.to_string()),
            ("features.max_vocab", self.max_vocab.to_string()),
            ("features.standardize", self.standardize.to_string()),
            ("risk.loss", self.loss.to_string()),
            ("risk.approaches", approaches.join(",")),
            ("risk.negativity", self.negativity.to_string()),
            ("risk.epsilon", self.epsilon.to_string()),
            (
                "risk.confidence",
                self.confidence
                    .as_ref()
                    .map_or("default".into(), |p| format!("file:{p}")),
            ),
            ("risk.prior", self.prior.to_string()),
            ("risk.penalty_ratio", self.penalty_ratio.to_string()),
            ("train.lr", self.train.learning_rate.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.l2", self.train.l2_lambda.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("eval.hist_bins", self.hist_bins.to_string()),
            ("eval.age_bin_days", self.age_bin_days.to_string()),
            ("eval.decision_threshold", self.decision_threshold.to_string()),
        ];
        entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved().as_bytes()))
    }

    /// Load the configured corpus and threshold it into PU labels.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = Path::new(&self.input);
        let format = self.format.unwrap_or_else(|| InputFormat::from_path(path));
        let report = load_reviews(path, format)?;
        if report.skipped > 0 {
            log::warn!("{}: skipped {} malformed lines", path.display(), report.skipped);
        }
        crate::data::apply_threshold(report.records, self.threshold)
    }
}

/// Truth labels aligned with `dataset`, looked up by record id.
pub fn align_truth(dataset: &Dataset, path: impl AsRef<Path>) -> Result<Vec<BinaryLabel>> {
    let table = read_truth(path)?;
    dataset
        .records()
        .map(|r| {
            table
                .get(&r.id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("no true label for `{}`", r.id)))
        })
        .collect()
}

/// C-PU is only convex with a loss whose composite `ℓ(z) - ℓ(-z)` is
/// linear, so plain hinge is swapped for the double hinge.
pub fn cpu_loss(base: BaseLoss) -> BaseLoss {
    match base {
        BaseLoss::Hinge => BaseLoss::DoubleHinge,
        other => other,
    }
}

/// Where per-instance negativity and positive confidence come from.
#[derive(Clone, Copy)]
pub struct SideInfo<'a> {
    pub negativity: &'a dyn NegativitySource,
    /// Overrides the `1 - n` default for P-conf when present.
    pub confidence: Option<&'a ConfidenceTable>,
    pub epsilon: f64,
}

impl SideInfo<'_> {
    fn confidence_of(&self, record: &ReviewRecord) -> Result<ConfidenceScore> {
        match self.confidence {
            Some(t) => t.get(record),
            None => positivity_default(self.negativity.negativity(record)?, self.epsilon),
        }
    }
}

/// Side information for `spec`: negativity on unlabelled rows (NCWS) or
/// positive confidence on positive rows (P-conf).
#[allow(clippy::type_complexity)]
pub fn risk_side_info(
    records: &[&ReviewRecord],
    labels: &[LabelState],
    spec: &RiskSpec,
    side: &SideInfo<'_>,
) -> Result<(Option<Vec<Option<NegativityScore>>>, Option<Vec<Option<ConfidenceScore>>>)> {
    let negativity = if spec.needs_negativity() {
        Some(
            records
                .iter()
                .zip(labels)
                .map(|(r, l)| {
                    (!l.is_positive())
                        .then(|| side.negativity.negativity(r))
                        .transpose()
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let confidence = if spec.needs_confidence() {
        Some(
            records
                .iter()
                .zip(labels)
                .map(|(r, l)| l.is_positive().then(|| side.confidence_of(r)).transpose())
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((negativity, confidence))
}

/// Standardise (optionally) and train one linear scorer.
pub fn fit_linear(
    x: &FeatureMatrix,
    records: &[&ReviewRecord],
    labels: &[LabelState],
    spec: &RiskSpec,
    side: &SideInfo<'_>,
    config: &TrainConfig,
    standardize: bool,
) -> Result<(LinearModel, Option<Standardizer>)> {
    let scaler = standardize.then(|| Standardizer::fit(x));
    let scaled;
    let x = match &scaler {
        Some(s) => {
            scaled = s.transform(x)?;
            &scaled
        }
        None => x,
    };
    let (neg, conf) = risk_side_info(records, labels, spec, side)?;
    let aux = RiskAux {
        negativity: neg.as_deref(),
        confidence: conf.as_deref(),
    };
    Ok((train(x, labels, aux, spec, config)?, scaler))
}

/// Everything the `train` subcommand needs besides the corpus.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub features: FeatureSet,
    pub max_vocab: usize,
    pub assembly: RiskAssembly,
    pub loss: BaseLoss,
    pub prior: AutoOr,
    pub penalty_ratio: AutoOr,
    pub negativity: NegativitySpec,
    pub epsilon: f64,
    /// Optional `id,score` CSV of positive confidences for P-conf.
    pub confidence: Option<String>,
    pub train: TrainConfig,
    pub standardize: bool,
    /// Balance the corpus before training (weighted-penalty risks skip it).
    pub downsample: bool,
}

/// Resolve `auto` priors and ratios against the given labels.
pub fn resolve_spec(
    assembly: RiskAssembly,
    loss: BaseLoss,
    prior: AutoOr,
    penalty_ratio: AutoOr,
    labels: &[LabelState],
) -> Result<RiskSpec> {
    let spec = match assembly {
        RiskAssembly::Naive => RiskSpec::naive(loss),
        RiskAssembly::Ncws => RiskSpec::ncws(loss),
        RiskAssembly::PConf => RiskSpec::pconf(loss),
        RiskAssembly::Cpu => {
            let prior = match prior {
                AutoOr::Auto => ClassPriors::from_labels(labels)?,
                AutoOr::Value(p) => ClassPriors::new(p)?,
            };
            RiskSpec::cpu(loss, prior)
        }
        RiskAssembly::WeightedPenalty => {
            let ratio = match penalty_ratio {
                AutoOr::Auto => auto_penalty_ratio(labels)?,
                AutoOr::Value(r) => r,
            };
            RiskSpec::weighted_penalty(loss, ratio)
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Fit the feature pipeline and a model on a whole corpus.
pub fn train_artifact(dataset: &Dataset, opts: &TrainOptions) -> Result<ModelArtifact> {
    let records: Vec<&ReviewRecord> = dataset.records().collect();
    let labels = dataset.labels();
    let max_age = dataset.max_age_days();
    let spec = resolve_spec(opts.assembly, opts.loss, opts.prior, opts.penalty_ratio, &labels)?;
    let pipeline = FeaturePipeline::fit(&records, opts.features, opts.max_vocab, max_age)?;
    let keep = if opts.downsample && spec.assembly != RiskAssembly::WeightedPenalty {
        downsample_indices(&labels, derive_seed(opts.train.seed, 0x0d5a))?
    } else {
        None
    };
    let (records, labels) = match keep {
        Some(keep) => (
            keep.iter().map(|&i| records[i]).collect::<Vec<_>>(),
            keep.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        ),
        None => (records, labels),
    };
    let x = pipeline.transform(&records)?;
    let source = opts.negativity.build(max_age, opts.epsilon)?;
    let table = opts
        .confidence
        .as_ref()
        .map(|p| ConfidenceTable::from_csv(p, opts.epsilon))
        .transpose()?;
    let side = SideInfo {
        negativity: source.as_ref(),
        confidence: table.as_ref(),
        epsilon: opts.epsilon,
    };
    let (model, scaler) = fit_linear(
        &x,
        &records,
        &labels,
        &spec,
        &side,
        &opts.train,
        opts.standardize,
    )?;
    Ok(ModelArtifact::new(&model, pipeline.schema(), scaler, Some(pipeline), spec))
}

/// Decision values of a saved model on new records.
pub fn score_records(artifact: &ModelArtifact, records: &[&ReviewRecord]) -> Result<Scores> {
    let pipeline = artifact
        .pipeline
        .as_ref()
        .ok_or_else(|| Error::invalid("model artifact has no feature pipeline"))?;
    let mut x = pipeline.transform(records)?;
    if let Some(s) = &artifact.standardizer {
        x = s.transform(&x)?;
    }
    predict_scores(&artifact.model()?, &x)
}

/// Results for one approach, pooled over the held-out folds.
#[derive(Debug, Clone)]
pub struct ApproachResult {
    pub assembly: RiskAssembly,
    pub loss: BaseLoss,
    /// Held-out scores, indexed like the dataset.
    pub scores: Scores,
    pub predictions: Vec<BinaryLabel>,
    pub fold_observed: Vec<Prf1>,
    pub fold_truth: Option<Vec<Prf1>>,
    /// Paired test against the naive baseline, on truth when available.
    pub mcnemar: Option<McNemarResult>,
    pub flips: Option<FlipStats>,
    pub histogram: Histogram,
}

impl ApproachResult {
    pub fn mean_f1_observed(&self) -> f64 {
        mean_by(&self.fold_observed, |m| m.f1)
    }

    pub fn mean_f1_truth(&self) -> Option<f64> {
        self.fold_truth.as_ref().map(|f| mean_by(f, |m| m.f1))
    }

    /// Held-out instances with a positive squashed score.
    pub fn positive_scores(&self) -> usize {
        self.scores.squashed.iter().filter(|&&s| s > 0.0).count()
    }
}

fn mean_by(folds: &[Prf1], f: impl Fn(&Prf1) -> f64) -> f64 {
    folds.iter().map(f).sum::<f64>() / folds.len() as f64
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub summary: String,
    pub n_instances: usize,
    pub n_features: usize,
    pub approaches: Vec<ApproachResult>,
    pub age_curve: Vec<AgeBin>,
    /// Pearson and Spearman of the age curve, when defined.
    pub age_correlation: Option<(f64, f64)>,
}

impl CompareReport {
    pub fn approach(&self, assembly: RiskAssembly) -> Option<&ApproachResult> {
        self.approaches.iter().find(|a| a.assembly == assembly)
    }
}

struct FoldOutput {
    test: Vec<usize>,
    n_features: usize,
    /// Per approach, held-out raw scores aligned with `test`.
    scores: Vec<Vec<f64>>,
}

fn run_fold(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    split: &crate::data::FoldSplit,
    fold: usize,
    side: &SideInfo<'_>,
) -> Result<FoldOutput> {
    let all: Vec<&ReviewRecord> = dataset.records().collect();
    let all_labels = dataset.labels();
    let train_idx = split.train_indices(fold);
    let test = split.test_indices(fold);
    let train_records: Vec<&ReviewRecord> = train_idx.iter().map(|&i| all[i]).collect();
    let train_labels: Vec<LabelState> = train_idx.iter().map(|&i| all_labels[i]).collect();
    let test_records: Vec<&ReviewRecord> = test.iter().map(|&i| all[i]).collect();

    let pipeline = FeaturePipeline::fit(
        &train_records,
        cfg.features,
        cfg.max_vocab,
        dataset.max_age_days(),
    )?;
    let x_train = pipeline.transform(&train_records)?;
    let x_test = pipeline.transform(&test_records)?;

    let balanced = downsample_indices(&train_labels, derive_seed(cfg.seed, 1 + fold as u64))?
        .unwrap_or_else(|| (0..train_labels.len()).collect());
    let bal_x = x_train.select_rows(&balanced);
    let bal_records: Vec<&ReviewRecord> = balanced.iter().map(|&i| train_records[i]).collect();
    let bal_labels: Vec<LabelState> = balanced.iter().map(|&i| train_labels[i]).collect();

    let fit_one = |assembly: RiskAssembly| -> Result<Vec<f64>> {
        let loss = if assembly == RiskAssembly::Cpu {
            cpu_loss(cfg.loss)
        } else {
            cfg.loss
        };
        // priors and ratios come from the full training fold; the
        // weighted-penalty baseline trains on it unbalanced
        let spec = resolve_spec(assembly, loss, cfg.prior, cfg.penalty_ratio, &train_labels)?;
        let (x, records, labels) = if assembly == RiskAssembly::WeightedPenalty {
            (&x_train, &train_records, &train_labels)
        } else {
            (&bal_x, &bal_records, &bal_labels)
        };
        let (model, scaler) =
            fit_linear(x, records, labels, &spec, side, &cfg.train, cfg.standardize)?;
        let xt = match &scaler {
            Some(s) => s.transform(&x_test)?,
            None => x_test.clone(),
        };
        model.decision_values(&xt)
    };

    let scores = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .approaches
            .iter()
            .map(|&a| s.spawn(move || fit_one(a)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("training thread panicked"))))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(FoldOutput {
        test,
        n_features: x_train.cols(),
        scores,
    })
}

/// Train every configured approach on identical stratified folds and
/// evaluate the pooled held-out predictions.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let truth = cfg.truth.as_ref().map(|p| align_truth(&dataset, p)).transpose()?;
    compare_on(cfg, &dataset, truth.as_deref())
}

/// [`run_compare`] on an already loaded corpus.
pub fn compare_on(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    truth: Option<&[BinaryLabel]>,
) -> Result<CompareReport> {
    let n = dataset.len();
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::LengthMismatch { left: n, right: t.len() });
        }
    }
    let labels = dataset.labels();
    let observed: Vec<BinaryLabel> = labels.iter().map(|&l| l.into()).collect();
    let split = split_folds(&labels, cfg.folds, cfg.seed)?;
    let source = cfg.negativity.build(dataset.max_age_days(), cfg.epsilon)?;
    let table = cfg
        .confidence
        .as_ref()
        .map(|p| ConfidenceTable::from_csv(p, cfg.epsilon))
        .transpose()?;
    let side = SideInfo {
        negativity: source.as_ref(),
        confidence: table.as_ref(),
        epsilon: cfg.epsilon,
    };

    let n_app = cfg.approaches.len();
    let mut raw = vec![vec![0.0; n]; n_app];
    let mut fold_tests = Vec::with_capacity(cfg.folds);
    let mut n_features = 0;
    for fold in 0..cfg.folds {
        let out = run_fold(cfg, dataset, &split, fold, &side)?;
        log::info!("fold {}/{} done", fold + 1, cfg.folds);
        for (a, scores) in out.scores.iter().enumerate() {
            for (&i, &s) in out.test.iter().zip(scores) {
                raw[a][i] = s;
            }
        }
        n_features = out.n_features;
        fold_tests.push(out.test);
    }

    let reference = truth.unwrap_or(&observed);
    let mut approaches: Vec<ApproachResult> = Vec::with_capacity(n_app);
    for (a, &assembly) in cfg.approaches.iter().enumerate() {
        let raw_scores = std::mem::take(&mut raw[a]);
        let squashed: Vec<f64> = raw_scores.iter().map(|s| s.tanh()).collect();
        let predictions = predict_labels(&raw_scores, cfg.decision_threshold);
        let per_fold = |target: &[BinaryLabel]| {
            fold_tests
                .iter()
                .map(|test| {
                    let p: Vec<BinaryLabel> = test.iter().map(|&i| predictions[i]).collect();
                    let t: Vec<BinaryLabel> = test.iter().map(|&i| target[i]).collect();
                    prf1(&p, &t)
                })
                .collect::<Result<Vec<_>>>()
        };
        let fold_observed = per_fold(&observed)?;
        let fold_truth = truth.map(per_fold).transpose()?;
        let (mcn, flips) = match approaches.first() {
            Some(base) => (
                Some(mcnemar(&base.predictions, &predictions, reference)?),
                Some(flip_report(&base.predictions, &predictions, &labels)?),
            ),
            None => (None, None),
        };
        let histogram = score_histogram(&squashed, cfg.hist_bins)?;
        approaches.push(ApproachResult {
            assembly,
            loss: if assembly == RiskAssembly::Cpu {
                cpu_loss(cfg.loss)
            } else {
                cfg.loss
            },
            scores: Scores {
                raw: raw_scores,
                squashed,
            },
            predictions,
            fold_observed,
            fold_truth,
            mcnemar: mcn,
            flips,
            histogram,
        });
    }

    let age_curve = age_helpfulness_curve(dataset, cfg.age_bin_days)?;
    let age_correlation = curve_correlations(&age_curve).ok();
    let name = Path::new(&cfg.input)
        .file_stem()
        .map_or("corpus".into(), |s| s.to_string_lossy().into_owned());
    Ok(CompareReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        summary: dataset.summary(&name),
        n_instances: n,
        n_features,
        approaches,
        age_curve,
        age_correlation,
    })
}

fn display_name(a: RiskAssembly) -> &'static str {
    match a {
        RiskAssembly::Naive => "Naive",
        RiskAssembly::Ncws => "NCWS",
        RiskAssembly::Cpu => "C-PU",
        RiskAssembly::PConf => "P-conf",
        RiskAssembly::WeightedPenalty => "SVM-P",
    }
}

/// Metrics in long form: one row per (approach, reference, fold, metric).
pub fn metrics_csv(report: &CompareReport) -> String {
    let mut out = String::from("config_hash,approach,reference,fold,metric,value\n");
    for a in &report.approaches {
        let mut refs = vec![("observed", &a.fold_observed)];
        if let Some(t) = &a.fold_truth {
            refs.push(("truth", t));
        }
        for (reference, folds) in refs {
            let rows = folds
                .iter()
                .enumerate()
                .map(|(i, m)| (i.to_string(), m.precision, m.recall, m.f1))
                .chain(std::iter::once((
                    "mean".to_string(),
                    mean_by(folds, |m| m.precision),
                    mean_by(folds, |m| m.recall),
                    mean_by(folds, |m| m.f1),
                )));
            for (fold, p, r, f1) in rows {
                for (metric, v) in [("precision", p), ("recall", r), ("f1", f1)] {
                    let _ = writeln!(
                        out,
                        "{},{},{reference},{fold},{metric},{v:.6}",
                        report.config_hash,
                        a.assembly.name()
                    );
                }
            }
        }
    }
    out
}

pub fn significance_csv(report: &CompareReport) -> String {
    let reference = if report.config.truth.is_some() { "truth" } else { "observed" };
    let mut out = String::from("config_hash,approach,baseline,reference,b,c,statistic,p_value,significant_05\n");
    for a in &report.approaches {
        if let Some(m) = &a.mcnemar {
            let _ = writeln!(
                out,
                "{},{},naive,{reference},{},{},{:.6},{:.6e},{}",
                report.config_hash,
                a.assembly.name(),
                m.b,
                m.c,
                m.statistic,
                m.p_value,
                m.significant_05
            );
        }
    }
    out
}

pub fn flips_csv(report: &CompareReport) -> String {
    let mut out = String::from("config_hash,approach,flipped,base_negative,pct\n");
    for a in &report.approaches {
        if let Some(f) = &a.flips {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                report.config_hash,
                a.assembly.name(),
                f.flipped,
                f.base_negative,
                f.pct
            );
        }
    }
    out
}

pub fn histograms_csv(report: &CompareReport) -> String {
    let mut out = String::from("config_hash,approach,bin_lo,bin_hi,count\n");
    for a in &report.approaches {
        let h = &a.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{c}",
                report.config_hash,
                a.assembly.name(),
                h.edges[i],
                h.edges[i + 1]
            );
        }
    }
    out
}

pub fn age_curve_csv(config_hash: &str, curve: &[AgeBin]) -> String {
    let mut out = String::from("config_hash,age_start,helpful_probability,review_count\n");
    for b in curve {
        let _ = writeln!(
            out,
            "{config_hash},{},{:.6},{}",
            b.age_start, b.helpful_probability, b.review_count
        );
    }
    out
}

/// Human-readable summary tables.
pub fn text_report(report: &CompareReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    let _ = writeln!(out, "Classification correction comparison");
    let _ = writeln!(out, "config {}", report.config_hash);
    let _ = writeln!(out, "{}", report.summary);
    let _ = writeln!(
        out,
        "{}-fold stratified CV, features `{}` ({} columns), loss {}, lr {}, {} epochs",
        cfg.folds,
        cfg.features,
        report.n_features,
        cfg.loss,
        cfg.train.learning_rate,
        cfg.train.epochs
    );
    if cfg.standardize {
        let _ = writeln!(
            out,
            "features standardised to zero mean and unit variance on each training fold"
        );
    }
    let _ = writeln!(out);

    let mut references = vec!["observed"];
    if cfg.truth.is_some() {
        references.push("truth");
    }
    let _ = writeln!(out, "Mean held-out metrics over folds");
    let _ = writeln!(
        out,
        "{:<8} {:<13} {:<9} {:>9} {:>9} {:>9}",
        "approach", "loss", "labels", "precision", "recall", "f1"
    );
    for a in &report.approaches {
        for reference in &references {
            let folds = if *reference == "truth" {
                a.fold_truth.as_ref().unwrap_or(&a.fold_observed)
            } else {
                &a.fold_observed
            };
            let star = match &a.mcnemar {
                Some(m) if m.significant_05 && (*reference == "truth") == cfg.truth.is_some() => "*",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<8} {:<13} {:<9} {:>9.4} {:>9.4} {:>9.4}{star}",
                display_name(a.assembly),
                a.loss.to_string(),
                reference,
                mean_by(folds, |m| m.precision),
                mean_by(folds, |m| m.recall),
                mean_by(folds, |m| m.f1),
            );
        }
    }
    let _ = writeln!(
        out,
        "* McNemar test against Naive on pooled held-out predictions, p < 0.05"
    );
    let _ = writeln!(out);

    let _ = writeln!(out, "Unlabelled reviews re-labelled positive (predicted negative by Naive)");
    for a in &report.approaches {
        if let Some(f) = &a.flips {
            let _ = writeln!(out, "{:<8} {f}", display_name(a.assembly));
        }
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "Held-out reviews with a positive squashed score");
    for a in &report.approaches {
        let _ = writeln!(
            out,
            "{:<8} {} / {}",
            display_name(a.assembly),
            a.positive_scores(),
            report.n_instances
        );
    }
    let _ = writeln!(out);
    match report.age_correlation {
        Some((p, s)) => {
            let _ = writeln!(
                out,
                "Age vs helpful probability ({}-day bins): Pearson {p:.4}, Spearman {s:.4}",
                cfg.age_bin_days
            );
        }
        None => {
            let _ = writeln!(out, "Age vs helpful probability: correlation undefined");
        }
    }
    out
}

/// Write every report file into `dir`, returning the paths written.
pub fn write_reports(report: &CompareReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &report.config_hash;
    let files = [
        ("config.txt", format!("# config_hash = {hash}\n{}", report.config.resolved())),
        ("report.txt", text_report(report)),
        ("metrics.csv", metrics_csv(report)),
        ("significance.csv", significance_csv(report)),
        ("flips.csv", flips_csv(report)),
        ("histograms.csv", histograms_csv(report)),
        ("age_curve.csv", age_curve_csv(hash, &report.age_curve)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
