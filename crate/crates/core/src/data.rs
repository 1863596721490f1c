//! Review records, label states, ingestion, folds and class balancing.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw review as ingested from a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub id: String,
    #[serde(default)]
    pub user_id: Option<String>,
    pub text: String,
    pub rating: f64,
    pub age_days: u64,
    pub helpful_votes: u64,
    /// Optional pre-computed dense covariates. Real corpora leave this empty;
    /// the synthetic generator fills it with the latent cluster coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=5.0).contains(&self.rating) {
            return Err(Error::invalid(format!(
                "rating {} outside [1, 5] for `{}`",
                self.rating, self.id
            )));
        }
        if let Some(f) = &self.features {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite covariate in `{}`", self.id)));
            }
        }
        Ok(())
    }
}

/// Observed label of an instance. `Unlabelled` is not a negative label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelState {
    Positive,
    Unlabelled,
}

impl LabelState {
    pub fn is_positive(self) -> bool {
        matches!(self, LabelState::Positive)
    }

    /// Margin sign used when unlabelled instances are read as negatives.
    pub fn sign(self) -> f64 {
        match self {
            LabelState::Positive => 1.0,
            LabelState::Unlabelled => -1.0,
        }
    }
}

/// A hard binary label: a prediction or a ground-truth class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryLabel {
    Positive,
    Negative,
}

impl BinaryLabel {
    pub fn is_positive(self) -> bool {
        matches!(self, BinaryLabel::Positive)
    }

    pub fn from_sign(positive: bool) -> Self {
        if positive {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        }
    }

    pub fn as_i8(self) -> i8 {
        if self.is_positive() {
            1
        } else {
            -1
        }
    }
}

impl From<LabelState> for BinaryLabel {
    /// Observed-label reading: unlabelled counts as negative.
    fn from(l: LabelState) -> Self {
        BinaryLabel::from_sign(l.is_positive())
    }
}

/// A labelled corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<(ReviewRecord, LabelState)>,
    n_positive: usize,
    n_unlabelled: usize,
}

impl Dataset {
    pub fn new(instances: Vec<(ReviewRecord, LabelState)>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_positive = instances.iter().filter(|(_, l)| l.is_positive()).count();
        let n_unlabelled = instances.len() - n_positive;
        Ok(Dataset {
            instances,
            n_positive,
            n_unlabelled,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.n_positive
    }

    pub fn n_unlabelled(&self) -> usize {
        self.n_unlabelled
    }

    pub fn instances(&self) -> &[(ReviewRecord, LabelState)] {
        &self.instances
    }

    pub fn records(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.instances.iter().map(|(r, _)| r)
    }

    pub fn labels(&self) -> Vec<LabelState> {
        self.instances.iter().map(|(_, l)| *l).collect()
    }

    pub fn max_age_days(&self) -> u64 {
        self.records().map(|r| r.age_days).max().unwrap_or(0)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.n_positive as f64 / self.len() as f64
    }

    /// Instances at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.instances[i].clone()).collect())
    }

    /// One-line corpus summary, e.g. `Yelp: 1,373,587 reviews, 45.21% helpful`.
    pub fn summary(&self, name: &str) -> String {
        format!(
            "{}: {} reviews, {:.2}% helpful ({} helpful, {} unlabelled)",
            name,
            thousands(self.len()),
            100.0 * self.positive_fraction(),
            thousands(self.n_positive),
            thousands(self.n_unlabelled),
        )
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Class priors `p(y = +1)` and `p(y = -1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pi_plus: f64,
}

impl ClassPriors {
    pub fn new(pi_plus: f64) -> Result<Self> {
        if !(pi_plus > 0.0 && pi_plus < 1.0) {
            return Err(Error::invalid(format!("class prior {pi_plus} not in (0, 1)")));
        }
        Ok(ClassPriors { pi_plus })
    }

    /// Labelled-positive fraction of `labels`.
    pub fn from_labels(labels: &[LabelState]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let pos = labels.iter().filter(|l| l.is_positive()).count();
        ClassPriors::new(pos as f64 / labels.len() as f64)
    }

    pub fn pi_plus(&self) -> f64 {
        self.pi_plus
    }

    pub fn pi_minus(&self) -> f64 {
        1.0 - self.pi_plus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::invalid(format!("unknown input format `{other}`"))),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> InputFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

/// Result of reading a corpus file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub records: Vec<ReviewRecord>,
    pub skipped: usize,
    /// 1-based line numbers of skipped lines (header is line 1 for CSV).
    pub skipped_lines: Vec<usize>,
}

/// Read all well-formed records from `path`. Malformed lines are skipped
/// and tallied; only an unreadable file is fatal.
pub fn load_reviews(path: impl AsRef<Path>, format: InputFormat) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report = match format {
        InputFormat::Jsonl => load_jsonl(BufReader::new(file), path)?,
        InputFormat::Csv => load_csv(file)?,
    };
    if report.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed line(s)",
            path.display(),
            report.skipped
        );
    }
    Ok(report)
}

fn load_jsonl(reader: impl BufRead, path: &Path) -> Result<LoadReport> {
    let mut records = Vec::new();
    let mut skipped_lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ReviewRecord>(&line) {
            Ok(rec) if rec.validate().is_ok() => records.push(rec),
            _ => skipped_lines.push(i + 1),
        }
    }
    Ok(LoadReport {
        records,
        skipped: skipped_lines.len(),
        skipped_lines,
    })
}

fn load_csv(file: File) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = ["id", "text", "rating", "age_days", "helpful_votes"];
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name)
            .ok_or_else(|| Error::invalid(format!("CSV header lacks column `{name}`")))?;
    }
    let user_col = col("user_id");
    let feat_col = col("features");

    let mut records = Vec::new();
    let mut skipped_lines = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let parsed = row.ok().and_then(|row| {
            let get = |c: usize| row.get(c).map(str::trim);
            let features = match feat_col.and_then(&get).filter(|s| !s.is_empty()) {
                Some(s) => Some(
                    s.split_whitespace()
                        .map(f64::from_str)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .ok()?,
                ),
                None => None,
            };
            let rec = ReviewRecord {
                id: get(idx[0])?.to_string(),
                user_id: user_col
                    .and_then(&get)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string),
                text: row.get(idx[1])?.to_string(),
                rating: get(idx[2])?.parse().ok()?,
                age_days: get(idx[3])?.parse().ok()?,
                helpful_votes: get(idx[4])?.parse().ok()?,
                features,
            };
            rec.validate().ok().map(|_| rec)
        });
        match parsed {
            Some(rec) => records.push(rec),
            None => skipped_lines.push(line),
        }
    }
    Ok(LoadReport {
        records,
        skipped: skipped_lines.len(),
        skipped_lines,
    })
}

/// Label each record `Positive` iff it has at least `threshold` helpful votes.
pub fn apply_threshold(records: Vec<ReviewRecord>, threshold: u64) -> Result<Dataset> {
    if threshold < 1 {
        return Err(Error::invalid("helpfulness threshold must be >= 1"));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(
        records
            .into_iter()
            .map(|r| {
                let label = if r.helpful_votes >= threshold {
                    LabelState::Positive
                } else {
                    LabelState::Unlabelled
                };
                (r, label)
            })
            .collect(),
    )
}

/// Assignment of every instance to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Stratified k-fold split. Positives are dealt round-robin first and the
/// unlabelled instances continue the rotation, so both fold sizes and
/// per-fold positive counts differ by at most one.
pub fn split_folds(labels: &[LabelState], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!(
            "cannot split {} instances into {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let mut unl: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    pos.shuffle(&mut rng);
    unl.shuffle(&mut rng);

    let mut assignments = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(unl.iter()).enumerate() {
        assignments[i] = slot % k;
    }
    Ok(FoldSplit { k, assignments })
}

/// Indices selected by down-sampling the unlabelled class to the size of the
/// positive class, in ascending order. Returns `None` in place of the
/// indices when positives already outnumber the unlabelled instances.
pub fn downsample_indices(labels: &[LabelState], seed: u64) -> Result<Option<Vec<usize>>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let unl: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    if pos.is_empty() {
        return Err(Error::invalid("down-sampling needs at least one positive"));
    }
    if pos.len() > unl.len() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = pos;
    keep.extend(
        index::sample(&mut rng, unl.len(), keep.len())
            .into_iter()
            .map(|j| unl[j]),
    );
    keep.sort_unstable();
    Ok(Some(keep))
}

/// Balance `train` by uniformly sub-sampling its unlabelled instances.
pub fn downsample_balance(train: &Dataset, seed: u64) -> Result<Dataset> {
    match downsample_indices(&train.labels(), seed)? {
        Some(keep) => train.subset(&keep),
        None => {
            log::warn!(
                "positives ({}) outnumber unlabelled ({}); down-sampling skipped",
                train.n_positive(),
                train.n_unlabelled()
            );
            Ok(train.clone())
        }
    }
}
