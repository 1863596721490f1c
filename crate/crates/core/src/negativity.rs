//! Negativity scores: the estimated probability that an unlabelled instance
//! is a latent negative, and the risk weights derived from them.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ReviewRecord;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon {epsilon} not in (0, 0.5)")))
    }
}

fn clamp(v: f64, epsilon: f64) -> f64 {
    v.clamp(epsilon, 1.0 - epsilon)
}

/// `n(x)`, held inside `[epsilon, 1 - epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NegativityScore(f64);

impl NegativityScore {
    pub fn new(value: f64, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !value.is_finite() {
            return Err(Error::invalid("negativity must be finite"));
        }
        Ok(NegativityScore(clamp(value, epsilon)))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The factor `(1 - n) / n` applied to the positive-direction loss of an
    /// unlabelled instance.
    pub fn weight(self) -> f64 {
        negativity_weight(self)
    }
}

/// Probability that a labelled instance is truly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    pub fn new(value: f64, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !value.is_finite() {
            return Err(Error::invalid("confidence must be finite"));
        }
        Ok(ConfidenceScore(clamp(value, epsilon)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Unclamped `ln(d + 1) / ln(d_max + 2)`. Lies in `[0, 1)`.
pub fn negativity_age_raw(age_days: u64, max_age_days: u64) -> f64 {
    ((age_days as f64) + 1.0).ln() / ((max_age_days as f64) + 2.0).ln()
}

/// Age-based negativity of an instance `age_days` old, normalised by the
/// oldest age in the corpus.
pub fn negativity_age(age_days: u64, max_age_days: u64, epsilon: f64) -> Result<NegativityScore> {
    check_epsilon(epsilon)?;
    if age_days > max_age_days {
        return Err(Error::invalid(format!(
            "age {age_days} exceeds maximum age {max_age_days}"
        )));
    }
    Ok(NegativityScore(clamp(
        negativity_age_raw(age_days, max_age_days),
        epsilon,
    )))
}

pub fn negativity_weight(n: NegativityScore) -> f64 {
    (1.0 - n.0) / n.0
}

/// Default positive confidence `1 - n`, re-clamped.
pub fn positivity_default(n: NegativityScore, epsilon: f64) -> Result<ConfidenceScore> {
    ConfidenceScore::new(1.0 - n.0, epsilon)
}

/// Any rule assigning a negativity to a review.
pub trait NegativitySource: Send + Sync {
    fn negativity(&self, record: &ReviewRecord) -> Result<NegativityScore>;
}

/// Age-based negativity with a maximum age frozen at fit time. Instances
/// older than the frozen maximum score `1 - epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeNegativity {
    pub max_age_days: u64,
    pub epsilon: f64,
}

impl NegativitySource for AgeNegativity {
    fn negativity(&self, record: &ReviewRecord) -> Result<NegativityScore> {
        if record.age_days > self.max_age_days {
            return NegativityScore::new(1.0 - self.epsilon, self.epsilon);
        }
        negativity_age(record.age_days, self.max_age_days, self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantNegativity(pub NegativityScore);

impl NegativitySource for ConstantNegativity {
    fn negativity(&self, _record: &ReviewRecord) -> Result<NegativityScore> {
        Ok(self.0)
    }
}

/// Per-id scores read from a two-column CSV (`id,score`).
#[derive(Debug, Clone, PartialEq)]
pub struct TableNegativity {
    scores: HashMap<String, NegativityScore>,
}

/// Rows of a headed two-column `id,score` CSV.
fn read_score_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (Some(id), Some(score)) = (row.get(0), row.get(1)) else {
            return Err(Error::invalid(format!("{}: short row", path.display())));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad score `{score}` for `{id}`")))?;
        rows.push((id.trim().to_string(), score));
    }
    Ok(rows)
}

impl TableNegativity {
    pub fn from_csv(path: impl AsRef<Path>, epsilon: f64) -> Result<Self> {
        let scores = read_score_csv(path.as_ref())?
            .into_iter()
            .map(|(id, v)| Ok((id, NegativityScore::new(v, epsilon)?)))
            .collect::<Result<_>>()?;
        Ok(TableNegativity { scores })
    }

    pub fn from_map(scores: HashMap<String, NegativityScore>) -> Self {
        TableNegativity { scores }
    }
}

impl NegativitySource for TableNegativity {
    fn negativity(&self, record: &ReviewRecord) -> Result<NegativityScore> {
        self.scores
            .get(&record.id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no negativity score for `{}`", record.id)))
    }
}

/// Per-id positive confidences overriding the `1 - n` default.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    scores: HashMap<String, ConfidenceScore>,
}

impl ConfidenceTable {
    pub fn from_csv(path: impl AsRef<Path>, epsilon: f64) -> Result<Self> {
        let scores = read_score_csv(path.as_ref())?
            .into_iter()
            .map(|(id, v)| Ok((id, ConfidenceScore::new(v, epsilon)?)))
            .collect::<Result<_>>()?;
        Ok(ConfidenceTable { scores })
    }

    pub fn get(&self, record: &ReviewRecord) -> Result<ConfidenceScore> {
        self.scores
            .get(&record.id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no confidence score for `{}`", record.id)))
    }
}

/// Parsed form of the `--negativity` flag: `age`, `constant:<v>` or `file:<path>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NegativitySpec {
    Age,
    Constant(f64),
    File(String),
}

impl FromStr for NegativitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "age" {
            return Ok(NegativitySpec::Age);
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let v = v
                .parse()
                .map_err(|_| Error::invalid(format!("bad constant negativity `{v}`")))?;
            return Ok(NegativitySpec::Constant(v));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(NegativitySpec::File(p.to_string()));
        }
        Err(Error::invalid(format!("unknown negativity source `{s}`")))
    }
}

impl std::fmt::Display for NegativitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NegativitySpec::Age => write!(f, "age"),
            NegativitySpec::Constant(v) => write!(f, "constant:{v}"),
            NegativitySpec::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl NegativitySpec {
    pub fn build(&self, max_age_days: u64, epsilon: f64) -> Result<Box<dyn NegativitySource>> {
        Ok(match self {
            NegativitySpec::Age => Box::new(AgeNegativity {
                max_age_days,
                epsilon,
            }),
            NegativitySpec::Constant(v) => {
                Box::new(ConstantNegativity(NegativityScore::new(*v, epsilon)?))
            }
            NegativitySpec::File(p) => Box::new(TableNegativity::from_csv(p, epsilon)?),
        })
    }
}
