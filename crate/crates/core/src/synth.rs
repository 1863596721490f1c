//! Synthetic positive/unlabelled review corpora.
//!
//! True classes come from two Gaussian clusters in the plane. A true
//! positive only acquires an observed helpful vote with a probability that
//! grows with its age, so young positives hide among the unlabelled.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{apply_threshold, BinaryLabel, Dataset, ReviewRecord};
use crate::error::{Error, Result};

/// Probability that a true positive of a given age has been labelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exposure {
    /// `age / max_age`.
    Linear,
    /// `1 / (1 + exp(-steepness · (age / max_age - 0.5)))`.
    Logistic { steepness: f64 },
    /// 1 from `age >= threshold` on, 0 before.
    Step { threshold_days: u64 },
    /// Constant probability, mainly for tests.
    Constant(f64),
}

impl Exposure {
    pub fn probability(self, age_days: u64, max_age_days: u64) -> f64 {
        let frac = if max_age_days == 0 {
            1.0
        } else {
            age_days as f64 / max_age_days as f64
        };
        match self {
            Exposure::Linear => frac,
            Exposure::Logistic { steepness } => 1.0 / (1.0 + (-steepness * (frac - 0.5)).exp()),
            Exposure::Step { threshold_days } => f64::from(u8::from(age_days >= threshold_days)),
            Exposure::Constant(p) => p,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Exposure::Logistic { steepness } if steepness.is_nan() || steepness < 0.0 => {
                Err(Error::invalid("logistic exposure needs non-negative steepness"))
            }
            Exposure::Constant(p) if !(0.0..=1.0).contains(&p) => {
                Err(Error::invalid("constant exposure must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Exposure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Exposure::Linear),
            "logistic" => Ok(Exposure::Logistic { steepness: 10.0 }),
            _ => {
                if let Some(a0) = s.strip_prefix("step:") {
                    let threshold_days = a0
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad step age `{a0}`")))?;
                    Ok(Exposure::Step { threshold_days })
                } else if let Some(p) = s.strip_prefix("constant:") {
                    let p = p
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad exposure `{p}`")))?;
                    Ok(Exposure::Constant(p))
                } else {
                    Err(Error::invalid(format!("unknown exposure `{s}`")))
                }
            }
        }
    }
}

impl fmt::Display for Exposure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exposure::Linear => write!(f, "linear"),
            Exposure::Logistic { .. } => write!(f, "logistic"),
            Exposure::Step { threshold_days } => write!(f, "step:{threshold_days}"),
            Exposure::Constant(p) => write!(f, "constant:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub positive_fraction: f64,
    pub max_age_days: u64,
    pub exposure: Exposure,
    /// Standard deviation of the isotropic cluster noise.
    pub feature_noise: f64,
    /// Cluster centres sit at `(±offset, ±offset)`.
    pub cluster_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_instances: 20_000,
            positive_fraction: 0.45,
            max_age_days: 3650,
            exposure: Exposure::Linear,
            feature_noise: 1.0,
            cluster_offset: 1.5,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::invalid("n_instances must be positive"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid("positive_fraction must lie in (0, 1)"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::invalid("feature_noise must be non-negative"));
        }
        if !self.cluster_offset.is_finite() {
            return Err(Error::invalid("cluster_offset must be finite"));
        }
        self.exposure.validate()
    }
}

/// Generated corpus plus the hidden true class of every instance.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub truth: Vec<BinaryLabel>,
}

const WORDS: &[&str] = &[
    "the", "food", "service", "place", "really", "friendly", "staff", "price", "quality",
    "wonderful", "quickly", "menu", "location", "experience", "delicious", "table", "visit",
    "waiting", "atmosphere", "portion", "nice", "slow", "great", "value",
];

fn filler_text(rng: &mut ChaCha8Rng) -> String {
    let n_sent = rng.random_range(1..=4);
    let mut out = String::new();
    for s in 0..n_sent {
        if s > 0 {
            out.push(' ');
        }
        let n_words = rng.random_range(3..=12);
        for w in 0..n_words {
            let word = WORDS[rng.random_range(0..WORDS.len())];
            if w == 0 {
                let mut c = word.chars();
                if let Some(first) = c.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(c.as_str());
                }
            } else {
                out.push(' ');
                out.push_str(word);
            }
        }
        out.push(if rng.random_bool(0.2) { '?' } else { '.' });
    }
    out
}

/// Draw a synthetic PU corpus. Observed labels use the helpfulness
/// threshold 1: labelled positives get 1–3 helpful votes, the rest none.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.feature_noise)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let mut records = Vec::with_capacity(config.n_instances);
    let mut truth = Vec::with_capacity(config.n_instances);
    for i in 0..config.n_instances {
        let positive = rng.random_bool(config.positive_fraction);
        let centre = if positive {
            config.cluster_offset
        } else {
            -config.cluster_offset
        };
        let x = [centre + noise.sample(&mut rng), centre + noise.sample(&mut rng)];
        let age_days = rng.random_range(0..=config.max_age_days);
        let p_label = config
            .exposure
            .probability(age_days, config.max_age_days)
            .clamp(0.0, 1.0);
        let exposed = rng.random_bool(p_label);
        let helpful_votes = if positive && exposed {
            rng.random_range(1..=3)
        } else {
            0
        };
        let rating = f64::from(rng.random_range(1u8..=5));
        let text = filler_text(&mut rng);
        records.push(ReviewRecord {
            id: format!("s{i:06}"),
            user_id: None,
            text,
            rating,
            age_days,
            helpful_votes,
            features: Some(x.to_vec()),
        });
        truth.push(BinaryLabel::from_sign(positive));
    }
    Ok(SynthData {
        dataset: apply_threshold(records, 1)?,
        truth,
    })
}

/// Write records as JSONL in the ingestion schema.
pub fn write_jsonl<'a>(
    records: impl IntoIterator<Item = &'a ReviewRecord>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sidecar truth file: `id,true_label` with labels `1` / `-1`.
pub fn write_truth<'a>(
    rows: impl IntoIterator<Item = (&'a str, BinaryLabel)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "true_label"])?;
    for (id, label) in rows {
        w.write_record([id, &label.as_i8().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<HashMap<String, BinaryLabel>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in r.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().to_string();
        let label = match row.get(1).map(str::trim) {
            Some("1") | Some("+1") => BinaryLabel::Positive,
            Some("-1") => BinaryLabel::Negative,
            other => {
                return Err(Error::invalid(format!(
                    "{}: bad label {:?} for `{id}`",
                    path.display(),
                    other
                )))
            }
        };
        out.insert(id, label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(exposure: Exposure) -> SynthConfig {
        SynthConfig {
            n_instances: 2000,
            exposure,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn full_exposure_reveals_all_positives() {
        let d = generate(&small(Exposure::Constant(1.0))).unwrap();
        let true_pos = d.truth.iter().filter(|t| t.is_positive()).count();
        assert_eq!(d.dataset.n_positive(), true_pos);
    }

    #[test]
    fn zero_exposure_hides_all_positives() {
        let d = generate(&small(Exposure::Constant(0.0))).unwrap();
        assert_eq!(d.dataset.n_positive(), 0);
    }

    #[test]
    fn observed_positives_are_true_positives() {
        let d = generate(&small(Exposure::Linear)).unwrap();
        for ((_, l), t) in d.dataset.instances().iter().zip(&d.truth) {
            if l.is_positive() {
                assert!(t.is_positive());
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(Exposure::Linear)).unwrap();
        let b = generate(&small(Exposure::Linear)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate(&SynthConfig {
            seed: 6,
            ..small(Exposure::Linear)
        })
        .unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn exposure_shapes() {
        assert_eq!(Exposure::Linear.probability(50, 100), 0.5);
        assert_eq!(Exposure::Step { threshold_days: 10 }.probability(9, 100), 0.0);
        assert_eq!(Exposure::Step { threshold_days: 10 }.probability(10, 100), 1.0);
        let l = Exposure::Logistic { steepness: 10.0 };
        assert!((l.probability(50, 100) - 0.5).abs() < 1e-15);
        assert!(l.probability(10, 100) < l.probability(90, 100));
        for s in ["linear", "logistic", "step:30", "constant:0.5"] {
            assert_eq!(s.parse::<Exposure>().unwrap().to_string(), s);
        }
        assert!("wiggly".parse::<Exposure>().is_err());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_instances: 0, ..SynthConfig::default() },
            SynthConfig { positive_fraction: 1.0, ..SynthConfig::default() },
            SynthConfig { feature_noise: -1.0, ..SynthConfig::default() },
            SynthConfig { exposure: Exposure::Constant(1.5), ..SynthConfig::default() },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        write_truth([("a", BinaryLabel::Positive), ("b", BinaryLabel::Negative)], &path).unwrap();
        let t = read_truth(&path).unwrap();
        assert_eq!(t["a"], BinaryLabel::Positive);
        assert_eq!(t["b"], BinaryLabel::Negative);
    }
}
