//! Hand-engineered review features.
//!
//! Four families are extracted per review and concatenated on demand:
//!
//! | family     | columns                                   |
//! |------------|-------------------------------------------|
//! | structural | `len`, `nos`, `asl`, `poqs`               |
//! | lexical    | `ugr:<token>` TF-IDF unigram weights       |
//! | syntactic  | `pct_noun`, `pct_adj`, `pct_adv`          |
//! | metadata   | `rating`, `rating_norm` (if users), `age` |
//!
//! Records that carry pre-computed covariates contribute `cov<i>` columns to
//! the `covariates` and `all` selectors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ReviewRecord;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::negativity::{negativity_age, DEFAULT_EPSILON};

pub const DEFAULT_MAX_VOCAB: usize = 10_000;

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Sentences as `(token count, ends with a question mark)`. Runs of
/// terminators close a sentence; a trailing unterminated fragment still
/// counts; segments without tokens are dropped.
fn sentences(text: &str) -> Vec<(usize, bool)> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let end = rest.find(is_terminator).unwrap_or(rest.len());
        let segment = &rest[..end];
        let tail = &rest[end..];
        let run_len = tail
            .char_indices()
            .find(|&(_, c)| !is_terminator(c))
            .map_or(tail.len(), |(i, _)| i);
        let run = &tail[..run_len];
        let tokens = tokenize(segment).len();
        if tokens > 0 {
            out.push((tokens, run.contains('?')));
        }
        rest = &tail[run_len..];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StructuralFeatures {
    /// Number of words.
    pub len: f64,
    /// Number of sentences.
    pub nos: f64,
    /// Average sentence length in words.
    pub asl: f64,
    /// Fraction of sentences ending in a question mark.
    pub poqs: f64,
}

pub fn structural_features(text: &str) -> StructuralFeatures {
    let len = tokenize(text).len();
    let sents = sentences(text);
    let nos = sents.len();
    if nos == 0 {
        return StructuralFeatures {
            len: len as f64,
            ..Default::default()
        };
    }
    let questions = sents.iter().filter(|(_, q)| *q).count();
    StructuralFeatures {
        len: len as f64,
        nos: nos as f64,
        asl: len as f64 / nos as f64,
        poqs: questions as f64 / nos as f64,
    }
}

/// Document frequencies and vocabulary for TF-IDF weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
    n_docs: usize,
}

impl TfidfModel {
    /// Keep the `max_vocab` tokens with the highest document frequency,
    /// breaking ties lexicographically. Indices follow that ranking.
    pub fn fit<S: AsRef<str>>(corpus: &[Vec<S>], max_vocab: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab);
        let vocabulary = ranked
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.to_string(), i))
            .collect();
        let doc_freq = ranked.iter().map(|(_, d)| *d).collect();
        Ok(TfidfModel {
            vocabulary,
            doc_freq,
            n_docs: corpus.len(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).copied()
    }

    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.index_of(token).map(|i| self.doc_freq[i])
    }

    /// Tokens in index order.
    pub fn terms(&self) -> Vec<&str> {
        let mut terms = vec![""; self.vocab_size()];
        for (t, &i) in &self.vocabulary {
            terms[i] = t;
        }
        terms
    }

    /// L2-normalised `tf · ln(n_docs / df)` weights as `(index, weight)`
    /// pairs sorted by index. Zero weights are omitted.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> Vec<(usize, f64)> {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(i) = self.index_of(t.as_ref()) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut weights: Vec<(usize, f64)> = tf
            .into_iter()
            .map(|(i, f)| (i, f * (self.n_docs as f64 / self.doc_freq[i] as f64).ln()))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            weights.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        weights
    }
}

pub fn tfidf_fit<S: AsRef<str>>(corpus: &[Vec<S>], max_vocab: usize) -> Result<TfidfModel> {
    TfidfModel::fit(corpus, max_vocab)
}

pub fn tfidf_transform<S: AsRef<str>>(model: &TfidfModel, doc: &[S]) -> Vec<(usize, f64)> {
    model.transform(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Noun,
    Adj,
    Adv,
    Other,
}

/// Coarse part-of-speech tagger.
pub trait Tagger {
    fn tag(&self, token: &str) -> PosTag;
}

/// Suffix heuristic: `-ly` adverbs; `-ous`, `-ful`, `-ive`, `-able`,
/// `-ible`, `-less`, `-ic`, `-al` adjectives; `-tion`, `-sion`, `-ment`,
/// `-ness`, `-ity`, `-ance`, `-ence`, `-ship`, `-ism` nouns. Everything else
/// is `Other`. The stem must be at least two characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct SuffixTagger;

impl Tagger for SuffixTagger {
    fn tag(&self, token: &str) -> PosTag {
        const RULES: &[(&str, PosTag)] = &[
            ("ly", PosTag::Adv),
            ("ous", PosTag::Adj),
            ("ful", PosTag::Adj),
            ("ive", PosTag::Adj),
            ("able", PosTag::Adj),
            ("ible", PosTag::Adj),
            ("less", PosTag::Adj),
            ("ic", PosTag::Adj),
            ("al", PosTag::Adj),
            ("tion", PosTag::Noun),
            ("sion", PosTag::Noun),
            ("ment", PosTag::Noun),
            ("ness", PosTag::Noun),
            ("ity", PosTag::Noun),
            ("ance", PosTag::Noun),
            ("ence", PosTag::Noun),
            ("ship", PosTag::Noun),
            ("ism", PosTag::Noun),
        ];
        RULES
            .iter()
            .find(|(suffix, _)| {
                token.len() >= suffix.len() + 2 && token.ends_with(suffix)
            })
            .map_or(PosTag::Other, |&(_, tag)| tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntacticFeatures {
    pub pct_noun: f64,
    pub pct_adj: f64,
    pub pct_adv: f64,
}

pub fn syntactic_features(text: &str, tagger: &dyn Tagger) -> SyntacticFeatures {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return SyntacticFeatures::default();
    }
    let (mut noun, mut adj, mut adv) = (0usize, 0usize, 0usize);
    for t in &tokens {
        match tagger.tag(t) {
            PosTag::Noun => noun += 1,
            PosTag::Adj => adj += 1,
            PosTag::Adv => adv += 1,
            PosTag::Other => {}
        }
    }
    let n = tokens.len() as f64;
    SyntacticFeatures {
        pct_noun: noun as f64 / n,
        pct_adj: adj as f64 / n,
        pct_adv: adv as f64 / n,
    }
}

/// Mean rating and review count per user.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserStats {
    users: BTreeMap<String, (f64, usize)>,
}

impl UserStats {
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a ReviewRecord>) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in records {
            if let Some(u) = &r.user_id {
                let e = sums.entry(u.clone()).or_default();
                e.0 += r.rating;
                e.1 += 1;
            }
        }
        for v in sums.values_mut() {
            v.0 /= v.1 as f64;
        }
        UserStats { users: sums }
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, user: &str) -> Option<(f64, usize)> {
        self.users.get(user).copied()
    }

    pub fn insert(&mut self, user: impl Into<String>, mean: f64, count: usize) {
        self.users.insert(user.into(), (mean, count));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetadataFeatures {
    pub rating: f64,
    /// `None` when no user statistics are available for the corpus.
    pub rating_norm: Option<f64>,
    pub age_norm: f64,
}

/// Rating, user-relative rating and normalised age. `rating_norm` is the
/// user's mean rating minus this rating; a record whose user is unknown to
/// non-empty `stats` gets 0.
pub fn metadata_features(
    record: &ReviewRecord,
    stats: Option<&UserStats>,
    max_age_days: u64,
) -> Result<MetadataFeatures> {
    let age_norm = negativity_age(record.age_days, max_age_days, DEFAULT_EPSILON)?.value();
    let rating_norm = stats.filter(|s| !s.is_empty()).map(|s| {
        record
            .user_id
            .as_deref()
            .and_then(|u| s.get(u))
            .map_or(0.0, |(mean, _)| mean - record.rating)
    });
    Ok(MetadataFeatures {
        rating: record.rating,
        rating_norm,
        age_norm,
    })
}

/// Named feature sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    Len,
    Nos,
    Asl,
    Poqs,
    Structural,
    Ugr,
    Syn,
    Rating,
    RatingNorm,
    Age,
    Covariates,
    All,
}

impl FeatureSet {
    pub const NAMES: [(&'static str, FeatureSet); 12] = [
        ("len", FeatureSet::Len),
        ("nos", FeatureSet::Nos),
        ("asl", FeatureSet::Asl),
        ("poqs", FeatureSet::Poqs),
        ("structural", FeatureSet::Structural),
        ("ugr", FeatureSet::Ugr),
        ("syn", FeatureSet::Syn),
        ("rating", FeatureSet::Rating),
        ("rating-norm", FeatureSet::RatingNorm),
        ("age", FeatureSet::Age),
        ("covariates", FeatureSet::Covariates),
        ("all", FeatureSet::All),
    ];

    pub fn uses_tfidf(self) -> bool {
        matches!(self, FeatureSet::Ugr | FeatureSet::All)
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        FeatureSet::NAMES
            .iter()
            .find(|(n, _)| *n == key)
            .map(|&(_, f)| f)
            .ok_or_else(|| Error::UnknownSelector(s.to_string()))
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = FeatureSet::NAMES
            .iter()
            .find(|(_, v)| v == self)
            .map_or("?", |(n, _)| n);
        f.write_str(name)
    }
}

/// Every feature family computed for one review.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawFeatures {
    pub structural: StructuralFeatures,
    pub ugr: Vec<(usize, f64)>,
    pub syntactic: SyntacticFeatures,
    pub metadata: MetadataFeatures,
    pub covariates: Vec<f64>,
}

/// Column counts of the variable-width families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FamilyDims {
    pub vocab: usize,
    pub has_users: bool,
    pub covariates: usize,
}

/// Column names for `selector`, in assembly order.
pub fn schema(selector: FeatureSet, dims: FamilyDims, terms: Option<&[&str]>) -> Vec<String> {
    let structural = || ["len", "nos", "asl", "poqs"].map(String::from).to_vec();
    let ugr = || {
        (0..dims.vocab)
            .map(|i| match terms {
                Some(t) => format!("ugr:{}", t[i]),
                None => format!("ugr:{i}"),
            })
            .collect::<Vec<_>>()
    };
    let syn = || ["pct_noun", "pct_adj", "pct_adv"].map(String::from).to_vec();
    let meta = || {
        let mut m = vec!["rating".to_string()];
        if dims.has_users {
            m.push("rating_norm".into());
        }
        m.push("age".into());
        m
    };
    let cov = || (0..dims.covariates).map(|i| format!("cov{i}")).collect::<Vec<_>>();
    match selector {
        FeatureSet::Len => vec!["len".into()],
        FeatureSet::Nos => vec!["nos".into()],
        FeatureSet::Asl => vec!["asl".into()],
        FeatureSet::Poqs => vec!["poqs".into()],
        FeatureSet::Structural => structural(),
        FeatureSet::Ugr => ugr(),
        FeatureSet::Syn => syn(),
        FeatureSet::Rating => vec!["rating".into()],
        FeatureSet::RatingNorm => vec!["rating_norm".into()],
        FeatureSet::Age => vec!["age".into()],
        FeatureSet::Covariates => cov(),
        FeatureSet::All => [structural(), ugr(), syn(), meta(), cov()].concat(),
    }
}

/// Concatenate the selected families of every instance into a dense matrix.
pub fn assemble(
    selector: FeatureSet,
    raw: &[RawFeatures],
    dims: FamilyDims,
) -> Result<FeatureMatrix> {
    if selector == FeatureSet::RatingNorm && !dims.has_users {
        return Err(Error::invalid(
            "rating-norm needs user ids, which this corpus lacks",
        ));
    }
    let width = schema(selector, dims, None).len();
    let mut m = FeatureMatrix::zeros(raw.len(), width);
    for (i, r) in raw.iter().enumerate() {
        if r.covariates.len() != dims.covariates
            && matches!(selector, FeatureSet::Covariates | FeatureSet::All)
        {
            return Err(Error::DimensionMismatch {
                expected: dims.covariates,
                actual: r.covariates.len(),
            });
        }
        let s = r.structural;
        let mut row: Vec<f64> = Vec::with_capacity(width);
        let push_ugr = |row: &mut Vec<f64>| {
            let start = row.len();
            row.resize(start + dims.vocab, 0.0);
            for &(j, w) in &r.ugr {
                row[start + j] = w;
            }
        };
        let meta = |row: &mut Vec<f64>| {
            row.push(r.metadata.rating);
            if dims.has_users {
                row.push(r.metadata.rating_norm.unwrap_or(0.0));
            }
            row.push(r.metadata.age_norm);
        };
        let syn = [r.syntactic.pct_noun, r.syntactic.pct_adj, r.syntactic.pct_adv];
        match selector {
            FeatureSet::Len => row.push(s.len),
            FeatureSet::Nos => row.push(s.nos),
            FeatureSet::Asl => row.push(s.asl),
            FeatureSet::Poqs => row.push(s.poqs),
            FeatureSet::Structural => row.extend([s.len, s.nos, s.asl, s.poqs]),
            FeatureSet::Ugr => push_ugr(&mut row),
            FeatureSet::Syn => row.extend(syn),
            FeatureSet::Rating => row.push(r.metadata.rating),
            FeatureSet::RatingNorm => row.push(r.metadata.rating_norm.unwrap_or(0.0)),
            FeatureSet::Age => row.push(r.metadata.age_norm),
            FeatureSet::Covariates => row.extend(&r.covariates),
            FeatureSet::All => {
                row.extend([s.len, s.nos, s.asl, s.poqs]);
                push_ugr(&mut row);
                row.extend(syn);
                meta(&mut row);
                row.extend(&r.covariates);
            }
        }
        m.row_mut(i).copy_from_slice(&row);
    }
    Ok(m)
}

/// Fitted extraction state: vocabulary, user statistics and the age
/// normaliser. Reused unchanged at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub selector: FeatureSet,
    pub tfidf: Option<TfidfModel>,
    pub user_stats: Option<UserStats>,
    pub max_age_days: u64,
    pub n_covariates: usize,
}

impl FeaturePipeline {
    /// Fit on `records`. `max_age_days` is the corpus-wide maximum age.
    pub fn fit(
        records: &[&ReviewRecord],
        selector: FeatureSet,
        max_vocab: usize,
        max_age_days: u64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let tfidf = if selector.uses_tfidf() {
            let corpus: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.text)).collect();
            Some(TfidfModel::fit(&corpus, max_vocab)?)
        } else {
            None
        };
        let stats = UserStats::fit(records.iter().copied());
        let n_covariates = records[0].features.as_ref().map_or(0, Vec::len);
        Ok(FeaturePipeline {
            selector,
            tfidf,
            user_stats: (!stats.is_empty()).then_some(stats),
            max_age_days,
            n_covariates,
        })
    }

    pub fn dims(&self) -> FamilyDims {
        FamilyDims {
            vocab: self.tfidf.as_ref().map_or(0, TfidfModel::vocab_size),
            has_users: self.user_stats.is_some(),
            covariates: self.n_covariates,
        }
    }

    pub fn schema(&self) -> Vec<String> {
        let terms = self.tfidf.as_ref().map(TfidfModel::terms);
        schema(self.selector, self.dims(), terms.as_deref())
    }

    /// Raw features for one record. Ages beyond the fitted maximum are
    /// clamped to it.
    pub fn raw(&self, record: &ReviewRecord) -> Result<RawFeatures> {
        let tagger = SuffixTagger;
        let clamped;
        let rec = if record.age_days > self.max_age_days {
            clamped = ReviewRecord {
                age_days: self.max_age_days,
                ..record.clone()
            };
            &clamped
        } else {
            record
        };
        Ok(RawFeatures {
            structural: structural_features(&rec.text),
            ugr: self
                .tfidf
                .as_ref()
                .map(|m| m.transform(&tokenize(&rec.text)))
                .unwrap_or_default(),
            syntactic: syntactic_features(&rec.text, &tagger),
            metadata: metadata_features(rec, self.user_stats.as_ref(), self.max_age_days)?,
            covariates: rec.features.clone().unwrap_or_default(),
        })
    }

    pub fn transform(&self, records: &[&ReviewRecord]) -> Result<FeatureMatrix> {
        let raw = records
            .iter()
            .map(|r| self.raw(r))
            .collect::<Result<Vec<_>>>()?;
        assemble(self.selector, &raw, self.dims())
    }

    /// Lexical weights as `(row, column, value)` triplets.
    pub fn ugr_triplets(&self, records: &[&ReviewRecord]) -> Result<Vec<(usize, usize, f64)>> {
        let model = self
            .tfidf
            .as_ref()
            .ok_or_else(|| Error::invalid("pipeline has no TF-IDF model"))?;
        Ok(records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                model
                    .transform(&tokenize(&r.text))
                    .into_iter()
                    .map(move |(j, w)| (i, j, w))
            })
            .collect())
    }
}
