//! Classification metrics, paired significance, correlation analysis and
//! report tables.

use std::fmt;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{BinaryLabel, Dataset, LabelState};
use crate::error::{Error, Result};
use crate::numeric::mean;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// Precision, recall and F1 for the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Prf1 {
    /// Zero denominators give 0 rather than NaN.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf1 {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

pub fn prf1(predicted: &[BinaryLabel], truth: &[BinaryLabel]) -> Result<Prf1> {
    check_len(predicted.len(), truth.len())?;
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, t) in predicted.iter().zip(truth) {
        match (p.is_positive(), t.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Prf1::from_counts(tp, fp, fn_, tn))
}

/// χ²(1) critical value at α = 0.05.
pub const CHI2_1_CRITICAL_05: f64 = 3.841;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemarResult {
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub significant_05: bool,
}

impl McNemarResult {
    /// Continuity-corrected statistic `max(|b - c| - 1, 0)² / (b + c)`.
    pub fn from_counts(b: usize, c: usize) -> Self {
        let statistic = if b + c == 0 {
            0.0
        } else {
            let diff = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
            diff * diff / (b + c) as f64
        };
        let p_value = if statistic == 0.0 {
            1.0
        } else {
            ChiSquared::new(1.0).map_or(f64::NAN, |d| d.sf(statistic))
        };
        McNemarResult {
            b,
            c,
            statistic,
            p_value,
            significant_05: statistic > CHI2_1_CRITICAL_05,
        }
    }
}

pub fn mcnemar(
    pred_a: &[BinaryLabel],
    pred_b: &[BinaryLabel],
    truth: &[BinaryLabel],
) -> Result<McNemarResult> {
    check_len(pred_a.len(), truth.len())?;
    check_len(pred_b.len(), truth.len())?;
    let (mut b, mut c) = (0, 0);
    for ((a, bb), t) in pred_a.iter().zip(pred_b).zip(truth) {
        match (a == t, bb == t) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemarResult::from_counts(b, c))
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson and Spearman correlation coefficients.
pub fn correlations(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_len(x.len(), y.len())?;
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation("need at least 3 points"));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    let pearson = pearson_unchecked(x, y);
    let spearman = pearson_unchecked(&average_ranks(x), &average_ranks(y));
    Ok((pearson, spearman))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgeBin {
    /// Inclusive lower edge of the bin, in days.
    pub age_start: u64,
    pub helpful_probability: f64,
    pub review_count: usize,
}

/// Fraction of positively labelled reviews per age bin. Empty bins are
/// omitted.
pub fn age_helpfulness_curve(dataset: &Dataset, bin_width_days: u64) -> Result<Vec<AgeBin>> {
    if bin_width_days < 1 {
        return Err(Error::invalid("bin width must be at least one day"));
    }
    let mut bins: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
    for (r, l) in dataset.instances() {
        let e = bins.entry(r.age_days / bin_width_days).or_default();
        e.0 += usize::from(l.is_positive());
        e.1 += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(b, (pos, n))| AgeBin {
            age_start: b * bin_width_days,
            helpful_probability: pos as f64 / n as f64,
            review_count: n,
        })
        .collect())
}

/// Pearson and Spearman between bin start age and helpful probability.
pub fn curve_correlations(curve: &[AgeBin]) -> Result<(f64, f64)> {
    let ages: Vec<f64> = curve.iter().map(|b| b.age_start as f64).collect();
    let probs: Vec<f64> = curve.iter().map(|b| b.helpful_probability).collect();
    correlations(&ages, &probs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count in bins whose lower edge is at or above zero.
    pub fn non_negative_mass(&self) -> usize {
        self.counts
            .iter()
            .zip(&self.edges)
            .filter(|(_, &lo)| lo >= 0.0)
            .map(|(c, _)| c)
            .sum()
    }
}

/// Uniform half-open bins over `[-1, 1]`; 1.0 lands in the last bin and
/// out-of-range values are clamped into the end bins.
pub fn score_histogram(scores: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::invalid("histogram needs at least 2 bins"));
    }
    let width = 2.0 / n_bins as f64;
    let edges = (0..=n_bins).map(|i| -1.0 + i as f64 * width).collect();
    let mut counts = vec![0; n_bins];
    for &s in scores {
        let pos = ((s + 1.0) / width).floor();
        let bin = if pos.is_nan() { 0 } else { (pos.max(0.0) as usize).min(n_bins - 1) };
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipStats {
    pub flipped: usize,
    pub base_negative: usize,
    pub pct: f64,
}

impl fmt::Display for FlipStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} ({:.1}%)",
            self.flipped,
            self.base_negative,
            100.0 * self.pct
        )
    }
}

/// Unlabelled instances predicted negative by `basic` that `corrected`
/// predicts positive.
pub fn flip_report(
    basic: &[BinaryLabel],
    corrected: &[BinaryLabel],
    labels: &[LabelState],
) -> Result<FlipStats> {
    check_len(basic.len(), labels.len())?;
    check_len(corrected.len(), labels.len())?;
    let (mut flipped, mut base_negative) = (0, 0);
    for ((b, c), l) in basic.iter().zip(corrected).zip(labels) {
        if l.is_positive() || b.is_positive() {
            continue;
        }
        base_negative += 1;
        flipped += usize::from(c.is_positive());
    }
    let pct = if base_negative == 0 {
        0.0
    } else {
        flipped as f64 / base_negative as f64
    };
    Ok(FlipStats {
        flipped,
        base_negative,
        pct,
    })
}
