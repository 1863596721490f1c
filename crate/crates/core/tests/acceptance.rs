//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncws::data::LabelState;
use ncws::eval::{age_helpfulness_curve, curve_correlations, prf1, McNemarResult};
use ncws::experiment::{run_compare, write_reports, CompareReport, ExperimentConfig};
use ncws::features::tfidf_fit;
use ncws::losses::{risk_gradient, RiskAux};
use ncws::oracle::{clamped_identity_gap, verify_identity, DiscreteDistribution};
use ncws::synth::{generate, write_jsonl, write_truth, SynthConfig, SynthData};
use ncws::{
    BaseLoss, BinaryLabel, ClassPriors, ConfidenceScore, FeatureMatrix, LinearModel,
    NegativityScore, RiskAssembly, RiskSpec,
};

struct Outcome {
    passed: usize,
    failed: Vec<&'static str>,
}

impl Outcome {
    fn record(&mut self, name: &'static str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(name);
        }
    }
}

fn random_model(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> LinearModel {
    let w = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
    LinearModel::new(w, rng.random_range(-scale..scale)).unwrap()
}

fn risk_identity(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut worst_pointwise, mut worst_clamped) = (0.0f64, 0.0f64, 0.0f64);
    let mut checks = 0;
    for _ in 0..25 {
        let points = rng.random_range(2..=64);
        let dim = rng.random_range(1..=5);
        let dist = DiscreteDistribution::random(&mut rng, points, dim).unwrap();
        let models: Vec<LinearModel> = (0..100).map(|_| random_model(&mut rng, dim, 2.0)).collect();
        for base in BaseLoss::ALL {
            let rep = verify_identity(&dist, &models, base).unwrap();
            worst = worst.max(rep.max_abs_diff);
            worst_pointwise = worst_pointwise.max(rep.max_pointwise_diff);
            worst_clamped = worst_clamped.max(clamped_identity_gap(&dist, &models, base, 1e-3).unwrap());
            checks += models.len();
        }
    }
    let elapsed = start.elapsed();
    out.record(
        "risk-identity",
        worst < 1e-10 && elapsed < Duration::from_secs(10),
        format!(
            "max |class-conditional - negativity-weighted| = {worst:.3e} over {checks} \
             (distribution, model, loss) triples in {elapsed:.2?}; clamped (eps=1e-3) gap {worst_clamped:.3e}"
        ),
    );
    out.record(
        "pointwise-density-identity",
        worst_pointwise < 1e-12,
        format!("max pointwise gap = {worst_pointwise:.3e}"),
    );
}

fn spec_for(assembly: RiskAssembly, base: BaseLoss, rng: &mut ChaCha8Rng) -> RiskSpec {
    match assembly {
        RiskAssembly::Naive => RiskSpec::naive(base),
        RiskAssembly::Ncws => RiskSpec::ncws(base),
        RiskAssembly::PConf => RiskSpec::pconf(base),
        RiskAssembly::Cpu => RiskSpec::cpu(base, ClassPriors::new(rng.random_range(0.1..0.9)).unwrap()),
        RiskAssembly::WeightedPenalty => RiskSpec::weighted_penalty(base, rng.random_range(0.2..5.0)),
    }
}

fn gradients(out: &mut Outcome) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-5;
    let (rows, dim) = (12, 4);
    let mut worst = 0.0f64;
    let mut evaluated = 0;
    for assembly in RiskAssembly::ALL {
        for base in BaseLoss::ALL {
            let mut done = 0;
            while done < 100 {
                let spec = spec_for(assembly, base, &mut rng);
                let data: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let x = FeatureMatrix::from_vec(rows, dim, data).unwrap();
                let mut labels: Vec<LabelState> = (0..rows)
                    .map(|_| if rng.random_bool(0.4) { LabelState::Positive } else { LabelState::Unlabelled })
                    .collect();
                labels[0] = LabelState::Positive;
                labels[1] = LabelState::Unlabelled;
                let neg: Vec<Option<NegativityScore>> = (0..rows)
                    .map(|_| Some(NegativityScore::new(rng.random_range(0.05..0.95), 1e-3).unwrap()))
                    .collect();
                let conf: Vec<Option<ConfidenceScore>> = (0..rows)
                    .map(|_| Some(ConfidenceScore::new(rng.random_range(0.05..0.95), 1e-3).unwrap()))
                    .collect();
                let aux = RiskAux {
                    negativity: Some(&neg),
                    confidence: Some(&conf),
                };
                let model = random_model(&mut rng, dim, 1.5);
                // keep every margin well clear of the loss kinks
                let scores = model.decision_values(&x).unwrap();
                let near_kink = scores.iter().any(|g| {
                    base.kinks()
                        .iter()
                        .any(|k| (g - k).abs() < 1e-3 || (-g - k).abs() < 1e-3)
                });
                if near_kink {
                    continue;
                }
                let analytic = risk_gradient(&spec, &model, &x, &labels, aux)
                    .unwrap()
                    .gradient
                    .unwrap();
                let params = model.params();
                let numeric: Vec<f64> = (0..params.len())
                    .map(|j| {
                        let mut p = params.clone();
                        p[j] += h;
                        let up = risk_gradient(&spec, &LinearModel::from_params(&p).unwrap(), &x, &labels, aux)
                            .unwrap()
                            .value;
                        p[j] -= 2.0 * h;
                        let down = risk_gradient(&spec, &LinearModel::from_params(&p).unwrap(), &x, &labels, aux)
                            .unwrap()
                            .value;
                        (up - down) / (2.0 * h)
                    })
                    .collect();
                let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
                let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-8);
                worst = worst.max(rel);
                done += 1;
                evaluated += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    out.record(
        "gradient-correctness",
        worst < 1e-4 && elapsed < Duration::from_secs(5),
        format!("max relative error {worst:.3e} over {evaluated} smooth points in {elapsed:.2?}"),
    );
}

fn metric_oracles(out: &mut Outcome) {
    use BinaryLabel::{Negative as N, Positive as Y};
    let pred = [Y, Y, Y, Y, N, N];
    let truth = [Y, Y, Y, N, Y, Y];
    let m = prf1(&pred, &truth).unwrap();
    let prf_ok = (m.f1 - 2.0 / 3.0).abs() < 1e-9 && m.precision == 0.75 && m.recall == 0.6;

    let mc = McNemarResult::from_counts(15, 5);
    let mc_ok = (mc.statistic - 4.05).abs() < 1e-12 && mc.significant_05;

    let corpus = vec![vec!["a", "b", "a"], vec!["b", "c"]];
    let model = tfidf_fit(&corpus, 100).unwrap();
    let a = model.index_of("a").unwrap();
    let c = model.index_of("c").unwrap();
    let tfidf_ok = model.doc_freq("a") == Some(1)
        && model.doc_freq("b") == Some(2)
        && model.doc_freq("c") == Some(1)
        && model.transform(&corpus[0]) == vec![(a, 1.0)]
        && model.transform(&["c"]) == vec![(c, 1.0)];
    out.record(
        "metric-oracles",
        prf_ok && mc_ok && tfidf_ok,
        format!(
            "F1 {:.5} (P {} R {}), McNemar {:.4} significant={}, TF-IDF hand case exact={tfidf_ok}",
            m.f1, m.precision, m.recall, mc.statistic, mc.significant_05
        ),
    );
}

fn default_synth() -> SynthData {
    generate(&SynthConfig::default()).unwrap()
}

fn write_corpus(dir: &Path, data: &SynthData) -> ExperimentConfig {
    let input = dir.join("synth.jsonl");
    let truth = dir.join("synth.truth.csv");
    write_jsonl(data.dataset.records(), &input).unwrap();
    write_truth(
        data.dataset.records().map(|r| r.id.as_str()).zip(data.truth.iter().copied()),
        &truth,
    )
    .unwrap();
    ExperimentConfig {
        input: input.display().to_string(),
        truth: Some(truth.display().to_string()),
        ..ExperimentConfig::default()
    }
}

fn synthetic_recovery(out: &mut Outcome, report: &CompareReport, elapsed: Duration) {
    let naive = report.approach(RiskAssembly::Naive).unwrap();
    let ncws = report.approach(RiskAssembly::Ncws).unwrap();
    let (f_naive, f_ncws) = (naive.mean_f1_truth().unwrap(), ncws.mean_f1_truth().unwrap());
    let fast = elapsed < Duration::from_secs(60);
    out.record(
        "synthetic-recovery-f1",
        f_ncws - f_naive >= 0.02 && fast,
        format!(
            "true-label F1 naive {f_naive:.4}, ncws {f_ncws:.4}, gain {:+.2} points; compare took {elapsed:.2?}",
            100.0 * (f_ncws - f_naive)
        ),
    );
    let flips = ncws.flips.unwrap();
    out.record(
        "synthetic-recovery-flips",
        (0.05..=0.30).contains(&flips.pct),
        format!("{flips} of naive-negative unlabelled instances flipped"),
    );
    let mc = ncws.mcnemar.unwrap();
    out.record(
        "synthetic-recovery-mcnemar",
        mc.significant_05 && mc.p_value < 0.05,
        format!("b={} c={} statistic {:.2} p={:.3e}", mc.b, mc.c, mc.statistic, mc.p_value),
    );
}

fn correlation(out: &mut Outcome, data: &SynthData) {
    let start = Instant::now();
    let curve = age_helpfulness_curve(&data.dataset, 30).unwrap();
    let (p, s) = curve_correlations(&curve).unwrap();
    let elapsed = start.elapsed();
    out.record(
        "age-helpfulness-correlation",
        p > 0.0 && s > 0.5 && elapsed < Duration::from_secs(5),
        format!("{} bins, Pearson {p:.4}, Spearman {s:.4}", curve.len()),
    );
}

fn histogram_shift(out: &mut Outcome, report: &CompareReport) {
    let naive = report.approach(RiskAssembly::Naive).unwrap().positive_scores();
    let ncws = report.approach(RiskAssembly::Ncws).unwrap().positive_scores();
    out.record(
        "histogram-shift",
        ncws > naive,
        format!("held-out positive squashed scores: naive {naive}, ncws {ncws}"),
    );
}

fn determinism(out: &mut Outcome, dir: &Path, first: &CompareReport, cfg: &ExperimentConfig) {
    let a = write_reports(first, dir.join("run1")).unwrap();
    let second = run_compare(cfg).unwrap();
    let b = write_reports(&second, dir.join("run2")).unwrap();
    let mismatched: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    out.record(
        "determinism",
        mismatched.is_empty() && first.config_hash == second.config_hash,
        if mismatched.is_empty() {
            format!("{} report files byte-identical across two runs", a.len())
        } else {
            format!("differing files: {}", mismatched.join(", "))
        },
    );
}

fn main() {
    let mut out = Outcome {
        passed: 0,
        failed: Vec::new(),
    };
    risk_identity(&mut out);
    gradients(&mut out);
    metric_oracles(&mut out);

    let data = default_synth();
    correlation(&mut out, &data);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_corpus(dir.path(), &data);
    let start = Instant::now();
    let report = run_compare(&cfg).unwrap();
    let elapsed = start.elapsed();
    synthetic_recovery(&mut out, &report, elapsed);
    histogram_shift(&mut out, &report);
    determinism(&mut out, dir.path(), &report, &cfg);

    println!("{} passed, {} failed", out.passed, out.failed.len());
    if !out.failed.is_empty() {
        std::process::exit(1);
    }
}
