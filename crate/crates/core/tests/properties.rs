use proptest::prelude::*;

use ncws::data::{apply_threshold, downsample_indices, split_folds, LabelState, ReviewRecord};
use ncws::features::{structural_features, syntactic_features, FeaturePipeline, FeatureSet, SuffixTagger};
use ncws::losses::{evaluate_risk, risk_ncws, risk_pconf, RiskAux};
use ncws::model::{objective, train};
use ncws::negativity::{negativity_age, negativity_weight};
use ncws::synth::{generate, Exposure, SynthConfig};
use ncws::{
    BaseLoss, ClassPriors, ConfidenceScore, FeatureMatrix, LinearModel, NegativityScore,
    RiskAssembly, RiskSpec, TrainConfig,
};

use LabelState::{Positive as P, Unlabelled as U};

fn labels_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<LabelState>> {
    proptest::collection::vec(any::<bool>(), n).prop_map(|v| {
        let mut l: Vec<LabelState> = v.into_iter().map(|p| if p { P } else { U }).collect();
        l[0] = P;
        l[1] = U;
        l
    })
}

/// Small random training problem with both classes present.
#[derive(Debug, Clone)]
struct Problem {
    x: FeatureMatrix,
    labels: Vec<LabelState>,
    neg: Vec<Option<NegativityScore>>,
    conf: Vec<Option<ConfidenceScore>>,
}

impl Problem {
    fn aux(&self) -> RiskAux<'_> {
        RiskAux {
            negativity: Some(&self.neg),
            confidence: Some(&self.conf),
        }
    }
}

fn problem(rows: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Problem> {
    labels_strategy(rows).prop_flat_map(move |labels| {
        let n = labels.len();
        (
            proptest::collection::vec(-2.0f64..2.0, n * dim),
            proptest::collection::vec(0.02f64..0.98, n),
            proptest::collection::vec(0.02f64..0.98, n),
            Just(labels),
        )
            .prop_map(move |(data, neg, conf, labels)| Problem {
                x: FeatureMatrix::from_vec(n, dim, data).unwrap(),
                labels,
                neg: neg.iter().map(|&v| Some(NegativityScore::new(v, 1e-3).unwrap())).collect(),
                conf: conf.iter().map(|&v| Some(ConfidenceScore::new(v, 1e-3).unwrap())).collect(),
            })
    })
}

fn any_spec() -> impl Strategy<Value = RiskSpec> {
    (0usize..5, 0usize..3, 0.1f64..0.9, 0.2f64..5.0).prop_map(|(a, b, prior, ratio)| {
        let base = BaseLoss::ALL[b];
        match RiskAssembly::ALL[a] {
            RiskAssembly::Naive => RiskSpec::naive(base),
            RiskAssembly::Ncws => RiskSpec::ncws(base),
            RiskAssembly::PConf => RiskSpec::pconf(base),
            RiskAssembly::Cpu => RiskSpec::cpu(base, ClassPriors::new(prior).unwrap()),
            RiskAssembly::WeightedPenalty => RiskSpec::weighted_penalty(base, ratio),
        }
    })
}

fn params(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, dim + 1)
}

fn record(id: usize, age: u64, votes: u64, text: &str) -> ReviewRecord {
    ReviewRecord {
        id: format!("r{id}"),
        user_id: None,
        text: text.to_string(),
        rating: 3.0,
        age_days: age,
        helpful_votes: votes,
        features: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ncws_weight_scaling(p in problem(4..30, 3), w in params(3), c in 0.01f64..100.0) {
        let model = LinearModel::from_params(&w).unwrap();
        let scores = model.decision_values(&p.x).unwrap();
        for base in BaseLoss::ALL {
            let r = risk_ncws(&scores, &p.labels, &p.neg, base).unwrap().value;
            // the same risk with every per-class weight multiplied by c
            let scaled: f64 = scores.iter().zip(&p.labels).zip(&p.neg).map(|((&g, l), n)| {
                if l.is_positive() {
                    c * base.value(g)
                } else {
                    let n = n.unwrap();
                    c * n.weight() * base.value(g) + c * base.value(-g)
                }
            }).sum::<f64>() / scores.len() as f64;
            prop_assert!((scaled - c * r).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }
    }

    #[test]
    fn ncws_scaling_keeps_the_minimiser(
        p in problem(4..30, 2),
        family in proptest::collection::vec(params(2), 2..12),
        c in 0.01f64..100.0,
    ) {
        let risks: Vec<f64> = family.iter().map(|w| {
            let s = LinearModel::from_params(w).unwrap().decision_values(&p.x).unwrap();
            risk_ncws(&s, &p.labels, &p.neg, BaseLoss::Logistic).unwrap().value
        }).collect();
        let argmin = |v: &[f64]| v.iter().enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        let scaled: Vec<f64> = risks.iter().map(|r| c * r).collect();
        prop_assert_eq!(argmin(&risks), argmin(&scaled));
    }

    #[test]
    fn pconf_ignores_unlabelled(
        p in problem(4..30, 2),
        w in params(2),
        extra in proptest::collection::vec(-5.0f64..5.0, 1..10),
    ) {
        let scores = LinearModel::from_params(&w).unwrap().decision_values(&p.x).unwrap();
        for base in BaseLoss::ALL {
            let r = risk_pconf(&scores, &p.labels, &p.conf, base).unwrap().value;
            let mut s2 = scores.clone();
            let mut l2 = p.labels.clone();
            let mut c2 = p.conf.clone();
            for &g in &extra {
                s2.push(g);
                l2.push(U);
                c2.push(None);
            }
            let r2 = risk_pconf(&s2, &l2, &c2, base).unwrap().value;
            prop_assert!((r - r2).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn midpoint_convexity(p in problem(4..30, 3), spec in any_spec(), a in params(3), b in params(3)) {
        // the hinge composite hinge(z) - hinge(-z) is not convex, so C-PU
        // is only convex with the double hinge or logistic loss
        prop_assume!(!(spec.assembly == RiskAssembly::Cpu && spec.base == BaseLoss::Hinge));
        let risk = |w: &[f64]| {
            let s = LinearModel::from_params(w).unwrap().decision_values(&p.x).unwrap();
            evaluate_risk(&spec, &s, &p.labels, p.aux()).unwrap().value
        };
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        prop_assert!(risk(&mid) <= 0.5 * (risk(&a) + risk(&b)) + 1e-9);
    }

    #[test]
    fn training_never_raises_the_objective(
        p in problem(6..40, 3),
        spec in any_spec(),
        lr in 0.001f64..1.0,
        seed in any::<u64>(),
    ) {
        let aux = p.aux();
        let l2 = 1e-3;
        let mut prev = objective(&spec, &LinearModel::zeros(3), &p.x, &p.labels, aux, l2).unwrap();
        for epochs in 1..=4 {
            let cfg = TrainConfig { learning_rate: lr, epochs, batch_size: 5, l2_lambda: l2, seed };
            let m = train(&p.x, &p.labels, aux, &spec, &cfg).unwrap();
            let obj = objective(&spec, &m, &p.x, &p.labels, aux, l2).unwrap();
            prop_assert!(obj <= prev, "epoch {}: {} > {}", epochs, obj, prev);
            prev = obj;
        }
    }

    #[test]
    fn weight_norm_bounded_by_initial_objective(
        p in problem(6..40, 3),
        spec in any_spec(),
        lambda in 1e-3f64..1.0,
        seed in any::<u64>(),
    ) {
        // the guard keeps the objective at or below its value at w = 0,
        // hence lambda/2 ||w||^2 <= R(0) for any non-negative risk; the
        // C-PU risk can go negative and is excluded
        prop_assume!(spec.assembly != RiskAssembly::Cpu);
        let aux = p.aux();
        let r0 = objective(&spec, &LinearModel::zeros(3), &p.x, &p.labels, aux, lambda).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 5, batch_size: 4, l2_lambda: lambda, seed };
        let m = train(&p.x, &p.labels, aux, &spec, &cfg).unwrap();
        let norm = m.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        prop_assert!(norm <= (2.0 * r0 / lambda).sqrt() + 1e-9);
    }

    #[test]
    fn row_permutation_gives_identical_model(
        p in problem(6..40, 3),
        spec in any_spec(),
        seed in any::<u64>(),
        shuffle_key in any::<u64>(),
    ) {
        let n = p.labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(shuffle_key | 1).rotate_left(17));
        let q = Problem {
            x: p.x.select_rows(&perm),
            labels: perm.iter().map(|&i| p.labels[i]).collect(),
            neg: perm.iter().map(|&i| p.neg[i]).collect(),
            conf: perm.iter().map(|&i| p.conf[i]).collect(),
        };
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 3, batch_size: 4, l2_lambda: 1e-3, seed };
        let a = train(&p.x, &p.labels, p.aux(), &spec, &cfg).unwrap();
        let b = train(&q.x, &q.labels, q.aux(), &spec, &cfg).unwrap();
        prop_assert_eq!(a.params(), b.params());
    }

    #[test]
    fn folds_partition_and_downsampling_keeps_positives(
        labels in labels_strategy(2..200),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= labels.len());
        let split = split_folds(&labels, k, seed).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in 0..k {
            for i in split.test_indices(f) {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(split_folds(&labels, k, seed).unwrap(), split);

        if let Some(keep) = downsample_indices(&labels, seed).unwrap() {
            let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
            let kept_pos: Vec<usize> = keep.iter().copied().filter(|&i| labels[i].is_positive()).collect();
            prop_assert_eq!(kept_pos, pos.clone());
            prop_assert_eq!(keep.len(), 2 * pos.len());
            prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn threshold_is_idempotent(votes in proptest::collection::vec(0u64..5, 1..50), t in 1u64..4) {
        let recs: Vec<ReviewRecord> = votes.iter().enumerate().map(|(i, &v)| record(i, 10, v, "x")).collect();
        let once = apply_threshold(recs, t).unwrap();
        let twice = apply_threshold(once.records().cloned().collect(), t).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn negativity_range_and_weight_monotone(a in 0u64..5000, b in 0u64..5000, extra in 0u64..5000, eps in 1e-6f64..0.2) {
        let max = a.max(b) + extra;
        let (lo, hi) = (a.min(b), a.max(b));
        let n_lo = negativity_age(lo, max, eps).unwrap();
        let n_hi = negativity_age(hi, max, eps).unwrap();
        for n in [n_lo, n_hi] {
            prop_assert!(n.value() >= eps && n.value() <= 1.0 - eps);
        }
        prop_assert!(negativity_weight(n_lo) >= negativity_weight(n_hi));
    }

    #[test]
    fn text_features_deterministic_and_bounded(text in "[a-zA-Z ?.!,']{0,120}") {
        let s = structural_features(&text);
        prop_assert_eq!(s, structural_features(&text));
        prop_assert!(s.len >= 0.0 && s.nos >= 0.0 && s.asl >= 0.0);
        prop_assert!((0.0..=1.0).contains(&s.poqs));
        let y = syntactic_features(&text, &SuffixTagger);
        for v in [y.pct_noun, y.pct_adj, y.pct_adv] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn observed_positives_are_true_positives(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let cfg = SynthConfig {
            n_instances: 300,
            positive_fraction: frac,
            exposure: Exposure::Logistic { steepness: 8.0 },
            seed,
            ..SynthConfig::default()
        };
        let d = generate(&cfg).unwrap();
        for ((_, l), t) in d.dataset.instances().iter().zip(&d.truth) {
            prop_assert!(!l.is_positive() || t.is_positive());
        }
    }
}

#[test]
fn hinge_cpu_is_not_convex() {
    // one positive scored g and one unlabelled pinned at -5, whose term is
    // zero: risk(g) = 0.5 (hinge(g) - hinge(-g))
    let spec = RiskSpec::cpu(BaseLoss::Hinge, ClassPriors::new(0.5).unwrap());
    let r = |g: f64| evaluate_risk(&spec, &[g, -5.0], &[P, U], RiskAux::default()).unwrap().value;
    assert!(r(-1.0) > 0.5 * (r(-2.0) + r(0.0)));
}

#[test]
fn schema_is_stable_across_fits() {
    let recs: Vec<ReviewRecord> = (0..20)
        .map(|i| record(i, i as u64 * 10, i as u64 % 3, &format!("Word{} is great. Really? yes", i % 4)))
        .collect();
    let refs: Vec<&ReviewRecord> = recs.iter().collect();
    let a = FeaturePipeline::fit(&refs, FeatureSet::All, 100, 200).unwrap();
    let mut rev = refs.clone();
    rev.reverse();
    let b = FeaturePipeline::fit(&rev, FeatureSet::All, 100, 200).unwrap();
    assert_eq!(a.schema(), b.schema());
    assert_eq!(a.transform(&refs).unwrap(), b.transform(&refs).unwrap());
}
