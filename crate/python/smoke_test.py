"""Smoke test for the ncws extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python3 python/smoke_test.py
"""

import math
import os
import tempfile

import ncws


def close(a, b, tol=1e-12):
    assert abs(a - b) <= tol, (a, b)


def check_negativity():
    close(ncws.negativity_age(9, 99), math.log(10) / math.log(101))
    close(ncws.negativity_age(0, 99), 1e-3)
    n = ncws.negativity_age(500, 3650)
    close(ncws.negativity_weight(n), (1 - n) / n)
    # scores are clamped into [eps, 1 - eps] before weighting
    close(ncws.negativity_weight(0.0), 999.0, 1e-9)


def check_risks():
    scores = [0.5, -1.0, 2.0, -0.2]
    labels = [True, False, False, True]
    neg = [None, 0.3, 0.8, None]
    hinge = lambda z: max(0.0, 1.0 - z)

    value, grad = ncws.risk("naive", scores, labels)
    expected = sum(hinge(g if y else -g) for g, y in zip(scores, labels)) / 4
    close(value, expected)
    assert len(grad) == 4

    value, _ = ncws.risk("ncws", scores, labels, negativity=neg)
    total = 0.0
    for g, y, n in zip(scores, labels, neg):
        if y:
            total += hinge(g)
        else:
            total += (1 - n) / n * hinge(g) + hinge(-g)
    close(value, total / 4)

    close(ncws.loss_value("double-hinge", -3.0), 3.0)
    close(ncws.loss_value("double-hinge", 0.0), 0.5)


def check_metrics():
    m = ncws.prf1([True, True, False, False], [True, False, True, False])
    close(m["precision"], 0.5)
    close(m["recall"], 0.5)
    assert (m["tp"], m["fp"], m["fn"], m["tn"]) == (1, 1, 1, 1)
    r = ncws.mcnemar([True] * 10, [False] * 10, [True] * 10)
    assert (r["b"], r["c"]) == (10, 0)
    close(r["statistic"], 8.1)
    assert r["significant"]


def check_identity():
    risk_gap, pointwise_gap = ncws.verify_identity(seed=7, n_points=16, dim=3)
    assert risk_gap < 1e-10 and pointwise_gap < 1e-12, (risk_gap, pointwise_gap)


def check_training(tmp):
    data, truth = ncws.synth(n=1500, seed=5)
    assert len(data) == 1500 and len(truth) == 1500
    observed = data.labels()
    assert all(t for o, t in zip(observed, truth) if o), "observed positives must be true"
    pearson, spearman = data.age_correlation()
    assert pearson > 0 and spearman > 0

    model = ncws.train(data, risk="ncws", features="covariates", lr=0.01, epochs=20)
    assert model.schema == ["cov0", "cov1"]
    raw, squashed = model.score(data)
    assert all(-1 < s < 1 for s in squashed)
    close(squashed[0], math.tanh(raw[0]), 1e-12)
    path = os.path.join(tmp, "model.json")
    model.save(path)
    again = ncws.Model.load(path)
    assert again.predict(data) == model.predict(data)
    f1 = ncws.prf1(model.predict(data), truth)["f1"]
    assert f1 > 0.8, f1


def check_compare(tmp):
    data, truth = ncws.synth(n=1200, seed=2)
    corpus = os.path.join(tmp, "s.jsonl")
    data.write_jsonl(corpus)
    with open(os.path.join(tmp, "s.truth.csv"), "w") as fh:
        fh.write("id,true_label\n")
        for i, t in zip(data.ids(), truth):
            fh.write(f"{i},{1 if t else -1}\n")
    settings = {
        "data.input": corpus,
        "data.truth": os.path.join(tmp, "s.truth.csv"),
        "data.folds": 3,
        "features.set": "covariates",
        "train.lr": 0.01,
        "train.epochs": 10,
    }
    a = ncws.compare(settings, out=os.path.join(tmp, "reports"))
    b = ncws.compare(settings)
    assert a["config_hash"] == b["config_hash"]
    assert a["approaches"]["ncws"]["scores"] == b["approaches"]["ncws"]["scores"]
    assert set(a["approaches"]) == {"naive", "ncws", "cpu", "pconf", "svmp"}
    assert os.path.exists(os.path.join(tmp, "reports", "metrics.csv"))
    for name, res in a["approaches"].items():
        print(f"  {name:<6} f1(obs) {res['f1_observed']:.4f}  f1(truth) {res['f1_truth']:.4f}")

    resolved, digest = ncws.resolve_config("data.input = x.jsonl\n")
    assert len(digest) == 64 and "data.input = x.jsonl" in resolved
    try:
        ncws.compare({"data.input": corpus, "risk.nope": 1})
    except ValueError as e:
        assert "risk.nope" in str(e)
    else:
        raise AssertionError("unknown keys must be rejected")


def main():
    check_negativity()
    check_risks()
    check_metrics()
    check_identity()
    with tempfile.TemporaryDirectory() as tmp:
        check_training(tmp)
        check_compare(tmp)
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
