"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line and then
asserts the criterion at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the criterion lines are
printed even under output capture.
"""

import filecmp
import json
import time

import numpy as np
import pytest

from recallboost._kernels import TIE_RTOL
from recallboost.cli import main
from recallboost.ensemble import train, train_adaboost
from recallboost.explain import local_accuracy_gap, shap_tree, shap_tree_batch
from recallboost.metrics import accuracy, confusion, f1, f_beta, roc_auc
from recallboost.pipeline import baseline_params, tune_family
from recallboost.tpe import SearchSpace, random_search, run_study, uniform
from recallboost.tree import GrowthParams, fit_gradient_tree

from conftest import ACCEPTANCE_SEED, FAMILIES, WDBC, make_dataset, random_ensemble
from oracles import (brute_force_root_split, cover_value, hand_adaboost, mann_whitney_auc,
                     pick_best, subsets_shapley)

BETA = 2.7
TUNING_TRIALS = 300


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


@pytest.fixture(scope="module")
def baselines(wdbc_split):
    tr, te = wdbc_split
    t0 = time.perf_counter()
    from recallboost.metrics import evaluate
    reports = {f: evaluate(train(tr, f, baseline_params(f, ACCEPTANCE_SEED)), te, beta=BETA)
               for f in FAMILIES}
    return reports, time.perf_counter() - t0


@pytest.fixture(scope="module")
def tuned(wdbc_split):
    tr, te = wdbc_split
    out = {}
    for f in FAMILIES:
        t0 = time.perf_counter()
        res = tune_family(f, tr, te, TUNING_TRIALS, ACCEPTANCE_SEED, beta=BETA)
        out[f] = (res, time.perf_counter() - t0)
    return out


def test_criterion_1_baseline_band(baselines, report):
    reports, secs = baselines
    rows = {f: (r.auc, r.recall) for f, r in reports.items()}
    ok = all(auc >= 0.95 and rec >= 0.94 for auc, rec in rows.values()) and secs < 30
    report(1, ok, "; ".join(f"{f} AUC {a:.4f} recall {r:.4f}" for f, (a, r) in rows.items())
           + f"; {secs:.1f}s")
    for f, (auc, rec) in rows.items():
        assert auc >= 0.95, f
        assert rec >= 0.94, f
    assert secs < 30


@pytest.mark.slow
def test_criterion_2_tuning_improves(baselines, tuned, report):
    base, _ = baselines
    rows = {f: (base[f].f_beta, res.report.f_beta, res.report.auc, secs)
            for f, (res, secs) in tuned.items()}
    ok = all(t >= b and auc >= 0.98 and s < 600 for b, t, auc, s in rows.values())
    report(2, ok, "; ".join(f"{f} F_beta {b:.4f}->{t:.4f} AUC {a:.4f} {s:.0f}s"
                            for f, (b, t, a, s) in rows.items()))
    for f, (b, t, auc, s) in rows.items():
        assert t >= b, f
        assert auc >= 0.98, f
        assert s < 600, f


@pytest.mark.slow
def test_criterion_3_false_negatives(baselines, tuned, report):
    base, _ = baselines
    fn = {f: (base[f].confusion.fn, res.report.confusion.fn) for f, (res, _) in tuned.items()}
    not_worse = sum(t <= b for b, t in fn.values())
    strict = sum(t < b for b, t in fn.values())
    ok = not_worse >= 2 and strict >= 1
    report(3, ok, "; ".join(f"{f} FN {b}->{t}" for f, (b, t) in fn.items()))
    assert not_worse >= 2 and strict >= 1


def test_criterion_4_metric_oracles(report):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst, exact = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[rng.integers(n)] = 0
        y[(rng.integers(n - 1) + 1 + np.flatnonzero(y == 0)[0]) % n] = 1
        scores = rng.integers(0, int(rng.integers(2, 50)), n) / 7.0
        worst = max(worst, abs(roc_auc(y, scores).auc - mann_whitney_auc(y, scores)))
        cm = confusion(y, (scores >= np.median(scores)).astype(int))
        exact &= f_beta(cm, 1) == f1(cm) and accuracy(cm) * cm.n == cm.tp + cm.tn
    secs = time.perf_counter() - t0
    ok = worst <= 1e-12 and exact and secs < 10
    report(4, ok, f"max AUC gap {worst:.1e}; identities exact {exact}; {secs:.1f}s")
    assert worst <= 1e-12 and exact and secs < 10


def test_criterion_5_shap_exactness(tuned, wdbc_split, report):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        model, X = random_ensemble(rng)
        x = X[int(rng.integers(len(X)))] if rng.random() < 0.5 else rng.normal(size=X.shape[1])
        want = subsets_shapley(cover_value(model, x), X.shape[1])
        worst = max(worst, float(np.max(np.abs(shap_tree(model, x).phi - want))))
    secs = time.perf_counter() - t0
    _, te = wdbc_split
    gaps = {}
    for f, (res, _) in tuned.items():
        phi, base = shap_tree_batch(res.model, te.features)
        gaps[f] = float(local_accuracy_gap(res.model, te.features, phi, base).max())
    ok = worst <= 1e-9 and max(gaps.values()) <= 1e-6 and secs < 60
    report(5, ok, f"max phi gap {worst:.1e} over 200 ensembles ({secs:.1f}s); local accuracy "
           + ", ".join(f"{f} {g:.1e}" for f, g in gaps.items()))
    assert worst <= 1e-9
    assert max(gaps.values()) <= 1e-6
    assert secs < 60


def test_criterion_6_tree_fit_oracle(report):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(500):
        n, m = int(rng.integers(1, 17)), int(rng.integers(1, 4))
        X = rng.integers(0, 5, size=(n, m)).astype(float)
        g = rng.normal(size=n).round(int(rng.choice([1, 3, 8])))
        h = rng.uniform(0, 1, size=n)
        lam, gamma = float(rng.choice([0.0, 0.5, 1.0])), float(rng.choice([0.0, 0.05]))
        growth = ("level_wise", "leaf_wise")[i % 2]
        t = fit_gradient_tree(X, g, h, GrowthParams(max_depth=1, min_samples_leaf=1,
                                                    reg_lambda=lam, gamma=gamma, growth=growth))
        best = pick_best(brute_force_root_split(X, g, h, lam, gamma), TIE_RTOL)
        got = None if t.n_nodes == 1 else (int(t.feature[0]), float(t.threshold[0]))
        mismatches += got != (None if best is None else (best[0], best[1]))
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs < 10
    report(6, ok, f"{500 - mismatches}/500 root splits match; {secs:.1f}s")
    assert mismatches == 0 and secs < 10


ADA_X = np.array([[1, 7], [2, 3], [3, 9], [4, 1], [5, 6], [6, 2], [7, 8], [8, 4], [9, 10],
                  [10, 5]], dtype=float)
ADA_Y = np.array([0, 0, 1, 0, 1, 1, 0, 1, 1, 1])


def test_criterion_7_adaboost_steps(report):
    from recallboost.ensemble import BoostParams
    trace = []
    train_adaboost(make_dataset(ADA_X, ADA_Y),
                   BoostParams(n_stages=5, eta=1.0, growth=GrowthParams(max_depth=1)), trace)
    ref = hand_adaboost(ADA_X, np.where(ADA_Y == 1, 1.0, -1.0), 5)
    worst = max(max(abs(got["err"] - err), abs(got["alpha"] - alpha),
                    float(np.max(np.abs(got["weights"] - w))))
                for got, (err, alpha, w) in zip(trace, ref))
    ok = len(trace) == len(ref) == 5 and worst <= 1e-12
    report(7, ok, f"5 stages, max deviation {worst:.1e}")
    assert len(trace) == 5 and worst <= 1e-12


def test_criterion_8_tpe_benchmark(report):
    space = SearchSpace((uniform("x", -10, 10),))

    def objective(p):
        return -(p["x"] - 2.0) ** 2

    t0 = time.perf_counter()
    tpe_best, rs_best = [], []
    for seed in range(50):
        tpe_best.append(run_study(space, objective, 100, seed).best.params["x"])
        rs_best.append(random_search(space, objective, 100, seed).best.objective)
    secs = time.perf_counter() - t0
    hits = sum(abs(x - 2.0) <= 0.3 for x in tpe_best)
    tpe_med = float(np.median([-(x - 2.0) ** 2 for x in tpe_best]))
    rs_med = float(np.median(rs_best))
    ok = hits >= 45 and tpe_med > rs_med and secs < 30
    report(8, ok, f"{hits}/50 seeds within 0.3; median best {tpe_med:.2e} vs random "
                  f"{rs_med:.2e}; {secs:.1f}s")
    assert hits >= 45 and tpe_med > rs_med and secs < 30


def test_criterion_9_replay(tmp_path, report):
    out = tmp_path / "run"
    code = main(["run", "--data", str(WDBC), "--out", str(out), "--trials", "5",
                 "--seed", str(ACCEPTANCE_SEED), "--epoch", "1700000000"])
    manifest = json.loads((out / "manifest.json").read_text())
    again = tmp_path / "replay"
    rcode = main(["replay", str(out / "manifest.json"), "--out", str(again)])
    files = sorted(manifest["outputs"])
    same = [f for f in files if filecmp.cmp(out / f, again / f, shallow=False)]
    ok = code == 0 and rcode == 0 and len(same) == len(files) > 0
    report(9, ok, f"{len(same)}/{len(files)} outputs byte-identical on replay")
    assert code == 0 and rcode == 0
    assert same == files
