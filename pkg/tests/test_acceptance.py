"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s`` or ``python tests/test_acceptance.py``.
"""

import inspect
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from adaptleak.attacker import AttackOptions, attack_pipeline, kmeans
from adaptleak.harness import ExperimentConfig, population_study, run_experiment
from adaptleak.infodetect import JointHistogram, mutual_information, subset_scores
from adaptleak.mitigation import (
    Delay,
    FeatureMask,
    Mediator,
    RowMask,
    Suppression,
    effective_mi,
    replay,
)
from adaptleak.registry import parse_registry
from adaptleak.scenario import PHONE_ACTIONS

sys.path.insert(0, str(Path(__file__).parent))
from conftest import phone_run  # noqa: E402

pytestmark = pytest.mark.acceptance

SEEDS = range(10)


def verdict(capsys, n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] C{n} {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


def mi_oracle(p):
    """Direct double sum over a 2-D probability table, in bits."""
    px, py = p.sum(axis=1), p.sum(axis=0)
    return sum(p[i, j] * math.log2(p[i, j] / (px[i] * py[j]))
               for i in range(p.shape[0]) for j in range(p.shape[1]) if p[i, j] > 0)


def joint(p):
    return JointHistogram.from_mapping({(i, j): v for (i, j), v in np.ndenumerate(np.asarray(p)) if v})


def test_c1_mi_estimator(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_indep = 0.0
    for _ in range(200):
        px = rng.dirichlet(np.ones(rng.integers(2, 6)))
        py = rng.dirichlet(np.ones(rng.integers(2, 6)))
        worst_indep = max(worst_indep, abs(mutual_information(joint(np.outer(px, py)))))
    one_bit = mutual_information(joint([[0.5, 0.0], [0.0, 0.5]]))
    p = np.array([[0.4, 0.1], [0.1, 0.4]])
    got, want = mutual_information(joint(p)), mi_oracle(p)
    elapsed = time.perf_counter() - t0
    ok = (worst_indep <= 1e-12 and one_bit == 1.0 and abs(got - 0.278) <= 1e-3
          and abs(got - want) <= 1e-12 and elapsed < 1.0)
    verdict(capsys, 1, ok, f"MI unit suite: max|I_indep|={worst_indep:.1e}, I_det={one_bit!r}, "
                           f"I(0.4,0.1,0.1,0.4)={got:.6f} (oracle {want:.6f}), {elapsed:.3f}s")


def test_c2_subset_monotonicity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = -np.inf
    for _ in range(1000):
        n_act = int(rng.integers(1, 5))
        n_ctx = int(rng.integers(2, 7))
        n = int(rng.integers(500, 1001))
        ctx = rng.integers(0, n_ctx, n)
        # partly context-driven levels so the scores are not all near zero
        levels = np.where(rng.random((n, n_act)) < rng.random(n_act),
                          ctx[:, None] % rng.integers(1, 4, n_act), rng.integers(0, 3, (n, n_act)))
        table = subset_scores(ctx, levels)
        full = (1 << n_act) - 1
        for T in range(1, full + 1):
            S = T
            while S:
                worst = max(worst, table[S] - table[T])
                S = (S - 1) & T
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 30.0
    verdict(capsys, 2, ok, f"subset monotonicity over 1000 series: max(table[S]-table[T])={worst:.1e}, "
                           f"{elapsed:.1f}s")


def _unmitigated(seed):
    sc, out = phone_run(seed)
    rule = sc.registry.rule(0)
    view = out.series.select(rule.actions)
    return sc, out, rule, view


@pytest.mark.slow
def test_c3_unmitigated_leak(capsys):
    accs, bases, times = [], [], []
    for seed in SEEDS:
        t0 = time.perf_counter()
        sc, out, rule, view = _unmitigated(seed)
        rep = attack_pipeline(view, rule.actions, out.series, AttackOptions(seed=seed))
        accs.append(rep.accuracy)
        bases.append(rep.baseline)
        times.append(time.perf_counter() - t0)
    gap = np.mean(accs) - np.mean(bases)
    ok = gap >= 0.20 and max(times) < 60.0
    verdict(capsys, 3, ok, f"unmitigated leak: mean accuracy {np.mean(accs):.3f} vs baseline "
                           f"{np.mean(bases):.3f} (+{100 * gap:.1f} pts), slowest seed {max(times):.1f}s")


@pytest.mark.slow
def test_c4_feature_mask_collapse(capsys):
    devs, mi0, mi8, unmit, mi1 = [], [], [], [], []
    for seed in SEEDS:
        sc, out, rule, view = _unmitigated(seed)
        served = {p: replay(out.series, out.log, rule, FeatureMask(p), seed=seed) for p in (0.0, 0.8, 1.0)}
        rep = attack_pipeline(served[0.8], rule.actions, out.series, AttackOptions(seed=seed))
        devs.append(abs(rep.accuracy - rep.baseline))
        unmit.append(effective_mi(view, out.series))
        mi0.append(effective_mi(served[0.0], out.series))
        mi8.append(effective_mi(served[0.8], out.series))
        mi1.append(effective_mi(served[1.0], out.series))
    ok = (max(devs) <= 0.05 and mi0 == unmit and max(abs(m) for m in mi1) <= 1e-9
          and np.mean(mi8) <= np.mean(mi0))
    verdict(capsys, 4, ok, f"FeatureMask p=0.8: max|acc-baseline|={max(devs):.3f}, MI(p=0)==unmitigated "
                           f"{mi0 == unmit}, max|MI(p=1)|={max(abs(m) for m in mi1):.1e}, "
                           f"mean MI {np.mean(mi8):.3f} (p=0.8) <= {np.mean(mi0):.3f} (p=0)")


def test_c5_identity_mitigations(capsys):
    bad = []
    for seed in range(3):
        sc, out, rule, view = _unmitigated(seed)
        for m in (Suppression(1), Delay(0), RowMask(0.0), FeatureMask(0.0)):
            served = replay(out.series, out.log, rule, m, seed=seed)
            if not (served.dtype == view.dtype and np.array_equal(served, view)):
                bad.append(f"{m.name}@{seed}")
    verdict(capsys, 5, not bad, "identity mitigations bit-identical to truth"
                                + (f"; differs: {bad}" if bad else ""))


@pytest.mark.slow
def test_c6_detection_sweep(capsys):
    cfg = ExperimentConfig.from_dict({"seed": 0, "attack": {"window_attacks": False}})
    study = population_study(cfg)
    curve = study["curve"]
    fps = [c["fp"] for c in curve]
    fns = [c["fn"] for c in curve]
    good = [c for c in curve if c["fp"] <= 0.15 and c["fn"] <= 0.20]
    n_mal = sum(m["malicious"] for m in study["members"])
    ok = (len(study["members"]) == 20 and bool(curve) and fps == sorted(fps, reverse=True)
          and fns == sorted(fns) and bool(good))
    best = min(curve, key=lambda c: c["fp"] + c["fn"]) if curve else None
    verdict(capsys, 6, ok, f"detection sweep over 20 observers ({n_mal} malicious): FP non-increasing "
                           f"{fps == sorted(fps, reverse=True)}, FN non-decreasing {fns == sorted(fns)}, "
                           f"{len(good)} thresholds with FP<=0.15 and FN<=0.20"
                           + (f"; best th={best['threshold']:.2f} FP={best['fp']:.3f} FN={best['fn']:.3f}"
                              if best else ""))


def test_c7_query_rate_invariance(capsys):
    cfg = ExperimentConfig.from_dict({
        "seed": 4, "days": 7, "attack": {"restarts": 3, "window_attacks": False},
        "observers": [{"id": "fast", "actions": ["Wifi", "AlarmVolume"], "cadence": 1},
                      {"id": "slow", "actions": ["Wifi", "AlarmVolume"], "cadence": 10_000}],
    })
    fast, slow = run_experiment(cfg)["observers"]
    ok = fast["suspicion"] == slow["suspicion"] and fast["final_suspicion"] == slow["final_suspicion"]
    verdict(capsys, 7, ok, f"query rates 1 vs 10^4 ticks: suspicion {fast['final_suspicion']:.6f} vs "
                           f"{slow['final_suspicion']:.6f}, all {len(fast['suspicion'])} days equal {ok}")


def _partitions(n, k):
    def rec(i, labels, used):
        if i == n:
            if used == k:
                yield list(labels)
            return
        for c in range(min(used + 1, k)):
            labels.append(c)
            yield from rec(i + 1, labels, max(used, c + 1))
            labels.pop()
    yield from rec(0, [], 0)


def _brute_inertia(X, k):
    best = np.inf
    for labels in _partitions(len(X), k):
        lab = np.array(labels)
        best = min(best, sum(((X[lab == c] - X[lab == c].mean(axis=0)) ** 2).sum() for c in range(k)))
    return best


def test_c8_kmeans_oracle(capsys):
    rng = np.random.default_rng(8)
    worst = 0.0
    for i in range(20):
        X = rng.random((8, 2))
        k = 2 + i % 2
        got = kmeans(X, k, seed=i, restarts=50).inertia
        worst = max(worst, got / _brute_inertia(X, k))
    ok = worst <= 1.05
    verdict(capsys, 8, ok, f"k-means vs exhaustive optimum on 20 instances: worst ratio {worst:.4f}")


def _registry_doc(n):
    body = []
    for i in range(n):
        body.append(f"<adaptation><context><method>Ctx{i}</method></context>"
                    f"<action><method>Act{i}a</method><method>Act{i}b</method></action></adaptation>")
    return "<registry>" + "".join(body) + "</registry>"


def test_c9_performance(capsys):
    sc, out, rule, _ = _unmitigated(0)
    med = Mediator(rule, out.series, seed=0)
    for r in out.log:
        if r.rule_id == rule.rule_id:
            med.on_adaptation_event(r)
    med.activate("spy", FeatureMask(0.8))
    H = out.series.horizon
    actions = rule.actions
    n_act = len(actions)
    get = med.mediate_get
    t0 = time.perf_counter()
    for i in range(1_000_000):
        get("spy", actions[i % n_act], i % H)
    calls = time.perf_counter() - t0

    doc = _registry_doc(100)
    parse_registry(doc)  # warm-up
    t0 = time.perf_counter()
    reg = parse_registry(doc)
    parse = time.perf_counter() - t0
    ok = calls < 1.0 and parse < 0.05 and len(reg.rules) == 100
    verdict(capsys, 9, ok, f"10^6 mediate_get calls {calls:.3f}s; 100-adaptation registry parse "
                           f"{1000 * parse:.1f}ms")


@pytest.mark.slow
def test_c10_determinism(tmp_path, capsys):
    cfg = ExperimentConfig.from_dict({
        "seed": 7, "days": 7, "attack": {"restarts": 3},
        "mitigation": {"mode": "adaptive", "delay": "random"},
        "observers": [{"id": "spy", "actions": list(PHONE_ACTIONS)},
                      {"id": "meek", "actions": ["AlarmVolume"], "cadence": 30}],
    })
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    differ = [n for n in names if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    ok = bool(names) and not differ
    verdict(capsys, 10, ok, f"repeated experiment byte-identical across {len(names)} files"
                            + (f"; differ: {differ}" if differ else ""))


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(((n, f) for n, f in globals().items() if n.startswith("test_c")),
                           key=lambda kv: int(kv[0].split("_")[1][1:])):
        try:
            if "tmp_path" in inspect.signature(fn).parameters:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d), None)
            else:
                fn(None)
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
