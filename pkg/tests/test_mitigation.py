import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from adaptleak.core import AdaptationRecord, tick_expand
from adaptleak.errors import MitigationError, NonMonotoneTimestamp, UnknownAction
from adaptleak.infodetect import JointHistogram, normalized_mi
from adaptleak.mitigation import (
    Delay,
    FeatureMask,
    Ladder,
    Mediator,
    NoMitigation,
    ObserverState,
    RowMask,
    Suppression,
    controller_step,
    effective_mi,
    make_method,
    replay,
    serve_timeline,
)
from adaptleak.registry import AdaptationRule

from conftest import phone_run

RULE = AdaptationRule(0, ("GPS",), ("A", "B"))


def toy(n_records=5, gap=10, horizon=None):
    log = [AdaptationRecord(i * gap, 0, "ab"[i % 2], {"A": i + 1, "B": 10 * (i + 1)}) for i in range(n_records)]
    horizon = horizon or n_records * gap + 5
    return tick_expand(log, horizon, ("a", {"A": 1, "B": 10})), log


def phone_rule(seed=0, days=7):
    sc, out = phone_run(seed, days=days)
    return sc.registry.rule(0), out


IDENTITY = [NoMitigation(), Delay(0), Suppression(1), RowMask(0.0), FeatureMask(0.0)]


@pytest.mark.parametrize("method", IDENTITY, ids=lambda m: f"{m.name}")
def test_identity_methods(method):
    rule, out = phone_rule(1)
    served = replay(out.series, out.log, rule, method, seed=5)
    assert np.array_equal(served, out.series.select(rule.actions))


@pytest.mark.parametrize("method", [RowMask(1.0), FeatureMask(1.0)], ids=["row", "feature"])
def test_full_masks_annihilate(method):
    rule, out = phone_rule(1)
    served = replay(out.series, out.log, rule, method, seed=5)
    assert not served.any()
    assert effective_mi(served, out.series) == 0.0


def test_delay_shift():
    rule, out = phone_rule(2)
    truth = out.series.select(rule.actions)
    served = replay(out.series, out.log, rule, Delay(30))
    idx = np.maximum(np.arange(out.series.horizon) - 30, 0)
    assert np.array_equal(served, truth[idx])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200))
def test_delay_preserves_mi_after_realignment(d):
    rule, out = phone_rule(2, days=3)
    s = out.series
    served = replay(s, out.log, rule, Delay(d))
    realigned = effective_mi(served[d:], s.window(0, s.horizon - d))
    direct = normalized_mi(JointHistogram.from_samples(s.context_idx[: s.horizon - d],
                                                       s.select(rule.actions)[: s.horizon - d]))
    assert realigned == pytest.approx(direct, abs=1e-12)


def test_random_delay_range_and_fixed():
    truth, log = toy()
    med = Mediator(RULE, truth, seed=3)
    delays = set()
    for i in range(200):
        delays.add(med.activate(f"o{i}", NoMitigation(), delay="random").delay)
    assert min(delays) >= 15 and max(delays) <= 120
    assert len(delays) > 50
    again = Mediator(RULE, truth, seed=3).activate("o7", NoMitigation(), delay="random").delay
    assert again == med.states["o7"].delay


def test_time_before_start_serves_initial():
    truth, log = toy()
    served = replay(truth, log, RULE, Delay(1000))
    assert (served == [1, 10]).all()


def test_suppression_uniform_over_latest_k():
    truth, log = toy(5)
    counts = {1: 0, 2: 0, 3: 0, 4: 0, 5: 0}
    for seed in range(10_000):
        med = Mediator(RULE, truth, seed=seed)
        for r in log:
            med.on_adaptation_event(r)
        med.activate("spy", Suppression(3))
        counts[med.mediate_get("spy", "A", 45)] += 1
    assert counts[1] == counts[2] == 0
    observed = [counts[3], counts[4], counts[5]]
    assert chisquare(observed).pvalue > 0.01


def test_suppression_serves_recent_records():
    truth, log = toy(8)
    served = replay(truth, log, RULE, Suppression(3), seed=4)
    for j in range(8):
        vals = set(served[j * 10:(j + 1) * 10, 0].tolist())
        assert len(vals) == 1
        assert vals.pop() in {max(i, 1) for i in range(j - 1, j + 2)}


def test_masks_nest_across_probabilities():
    rule, out = phone_rule(3)
    lo = replay(out.series, out.log, rule, FeatureMask(0.3), seed=9)
    hi = replay(out.series, out.log, rule, FeatureMask(0.7), seed=9)
    truth = out.series.select(rule.actions)
    masked_lo = (lo == 0) & (truth != 0)
    masked_hi = (hi == 0) & (truth != 0)
    assert masked_hi[masked_lo].all()
    assert masked_hi.sum() > masked_lo.sum()


def test_replay_is_exact():
    rule, out = phone_rule(3)
    for m in (RowMask(0.5), FeatureMask(0.5), Suppression(5)):
        a = replay(out.series, out.log, rule, m, seed=2, delay="random")
        b = replay(out.series, out.log, rule, m, seed=2, delay="random")
        assert np.array_equal(a, b)


def test_masks_change_only_at_events():
    rule, out = phone_rule(4)
    served = replay(out.series, out.log, rule, RowMask(0.5), seed=1)
    starts = [r.t for r in out.log] + [out.series.horizon]
    zero_rows = ~served.any(axis=1)
    for a, b in zip(starts, starts[1:]):
        seg = zero_rows[a:b]
        if seg.any():
            assert seg.all()


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["suppression", "row_mask", "feature_mask", "delay"]), st.integers(0, 1000))
def test_scope_isolation(name, seed):
    rule, out = phone_rule(0, days=2)
    magnitude = {"suppression": 5, "row_mask": 0.6, "feature_mask": 0.6, "delay": 40}[name]
    med = Mediator(rule, out.series, seed)
    med.activate("spy", make_method(name, magnitude), delay="random")
    truth = out.series.select(rule.actions)
    ei = 0
    for t in range(0, out.series.horizon, 7):
        while ei < len(out.log) and out.log[ei].t <= t:
            med.on_adaptation_event(out.log[ei])
            ei += 1
        med.mediate_get("spy", rule.actions[t % 12], t)
        assert [med.mediate_get("app", a, t) for a in rule.actions] == truth[t].tolist()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 2879), min_size=1, max_size=60))
def test_cache_agrees_with_fresh_state(seed, ticks):
    rule, out = phone_rule(1, days=2)
    med = Mediator(rule, out.series, seed)
    for r in out.log:
        med.on_adaptation_event(r)
    med.activate("spy", Suppression(3), delay=25)
    for t in sorted(ticks):
        for a in rule.actions[:4]:
            fresh = Mediator(rule, out.series, seed)
            for r in out.log:
                fresh.on_adaptation_event(r)
            fresh.activate("spy", Suppression(3), delay=25)
            assert med.mediate_get("spy", a, t) == fresh.mediate_get("spy", a, t)


def test_unknown_action_and_ordering():
    truth, log = toy()
    med = Mediator(RULE, truth)
    with pytest.raises(UnknownAction):
        med.mediate_get("x", "Wifi", 0)
    med.activate("spy", RowMask(0.5))
    with pytest.raises(UnknownAction):
        med.mediate_get("spy", "Wifi", 0)
    med.on_adaptation_event(log[2])
    with pytest.raises(NonMonotoneTimestamp):
        med.on_adaptation_event(log[1])


@pytest.mark.parametrize("bad", [lambda: Delay(-1), lambda: Suppression(0), lambda: RowMask(1.5),
                                 lambda: FeatureMask(-0.1), lambda: make_method("blur", 1),
                                 lambda: Ladder(suppression=(2, 2, 3)), lambda: Ladder(switch_order=("delay",))])
def test_invalid_methods(bad):
    with pytest.raises(MitigationError):
        bad()


# -- controller -------------------------------------------------------------------


def state_at(name, magnitude, ladder=Ladder()):
    st_ = ObserverState("spy", 0)
    st_.method = make_method(name, magnitude)
    st_.method_idx = ladder.switch_order.index(name)
    st_.mag_idx = ladder.magnitudes(name).index(magnitude)
    return st_


def test_controller_escalates():
    s = state_at("suppression", 2)
    assert controller_step(s, Ladder(), 0.9, 0.65) == "escalate"
    assert s.method == Suppression(3)


def test_controller_switches():
    s = state_at("suppression", 8)
    assert controller_step(s, Ladder(), 0.9, 0.65) == "switch"
    assert s.method == RowMask(0.2)


def test_controller_holds():
    s = state_at("row_mask", 0.4)
    assert controller_step(s, Ladder(), 0.3, 0.65) == "hold"
    assert s.method == RowMask(0.4)


def test_controller_exhausted_holds_maximum():
    s = state_at("feature_mask", 0.8)
    assert controller_step(s, Ladder(), 0.9, 0.65) == "exhausted"
    assert s.method == FeatureMask(0.8) and s.exhausted


def test_full_ladder_walk_keeps_delay():
    truth, log = toy()
    med = Mediator(RULE, truth)
    st_ = med.activate("spy", None, delay="random")
    d = st_.delay
    seen = [(st_.method.name, st_.method.magnitude)]
    for t in range(20):
        med.step("spy", Ladder(), 1.0, 0.65, t)
        seen.append((st_.method.name, st_.method.magnitude))
        assert st_.delay == d
    expected = [("suppression", k) for k in (2, 3, 5, 8)] + [("row_mask", p) for p in (0.2, 0.4, 0.6, 0.8)] \
        + [("feature_mask", p) for p in (0.2, 0.4, 0.6, 0.8)]
    assert list(dict.fromkeys(seen)) == expected
    events = [e["event"] for e in med.audit]
    assert events.count("escalate") == 9 and events.count("switch") == 2 and events.count("exhausted") == 1


def test_audit_format():
    truth, log = toy()
    served, med = serve_timeline(truth, log, RULE, RowMask(0.5), seed=1)
    assert med.audit[0]["event"] == "activate"
    serves = [e for e in med.audit if e["event"] == "serve"]
    assert len(serves) == len(log)
    for e in med.audit:
        assert set(e) == {"t", "observer", "method", "magnitude", "delay", "event"}


def test_effective_mi_examples():
    sc, out = phone_run(0, days=7, override_rate=0.0)
    rule = sc.registry.rule(0)
    truth = out.series.select(rule.actions)
    assert effective_mi(truth, out.series) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(MitigationError):
        effective_mi(truth[:-1], out.series)


@pytest.mark.slow
def test_row_mask_reduces_mi():
    base, masked = [], []
    for seed in range(10):
        sc, out = phone_run(seed)
        rule = sc.registry.rule(0)
        base.append(effective_mi(out.series.select(rule.actions), out.series))
        masked.append(effective_mi(replay(out.series, out.log, rule, RowMask(0.4), seed=seed), out.series))
    assert np.mean(masked) < np.mean(base)


def test_reads_outside_horizon():
    truth, log = toy()
    med = Mediator(RULE, truth)
    for r in log:
        med.on_adaptation_event(r)
    med.activate("spy", RowMask(0.0))
    assert med.mediate_get("spy", "A", truth.horizon - 1) == 5
    for who in ("spy", "app"):
        for t in (-1, truth.horizon):
            with pytest.raises(MitigationError):
                med.mediate_get(who, "A", t)
