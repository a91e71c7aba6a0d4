import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptleak.core import (
    AdaptationRecord,
    TickSeries,
    change_points,
    read_levels_csv,
    read_records,
    read_series_csv,
    record_adaptation,
    tick_expand,
    write_levels_csv,
    write_records,
    write_series_csv,
)
from adaptleak.errors import (
    IoFailure,
    NonMonotoneTimestamp,
    RecordBeyondHorizon,
    SchemaMismatch,
    WrongActionSet,
)
from adaptleak.registry import EXAMPLE_REGISTRY, parse_registry

VEC = {"RingerMode": 2, "AlarmVolume": 5}


def rec(t, ctx="home", **levels):
    return AdaptationRecord(t, 0, ctx, {**VEC, **levels})


def test_record_append():
    log = record_adaptation([], rec(0))
    assert len(log) == 1


def test_record_non_monotone():
    log = record_adaptation([], rec(5))
    with pytest.raises(NonMonotoneTimestamp):
        record_adaptation(log, rec(3))


def test_record_wrong_action_set():
    reg = parse_registry(EXAMPLE_REGISTRY)
    with pytest.raises(WrongActionSet):
        record_adaptation([], AdaptationRecord(0, 0, "home", {"RingerMode": 1}), reg)
    log = record_adaptation([], rec(0))
    with pytest.raises(WrongActionSet):
        record_adaptation(log, AdaptationRecord(4, 0, "home", {"RingerMode": 1}))


def test_rules_have_independent_clocks():
    log = record_adaptation([], rec(5))
    record_adaptation(log, AdaptationRecord(3, 1, "x", {"CameraFlashMode": 1}))
    assert len(log) == 2


def test_expand_single_record():
    s = tick_expand([rec(0)], 10, ("home", VEC))
    assert s.horizon == 10
    assert (s.levels == s.levels[0]).all()
    assert s.truth == ["home"] * 10


def test_expand_two_records():
    s = tick_expand([rec(0), rec(5, "work", RingerMode=0)], 10, ("home", VEC))
    assert s.truth == ["home"] * 5 + ["work"] * 5
    assert s.column("RingerMode").tolist() == [2] * 5 + [0] * 5


def test_expand_empty_log():
    s = tick_expand([], 3, ("home", VEC))
    assert s.truth == ["home"] * 3
    assert s.levels.tolist() == [[2, 5]] * 3


def test_expand_errors():
    with pytest.raises(RecordBeyondHorizon):
        tick_expand([rec(10)], 10, ("home", VEC))
    with pytest.raises(NonMonotoneTimestamp):
        tick_expand([rec(4), rec(2)], 10, ("home", VEC))


def test_records_round_trip(tmp_path):
    log = [rec(i * 3, "home" if i % 2 else "work", RingerMode=i % 3) for i in range(100)]
    write_records(tmp_path / "t.jsonl", log)
    assert read_records(tmp_path / "t.jsonl") == log


def test_empty_log_round_trip(tmp_path):
    write_records(tmp_path / "t.jsonl", [])
    assert (tmp_path / "t.jsonl").read_text() == ""
    assert read_records(tmp_path / "t.jsonl") == []


@pytest.mark.parametrize("line", [
    {"t": 0, "rule": 0, "context": "home", "actions": {"A": 1}, "extra": 1},
    {"t": 0, "rule": 0, "context": "home"},
    {"t": "0", "rule": 0, "context": "home", "actions": {"A": 1}},
    {"t": 0, "rule": 0, "context": "home", "actions": {"A": 1.5}},
])
def test_schema_mismatch(tmp_path, line):
    p = tmp_path / "t.jsonl"
    p.write_text(json.dumps(line) + "\n")
    with pytest.raises(SchemaMismatch):
        read_records(p)


def test_invalid_json(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text("{nope\n")
    with pytest.raises(SchemaMismatch):
        read_records(p)


def test_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        read_records(tmp_path / "missing.jsonl")
    with pytest.raises(IoFailure):
        write_records(tmp_path / "no" / "dir" / "t.jsonl", [])


def test_series_csv_round_trip(tmp_path, phone3):
    _, out = phone3
    write_series_csv(tmp_path / "s.csv", out.series)
    back = read_series_csv(tmp_path / "s.csv", out.series.alphabet)
    assert back == out.series
    assert back.alphabet == out.series.alphabet


def test_levels_csv_round_trip(tmp_path):
    lv = np.arange(12).reshape(4, 3)
    write_levels_csv(tmp_path / "l.csv", ["a", "b", "c"], lv)
    names, back = read_levels_csv(tmp_path / "l.csv")
    assert names == ("a", "b", "c")
    assert np.array_equal(back, lv)


def test_simulator_logs_round_trip(tmp_path, phone3):
    _, out = phone3
    write_records(tmp_path / "t.jsonl", out.log)
    assert read_records(tmp_path / "t.jsonl") == out.log


@st.composite
def series(draw):
    H = draw(st.integers(1, 60))
    n_act = draw(st.integers(1, 3))
    ctx = draw(st.lists(st.integers(0, 2), min_size=H, max_size=H))
    lv = draw(st.lists(st.lists(st.integers(0, 3), min_size=n_act, max_size=n_act), min_size=H, max_size=H))
    return TickSeries(("a", "b", "c"), np.array(ctx), tuple(f"X{i}" for i in range(n_act)), np.array(lv))


@settings(max_examples=200, deadline=None)
@given(series())
def test_change_points_reexpand(s):
    recs = change_points(s)
    first = recs[0]
    back = tick_expand(recs, s.horizon, (first.context, first.actions), s.alphabet)
    assert back == s
