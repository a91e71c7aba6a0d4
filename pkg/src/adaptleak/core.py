"""Trace model: adaptation records, per-tick ground truth, and persistence.

Time is integer minutes since the start of a run.  Records are written as
JSON lines, tick series as CSV with header ``t,context,<action names...>``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    IoFailure,
    NonMonotoneTimestamp,
    RecordBeyondHorizon,
    SchemaMismatch,
    WrongActionSet,
)

MINUTES_PER_DAY = 1440
RECORD_FIELDS = ("t", "rule", "context", "actions")


@dataclass(frozen=True)
class AdaptationRecord:
    t: int
    rule_id: int
    context: str
    actions: Mapping[str, int]

    def __post_init__(self):
        if self.t < 0:
            raise NonMonotoneTimestamp(f"negative timestamp {self.t}")
        object.__setattr__(self, "actions", dict(self.actions))

    def to_json(self) -> dict:
        return {"t": self.t, "rule": self.rule_id, "context": self.context, "actions": dict(self.actions)}

    @classmethod
    def from_json(cls, obj: dict) -> "AdaptationRecord":
        if not isinstance(obj, dict) or set(obj) != set(RECORD_FIELDS):
            raise SchemaMismatch(f"record fields must be {RECORD_FIELDS}, got {sorted(obj) if isinstance(obj, dict) else obj!r}")
        t, rule, ctx, acts = obj["t"], obj["rule"], obj["context"], obj["actions"]
        if not (isinstance(t, int) and isinstance(rule, int) and isinstance(ctx, str) and isinstance(acts, dict)):
            raise SchemaMismatch(f"wrong field types in record {obj!r}")
        if not all(isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool) for k, v in acts.items()):
            raise SchemaMismatch(f"action levels must be integers in record {obj!r}")
        return cls(t, rule, ctx, acts)


def record_adaptation(log: list[AdaptationRecord], rec: AdaptationRecord, registry=None) -> list[AdaptationRecord]:
    """Validate ``rec`` against ``log`` and append it in place.

    The expected action set comes from ``registry`` when given, otherwise from
    the previous record of the same rule.
    """
    last = None
    for prev in reversed(log):
        if prev.rule_id == rec.rule_id:
            last = prev
            break
    if last is not None and rec.t < last.t:
        raise NonMonotoneTimestamp(f"rule {rec.rule_id}: t={rec.t} after t={last.t}")
    if registry is not None:
        expected = set(registry.rule(rec.rule_id).actions)
    elif last is not None:
        expected = set(last.actions)
    else:
        expected = None
    if expected is not None and set(rec.actions) != expected:
        raise WrongActionSet(
            f"rule {rec.rule_id}: actions {sorted(rec.actions)} != {sorted(expected)}"
        )
    log.append(rec)
    return log


@dataclass
class TickSeries:
    """Per-tick ground truth: the active context and the full action vector.

    ``context_idx[t]`` indexes ``alphabet``; ``levels[t, j]`` is the level of
    ``actions[j]`` at tick ``t``.
    """

    alphabet: tuple[str, ...]
    context_idx: np.ndarray
    actions: tuple[str, ...]
    levels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.alphabet = tuple(self.alphabet)
        self.actions = tuple(self.actions)
        self.context_idx = np.asarray(self.context_idx, dtype=np.int64)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(len(self.context_idx), len(self.actions))

    @property
    def horizon(self) -> int:
        return len(self.context_idx)

    @property
    def truth(self) -> list[str]:
        return [self.alphabet[i] for i in self.context_idx]

    def column(self, action: str) -> np.ndarray:
        return self.levels[:, self.actions.index(action)]

    def select(self, actions: Iterable[str]) -> np.ndarray:
        cols = [self.actions.index(a) for a in actions]
        return self.levels[:, cols]

    def action_vector(self, t: int) -> dict[str, int]:
        return {a: int(v) for a, v in zip(self.actions, self.levels[t])}

    def window(self, start: int, stop: int) -> "TickSeries":
        return TickSeries(self.alphabet, self.context_idx[start:stop], self.actions, self.levels[start:stop])

    def __eq__(self, other):
        if not isinstance(other, TickSeries):
            return NotImplemented
        return (
            self.truth == other.truth
            and self.actions == other.actions
            and np.array_equal(self.levels, other.levels)
        )


def tick_expand(
    log: list[AdaptationRecord],
    horizon: int,
    initial: tuple[str, Mapping[str, int]],
    alphabet: Iterable[str] | None = None,
) -> TickSeries:
    """Last-value-hold expansion of ``log`` onto ``horizon`` ticks.

    Ticks before the first record carry ``initial``.  Action columns are the
    keys of the initial vector followed by any further actions in the log.
    """
    init_ctx, init_vec = initial
    actions = list(init_vec)
    for rec in log:
        for a in rec.actions:
            if a not in actions:
                actions.append(a)
    symbols = list(alphabet) if alphabet is not None else []
    for c in [init_ctx] + [r.context for r in log]:
        if c not in symbols:
            symbols.append(c)
    sym_idx = {c: i for i, c in enumerate(symbols)}
    col = {a: j for j, a in enumerate(actions)}

    ctx = np.empty(horizon, dtype=np.int64)
    levels = np.zeros((horizon, len(actions)), dtype=np.int64)
    cur_ctx = sym_idx[init_ctx]
    cur = np.zeros(len(actions), dtype=np.int64)
    for a, v in init_vec.items():
        cur[col[a]] = v

    prev_t = 0
    for rec in log:
        if rec.t >= horizon:
            raise RecordBeyondHorizon(f"record at t={rec.t} with horizon {horizon}")
        if rec.t < prev_t:
            raise NonMonotoneTimestamp(f"log not time-sorted at t={rec.t}")
        ctx[prev_t:rec.t] = cur_ctx
        levels[prev_t:rec.t] = cur
        cur_ctx = sym_idx[rec.context]
        cur = cur.copy()
        for a, v in rec.actions.items():
            cur[col[a]] = v
        prev_t = rec.t
    ctx[prev_t:] = cur_ctx
    levels[prev_t:] = cur
    return TickSeries(tuple(symbols), ctx, tuple(actions), levels)


def change_points(series: TickSeries) -> list[AdaptationRecord]:
    """Records implied by the ticks where context or any action changes."""
    out = []
    if series.horizon == 0:
        return out
    ctx, lv = series.context_idx, series.levels
    changed = np.ones(series.horizon, dtype=bool)
    changed[1:] = (ctx[1:] != ctx[:-1]) | np.any(lv[1:] != lv[:-1], axis=1)
    for t in np.flatnonzero(changed):
        out.append(AdaptationRecord(int(t), 0, series.alphabet[ctx[t]], series.action_vector(int(t))))
    return out


# -- persistence ---------------------------------------------------------------


def write_records(path, log: Iterable[AdaptationRecord]) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in log:
                fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_records(path) -> list[AdaptationRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    log = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}:{n}: invalid JSON ({exc})") from exc
        log.append(AdaptationRecord.from_json(obj))
    return log


def write_series_csv(path, series: TickSeries) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "context", *series.actions])
            truth = series.truth
            for t in range(series.horizon):
                w.writerow([t, truth[t], *series.levels[t].tolist()])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_series_csv(path, alphabet: Iterable[str] | None = None) -> TickSeries:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:2] != ["t", "context"]:
        raise SchemaMismatch(f"{path}: header must start with t,context")
    actions = tuple(rows[0][2:])
    body = rows[1:]
    symbols = list(alphabet) if alphabet is not None else []
    ctx = np.empty(len(body), dtype=np.int64)
    levels = np.empty((len(body), len(actions)), dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != len(actions) + 2:
            raise SchemaMismatch(f"{path}: row {i + 1} has {len(row)} fields")
        try:
            t = int(row[0])
            levels[i] = [int(v) for v in row[2:]]
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: row {i + 1}: {exc}") from exc
        if t != i:
            raise SchemaMismatch(f"{path}: expected t={i}, found {t}")
        if row[1] not in symbols:
            symbols.append(row[1])
        ctx[i] = symbols.index(row[1])
    return TickSeries(tuple(symbols), ctx, actions, levels)


def write_levels_csv(path, actions: Iterable[str], levels: np.ndarray) -> Path:
    """Per-tick observed values (no context column): header ``t,<actions...>``."""
    path = Path(path)
    actions = list(actions)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *actions])
            for t, row in enumerate(np.asarray(levels).tolist()):
                w.writerow([t, *row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_levels_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:1] != ["t"] or "context" in rows[0]:
        raise SchemaMismatch(f"{path}: header must be t,<actions...>")
    actions = tuple(rows[0][1:])
    try:
        levels = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc
    return actions, levels.reshape(len(rows) - 1, len(actions))
