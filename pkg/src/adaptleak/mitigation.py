"""Per-observer mediation of protected getters.

Reads by a flagged observer pass through two stages: a fixed delay of ``d``
ticks, then one obfuscation method (suppression, row masking or feature
masking) whose random decisions are drawn once per adaptation interval.
Every other caller sees the true current value.

Random decisions are a pure function of ``(seed, observer, interval,
action)``, so replays are exact and a larger masking probability masks a
superset of what a smaller one masks.
"""

from __future__ import annotations

import json
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AdaptationRecord, TickSeries
from .errors import MitigationError, NonMonotoneTimestamp, UnknownAction
from .infodetect import JointHistogram, normalized_mi
from .registry import AdaptationRule

INF = float("inf")


@dataclass(frozen=True)
class NoMitigation:
    name = "none"

    @property
    def magnitude(self):
        return 0


@dataclass(frozen=True)
class Delay:
    d: int
    name = "delay"

    def __post_init__(self):
        if self.d < 0:
            raise MitigationError("delay must be >= 0")

    @property
    def magnitude(self):
        return self.d


@dataclass(frozen=True)
class Suppression:
    k: int
    name = "suppression"

    def __post_init__(self):
        if self.k < 1:
            raise MitigationError("suppression k must be >= 1")

    @property
    def magnitude(self):
        return self.k


@dataclass(frozen=True)
class RowMask:
    p: float
    name = "row_mask"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise MitigationError("mask probability must be in [0, 1]")

    @property
    def magnitude(self):
        return self.p


@dataclass(frozen=True)
class FeatureMask:
    p: float
    name = "feature_mask"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise MitigationError("mask probability must be in [0, 1]")

    @property
    def magnitude(self):
        return self.p


METHODS = {"none": NoMitigation, "delay": Delay, "suppression": Suppression,
           "row_mask": RowMask, "feature_mask": FeatureMask}


def make_method(name: str, magnitude=None):
    if name not in METHODS:
        raise MitigationError(f"unknown mitigation method {name!r}")
    if name == "none":
        return NoMitigation()
    if name in ("delay", "suppression"):
        return METHODS[name](int(magnitude))
    return METHODS[name](float(magnitude))


@dataclass(frozen=True)
class Ladder:
    suppression: tuple[int, ...] = (2, 3, 5, 8)
    mask: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    window: int = 1440
    switch_order: tuple[str, ...] = ("suppression", "row_mask", "feature_mask")
    delay_range: tuple[int, int] = (15, 120)

    def __post_init__(self):
        for seq in (self.suppression, self.mask):
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise MitigationError("ladder magnitudes must be strictly increasing")
        for m in self.switch_order:
            if m not in ("suppression", "row_mask", "feature_mask"):
                raise MitigationError(f"{m!r} cannot appear in the switch order")
        if not self.switch_order:
            raise MitigationError("switch order is empty")

    def magnitudes(self, name: str) -> tuple:
        return self.suppression if name == "suppression" else self.mask


@dataclass
class ObserverState:
    """Mediation state for one (observer, rule) pair."""

    observer: str
    key: int
    method: object = field(default_factory=NoMitigation)
    delay: int = 0
    method_idx: int = 0
    mag_idx: int = 0
    exhausted: bool = False
    cache: dict = field(default_factory=dict)
    coins: dict = field(default_factory=dict)
    last_interval: int | None = None


def observer_key(seed: int, observer: str) -> int:
    return (int(seed) & 0xFFFFFFFF) << 32 | zlib.crc32(observer.encode("utf-8"))


def controller_step(state: ObserverState, ladder: Ladder, effective: float, threshold: float) -> str:
    """Escalate when the served view still carries too much information.

    Returns the event taken: ``hold``, ``escalate``, ``switch`` or
    ``exhausted`` (every method at its maximum; the state stays there).
    """
    if effective <= threshold:
        return "hold"
    name = ladder.switch_order[state.method_idx]
    mags = ladder.magnitudes(name)
    if state.mag_idx + 1 < len(mags):
        state.mag_idx += 1
        event = "escalate"
    elif state.method_idx + 1 < len(ladder.switch_order):
        state.method_idx += 1
        state.mag_idx = 0
        event = "switch"
    else:
        state.exhausted = True
        return "exhausted"
    name = ladder.switch_order[state.method_idx]
    state.method = make_method(name, ladder.magnitudes(name)[state.mag_idx])
    state.cache.clear()
    return event


class Mediator:
    """Serves getter reads for one rule's actions.

    ``truth`` supplies the true per-tick level of every action of ``rule``;
    adaptation events must be fed in time order through
    :meth:`on_adaptation_event` before reads at or after their tick.
    """

    def __init__(self, rule: AdaptationRule, truth: TickSeries, seed: int = 0):
        self.rule = rule
        self.actions = tuple(rule.actions)
        self.seed = int(seed)
        self.index = {a: i for i, a in enumerate(self.actions)}
        missing = [a for a in self.actions if a not in truth.actions]
        if missing:
            raise UnknownAction(f"truth lacks actions {missing}")
        self._truth = {a: truth.column(a).tolist() for a in self.actions}
        self._changes = {}
        for a in self.actions:
            col = truth.column(a)
            self._changes[a] = (np.flatnonzero(col[1:] != col[:-1]) + 1).tolist()
        self.horizon = truth.horizon
        self.record_times: list[int] = []
        self.records: list[dict] = []
        self.states: dict[str, ObserverState] = {}
        self.audit: list[dict] = []

    # -- state management -------------------------------------------------------

    def on_adaptation_event(self, rec: AdaptationRecord) -> None:
        if self.record_times and rec.t < self.record_times[-1]:
            raise NonMonotoneTimestamp(f"event at t={rec.t} after t={self.record_times[-1]}")
        self.record_times.append(rec.t)
        self.records.append({a: int(rec.actions[a]) for a in self.actions})
        for st in self.states.values():
            st.cache.clear()

    def activate(self, observer: str, method=None, delay: int | str | None = None,
                 ladder: Ladder | None = None, t: int = 0) -> ObserverState:
        """Start mediating ``observer``.

        ``method`` defaults to the first ladder method at its lowest
        magnitude.  ``delay="random"`` draws d uniformly from the ladder's
        delay range once; an int fixes it; None disables the delay stage.
        """
        ladder = ladder or Ladder()
        st = ObserverState(observer, observer_key(self.seed, observer))
        if method is None:
            name = ladder.switch_order[0]
            method = make_method(name, ladder.magnitudes(name)[0])
        elif isinstance(method, Delay):
            delay, method = method.d, NoMitigation()
        st.method = method
        if isinstance(method, (Suppression, RowMask, FeatureMask)) and method.name in ladder.switch_order:
            st.method_idx = ladder.switch_order.index(method.name)
            mags = ladder.magnitudes(method.name)
            st.mag_idx = mags.index(method.magnitude) if method.magnitude in mags else 0
        if delay == "random":
            lo, hi = ladder.delay_range
            rng = np.random.default_rng([st.key >> 32, st.key & 0xFFFFFFFF, 0xDE1A])
            st.delay = int(rng.integers(lo, hi + 1))
        elif delay is not None:
            st.delay = int(delay)
            if st.delay < 0:
                raise MitigationError("delay must be >= 0")
        self.states[observer] = st
        self._log(t, st, "activate")
        return st

    def is_mediated(self, observer: str) -> bool:
        return observer in self.states

    def step(self, observer: str, ladder: Ladder, effective: float, threshold: float, t: int) -> str:
        st = self.states[observer]
        was_exhausted = st.exhausted
        event = controller_step(st, ladder, effective, threshold)
        if event != "hold" and not (event == "exhausted" and was_exhausted):
            self._log(t, st, event)
        return event

    def _log(self, t, st, event):
        self.audit.append({"t": int(t), "observer": st.observer, "method": st.method.name,
                           "magnitude": st.method.magnitude, "delay": st.delay, "event": event})

    # -- reads ------------------------------------------------------------------

    def mediate_get(self, observer: str, action: str, t: int) -> int:
        st = self.states.get(observer)
        if st is None:
            col = self._truth.get(action)
            if col is None:
                raise UnknownAction(f"{action!r} is not owned by rule {self.rule.rule_id}")
            if not 0 <= t < self.horizon:
                raise MitigationError(f"t={t} outside the simulated horizon {self.horizon}")
            return col[t]
        hit = st.cache.get(action)
        if hit is not None and hit[0] <= t < hit[1]:
            return hit[2]
        return self._serve(st, action, t)

    def _coins(self, st: ObserverState, j: int) -> list[float]:
        c = st.coins.get(j)
        if c is None:
            rng = np.random.default_rng([st.key >> 32, st.key & 0xFFFFFFFF, j + 1])
            c = rng.random(len(self.actions) + 2).tolist()
            st.coins[j] = c
        return c

    def suppression_pick(self, st: ObserverState, j: int, k: int) -> int:
        """Index of the record served in interval ``j``: uniform over the latest min(k, j+1)."""
        m = min(k, j + 1)
        u = self._coins(st, j)[-1]
        return j - min(int(u * m), m - 1)

    def _serve(self, st: ObserverState, action: str, t: int) -> int:
        col = self._truth.get(action)
        if col is None:
            raise UnknownAction(f"{action!r} is not owned by rule {self.rule.rule_id}")
        if not 0 <= t < self.horizon:
            raise MitigationError(f"t={t} outside the simulated horizon {self.horizon}")
        d = st.delay
        tp = t - d if t > d else 0
        times = self.record_times
        j = bisect_right(times, tp) - 1
        next_rec = times[j + 1] if j + 1 < len(times) else INF
        method = st.method
        masked = False
        value = None
        # interval -1 (before the first event) is masked like any other
        if not isinstance(method, NoMitigation):
            coins = self._coins(st, j)
            if isinstance(method, FeatureMask):
                masked = coins[self.index[action]] < method.p
            elif isinstance(method, RowMask):
                masked = coins[len(self.actions)] < method.p
            elif isinstance(method, Suppression) and j >= 0:
                pick = self.suppression_pick(st, j, method.k)
                if pick != j:
                    value = self.records[pick][action]
        if masked:
            value, hi = 0, next_rec
        elif value is not None:
            hi = next_rec
        else:
            value = col[tp]
            ch = self._changes[action]
            i = bisect_right(ch, tp)
            hi = min(next_rec, ch[i] if i < len(ch) else INF)
        if st.last_interval != j:
            st.last_interval = j
            self._log(t, st, "serve")
        st.cache[action] = (t, min(hi + d, self.horizon), value)
        return value


def effective_mi(served: np.ndarray, truth: TickSeries) -> float:
    """Normalized MI between the true context and the served tuples, per tick."""
    served = np.asarray(served)
    if len(served) != truth.horizon:
        raise MitigationError(f"{len(served)} served rows for {truth.horizon} ticks")
    if len(served) == 0:
        return 0.0
    return normalized_mi(JointHistogram.from_samples(truth.context_idx, served))


def serve_timeline(
    truth: TickSeries,
    log: Sequence[AdaptationRecord],
    rule: AdaptationRule,
    method=None,
    actions: Sequence[str] | None = None,
    observer: str = "observer",
    seed: int = 0,
    delay: int | str | None = None,
    cadence: int = 1,
    ladder: Ladder | None = None,
) -> tuple[np.ndarray, Mediator]:
    """Per-tick view of ``observer`` polling ``actions`` every ``cadence`` ticks.

    With ``method=None`` and no delay the observer is left unmediated.
    Between polls the observer holds its last read.  Returns the view and
    the mediator (for its audit trail).
    """
    actions = tuple(actions or rule.actions)
    med = Mediator(rule, truth, seed)
    if method is not None or delay is not None:
        med.activate(observer, method if method is not None else NoMitigation(), delay=delay, ladder=ladder)
    events = [r for r in log if r.rule_id == rule.rule_id]
    out = np.empty((truth.horizon, len(actions)), dtype=np.int64)
    get = med.mediate_get
    ei = 0
    last = None
    for t in range(truth.horizon):
        while ei < len(events) and events[ei].t <= t:
            med.on_adaptation_event(events[ei])
            ei += 1
        if t % cadence == 0 or last is None:
            last = [get(observer, a, t) for a in actions]
        out[t] = last
    return out, med


def replay(truth: TickSeries, log: Sequence[AdaptationRecord], rule: AdaptationRule, method=None,
           **kw) -> np.ndarray:
    """Served view only; see :func:`serve_timeline`."""
    return serve_timeline(truth, log, rule, method, **kw)[0]


def write_audit(path, entries) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps(e, separators=(",", ":")) + "\n")
