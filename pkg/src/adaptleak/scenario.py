"""Synthetic human-in-the-loop traces.

A scenario couples a daily-routine model over contexts with a profile policy
that rewrites some settings whenever the context changes.  The routine is a
time-inhomogeneous chain over minutes: in hour bucket ``b`` of a weekday or
weekend day, the current context ``c`` is left with per-minute hazard
``1 / dwell[b][c]`` and the next context is drawn from ``transitions[b][c]``.
Sojourns are therefore geometric with a mean that follows the clock.

Manual overrides arrive as a Poisson process and nudge one overridable
setting by one level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import MINUTES_PER_DAY, AdaptationRecord, TickSeries
from .errors import ProfileCountOutOfRange, ScenarioError
from .registry import AdaptationRule, Registry

DAY_TYPES = ("weekday", "weekend")
MIN_CONTEXTS, MAX_CONTEXTS = 2, 7
DEFAULT_OVERRIDE_RATE = 0.2  # events per hour


@dataclass
class DaySchedule:
    bucket_starts: list[int]
    transitions: np.ndarray  # (buckets, K, K)
    dwell: np.ndarray  # (buckets, K), minutes

    def __post_init__(self):
        self.bucket_starts = [int(h) for h in self.bucket_starts]
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.dwell = np.asarray(self.dwell, dtype=float)
        nb = len(self.bucket_starts)
        if nb == 0 or self.bucket_starts[0] != 0 or sorted(set(self.bucket_starts)) != self.bucket_starts:
            raise ScenarioError(f"bucket starts must begin at hour 0 and increase: {self.bucket_starts}")
        if self.bucket_starts[-1] > 23:
            raise ScenarioError("bucket starts must lie in 0..23")
        if self.transitions.ndim != 3 or self.transitions.shape[0] != nb or self.transitions.shape[1] != self.transitions.shape[2]:
            raise ScenarioError(f"transitions shape {self.transitions.shape} does not match {nb} buckets")
        if self.dwell.shape != self.transitions.shape[:2]:
            raise ScenarioError(f"dwell shape {self.dwell.shape} != {self.transitions.shape[:2]}")
        if np.any(self.transitions < 0) or np.any(np.abs(self.transitions.sum(axis=2) - 1.0) > 1e-9):
            raise ScenarioError("transition rows must be non-negative and sum to 1")
        if np.any(self.dwell < 1):
            raise ScenarioError("mean dwell must be at least one minute")

    def hour_to_bucket(self) -> np.ndarray:
        return np.searchsorted(self.bucket_starts, np.arange(24), side="right") - 1

    def to_json(self) -> dict:
        return {
            "bucket_starts": self.bucket_starts,
            "transitions": self.transitions.tolist(),
            "dwell": self.dwell.tolist(),
        }


@dataclass
class Scenario:
    name: str
    registry: Registry
    contexts: tuple[str, ...]
    schedule: dict[str, DaySchedule]
    policy: dict[str, dict[str, int]]
    defaults: dict[str, int]
    action_ranges: dict[str, int]
    initial_context: str = ""
    override_rate: float = DEFAULT_OVERRIDE_RATE
    overridable: tuple[str, ...] = ()
    exogenous: dict[str, dict] = field(default_factory=dict)
    time_features: bool = False
    groups: dict[str, dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        self.contexts = tuple(self.contexts)
        self.overridable = tuple(self.overridable)
        if not self.initial_context:
            self.initial_context = self.contexts[0] if self.contexts else ""
        self.validate()

    def validate(self) -> None:
        k = len(self.contexts)
        if not MIN_CONTEXTS <= k <= MAX_CONTEXTS:
            raise ScenarioError(f"need 2..7 contexts, got {k}")
        if len(set(self.contexts)) != k:
            raise ScenarioError("context symbols must be distinct")
        if self.initial_context not in self.contexts:
            raise ScenarioError(f"initial context {self.initial_context!r} not in alphabet")
        actions = set(self.registry.actions)
        if set(self.action_ranges) != actions:
            raise ScenarioError("action_ranges must cover exactly the registry actions")
        if set(self.defaults) != actions:
            raise ScenarioError("defaults must cover exactly the registry actions")
        for a, v in self.defaults.items():
            self._check_level(a, v)
        for ctx, prof in self.policy.items():
            if ctx not in self.contexts:
                raise ScenarioError(f"policy for unknown context {ctx!r}")
            for a, v in prof.items():
                self._check_level(a, v)
        for dt in DAY_TYPES:
            sched = self.schedule.get(dt)
            if sched is None:
                raise ScenarioError(f"schedule lacks {dt!r}")
            if sched.transitions.shape[1] != k:
                raise ScenarioError(f"{dt} transitions are {sched.transitions.shape[1]}-wide, need {k}")
        if self.override_rate < 0:
            raise ScenarioError("override rate must be non-negative")
        for a in self.overridable:
            if a not in actions:
                raise ScenarioError(f"overridable action {a!r} not in registry")
        for a, spec in self.exogenous.items():
            if a not in actions or spec.get("follows") not in actions:
                raise ScenarioError(f"bad exogenous spec for {a!r}")

    def _check_level(self, action: str, level: int) -> None:
        if action not in self.action_ranges:
            raise ScenarioError(f"unknown action {action!r}")
        if not 0 <= int(level) <= self.action_ranges[action]:
            raise ScenarioError(f"{action}={level} outside 0..{self.action_ranges[action]}")

    @property
    def actions(self) -> tuple[str, ...]:
        return self.registry.actions

    def resolved_profile(self, ctx: str) -> dict[str, int]:
        """Policy of ``ctx`` merged over the defaults."""
        return {**self.defaults, **self.policy.get(ctx, {})}

    def initial_vector(self) -> dict[str, int]:
        return self.resolved_profile(self.initial_context)

    # -- JSON ------------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "registry": self.registry.to_dict(),
            "contexts": list(self.contexts),
            "initial_context": self.initial_context,
            "schedule": {dt: self.schedule[dt].to_json() for dt in DAY_TYPES},
            "policy": {c: dict(p) for c, p in self.policy.items()},
            "defaults": dict(self.defaults),
            "action_ranges": dict(self.action_ranges),
            "noise": {"rate_per_hour": self.override_rate, "actions": list(self.overridable)},
            "exogenous": self.exogenous,
            "time_features": self.time_features,
            "groups": self.groups,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "Scenario":
        try:
            noise = d.get("noise", {})
            return cls(
                name=d.get("name", "custom"),
                registry=Registry.from_dict(d["registry"]),
                contexts=tuple(d["contexts"]),
                schedule={dt: DaySchedule(**d["schedule"][dt]) for dt in DAY_TYPES},
                policy={c: {a: int(v) for a, v in p.items()} for c, p in d["policy"].items()},
                defaults={a: int(v) for a, v in d["defaults"].items()},
                action_ranges={a: int(v) for a, v in d["action_ranges"].items()},
                initial_context=d.get("initial_context", ""),
                override_rate=float(noise.get("rate_per_hour", DEFAULT_OVERRIDE_RATE)),
                overridable=tuple(noise.get("actions", ())),
                exogenous=dict(d.get("exogenous", {})),
                time_features=bool(d.get("time_features", False)),
                groups=dict(d.get("groups", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario document: {exc!r}") from exc

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- schedule construction -----------------------------------------------------


def routine_schedule(
    contexts: tuple[str, ...],
    buckets: list[tuple[int, dict[str, float], dict[str, float]]],
    base_dwell: Mapping[str, float],
    idle_dwell: float = 20.0,
) -> DaySchedule:
    """Build a day schedule from per-bucket attraction weights.

    ``buckets`` holds ``(start_hour, weights, dwell_overrides)``.  From any
    context the chain jumps to the other contexts in proportion to their
    weight; a context with no weight in a bucket is left after about
    ``idle_dwell`` minutes.  Contexts outside ``contexts`` are dropped.
    """
    k = len(contexts)
    starts, trans, dwell = [], [], []
    for start, weights, overrides in buckets:
        w = np.array([weights.get(c, 0.0) for c in contexts])
        T = np.zeros((k, k))
        D = np.zeros(k)
        for i, c in enumerate(contexts):
            row = w.copy()
            row[i] = 0.0
            if row.sum() > 0:
                T[i] = row / row.sum()
            else:
                T[i, i] = 1.0
            if c in overrides:
                D[i] = overrides[c]
            elif w[i] > 0:
                D[i] = base_dwell[c]
            else:
                D[i] = min(base_dwell[c], idle_dwell)
        starts.append(start)
        trans.append(T)
        dwell.append(D)
    return DaySchedule(starts, np.array(trans), np.array(dwell))


PHONE_ACTIONS = (
    "RingerMode", "TouchSound", "Wifi", "RingerVolume", "DisplayTimeout", "VibrateOnTouch",
    "Wallpaper", "DialpadSound", "AlarmVolume", "MediaVolume", "ScreenBrightness", "LockSound",
)
PHONE_RANGES = {
    "RingerMode": 2, "TouchSound": 1, "Wifi": 1, "RingerVolume": 7, "DisplayTimeout": 5,
    "VibrateOnTouch": 1, "Wallpaper": 3, "DialpadSound": 1, "AlarmVolume": 7,
    "MediaVolume": 15, "ScreenBrightness": 255, "LockSound": 1,
}
PHONE_DEFAULTS = {
    "RingerMode": 2, "TouchSound": 1, "Wifi": 1, "RingerVolume": 5, "DisplayTimeout": 2,
    "VibrateOnTouch": 1, "Wallpaper": 0, "DialpadSound": 1, "AlarmVolume": 6,
    "MediaVolume": 8, "ScreenBrightness": 128, "LockSound": 1,
}
PHONE_CONTEXTS = ("home", "work", "commute", "gym", "cafe", "childcare", "shopping")
# Ringer 0 = silent, 1 = vibrate, 2 = normal.  Brightness bases sit >= 20 apart.
PHONE_PROFILES = {
    "home": {"RingerMode": 2, "TouchSound": 1, "Wifi": 1, "RingerVolume": 5, "Wallpaper": 0,
             "DisplayTimeout": 3, "ScreenBrightness": 110},
    "work": {"RingerMode": 0, "TouchSound": 0, "Wifi": 1, "DisplayTimeout": 1, "Wallpaper": 1,
             "ScreenBrightness": 180},
    "commute": {"RingerMode": 1, "Wifi": 0, "MediaVolume": 9, "ScreenBrightness": 230},
    "gym": {"RingerMode": 2, "Wifi": 0, "RingerVolume": 7, "MediaVolume": 13, "ScreenBrightness": 205},
    "cafe": {"RingerMode": 1, "Wifi": 1, "MediaVolume": 4, "ScreenBrightness": 150},
    "childcare": {"RingerMode": 2, "Wifi": 0, "RingerVolume": 6, "ScreenBrightness": 85},
    "shopping": {"RingerMode": 1, "Wifi": 0, "VibrateOnTouch": 0, "ScreenBrightness": 130},
}
PHONE_BASE_DWELL = {
    "home": 600, "work": 480, "commute": 30, "gym": 75, "cafe": 40, "childcare": 15, "shopping": 45,
}
PHONE_WEEKDAY = [
    (0, {"home": 1}, {}),
    (7, {"commute": 0.55, "childcare": 0.2, "work": 0.25}, {"home": 40}),
    (9, {"work": 1}, {}),
    (12, {"cafe": 0.7, "work": 0.3}, {"work": 50}),
    (13, {"work": 1}, {}),
    (17, {"commute": 0.5, "gym": 0.2, "shopping": 0.1, "childcare": 0.1, "home": 0.1}, {"work": 40}),
    (19, {"home": 0.8, "shopping": 0.1, "gym": 0.1}, {}),
    (22, {"home": 1}, {}),
]
PHONE_WEEKEND = [
    (0, {"home": 1}, {}),
    (9, {"home": 0.4, "shopping": 0.25, "gym": 0.15, "cafe": 0.2}, {"home": 180}),
    (18, {"home": 1}, {}),
]


def _jitter_dwell(rng: np.random.Generator, base: Mapping[str, float]) -> dict[str, float]:
    return {c: round(float(v) * rng.uniform(0.9, 1.1), 3) for c, v in base.items()}


def build_phone_preset(profiles: int = 5, seed: int = 0, override_rate: float = DEFAULT_OVERRIDE_RATE) -> Scenario:
    """Location-profile phone scenario over the twelve phone settings."""
    if not MIN_CONTEXTS <= profiles <= MAX_CONTEXTS:
        raise ProfileCountOutOfRange(f"profiles must be in 2..7, got {profiles}")
    rng = np.random.default_rng(seed)
    contexts = PHONE_CONTEXTS[:profiles]
    policy = {}
    for c in contexts:
        prof = dict(PHONE_PROFILES[c])
        prof["ScreenBrightness"] = int(prof["ScreenBrightness"] + rng.integers(-8, 9))
        policy[c] = prof
    dwell = _jitter_dwell(rng, PHONE_BASE_DWELL)
    registry = Registry((AdaptationRule(0, ("GPS",), PHONE_ACTIONS),))
    return Scenario(
        name="phone",
        registry=registry,
        contexts=contexts,
        schedule={
            "weekday": routine_schedule(contexts, PHONE_WEEKDAY, dwell),
            "weekend": routine_schedule(contexts, PHONE_WEEKEND, dwell),
        },
        policy=policy,
        defaults=dict(PHONE_DEFAULTS),
        action_ranges=dict(PHONE_RANGES),
        initial_context="home",
        override_rate=override_rate,
        overridable=("RingerVolume", "AlarmVolume", "MediaVolume", "ScreenBrightness"),
    )


HOME_CONTEXTS = ("sleep", "away", "active", "cooking", "relaxing", "exercising")
# Setpoint level 0..15 maps to 60..75 F; HouseTemp level 0..20 to 58..78 F.
HOME_POLICY = {
    "sleep": {"Setpoint": 4},
    "away": {"Setpoint": 0},
    "active": {"Setpoint": 8},
    "cooking": {"Setpoint": 6},
    "relaxing": {"Setpoint": 11},
    "exercising": {"Setpoint": 2},
}
HOME_BASE_DWELL = {"sleep": 480, "away": 420, "active": 60, "cooking": 45, "relaxing": 120, "exercising": 45}
HOME_WEEKDAY = [
    (0, {"sleep": 1}, {}),
    (6, {"active": 0.7, "cooking": 0.3}, {"sleep": 30}),
    (8, {"away": 1}, {}),
    (17, {"active": 0.4, "cooking": 0.4, "exercising": 0.2}, {"away": 30}),
    (19, {"relaxing": 0.7, "active": 0.3}, {}),
    (23, {"sleep": 1}, {}),
]
HOME_WEEKEND = [
    (0, {"sleep": 1}, {}),
    (8, {"active": 0.4, "cooking": 0.2, "exercising": 0.2, "away": 0.2}, {"sleep": 45}),
    (12, {"away": 0.4, "relaxing": 0.3, "active": 0.3}, {"away": 150}),
    (18, {"relaxing": 0.6, "cooking": 0.4}, {}),
    (23, {"sleep": 1}, {}),
]
OCCUPANCY = {c: ("away" if c == "away" else "home") for c in HOME_CONTEXTS}


def build_smart_home_preset(seed: int = 0) -> Scenario:
    """Smart-thermostat scenario: activity contexts drive the HVAC setpoint.

    House temperature is a coarse exogenous series that creeps one level per
    half hour toward the setpoint plus an outdoor daily swing.
    """
    rng = np.random.default_rng(seed)
    dwell = _jitter_dwell(rng, HOME_BASE_DWELL)
    registry = Registry((AdaptationRule(0, ("ActivityRecognition",), ("Setpoint", "HouseTemp")),))
    return Scenario(
        name="smart_home",
        registry=registry,
        contexts=HOME_CONTEXTS,
        schedule={
            "weekday": routine_schedule(HOME_CONTEXTS, HOME_WEEKDAY, dwell),
            "weekend": routine_schedule(HOME_CONTEXTS, HOME_WEEKEND, dwell),
        },
        policy={c: dict(p) for c, p in HOME_POLICY.items()},
        defaults={"Setpoint": 8, "HouseTemp": 10},
        action_ranges={"Setpoint": 15, "HouseTemp": 20},
        initial_context="sleep",
        override_rate=0.1,
        overridable=("Setpoint",),
        exogenous={"HouseTemp": {"follows": "Setpoint", "every": 30, "offset": 2, "outdoor_amplitude": 2}},
        time_features=True,
        groups={"occupancy": dict(OCCUPANCY)},
    )


PRESETS = {
    "phone": lambda seed=0, **kw: build_phone_preset(seed=seed, **kw),
    "smart_home": lambda seed=0, **kw: build_smart_home_preset(seed=seed),
}


def collapse_contexts(series: TickSeries, mapping: Mapping[str, str]) -> TickSeries:
    """Relabel contexts through ``mapping`` (e.g. activities to home/away)."""
    labels = [mapping.get(c, c) for c in series.alphabet]
    alphabet = tuple(dict.fromkeys(labels))
    remap = np.array([alphabet.index(lbl) for lbl in labels], dtype=np.int64)
    return TickSeries(alphabet, remap[series.context_idx], series.actions, series.levels)


# -- simulation ----------------------------------------------------------------


@dataclass
class SimOutput:
    series: TickSeries
    log: list[AdaptationRecord]
    overrides: list[tuple[int, str, int]]

    def to_json(self) -> dict:
        return {
            "log": [r.to_json() for r in self.log],
            "overrides": [list(o) for o in self.overrides],
            "truth": self.series.truth,
            "levels": self.series.levels.tolist(),
            "actions": list(self.series.actions),
        }


def day_type(t: int) -> str:
    return "weekday" if (t // MINUTES_PER_DAY) % 7 < 5 else "weekend"


def context_timeline(sc: Scenario, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the per-tick context index sequence of the routine chain."""
    k = len(sc.contexts)
    hazard = {}
    cum = {}
    hour_bucket = {}
    for dt in DAY_TYPES:
        s = sc.schedule[dt]
        hazard[dt] = (1.0 / s.dwell).tolist()
        cum[dt] = np.cumsum(s.transitions, axis=2)
        cum[dt][:, :, -1] = 1.0
        hour_bucket[dt] = s.hour_to_bucket().tolist()
    u_leave = rng.random(horizon).tolist()
    u_next = rng.random(horizon).tolist()
    ctx = np.empty(horizon, dtype=np.int64)
    c = sc.contexts.index(sc.initial_context)
    if horizon:
        ctx[0] = c
    for t in range(1, horizon):
        dt = "weekday" if (t // MINUTES_PER_DAY) % 7 < 5 else "weekend"
        b = hour_bucket[dt][(t % MINUTES_PER_DAY) // 60]
        if u_leave[t] < hazard[dt][b][c]:
            row = cum[dt][b, c]
            c = min(int(np.searchsorted(row, u_next[t], side="right")), k - 1)
        ctx[t] = c
    return ctx


def simulate(sc: Scenario, days: int, seed: int = 0) -> SimOutput:
    """Generate ``days`` x 1440 ticks of context, adaptations and overrides.

    A record is emitted for every rule at t=0 and at every tick where the
    context changes, applying the context's profile over the current vector.
    """
    if days < 1:
        raise ScenarioError("days must be >= 1")
    horizon = days * MINUTES_PER_DAY
    sched_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    ctx = context_timeline(sc, horizon, np.random.default_rng(sched_ss))
    actions = sc.actions
    col = {a: j for j, a in enumerate(actions)}
    change = np.flatnonzero(np.diff(ctx, prepend=-1) != 0)
    change_set = set(change.tolist())

    # exogenous and manual setting changes, keyed by tick
    events: dict[int, list[tuple[str, str, int]]] = {}
    nrng = np.random.default_rng(noise_ss)
    if sc.override_rate > 0 and sc.overridable:
        mean_gap = 60.0 / sc.override_rate
        t = nrng.exponential(mean_gap)
        while t < horizon:
            a = sc.overridable[int(nrng.integers(len(sc.overridable)))]
            step = 1 if nrng.random() < 0.5 else -1
            events.setdefault(int(t), []).append(("manual", a, step))
            t += nrng.exponential(mean_gap)
    for a, spec in sc.exogenous.items():
        every = int(spec.get("every", 30))
        for t in range(every, horizon, every):
            events.setdefault(t, []).append(("exogenous", a, 0))

    cur = np.array([sc.defaults[a] for a in actions], dtype=np.int64)
    log: list[AdaptationRecord] = []
    overrides: list[tuple[int, str, int]] = []
    levels = np.empty((horizon, len(actions)), dtype=np.int64)
    ticks = sorted(change_set | set(events))
    ticks.append(horizon)
    for i, t in enumerate(ticks[:-1]):
        if t in change_set:
            cname = sc.contexts[ctx[t]]
            for a, v in sc.policy.get(cname, {}).items():
                cur[col[a]] = v
            for rule in sc.registry.rules:
                vec = {a: int(cur[col[a]]) for a in rule.actions}
                log.append(AdaptationRecord(t, rule.rule_id, cname, vec))
        else:
            for kind, a, step in events[t]:
                j = col[a]
                hi = sc.action_ranges[a]
                if kind == "manual":
                    new = min(max(cur[j] + step, 0), hi)
                else:
                    spec = sc.exogenous[a]
                    tod = (t % MINUTES_PER_DAY) / MINUTES_PER_DAY
                    swing = round(spec.get("outdoor_amplitude", 0) * np.cos(2 * np.pi * (tod - 15 / 24)))
                    target = cur[col[spec["follows"]]] + spec.get("offset", 0) + swing
                    new = min(max(cur[j] + int(np.sign(target - cur[j])), 0), hi)
                if new != cur[j]:
                    cur[j] = new
                    overrides.append((t, a, int(new)))
        levels[t:ticks[i + 1]] = cur
    series = TickSeries(sc.contexts, ctx, actions, levels)
    return SimOutput(series, log, overrides)


def rule_series(out: SimOutput, sc: Scenario, rule_id: int = 0) -> TickSeries:
    """Ground truth restricted to one rule's actions."""
    rule = sc.registry.rule(rule_id)
    return TickSeries(out.series.alphabet, out.series.context_idx, rule.actions, out.series.select(rule.actions))


def expected_occupancy(sc: Scenario, days: int | None = None, weeks: int = 6) -> np.ndarray:
    """Long-run fraction of ticks spent in each context.

    Propagates the per-minute distribution of the routine chain exactly;
    with ``days`` it averages over that horizon from the initial context,
    otherwise over one week after ``weeks`` of burn-in.
    """
    k = len(sc.contexts)
    mats = {}
    for dt in DAY_TYPES:
        s = sc.schedule[dt]
        h = 1.0 / s.dwell
        mats[dt] = [np.diag(1 - h[b]) + h[b][:, None] * s.transitions[b] for b in range(len(s.bucket_starts))]
    buckets = {dt: sc.schedule[dt].hour_to_bucket() for dt in DAY_TYPES}
    week = 7 * MINUTES_PER_DAY
    pi = np.zeros(k)
    pi[sc.contexts.index(sc.initial_context)] = 1.0
    total = np.zeros(k)
    horizon = days * MINUTES_PER_DAY if days else (weeks + 1) * week
    for t in range(horizon):
        if t > 0:
            dt = day_type(t)
            pi = pi @ mats[dt][buckets[dt][(t % MINUTES_PER_DAY) // 60]]
        if days or t >= weeks * week:
            total += pi
    return total / total.sum()
