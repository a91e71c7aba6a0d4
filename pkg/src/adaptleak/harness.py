"""Experiment orchestration: simulate, observe, detect, mitigate, report.

One run walks the simulated horizon tick by tick.  Observers poll their
actions through the per-rule mediators; at the end of every detection
window the MI tables are refreshed from the ground truth seen so far,
observers are rescored, flagged observers are put under mitigation, and
already-mitigated ones get a controller step.  All emitted files are a
pure function of the configuration and seed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .attacker import AttackOptions, attack_pipeline
from .core import MINUTES_PER_DAY, TickSeries, write_records
from .errors import AdaptLeakError, ConfigError, DegeneratePopulation, SchemaMismatch
from .infodetect import (
    DetectionConfig,
    SuspicionLedger,
    classify_observers,
    fp_fn_sweep,
    note_observation,
    subset_scores,
    tables_to_json,
)
from .mitigation import Ladder, Mediator, effective_mi, make_method, write_audit
from .registry import MITable, Registry, init_mi_tables
from .scenario import PRESETS, Scenario, SimOutput, collapse_contexts, simulate

SWEEP_AXES = ("threshold", "mask_p", "suppress_k")
MODES = ("off", "static", "adaptive")


@dataclass(frozen=True)
class ObserverSpec:
    id: str
    actions: tuple[str, ...]
    cadence: int = 1

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ConfigError(f"observer {self.id!r} queries no actions")
        if len(set(self.actions)) != len(self.actions):
            raise ConfigError(f"observer {self.id!r} repeats an action")
        if self.cadence < 1:
            raise ConfigError(f"observer {self.id!r}: cadence must be >= 1")


@dataclass(frozen=True)
class MitigationConfig:
    mode: str = "off"
    method: str = "feature_mask"  # used by static mode
    magnitude: float = 0.8
    delay: Any = None  # None, "random" or a tick count
    auto_consent: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mitigation mode must be one of {MODES}")
        if self.delay is not None and self.delay != "random":
            if isinstance(self.delay, bool) or not isinstance(self.delay, int) or self.delay < 0:
                raise ConfigError("delay must be null, \"random\" or a non-negative integer")


@dataclass(frozen=True)
class AttackConfig:
    feature_selection: str = "greedy"
    restarts: int = 10
    sample_size: int | None = 2000
    eval_tail_days: int = 7
    window_attacks: bool = True
    truth_groups: str | None = None  # evaluate against a scenario grouping

    def __post_init__(self):
        if self.feature_selection not in ("greedy", "all"):
            raise ConfigError("feature_selection must be 'greedy' or 'all'")
        if self.restarts < 1 or self.eval_tail_days < 1:
            raise ConfigError("restarts and eval_tail_days must be >= 1")


@dataclass(frozen=True)
class PopulationConfig:
    size: int = 20
    thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(21))

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(x) for x in self.thresholds))
        if self.size < 2:
            raise ConfigError("population size must be >= 2")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Mapping = field(default_factory=lambda: {"preset": "phone", "profiles": 5})
    days: int = 28
    seed: int = 0
    observers: tuple[ObserverSpec, ...] = ()
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    ladder: Ladder = field(default_factory=Ladder)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    population: PopulationConfig | None = None
    sweep: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.days, bool) or not isinstance(self.days, int) or self.days < 1:
            raise ConfigError("days must be an integer >= 1")
        ids = [o.id for o in self.observers]
        if len(set(ids)) != len(ids):
            raise ConfigError("observer ids must be unique")
        for axis, vals in self.sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if not vals:
                raise ConfigError(f"sweep axis {axis!r} has no values")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("configuration must be a JSON object")
        known = {"scenario", "days", "seed", "observers", "detection", "ladder",
                 "mitigation", "attack", "population", "sweep"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        try:
            kw: dict[str, Any] = {}
            for key in ("scenario", "days", "seed"):
                if key in d:
                    kw[key] = d[key]
            if "observers" in d:
                kw["observers"] = tuple(
                    ObserverSpec(o["id"], tuple(o["actions"]), int(o.get("cadence", 1))) for o in d["observers"]
                )
            if "detection" in d:
                kw["detection"] = DetectionConfig(**d["detection"])
            if "ladder" in d:
                kw["ladder"] = Ladder(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["ladder"].items()})
            if "mitigation" in d:
                kw["mitigation"] = MitigationConfig(**d["mitigation"])
            if "attack" in d:
                kw["attack"] = AttackConfig(**d["attack"])
            if d.get("population") is not None:
                kw["population"] = PopulationConfig(**d["population"])
            if "sweep" in d:
                kw["sweep"] = {k: tuple(v) for k, v in d["sweep"].items()}
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, KeyError, ValueError, AdaptLeakError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = dict(self.scenario)
        d["observers"] = [{"id": o.id, "actions": list(o.actions), "cadence": o.cadence} for o in self.observers]
        d["sweep"] = {k: list(v) for k, v in sorted(self.sweep.items())}
        return json.loads(json.dumps(d))


# -- setup ----------------------------------------------------------------------


def build_scenario(spec: Mapping, seed: int) -> Scenario:
    """Preset by name (``{"preset": "phone", "profiles": 5}``), inline JSON or a file path."""
    spec = dict(spec)
    try:
        if "inline" in spec:
            sc = Scenario.from_json(spec["inline"])
        elif "path" in spec:
            sc = Scenario.load(spec["path"])
        else:
            name = spec.pop("preset", "phone")
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
            sc = PRESETS[name](seed=int(spec.pop("seed", seed)), **spec)
    except ConfigError:
        raise
    except (TypeError, KeyError, ValueError, OSError, AdaptLeakError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    return sc


def check_observers(observers: Sequence[ObserverSpec], registry: Registry) -> None:
    known = set(registry.actions)
    for o in observers:
        bad = [a for a in o.actions if a not in known]
        if bad:
            raise ConfigError(f"observer {o.id!r} queries unknown actions {bad}")


def make_population(registry: Registry, size: int, seed: int) -> tuple[ObserverSpec, ...]:
    """Observers reading random 1-3 action subsets, so informativeness varies."""
    rng = np.random.default_rng([seed, 0x909])
    acts = registry.actions
    out = []
    for i in range(size):
        n = min(1 + i % 3, len(acts))
        pick = sorted(rng.choice(len(acts), n, replace=False).tolist())
        out.append(ObserverSpec(f"obs{i:02d}", tuple(acts[j] for j in pick), 1))
    return tuple(out)


def held_view(series: TickSeries, actions: Sequence[str], cadence: int) -> np.ndarray:
    """Unmitigated per-tick view of an observer polling every ``cadence`` ticks."""
    lv = series.select(actions)
    if cadence == 1:
        return lv.copy()
    idx = (np.arange(series.horizon) // cadence) * cadence
    return lv[idx]


class _Tables:
    """MI tables refreshed from a running count of distinct (context, row) samples."""

    def __init__(self, registry: Registry, series: TickSeries):
        self.registry = registry
        self.series = series
        self.tables: dict[int, MITable] = init_mi_tables(registry)
        self._cols = {r.rule_id: [series.actions.index(a) for a in r.actions] for r in registry.rules}
        self._counts: dict[int, dict[tuple, int]] = {r.rule_id: {} for r in registry.rules}
        self._seen = 0

    def refresh(self, stop: int) -> None:
        ctx = self.series.context_idx[self._seen:stop]
        for rule in self.registry.rules:
            cnt = self._counts[rule.rule_id]
            joint = np.column_stack([ctx, self.series.levels[self._seen:stop, self._cols[rule.rule_id]]])
            rows, c = np.unique(joint, axis=0, return_counts=True)
            for r, n in zip(map(tuple, rows.tolist()), c.tolist()):
                cnt[r] = cnt.get(r, 0) + n
            keys = sorted(cnt)
            arr = np.array(keys, dtype=np.int64)
            w = np.array([cnt[k] for k in keys], dtype=float)
            values = subset_scores(arr[:, 0], arr[:, 1:], w)
            self.tables[rule.rule_id] = MITable(rule.rule_id, rule.actions, values)
        self._seen = stop


# -- the event loop -----------------------------------------------------------------


@dataclass
class RunState:
    scenario: Scenario
    sim: SimOutput
    truth: TickSeries
    tables: dict[int, MITable]
    ledger: SuspicionLedger
    served: dict[str, np.ndarray]
    mediators: dict[int, Mediator]
    windows: list[dict]


def _attack(cfg: ExperimentConfig, observed, names, truth, t0, time_features) -> dict:
    a = cfg.attack
    opts = AttackOptions(a.feature_selection, time_features, a.restarts, a.sample_size, cfg.seed)
    return attack_pipeline(observed, names, truth, opts, t0=t0).to_json()


def run_loop(cfg: ExperimentConfig, observers: Sequence[ObserverSpec], timings: dict | None = None) -> RunState:
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    sc = build_scenario(cfg.scenario, cfg.seed)
    registry = sc.registry
    check_observers(observers, registry)
    sim = simulate(sc, cfg.days, cfg.seed)
    series = sim.series
    truth = series
    if cfg.attack.truth_groups:
        if cfg.attack.truth_groups not in sc.groups:
            raise ConfigError(f"scenario has no grouping {cfg.attack.truth_groups!r}")
        truth = collapse_contexts(series, sc.groups[cfg.attack.truth_groups])
    timings["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    H = series.horizon
    mediators = {r.rule_id: Mediator(r, series, cfg.seed) for r in registry.rules}
    tables = _Tables(registry, series)
    ledger = SuspicionLedger()
    det = cfg.detection
    mit = cfg.mitigation
    events = sorted(sim.log, key=lambda r: (r.t, r.rule_id))
    owner = {a: registry.owner_of(a) for a in registry.actions}
    served = {o.id: np.zeros((H, len(o.actions)), dtype=np.int64) for o in observers}
    routes = {o.id: [(a, mediators[owner[a]].mediate_get, owner[a]) for a in o.actions] for o in observers}
    seen: dict[str, set] = {o.id: set() for o in observers}
    rules_of = {o.id: sorted({owner[a] for a in o.actions}) for o in observers}

    if mit.mode == "static":
        method = make_method(mit.method, mit.magnitude)
        for o in observers:
            for rid in rules_of[o.id]:
                mediators[rid].activate(o.id, method, delay=mit.delay, ladder=cfg.ladder, t=0)

    windows: list[dict] = []
    win_start = 0
    ei = 0
    last: dict[str, list] = {}
    for t in range(H):
        while ei < len(events) and events[ei].t <= t:
            mediators[events[ei].rule_id].on_adaptation_event(events[ei])
            ei += 1
        for o in observers:
            if t % o.cadence == 0:
                row = [get(o.id, a, t) for a, get, _ in routes[o.id]]
                last[o.id] = row
                s = seen[o.id]
                if len(s) < len(row):
                    for a, _, rid in routes[o.id]:
                        if a not in s:
                            s.add(a)
                            note_observation(ledger, o.id, rid, a, tables.tables)
            served[o.id][t] = last[o.id]
        if (t + 1) % det.refresh_every == 0 or t == H - 1:
            tables.refresh(t + 1)
            ledger.rescore(tables.tables)
            flagged = classify_observers(ledger, det)
            for o in observers:
                steps = []
                for rid in rules_of[o.id]:
                    med = mediators[rid]
                    entry = ledger.get(o.id, rid)
                    if mit.mode != "adaptive":
                        continue
                    if med.is_mediated(o.id):
                        cols = [j for j, a in enumerate(o.actions) if owner[a] == rid]
                        eff = effective_mi(served[o.id][win_start:t + 1, cols], series.window(win_start, t + 1))
                        steps.append(med.step(o.id, cfg.ladder, eff, det.alarm_threshold, t + 1))
                    elif mit.auto_consent and o.id in flagged and entry is not None and entry.score > det.alarm_threshold:
                        med.activate(o.id, None, delay=mit.delay, ladder=cfg.ladder, t=t + 1)
                        steps.append("activate")
                windows.append({
                    "observer": o.id,
                    "window": len(windows) // max(len(observers), 1),
                    "start": win_start,
                    "stop": t + 1,
                    "suspicion": ledger.score(o.id),
                    "flagged": o.id in flagged,
                    "events": steps,
                })
            win_start = t + 1
    timings["event_loop"] = time.perf_counter() - t0
    return RunState(sc, sim, truth, tables.tables, ledger, served, mediators, windows)


def _window_metrics(cfg, state: RunState, observers, timings) -> None:
    t0 = time.perf_counter()
    by_id = {o.id: o for o in observers}
    tf = state.scenario.time_features
    for row in state.windows:
        o = by_id[row["observer"]]
        lo, hi = row["start"], row["stop"]
        view = state.served[o.id][lo:hi]
        truth_w = state.truth.window(lo, hi)
        row["effective_mi"] = effective_mi(view, truth_w)
        if cfg.attack.window_attacks and hi - lo >= 7:
            rep = _attack(cfg, view, o.actions, truth_w, lo, tf)
            row["accuracy"], row["baseline"] = rep["accuracy"], rep["baseline"]
        else:
            row["accuracy"] = row["baseline"] = None
    timings["window_metrics"] = time.perf_counter() - t0


def _mitigation_summary(state: RunState, obs_id: str) -> dict | None:
    states = [(rid, m.states[obs_id]) for rid, m in sorted(state.mediators.items()) if obs_id in m.states]
    if not states:
        return None
    history = [
        {k: e[k] for k in ("t", "method", "magnitude", "delay", "event")} | {"rule": rid}
        for rid, m in sorted(state.mediators.items())
        for e in m.audit
        if e["observer"] == obs_id and e["event"] != "serve"
    ]
    return {
        "rules": {str(rid): {"method": st.method.name, "magnitude": st.method.magnitude,
                             "delay": st.delay, "exhausted": st.exhausted} for rid, st in states},
        "history": history,
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, timings: dict | None = None) -> dict:
    """Run one experiment; writes report.json, results.csv, trace.jsonl, audit.jsonl when ``out_dir`` is set."""
    timings = {} if timings is None else timings
    observers = tuple(cfg.observers)
    state = run_loop(cfg, observers, timings)
    _window_metrics(cfg, state, observers, timings)

    t0 = time.perf_counter()
    H = state.sim.series.horizon
    tf = state.scenario.time_features
    tail = min(H, cfg.attack.eval_tail_days * MINUTES_PER_DAY)
    obs_reports = []
    for o in observers:
        before = _attack(cfg, held_view(state.sim.series, o.actions, o.cadence), o.actions, state.truth, 0, tf)
        mitig = _mitigation_summary(state, o.id)
        after = None
        if mitig is not None:
            after = _attack(cfg, state.served[o.id][H - tail:], o.actions, state.truth.window(H - tail, H), H - tail, tf)
        rows = [w for w in state.windows if w["observer"] == o.id]
        obs_reports.append({
            "id": o.id,
            "actions": list(o.actions),
            "cadence": o.cadence,
            "flagged": bool(rows and rows[-1]["flagged"]),
            "final_suspicion": state.ledger.score(o.id),
            "before": before,
            "after": after,
            "suspicion": [w["suspicion"] for w in rows],
            "effective_mi": [w["effective_mi"] for w in rows],
            "accuracy": [w["accuracy"] for w in rows],
            "mitigation": mitig,
        })
    timings["attack"] = time.perf_counter() - t0

    report = {
        "scenario": state.scenario.name,
        "days": cfg.days,
        "seed": cfg.seed,
        "horizon": H,
        "baseline": obs_reports[0]["before"]["baseline"] if obs_reports else None,
        "observers": obs_reports,
        "tables": tables_to_json(state.tables)["tables"],
        "config": cfg.to_dict(),
    }
    if cfg.population is not None:
        report["population"] = population_study(cfg)
    if out_dir is not None:
        write_outputs(Path(out_dir), report, state)
    return report


def write_outputs(out: Path, report: dict, state: RunState) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (out / "results.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["observer", "window", "start", "stop", "suspicion", "flagged",
                    "effective_mi", "accuracy", "baseline", "events"])
        for r in state.windows:
            w.writerow([r["observer"], r["window"], r["start"], r["stop"], _fmt(r["suspicion"]),
                        int(r["flagged"]), _fmt(r["effective_mi"]), _fmt(r["accuracy"]),
                        _fmt(r["baseline"]), ";".join(r["events"])])
    write_records(out / "trace.jsonl", state.sim.log)
    audit = []
    for rid, med in sorted(state.mediators.items()):
        audit.extend(dict(e, rule=rid) for e in med.audit)
    audit.sort(key=lambda e: (e["t"], e["rule"], e["observer"]))
    write_audit(out / "audit.jsonl", audit)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


# -- population study and sweeps ---------------------------------------------------------


def _population_member(args) -> tuple[str, float, float]:
    cfg, spec, observed, truth, tf = args
    rep = _attack(cfg, observed, spec.actions, truth, 0, tf)
    return spec.id, rep["accuracy"], rep["baseline"]


def population_study(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Score a synthetic population; malicious means its unmitigated attack beats baseline."""
    pop_cfg = cfg.population or PopulationConfig()
    sc = build_scenario(cfg.scenario, cfg.seed)
    observers = make_population(sc.registry, pop_cfg.size, cfg.seed)
    base = replace(cfg, observers=observers, mitigation=MitigationConfig(), population=None)
    state = run_loop(base, observers)
    tf = state.scenario.time_features
    jobs = [(base, o, held_view(state.sim.series, o.actions, 1), state.truth, tf) for o in observers]
    results = _map(_population_member, jobs, workers)
    members = []
    scores, malicious = {}, {}
    for o, (oid, acc, bl) in zip(observers, results):
        scores[oid] = state.ledger.score(oid)
        malicious[oid] = acc > bl
        members.append({"id": oid, "actions": list(o.actions), "score": scores[oid],
                        "accuracy": acc, "baseline": bl, "malicious": malicious[oid]})
    try:
        curve = fp_fn_sweep(scores, malicious, pop_cfg.thresholds)
    except DegeneratePopulation as exc:
        curve = []
        err = str(exc)
    else:
        err = None
    return {
        "members": members,
        "curve": [{"threshold": th, "fp": fp, "fn": fn} for th, fp, fn in curve],
        "error": err,
    }


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get("ADAPTLEAK_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise ConfigError(f"ADAPTLEAK_THREADS must be an integer, got {env!r}") from None


def _map(fn, jobs, workers):
    n = _workers(workers)
    if n == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _sweep_point(args) -> dict:
    cfg, axis, value = args
    name = "suppression" if axis == "suppress_k" else cfg.mitigation.method
    if axis == "mask_p" and name not in ("row_mask", "feature_mask"):
        name = "feature_mask"
    mit = MitigationConfig(mode="static", method=name, magnitude=value, delay=cfg.mitigation.delay)
    run_cfg = replace(cfg, mitigation=mit, population=None)
    state = run_loop(run_cfg, run_cfg.observers)
    tf = state.scenario.time_features
    mis, accs, bls = [], [], []
    for o in run_cfg.observers:
        view = state.served[o.id]
        mis.append(effective_mi(view, state.truth))
        rep = _attack(run_cfg, view, o.actions, state.truth, 0, tf)
        accs.append(rep["accuracy"])
        bls.append(rep["baseline"])
    return {"axis": axis, "value": value, "method": name, "mi": float(np.mean(mis)),
            "accuracy": float(np.mean(accs)), "baseline": float(np.mean(bls))}


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence | None = None, out_dir=None,
          workers: int | None = None) -> list[dict]:
    """One row per axis value; every point is an independent run with the configured seed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values if values is not None else cfg.sweep.get(axis, ()))
    if not values:
        raise ConfigError(f"no values for sweep axis {axis!r}")
    if axis == "threshold":
        pop_cfg = replace(cfg.population or PopulationConfig(), thresholds=tuple(float(v) for v in values))
        study = population_study(replace(cfg, population=pop_cfg), workers)
        if study["error"]:
            raise DegeneratePopulation(study["error"])
        rows = [{"axis": axis, "value": c["threshold"], "fp": c["fp"], "fn": c["fn"]} for c in study["curve"]]
        cols = ["axis", "value", "fp", "fn"]
    else:
        if not cfg.observers:
            raise ConfigError("sweep needs at least one observer")
        cast = int if axis == "suppress_k" else float
        rows = _map(_sweep_point, [(cfg, axis, cast(v)) for v in values], workers)
        cols = ["axis", "value", "method", "mi", "accuracy", "baseline"]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        (out / f"sweep_{axis}.csv").write_text(buf.getvalue(), encoding="utf-8")
    return rows


# -- summary -------------------------------------------------------------------------


def load_report(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaMismatch(f"cannot read report {path}: {exc}") from exc
    try:
        rep = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(rep, dict) or not isinstance(rep.get("observers"), list):
        raise SchemaMismatch(f"{path}: missing observer list")
    for o in rep["observers"]:
        if not isinstance(o, dict) or not {"id", "before", "final_suspicion"} <= set(o):
            raise SchemaMismatch(f"{path}: malformed observer entry")
    return rep


def summarize(rep: dict) -> str:
    lines = [f"scenario {rep.get('scenario', '?')}, {rep.get('days', '?')} days, seed {rep.get('seed', '?')}"]
    if not rep["observers"]:
        lines.append("no observers")
    for o in rep["observers"]:
        b = o["before"]
        lines.append("")
        lines.append(f"observer {o['id']} ({', '.join(o.get('actions', []))})")
        lines.append(f"  accuracy before: {b['accuracy']:.3f} (baseline {b['baseline']:.3f}, "
                     f"{100 * (b['accuracy'] - b['baseline']):+.1f} points)")
        if o.get("after"):
            a = o["after"]
            lines.append(f"  accuracy after:  {a['accuracy']:.3f} (baseline {a['baseline']:.3f}, "
                         f"{100 * (a['accuracy'] - a['baseline']):+.1f} points)")
        lines.append(f"  final suspicion: {o['final_suspicion']:.3f}" + ("  [flagged]" if o.get("flagged") else ""))
        mit = o.get("mitigation")
        if mit:
            for e in mit["history"]:
                lines.append(f"  t={e['t']:>6} rule {e['rule']}: {e['event']} -> {e['method']} {e['magnitude']}"
                             + (f" (delay {e['delay']})" if e.get("delay") else ""))
        else:
            lines.append("  no mitigation")
    pop = rep.get("population")
    if pop and pop.get("curve"):
        best = min(pop["curve"], key=lambda c: (c["fp"] + c["fn"], c["threshold"]))
        lines.append("")
        lines.append(f"population of {len(pop['members'])}: best threshold {best['threshold']:.2f} "
                     f"(FP {best['fp']:.2f}, FN {best['fn']:.2f})")
    return "\n".join(lines) + "\n"


def log_timings(timings: Mapping[str, float], stream=None) -> None:
    stream = stream or sys.stderr
    for k, v in timings.items():
        print(f"[timing] {k}: {v:.2f}s", file=stream)
