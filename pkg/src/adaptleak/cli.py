"""Command-line entry point.

Every sub-command reads and writes the module file formats, so stages can
be chained through files as well as run together with ``experiment``.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .attacker import AttackOptions, attack_pipeline, write_report
from .core import read_levels_csv, read_records, read_series_csv, write_levels_csv, write_records, write_series_csv
from .errors import AdaptLeakError, ConfigError, RegistryError, ScenarioError
from .harness import (
    ExperimentConfig,
    build_scenario,
    load_report,
    log_timings,
    run_experiment,
    summarize,
    sweep,
)
from .infodetect import (
    DetectionConfig,
    SuspicionLedger,
    classify_observers,
    dump_json,
    note_observation,
    tables_to_json,
    update_mi_tables,
)
from .mitigation import Ladder, effective_mi, make_method, serve_timeline, write_audit
from .registry import init_mi_tables, parse_registry, serialize_registry
from .scenario import simulate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "days", None) is not None:
        over["days"] = args.days
    if getattr(args, "preset", None):
        over["scenario"] = {"preset": args.preset}
    return replace(cfg, **over) if over else cfg


def _read_registry(path):
    try:
        return parse_registry(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read registry {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = build_scenario(cfg.scenario, cfg.seed)
    sim = simulate(sc, cfg.days, cfg.seed)
    out = _out(args.out)
    write_records(out / "trace.jsonl", sim.log)
    write_series_csv(out / "series.csv", sim.series)
    (out / "registry.xml").write_text(serialize_registry(sc.registry), encoding="utf-8")
    sc.dump(out / "scenario.json")
    with (out / "overrides.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for t, a, v in sim.overrides:
            fh.write(json.dumps({"t": t, "action": a, "level": v}, separators=(",", ":")) + "\n")
    print(f"simulated {cfg.days} days ({sim.series.horizon} ticks, {len(sim.log)} records) -> {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    truth = read_series_csv(args.series)
    if args.observed:
        names, observed = read_levels_csv(args.observed)
    else:
        names = tuple(args.actions.split(",")) if args.actions else truth.actions
        unknown = [a for a in names if a not in truth.actions]
        if unknown:
            raise ConfigError(f"unknown actions {unknown}")
        observed = truth.select(names)
    opts = AttackOptions(
        feature_selection=args.features,
        time_features=args.time_features,
        restarts=args.restarts,
        seed=args.seed or 0,
    )
    rep = attack_pipeline(observed, names, truth, opts)
    out = _out(args.out)
    write_report(out / "attack.json", rep)
    with (out / "predicted.csv").open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,predicted,truth\n")
        for t, (p, c) in enumerate(zip(rep.predicted, truth.truth)):
            fh.write(f"{t},{p},{c}\n")
    print(f"accuracy {rep.accuracy:.3f} (baseline {rep.baseline:.3f}), features {rep.dominant_features}, k={rep.chosen_k}")
    return EXIT_OK


def cmd_detect(args) -> int:
    registry = _read_registry(args.registry)
    series = read_series_csv(args.series)
    missing = [a for a in registry.actions if a not in series.actions]
    if missing:
        raise ConfigError(f"series lacks registry actions {missing}")
    tables = update_mi_tables(init_mi_tables(registry), series, registry)
    out = _out(args.out)
    dump_json(tables_to_json(tables), out / "tables.json")
    if args.observers:
        try:
            spec = json.loads(Path(args.observers).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read observers {args.observers}: {exc}") from exc
        ledger = SuspicionLedger()
        for obs in spec:
            for a in obs["actions"]:
                rid = registry.owner_of(a)
                if rid is None:
                    raise ConfigError(f"observer {obs['id']!r} reads unprotected action {a!r}")
                note_observation(ledger, obs["id"], rid, a, tables)
        det = DetectionConfig(alarm_threshold=args.threshold)
        flagged = classify_observers(ledger, det)
        result = ledger.to_json(tables)
        result["flagged"] = sorted(flagged)
        result["threshold"] = det.alarm_threshold
        dump_json(result, out / "ledger.json")
        for obs in sorted(ledger.entries):
            mark = "  [flagged]" if obs in flagged else ""
            print(f"{obs}: {ledger.score(obs):.3f}{mark}")
    return EXIT_OK


def cmd_mitigate(args) -> int:
    registry = _read_registry(args.registry)
    series = read_series_csv(args.series)
    log = read_records(args.trace)
    rule = registry.rule(args.rule)
    actions = tuple(args.actions.split(",")) if args.actions else rule.actions
    method = make_method(args.method, args.magnitude)
    delay = args.delay
    if delay is not None and delay != "random":
        delay = int(delay)
    served, med = serve_timeline(series, log, rule, method, actions, observer=args.observer,
                                 seed=args.seed or 0, delay=delay, ladder=Ladder())
    out = _out(args.out)
    write_levels_csv(out / "served.csv", actions, served)
    write_audit(out / "audit.jsonl", med.audit)
    mi = effective_mi(served, series)
    print(f"effective MI {mi:.4f} over {series.horizon} ticks -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    timings: dict = {}
    rep = run_experiment(cfg, args.out, timings)
    log_timings(timings)
    sys.stdout.write(summarize(rep))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = None
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --values: {exc}") from exc
    rows = sweep(cfg, args.axis, values, args.out)
    for r in rows:
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_report(args) -> int:
    sys.stdout.write(summarize(load_report(args.report)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptleak", description="Context leakage through observable adaptations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment configuration (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--days", type=int)
        sp.add_argument("--preset", help="scenario preset (overrides the configuration)")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("simulate", help="generate a synthetic trace")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("attack", help="cluster an observed series against ground truth")
    sp.add_argument("--series", required=True, help="ground-truth series CSV")
    sp.add_argument("--observed", help="observed levels CSV (default: the true levels)")
    sp.add_argument("--actions", help="comma-separated actions when --observed is absent")
    sp.add_argument("--features", choices=("greedy", "all"), default="greedy")
    sp.add_argument("--time-features", action="store_true")
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("detect", help="build MI tables and score observers")
    sp.add_argument("--series", required=True)
    sp.add_argument("--registry", required=True)
    sp.add_argument("--observers", help='JSON list of {"id": ..., "actions": [...]}')
    sp.add_argument("--threshold", type=float, default=DetectionConfig().alarm_threshold)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("mitigate", help="serve a series through one mitigation method")
    sp.add_argument("--series", required=True)
    sp.add_argument("--trace", required=True)
    sp.add_argument("--registry", required=True)
    sp.add_argument("--rule", type=int, default=0)
    sp.add_argument("--actions")
    sp.add_argument("--method", default="feature_mask",
                    choices=("none", "delay", "suppression", "row_mask", "feature_mask"))
    sp.add_argument("--magnitude", type=float, default=0.8)
    sp.add_argument("--delay", help='ticks, or "random"')
    sp.add_argument("--observer", default="observer")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mitigate)

    sp = sub.add_parser("experiment", help="full simulate/attack/detect/mitigate run")
    common(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("sweep", help="sweep one parameter")
    common(sp)
    sp.add_argument("--axis", required=True, choices=("threshold", "mask_p", "suppress_k"))
    sp.add_argument("--values", help="comma-separated axis values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="summarize a report.json")
    sp.add_argument("report")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RegistryError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AdaptLeakError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
