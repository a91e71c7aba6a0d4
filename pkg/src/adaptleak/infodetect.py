"""Information-based detection.

Mutual information between the true context and every subset of a rule's
actions is estimated per tick with the plug-in (maximum-likelihood)
estimator in bits, then normalized by the context entropy so scores live
in [0, 1].  Observers are scored by the cumulative set of actions they have
read, never by how often they read them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core import TickSeries
from .errors import (
    DegeneratePopulation,
    EmptyHistogram,
    NotADistribution,
    NotAProtectedGetter,
)
from .registry import MITable, Registry

DEFAULT_ALARM_THRESHOLD = 0.65
DEFAULT_REFRESH_EVERY = 1440


def entropy(dist) -> float:
    """Shannon entropy in bits of a probability vector."""
    p = np.asarray(dist, dtype=float).ravel()
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise NotADistribution(f"not a probability vector: {p!r}")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _entropy_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    nz = counts[counts > 0] / n
    return float(-(nz * np.log2(nz)).sum())


@dataclass
class JointHistogram:
    """Counts over (context symbol, action-level tuple) cells.

    Rows index contexts, columns index action tuples; the label tuples are
    optional and only used for display and dict round-trips.
    """

    counts: np.ndarray
    contexts: tuple = ()
    tuples: tuple = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a 2-D array")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    def transpose(self) -> "JointHistogram":
        return JointHistogram(self.counts.T, self.tuples, self.contexts)

    @classmethod
    def from_mapping(cls, counts: Mapping[tuple, float]) -> "JointHistogram":
        ctxs = sorted({c for c, _ in counts}, key=repr)
        tups = sorted({a for _, a in counts}, key=repr)
        ci = {c: i for i, c in enumerate(ctxs)}
        ai = {a: j for j, a in enumerate(tups)}
        m = np.zeros((len(ctxs), len(tups)))
        for (c, a), v in counts.items():
            m[ci[c], ai[a]] += v
        return cls(m, tuple(ctxs), tuple(tups))

    @classmethod
    def from_samples(cls, contexts, actions, weights=None) -> "JointHistogram":
        """Build from aligned per-sample context labels and action rows."""
        c = np.asarray(contexts)
        a = np.asarray(actions)
        if a.ndim == 1:
            a = a[:, None]
        if len(c) != len(a):
            raise ValueError("contexts and actions differ in length")
        if len(c) == 0:
            return cls(np.zeros((0, 0)))
        c_vals, c_idx = np.unique(c, return_inverse=True)
        a_vals, a_idx = np.unique(a, axis=0, return_inverse=True)
        a_idx = a_idx.ravel()
        w = np.ones(len(c)) if weights is None else np.asarray(weights, dtype=float)
        m = np.bincount(c_idx * len(a_vals) + a_idx, weights=w, minlength=len(c_vals) * len(a_vals))
        return cls(m.reshape(len(c_vals), len(a_vals)), tuple(c_vals.tolist()), tuple(map(tuple, a_vals.tolist())))


def _mi_counts(m: np.ndarray) -> float:
    n = m.sum()
    if n <= 0:
        raise EmptyHistogram("histogram holds no samples")
    p = m / n
    pc = p.sum(axis=1, keepdims=True)
    pa = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float((p[nz] * np.log2(p[nz] / (pc @ pa)[nz])).sum())
    return max(mi, 0.0)


def mutual_information(joint: JointHistogram) -> float:
    """Plug-in estimate of I(C;A) in bits."""
    return _mi_counts(joint.counts)


def normalized_mi(joint: JointHistogram) -> float:
    """I(C;A) / H(C), or 0 when the context never varies."""
    m = joint.counts
    if m.sum() <= 0:
        return 0.0
    hc = _entropy_counts(m.sum(axis=1))
    if hc <= 0:
        return 0.0
    return min(1.0, _mi_counts(m) / hc)


def _dense_codes(levels: np.ndarray) -> np.ndarray:
    """Per-column dense integer codes (0..cardinality-1)."""
    codes = np.empty_like(levels, dtype=np.int64)
    for j in range(levels.shape[1]):
        codes[:, j] = np.unique(levels[:, j], return_inverse=True)[1].ravel()
    return codes


def _row_entropies(keys: np.ndarray, w: np.ndarray, n_keys: int) -> np.ndarray:
    """Entropy in bits of each row's weighted key histogram; keys in [0, n_keys)."""
    B, U = keys.shape
    off = (np.arange(B, dtype=np.int64) * n_keys)[:, None]
    cnt = np.bincount((keys + off).ravel(), weights=np.tile(w, B), minlength=B * n_keys)
    nz = np.flatnonzero(cnt)
    p = cnt.ravel()[nz] / w.sum()
    return -np.bincount(nz // n_keys, weights=p * np.log2(p), minlength=B)


def _dense_rows(pair: np.ndarray) -> np.ndarray:
    """Renumber each row's values to 0..(distinct-1), preserving equality."""
    B, U = pair.shape
    span = int(pair.max()) + 1
    flat = (pair + (np.arange(B, dtype=np.int64) * span)[:, None]).ravel()
    inv = np.unique(flat, return_inverse=True)[1].reshape(B, U)
    return inv - inv.min(axis=1, keepdims=True)


def subset_scores(context_idx: np.ndarray, levels: np.ndarray, weights=None) -> np.ndarray:
    """Normalized MI for every non-empty column subset of ``levels``.

    Returns an array indexed by bitmask (bit ``j`` selects column ``j``).
    Samples are first collapsed to distinct (context, row) pairs with
    weights.  Masks whose highest bit is ``j`` are exactly ``2**j`` plus an
    earlier mask, so each block of tuple codes is derived from the codes
    already computed, one vectorized step per column.
    ``weights`` gives per-sample multiplicities (default 1).
    """
    n_act = levels.shape[1]
    out = np.zeros(1 << n_act)
    if len(context_idx) == 0:
        return out
    joint = np.column_stack([context_idx, levels])
    rows, inv = np.unique(joint, axis=0, return_inverse=True)
    per = np.ones(len(joint)) if weights is None else np.asarray(weights, dtype=float)
    w = np.bincount(inv.ravel(), weights=per, minlength=len(rows))
    ctx = np.unique(rows[:, 0], return_inverse=True)[1].ravel()
    n_ctx = int(ctx.max()) + 1
    hc = _entropy_counts(np.bincount(ctx, weights=w))
    if hc <= 0:
        return out
    U = len(rows)
    cols = _dense_codes(rows[:, 1:])
    card = cols.max(axis=0) + 1
    codes = np.zeros((1 << n_act, U), dtype=np.int64)
    chunk = max(1, 4_000_000 // max(U * n_ctx, 1))
    for hi in range(n_act):
        lo = 1 << hi
        for a in range(0, lo, chunk):
            b = min(lo, a + chunk)
            block = _dense_rows(codes[a:b] * card[hi] + cols[:, hi])
            codes[lo + a:lo + b] = block
            ha = _row_entropies(block, w, U)
            hca = _row_entropies(block * n_ctx + ctx, w, U * n_ctx)
            mi = np.maximum(hc + ha - hca, 0.0)
            out[lo + a:lo + b] = np.minimum(mi / hc, 1.0)
    return out


def update_mi_tables(tables: Mapping[int, MITable], series: TickSeries, registry: Registry) -> dict[int, MITable]:
    """Recompute every subset entry from per-tick samples; returns new tables."""
    fresh = {}
    for rule in registry.rules:
        old = tables[rule.rule_id]
        levels = series.select(rule.actions)
        values = subset_scores(series.context_idx, levels)
        fresh[rule.rule_id] = MITable(rule.rule_id, old.actions, values)
    return fresh


def tables_to_json(tables: Mapping[int, MITable]) -> dict:
    out = {}
    for rid, tab in sorted(tables.items()):
        out[str(rid)] = [
            {"actions": tab.names_of(mask), "score": float(tab.values[mask])}
            for mask in range(1, len(tab.values))
        ]
    return {"tables": out}


# -- suspicion ledger ----------------------------------------------------------


@dataclass
class LedgerEntry:
    mask: int = 0
    score: float = 0.0


@dataclass
class SuspicionLedger:
    """Per observer, per rule: cumulative queried-action bitmask and score."""

    entries: dict[str, dict[int, LedgerEntry]] = field(default_factory=dict)

    def get(self, observer: str, rule_id: int) -> LedgerEntry | None:
        return self.entries.get(observer, {}).get(rule_id)

    def score(self, observer: str) -> float:
        rules = self.entries.get(observer)
        if not rules:
            return 0.0
        return max(e.score for e in rules.values())

    def rescore(self, tables: Mapping[int, MITable]) -> None:
        for rules in self.entries.values():
            for rid, e in rules.items():
                e.score = tables[rid][e.mask]

    def to_json(self, tables: Mapping[int, MITable]) -> dict:
        out = {}
        for obs in sorted(self.entries):
            out[obs] = {
                str(rid): {"actions": tables[rid].names_of(e.mask), "score": e.score}
                for rid, e in sorted(self.entries[obs].items())
            }
        return {"observers": out}


def note_observation(
    ledger: SuspicionLedger,
    observer: str,
    rule_id: int,
    action: str,
    tables: Mapping[int, MITable],
) -> SuspicionLedger:
    """Record that ``observer`` read ``action``; rescore from the cumulative mask."""
    tab = tables.get(rule_id)
    if tab is None or action not in tab.actions:
        raise NotAProtectedGetter(f"{action!r} is not in the protection list of rule {rule_id}")
    entry = ledger.entries.setdefault(observer, {}).setdefault(rule_id, LedgerEntry())
    entry.mask |= 1 << tab.actions.index(action)
    entry.score = tab[entry.mask]
    return ledger


@dataclass(frozen=True)
class DetectionConfig:
    alarm_threshold: float = DEFAULT_ALARM_THRESHOLD
    refresh_every: int = DEFAULT_REFRESH_EVERY
    sampling: str = "tick"

    def __post_init__(self):
        if not 0.0 <= self.alarm_threshold <= 1.0:
            raise ValueError(f"alarm_threshold {self.alarm_threshold} outside [0, 1]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.sampling != "tick":
            raise ValueError("only per-tick sampling is supported")


def classify_observers(ledger: SuspicionLedger, cfg: DetectionConfig) -> set[str]:
    return {obs for obs in ledger.entries if ledger.score(obs) > cfg.alarm_threshold}


def fp_fn_sweep(
    scores: Mapping[str, float],
    malicious_truth: Mapping[str, bool],
    thresholds: Iterable[float],
) -> list[tuple[float, float, float]]:
    """False-positive and false-negative rates of ``score > threshold``."""
    if set(scores) != set(malicious_truth):
        raise DegeneratePopulation("scores and ground truth cover different observers")
    bad = [o for o, m in malicious_truth.items() if m]
    good = [o for o, m in malicious_truth.items() if not m]
    if not bad or not good:
        raise DegeneratePopulation(
            f"need both classes, got {len(bad)} malicious and {len(good)} benign"
        )
    curve = []
    for th in thresholds:
        fp = sum(scores[o] > th for o in good) / len(good)
        fn = sum(scores[o] <= th for o in bad) / len(bad)
        curve.append((float(th), fp, fn))
    return curve


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
