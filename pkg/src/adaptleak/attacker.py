"""Context inference from observed settings by clustering.

Every routine accepts optional per-row ``weights`` (integer multiplicities).
A weighted row stands for that many identical rows, so the pipeline can
cluster the few distinct observation vectors of a long trace instead of
every tick while keeping inertia and silhouette identical to the expanded
computation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import MINUTES_PER_DAY, TickSeries
from .errors import LengthMismatch, SingleCluster, TooFewRows

K_RANGE = range(2, 8)
DEFAULT_RESTARTS = 10
MAX_ITER = 300
SILHOUETTE_SAMPLE = 2000


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    silhouette: float | None = None


@dataclass
class AttackReport:
    predicted: list[str]
    accuracy: float
    baseline: float
    dominant_features: list[str]
    chosen_k: int
    silhouette: float | None = None

    def to_json(self, include_predicted: bool = False) -> dict:
        d = asdict(self)
        if not include_predicted:
            d.pop("predicted")
        return d


def _as_weights(X: np.ndarray, weights) -> np.ndarray:
    if weights is None:
        return np.ones(len(X))
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(X),):
        raise LengthMismatch("weights must have one entry per row")
    return w


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(X: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    first = rng.choice(n, p=w / w.sum())
    centers = [X[first]]
    closest = _sq_dists(X, X[first][None])[:, 0]
    for _ in range(1, k):
        mass = w * closest
        total = mass.sum()
        if total <= 0:
            idx = rng.choice(n, p=w / w.sum())
        else:
            idx = rng.choice(n, p=mass / total)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers, dtype=float)


def _lloyd(X, w, C, max_iter=MAX_ITER):
    """Lloyd iterations with empty-cluster repair; returns (labels, C, inertia, history)."""
    k = len(C)
    labels = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, C)
        new = d.argmin(axis=1)  # ties go to the lowest cluster index
        new = _repair_empty(X, new, d, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            m = labels == j
            C[j] = np.average(X[m], axis=0, weights=w[m])
        history.append(float((w * ((X - C[labels]) ** 2).sum(1)).sum()))
    inertia = float((w * ((X - C[labels]) ** 2).sum(1)).sum())
    return labels, C, inertia, history


def _repair_empty(X, labels, d, k):
    """Move the row farthest from its own centroid into each empty cluster."""
    counts = np.bincount(labels, minlength=k)
    if counts.min() > 0:
        return labels
    labels = labels.copy()
    own = d[np.arange(len(X)), labels]
    for j in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        if not movable.any():
            break
        cand = np.where(movable, own, -np.inf)
        i = int(np.argmax(cand))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] += 1
        own[i] = 0.0
    return labels


def kmeans(X, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS, weights=None) -> ClusterModel:
    """Best-inertia Lloyd run over ``restarts`` k-means++ initialisations."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < k:
        raise TooFewRows(f"{len(X)} rows cannot form {k} clusters")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    w = _as_weights(X, weights)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        C = _plusplus(X, w, k, rng)
        labels, C, inertia, _ = _lloyd(X, w, C)
        # strict < keeps the lowest restart index on ties
        if best is None or inertia < best.inertia:
            best = ClusterModel(k, C.copy(), labels, inertia)
    return best


def silhouette(X, assignments, weights=None) -> float:
    """Mean silhouette; rows alone in their cluster score 0."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.unique(np.asarray(assignments), return_inverse=True)[1].ravel()
    k = int(labels.max()) + 1 if len(labels) else 0
    if k < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    w = _as_weights(X, weights)
    D = np.sqrt(_sq_dists(X, X))
    onehot = np.zeros((len(X), k))
    onehot[np.arange(len(X)), labels] = w
    S = D @ onehot  # S[i, c] = sum_j w_j d(i, j) over rows j in cluster c
    size = onehot.sum(0)
    own = size[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = S[np.arange(len(X)), labels] / (own - 1)
        other = S / size[None, :]
    other[np.arange(len(X)), labels] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.zeros(len(X))
    ok = (own > 1) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return float((w * s).sum() / w.sum())


def compress_rows(X, weights=None):
    """Distinct rows of ``X`` with summed weights and the row -> distinct map."""
    X = np.asarray(X, dtype=float)
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    inv = inv.ravel()
    w = np.bincount(inv, weights=_as_weights(X, weights), minlength=len(uniq))
    return uniq, w, inv


def _silhouette_view(X, w, labels, seed, sample_size):
    """Rows used for silhouette; a seeded weighted subsample when too many."""
    if sample_size is None or len(X) <= sample_size:
        return X, w, labels
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    pick = rng.choice(len(X), size=sample_size, replace=False, p=w / w.sum())
    pick.sort()
    return X[pick], np.ones(sample_size), labels[pick]


def select_k(X, seed: int = 0, weights=None, ks: Sequence[int] = K_RANGE,
             restarts: int = DEFAULT_RESTARTS, sample_size: int | None = None) -> ClusterModel:
    """Model with the highest silhouette over ``ks``; ties favour smaller k."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if weights is None and len(X) < max(ks):
        raise TooFewRows(f"need at least {max(ks)} rows, got {len(X)}")
    ks = [k for k in ks if k <= len(X)]
    if not ks:
        raise TooFewRows(f"{len(X)} rows cannot form any of the candidate cluster counts")
    w = _as_weights(X, weights)
    best = None
    for k in ks:
        model = kmeans(X, k, seed=seed, restarts=restarts, weights=w)
        Xs, ws, ls = _silhouette_view(X, w, model.assignments, seed, sample_size)
        try:
            model.silhouette = silhouette(Xs, ls, ws)
        except SingleCluster:
            model.silhouette = 0.0
        if best is None or model.silhouette > best.silhouette:
            best = model
    return best


def _cluster_unique(X, seed, restarts, sample_size):
    """select_k over distinct rows; a lone distinct row yields a 1-cluster model."""
    uniq, w, inv = compress_rows(X)
    if len(uniq) < 2:
        model = ClusterModel(1, uniq.copy(), np.zeros(len(uniq), dtype=np.int64), 0.0, 0.0)
    else:
        model = select_k(uniq, seed=seed, weights=w, restarts=restarts, sample_size=sample_size)
    return model, inv


def greedy_feature_selection(X, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
                             sample_size: int | None = SILHOUETTE_SAMPLE) -> tuple[list[int], float]:
    """Forward selection of feature columns by silhouette of the best-k clustering.

    Starts from the empty set with a previous score of -inf, so the first
    round always admits a feature; each round adds the column whose
    inclusion scores highest and stops once that score no longer improves.
    Ties between columns go to the lowest column index.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    selected: list[int] = []
    prev = -np.inf
    while len(selected) < X.shape[1]:
        best_f, best_h = None, -np.inf
        for f in range(X.shape[1]):
            if f in selected:
                continue
            model, _ = _cluster_unique(X[:, selected + [f]], seed, restarts, sample_size)
            if model.silhouette > best_h:
                best_f, best_h = f, model.silhouette
        if best_h > prev:
            selected.append(best_f)
            prev = best_h
        else:
            break
    return selected, float(prev)


def baseline_accuracy(truth: TickSeries | Sequence) -> float:
    idx = truth.context_idx if isinstance(truth, TickSeries) else np.unique(np.asarray(truth), return_inverse=True)[1]
    if len(idx) == 0:
        raise LengthMismatch("empty truth series")
    return float(np.bincount(idx).max() / len(idx))


def map_clusters_accuracy(assignments, truth: TickSeries) -> tuple[list[str], float]:
    """Label each cluster with its majority true context and score per tick."""
    a = np.asarray(assignments, dtype=np.int64).ravel()
    if len(a) != truth.horizon:
        raise LengthMismatch(f"{len(a)} assignments for {truth.horizon} ticks")
    n_ctx = len(truth.alphabet)
    _, a = np.unique(a, return_inverse=True)
    a = a.ravel()
    k = int(a.max()) + 1 if len(a) else 0
    table = np.bincount(a * n_ctx + truth.context_idx, minlength=k * n_ctx).reshape(k, n_ctx)
    label = table.argmax(axis=1)  # ties go to the first symbol in the alphabet
    correct = int(table.max(axis=1).sum())
    predicted = [truth.alphabet[label[c]] for c in a]
    return predicted, correct / len(a) if len(a) else 0.0


def feature_matrix(levels: np.ndarray, time_features: bool = False, t0: int = 0) -> np.ndarray:
    """Min-max scale each observed column to [0, 1]; constant columns become 0.

    Values are rounded to 12 decimals so that rescaling a raw column by a
    positive constant reproduces the matrix exactly.
    """
    L = np.asarray(levels, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    cols = [L]
    if time_features:
        t = np.arange(t0, t0 + len(L))
        cols.append(((t % MINUTES_PER_DAY) / MINUTES_PER_DAY)[:, None])
        cols.append((((t // MINUTES_PER_DAY) % 7) / 6.0)[:, None])
    M = np.hstack(cols)
    lo, hi = M.min(axis=0), M.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.round((M - lo) / span, 12)


@dataclass
class AttackOptions:
    feature_selection: str = "greedy"  # or "all"
    time_features: bool = False
    restarts: int = DEFAULT_RESTARTS
    sample_size: int | None = SILHOUETTE_SAMPLE
    seed: int = 0


def attack_pipeline(observed: np.ndarray, names: Sequence[str], truth: TickSeries,
                    opts: AttackOptions | None = None, t0: int = 0) -> AttackReport:
    """Cluster an observer's per-tick view and score it against ground truth.

    ``observed[t, j]`` is the value of ``names[j]`` the observer held at tick
    ``t``; ``t0`` is the absolute tick of row 0 (for time features).
    """
    opts = opts or AttackOptions()
    observed = np.asarray(observed)
    if observed.ndim == 1:
        observed = observed[:, None]
    if len(observed) != truth.horizon:
        raise LengthMismatch(f"{len(observed)} observation rows for {truth.horizon} ticks")
    X = feature_matrix(observed, opts.time_features, t0)
    feat_names = list(names) + (["TimeOfDay", "DayOfWeek"] if opts.time_features else [])
    if opts.feature_selection == "greedy" and X.shape[1] >= 2:
        cols, _ = greedy_feature_selection(X, opts.seed, opts.restarts, opts.sample_size)
    else:
        cols = list(range(X.shape[1]))
    model, inv = _cluster_unique(X[:, cols], opts.seed, opts.restarts, opts.sample_size)
    predicted, acc = map_clusters_accuracy(model.assignments[inv], truth)
    return AttackReport(
        predicted=predicted,
        accuracy=acc,
        baseline=baseline_accuracy(truth),
        dominant_features=[feat_names[c] for c in cols],
        chosen_k=model.k,
        silhouette=model.silhouette,
    )


def write_report(path, report: AttackReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
