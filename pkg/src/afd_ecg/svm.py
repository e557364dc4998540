"""Class-weighted soft-margin RBF SVM trained with SMO, one-vs-one.

Binary problems solve the usual dual

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K(x_i, x_j)
    s.t.   y^T a = 0,  0 <= a_i <= C * w(class of i)

by sequential minimal optimization with maximal-violating-pair working
set selection. Kernel rows are computed on demand and kept in an LRU
cache with a memory budget, so the full Gram matrix is never formed.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from afd_ecg.features import CLASSES, FEATURE_VERSION, NormalizationStats, normalize

logger = logging.getLogger(__name__)

MODEL_FORMAT = "afd-ecg-svm"
MODEL_VERSION = 1
PAIRS = tuple(itertools.combinations(CLASSES, 2))


@dataclass
class SVMParams:
    C: float
    sigma: float
    class_weights: dict = field(default_factory=lambda: {c: 1.0 for c in CLASSES})

    def __post_init__(self):
        if not self.C > 0 or not self.sigma > 0:
            raise ValueError("C and sigma must be positive")
        self.class_weights = {c: float(self.class_weights.get(c, 1.0)) for c in CLASSES}
        if any(not w > 0 for w in self.class_weights.values()):
            raise ValueError("class weights must be positive")

    def to_dict(self) -> dict:
        return {"C": self.C, "sigma": self.sigma, "class_weights": dict(self.class_weights)}


# Reference optima: model 1 (DS1 only) and model 2 (DS1 + extra S beats).
MODEL1_PARAMS = SVMParams(2.8, 0.0005, {"N": 0.40, "S": 39.0, "V": 2.9, "F": 1.71})
MODEL2_PARAMS = SVMParams(3.0, 0.0006, {"N": 0.42, "S": 36.0, "V": 2.5, "F": 1.79})


def rbf_kernel(x, y, sigma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = x - y
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def kernel_matrix(X, Y, sigma: float) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    d2 = (np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :]
          - 2.0 * X @ Y.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * sigma * sigma))


class _KernelRows:
    def __init__(self, X: np.ndarray, sigma: float, cache_mb: float):
        self.X = X
        self.sq = np.einsum("ij,ij->i", X, X)
        self.scale = 1.0 / (2.0 * sigma * sigma)
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.capacity = max(2, int(cache_mb * 2 ** 20 // (8 * max(len(X), 1))))

    def __call__(self, i: int) -> np.ndarray:
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        d2 = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d2, 0.0, out=d2)
        row = np.exp(-d2 * self.scale)
        row[i] = 1.0
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


@dataclass
class BinaryModel:
    """One pairwise classifier; ``decision > 0`` votes for ``pos_class``.

    A degenerate model (one or both classes absent from training) has no
    support vectors and votes for ``constant`` (``None`` abstains).
    """

    pos_class: str
    neg_class: str
    support_vectors: np.ndarray
    dual_coef: np.ndarray          # alpha_i * y_i
    bias: float
    sigma: float
    converged: bool = True
    n_iter: int = 0
    kkt_gap: float = 0.0
    degenerate: bool = False
    constant: str | None = None
    support_index: np.ndarray | None = None   # rows of the training matrix

    def alphas(self, n_train: int) -> np.ndarray:
        """Dual variables for all ``n_train`` training rows (zero off the SVs)."""
        a = np.zeros(n_train)
        a[self.support_index] = np.abs(self.dual_coef)
        return a

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.degenerate:
            return np.zeros(X.shape[0])
        out = np.empty(X.shape[0])
        step = max(1, int(2 ** 22 // max(self.support_vectors.shape[0], 1)))
        for lo in range(0, X.shape[0], step):
            K = kernel_matrix(X[lo:lo + step], self.support_vectors, self.sigma)
            out[lo:lo + step] = K @ self.dual_coef + self.bias
        return out

    def to_dict(self) -> dict:
        return {
            "pos_class": self.pos_class, "neg_class": self.neg_class,
            "n_features": int(self.support_vectors.shape[1]),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(), "bias": self.bias, "sigma": self.sigma,
            "converged": self.converged, "n_iter": self.n_iter, "kkt_gap": self.kkt_gap,
            "degenerate": self.degenerate, "constant": self.constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryModel":
        sv = np.asarray(d["support_vectors"], dtype=float).reshape(-1, int(d["n_features"]))
        return cls(d["pos_class"], d["neg_class"], sv,
                   np.asarray(d["dual_coef"], dtype=float), float(d["bias"]), float(d["sigma"]),
                   bool(d["converged"]), int(d["n_iter"]), float(d["kkt_gap"]),
                   bool(d["degenerate"]), d["constant"])


def kkt_residuals(alpha, y, upper, decision_values) -> np.ndarray:
    """Per-sample violation of the soft-margin KKT conditions.

    With ``u = y f(x) - 1``: ``alpha = 0`` needs ``u >= 0``, ``alpha = upper``
    needs ``u <= 0``, anything in between needs ``u = 0``.
    """
    u = np.asarray(y) * np.asarray(decision_values) - 1.0
    at_lo = alpha <= 0.0
    at_hi = alpha >= upper
    res = np.abs(u)
    res[at_lo] = np.maximum(0.0, -u[at_lo])
    res[at_hi] = np.maximum(0.0, u[at_hi])
    return res


def train_binary(X, y, C: float, sigma: float, weight_pos: float = 1.0, weight_neg: float = 1.0,
                 tol: float = 1e-3, max_iter: int | None = None, cache_mb: float = 256.0,
                 pos_class: str = "+", neg_class: str = "-") -> BinaryModel:
    """SMO on labels in {+1, -1}; sample i's box is ``[0, C * weight(y_i)]``.

    Stops once the maximal KKT violation (``m(a) - M(a)``) drops below
    ``tol``. Hitting ``max_iter`` first returns the last iterate with
    ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("both labels must be present")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +1/-1")
    n = y.size
    if max_iter is None:
        max_iter = max(1_000_000, 200 * n)

    upper = np.where(y > 0, C * weight_pos, C * weight_neg)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    rows = _KernelRows(X, sigma, cache_mb)
    pos = y > 0
    converged = False
    it = 0
    gap = np.inf
    while it < max_iter:
        v = -y * grad
        below = alpha < upper
        above = alpha > 0
        up = np.where(pos, below, above)
        low = np.where(pos, above, below)
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        gap = v[i] - v[j]
        if gap < tol:
            converged = True
            break
        Ki, Kj = rows(i), rows(j)
        eta = max(Ki[i] + Kj[j] - 2.0 * Ki[j], 1e-12)
        room_i = upper[i] - alpha[i] if pos[i] else alpha[i]
        room_j = alpha[j] if pos[j] else upper[j] - alpha[j]
        lam = min(gap / eta, room_i, room_j)
        alpha[i] += y[i] * lam
        alpha[j] -= y[j] * lam
        if lam == room_i:
            alpha[i] = upper[i] if pos[i] else 0.0
        if lam == room_j:
            alpha[j] = 0.0 if pos[j] else upper[j]
        grad += lam * y * (Ki - Kj)
        it += 1

    if not converged:
        logger.warning("SMO stopped after %d iterations with KKT gap %.3g", it, gap)
    v = -y * grad
    free = (alpha > 0) & (alpha < upper)
    if np.any(free):
        b = float(np.mean(v[free]))
    else:
        up = np.where(pos, alpha < upper, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < upper)
        b = 0.5 * (float(np.max(v[up], initial=-np.inf)) + float(np.min(v[low], initial=np.inf)))
        if not np.isfinite(b):
            b = 0.0
    sv = alpha > 0
    return BinaryModel(pos_class, neg_class, X[sv].copy(), (alpha * y)[sv], b, sigma,
                       converged, it, float(gap), support_index=np.flatnonzero(sv))


@dataclass
class TrainedModel:
    binaries: dict
    stats: NormalizationStats
    params: SVMParams
    feature_names: list
    feature_version: str = FEATURE_VERSION
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def degenerate_pairs(self) -> list:
        return [p for p, m in self.binaries.items() if m.degenerate]

    def _check(self, X: np.ndarray) -> None:
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature dimension {X.shape[1]} does not match model "
                             f"({self.n_features}, {self.feature_version})")

    def decision_values(self, X) -> dict:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check(X)
        Z = normalize(self.stats, X)
        return {pair: m.decision(Z) for pair, m in self.binaries.items()}

    def predict_batch(self, X) -> list:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dv = self.decision_values(X)
        return [vote(self.binaries, {p: float(v[k]) for p, v in dv.items()})
                for k in range(X.shape[0])]

    def predict(self, fv) -> str:
        return self.predict_batch(np.asarray(fv, dtype=float)[None, :])[0]

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION,
            "feature_version": self.feature_version, "feature_names": list(self.feature_names),
            "params": self.params.to_dict(),
            "normalization": {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
            "binaries": [m.to_dict() for m in self.binaries.values()],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict, expected_feature_version: str | None = FEATURE_VERSION) -> "TrainedModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not an afd-ecg SVM model file")
        if expected_feature_version and d["feature_version"] != expected_feature_version:
            raise ValueError(f"model feature version {d['feature_version']!r} != "
                             f"{expected_feature_version!r}")
        binaries = {}
        for b in d["binaries"]:
            m = BinaryModel.from_dict(b)
            binaries[(m.pos_class, m.neg_class)] = m
        if set(binaries) != set(PAIRS):
            raise ValueError("model must hold exactly one classifier per class pair")
        stats = NormalizationStats(np.asarray(d["normalization"]["mean"]),
                                   np.asarray(d["normalization"]["std"]))
        p = d["params"]
        return cls(binaries, stats, SVMParams(p["C"], p["sigma"], p["class_weights"]),
                   list(d["feature_names"]), d["feature_version"], dict(d.get("meta", {})))

    def save(self, path: str | os.PathLike) -> None:
        from afd_ecg.io_utils import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def vote(binaries: dict, decisions: dict) -> str:
    """Majority vote; ties go to the larger summed |margin|, then N<S<V<F."""
    votes = dict.fromkeys(CLASSES, 0)
    margin = dict.fromkeys(CLASSES, 0.0)
    for pair, m in binaries.items():
        if m.degenerate:
            if m.constant is not None:
                votes[m.constant] += 1
            continue
        f = decisions[pair]
        winner = m.pos_class if f >= 0 else m.neg_class
        votes[winner] += 1
        margin[winner] += abs(f)
    return max(CLASSES, key=lambda c: (votes[c], margin[c], -CLASSES.index(c)))


def train_ovo(X, labels, params: SVMParams, feature_names=None, tol: float = 1e-3,
              cache_mb: float = 256.0, max_iter: int | None = None) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[0] != labels.size:
        raise ValueError("one label per row required")
    extra = set(labels.tolist()) - set(CLASSES)
    if extra:
        raise ValueError(f"labels outside {CLASSES}: {sorted(extra)}")
    present = [c for c in CLASSES if np.any(labels == c)]
    if len(present) < 2:
        raise ValueError(f"need at least two classes, got {present}")
    stats = NormalizationStats.fit(X)
    Z = normalize(stats, X)
    w = params.class_weights
    binaries = {}
    for k, l in PAIRS:
        mk, ml = labels == k, labels == l
        if not mk.any() or not ml.any():
            const = k if mk.any() else (l if ml.any() else None)
            binaries[(k, l)] = BinaryModel(k, l, np.zeros((0, X.shape[1])), np.zeros(0), 0.0,
                                           params.sigma, degenerate=True, constant=const)
            logger.warning("pair %s/%s is degenerate (constant voter: %s)", k, l, const)
            continue
        sel = mk | ml
        yk = np.where(labels[sel] == k, 1.0, -1.0)
        binaries[(k, l)] = train_binary(Z[sel], yk, params.C, params.sigma, w[k], w[l],
                                        tol=tol, max_iter=max_iter, cache_mb=cache_mb,
                                        pos_class=k, neg_class=l)
        logger.info("pair %s/%s: %d samples, %d SVs, %d iterations", k, l, int(sel.sum()),
                    binaries[(k, l)].support_vectors.shape[0], binaries[(k, l)].n_iter)
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    return TrainedModel(binaries, stats, params, names,
                        meta={"class_counts": {c: int(np.sum(labels == c)) for c in CLASSES}})


def macro_sensitivity(refs, preds) -> float:
    refs = np.asarray(refs)
    preds = np.asarray(preds)
    se = [np.mean(preds[refs == c] == c) for c in CLASSES if np.any(refs == c)]
    return float(np.mean(se)) if se else float("nan")


def _expand_grid(param_grid) -> list:
    if isinstance(param_grid, dict):
        weights = param_grid.get("class_weights", [None])
        grid = [SVMParams(C, s, w or {}) for C in param_grid["C"]
                for s in param_grid["sigma"] for w in weights]
    else:
        grid = list(param_grid)
    if not grid:
        raise ValueError("empty parameter grid")
    return grid


def group_folds(groups, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per sample; every group (record) lands in exactly one fold."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if uniq.size < folds:
        logger.warning("only %d groups for %d folds; using %d folds", uniq.size, folds, uniq.size)
        folds = uniq.size
    order = np.random.default_rng(seed).permutation(uniq.size)
    fold_of = {uniq[g]: k % folds for k, g in enumerate(order)}
    return np.array([fold_of[g] for g in groups])


def grid_search_cv(X, labels, groups, param_grid, folds: int = 10, seed: int = 0,
                   tol: float = 1e-3, cache_mb: float = 256.0):
    """Pick the grid point with the best mean macro sensitivity over record-wise folds.

    Ties go to the smaller C, then the smaller sigma. Returns the winner
    and a list of ``(params, mean_score)``.
    """
    grid = _expand_grid(param_grid)
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    fold = group_folds(groups, folds, seed)
    scores = []
    for p in grid:
        per_fold = []
        for k in np.unique(fold):
            tr, te = fold != k, fold == k
            if len(set(labels[tr].tolist())) < 2:
                continue
            model = train_ovo(X[tr], labels[tr], p, tol=tol, cache_mb=cache_mb)
            per_fold.append(macro_sensitivity(labels[te], model.predict_batch(X[te])))
        scores.append((p, float(np.nanmean(per_fold)) if per_fold else float("-inf")))
    best = max(range(len(grid)), key=lambda i: (scores[i][1], -grid[i].C, -grid[i].sigma, -i))
    return grid[best], scores
