"""L2-regularized logistic regression with lot-grouped cross-validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import _kernels
from .data_model import TrajectoryDataset

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 3, 10))
PROBA_CLAMP = 1e-12
GRAD_TOL = 1e-8
MAX_ITER = 10_000


class TrainingError(ValueError):
    """Training data cannot support the requested fit (e.g. one class only)."""


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, mask: np.ndarray | None = None) -> "Standardizer":
        """Per-column mean/std from the observed cells only.

        Columns with fewer than two observations or zero spread get std 1
        (and mean 0 when nothing is observed); they are frozen out of the fit.
        """
        X = np.asarray(X, dtype=np.float64)
        if mask is None:
            mask = np.ones(X.shape, dtype=bool)
        M = mask.astype(np.float64)
        Xo = np.where(mask, X, 0.0)
        cnt = M.sum(axis=0)
        mean = np.where(cnt > 0, Xo.sum(axis=0) / np.maximum(cnt, 1.0), 0.0)
        var = np.where(cnt > 0, (M * (Xo - mean) ** 2).sum(axis=0) / np.maximum(cnt, 1.0), 0.0)
        std = np.sqrt(var)
        degenerate = (cnt < 2) | ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
        std = np.where(degenerate, 1.0, std)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(mean=np.zeros(d), std=np.ones(d))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    lam: float
    standardizer: Standardizer
    items: tuple[str, ...] = ()
    cv_path: tuple[tuple[float, float], ...] = field(default=(), compare=False)

    @property
    def D(self) -> int:
        return len(self.weights)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.D:
            raise ValueError(f"expected {self.D} features, got {X.shape[-1]}")
        return X

    def score(self, X) -> np.ndarray | float:
        X = self._check(X)
        out = self.standardizer.transform(X) @ self.weights + self.bias
        return float(out) if np.ndim(out) == 0 else out

    def predict_proba(self, X) -> np.ndarray | float:
        s = np.asarray(self.score(X), dtype=np.float64)
        p = np.clip(_sigmoid(s), PROBA_CLAMP, 1.0 - PROBA_CLAMP)
        return float(p) if p.ndim == 0 else p

    def to_dict(self) -> dict:
        return {
            "items": list(self.items),
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "lambda": float(self.lam),
            "standardizer": {
                "mean": [float(v) for v in self.standardizer.mean],
                "std": [float(v) for v in self.standardizer.std],
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LogisticModel":
        return cls(
            weights=np.array(doc["weights"], dtype=np.float64),
            bias=float(doc["bias"]),
            lam=float(doc["lambda"]),
            standardizer=Standardizer(
                mean=np.array(doc["standardizer"]["mean"], dtype=np.float64),
                std=np.array(doc["standardizer"]["std"], dtype=np.float64),
            ),
            items=tuple(doc.get("items", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "LogisticModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def predict_proba(model: LogisticModel, x) -> float | np.ndarray:
    return model.predict_proba(x)


def score(model: LogisticModel, x) -> float | np.ndarray:
    return model.score(x)


# ---------------------------------------------------------------------------
# objective and fitting
# ---------------------------------------------------------------------------


def objective(Z, y, w, b, lam) -> float:
    return _kernels.logistic_objective_numpy(
        np.asarray(Z, dtype=np.float64), np.asarray(y, dtype=np.float64), np.asarray(w), float(b), lam
    )


def gradient(Z, y, w, b, lam) -> tuple[np.ndarray, float]:
    """Analytic gradient of :func:`objective` with respect to ``(w, b)``."""
    w = np.asarray(w, dtype=np.float64)
    return _kernels.logistic_gradient_numpy(
        np.asarray(Z, dtype=np.float64), np.asarray(y, dtype=np.float64), w, float(b), lam,
        np.ones(w.shape, dtype=bool),
    )


@dataclass(frozen=True)
class FitResult:
    weights: np.ndarray
    bias: float
    n_iter: int
    trace: np.ndarray


def fit_standardized(Z, y, lam, free=None, tol=GRAD_TOL, max_iter=MAX_ITER) -> FitResult:
    Z = np.asarray(Z, dtype=np.float64)
    if free is None:
        free = np.ones(Z.shape[1], dtype=bool)
    w, b, it, trace = _kernels.fit_logistic(Z, y, lam, free, tol, max_iter)
    return FitResult(weights=np.where(free, w, 0.0), bias=b, n_iter=it, trace=trace)


def _fit_once(X, y, lam, mask, items=()) -> LogisticModel:
    stdz = Standardizer.fit(X, mask)
    free = _informative_columns(X, mask)
    res = fit_standardized(stdz.transform(X), y, lam, free)
    return LogisticModel(weights=res.weights, bias=res.bias, lam=float(lam), standardizer=stdz,
                         items=tuple(items))


def _informative_columns(X, mask) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(X.shape[1], dtype=bool)
    for k in range(X.shape[1]):
        vals = X[mask[:, k], k]
        out[k] = vals.size >= 2 and np.ptp(vals) > 1e-12 * max(1.0, float(np.abs(vals).max()))
    return out


def validate_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (N, D) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input to classifier (impute first)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise TrainingError("labels contain a single class")
    return X, y.astype(np.float64)


def group_folds(groups: Sequence, folds: int) -> list[np.ndarray]:
    """Partition row indices into ``folds`` parts without splitting a group.

    Groups are placed largest first onto the currently smallest fold (ties by
    fold index, groups ordered by size then id), which is deterministic.
    """
    groups = np.asarray(groups, dtype=object)
    uniq = sorted(set(groups.tolist()))
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(uniq) < folds:
        raise ValueError(f"{len(uniq)} groups cannot fill {folds} folds")
    sizes = {g: int(np.sum(groups == g)) for g in uniq}
    buckets: list[list] = [[] for _ in range(folds)]
    load = [0] * folds
    for g in sorted(uniq, key=lambda g: (-sizes[g], str(g))):
        f = min(range(folds), key=lambda i: (load[i], i))
        buckets[f].append(g)
        load[f] += sizes[g]
    return [np.flatnonzero(np.isin(groups, b)) for b in buckets]


def log_loss(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), PROBA_CLAMP, 1 - PROBA_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def cross_validate(X, y, groups, lambda_grid, folds, mask=None) -> list[tuple[float, float]]:
    """Mean validation log-loss per lambda over lot-grouped folds."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        mask = np.ones(X.shape, dtype=bool)
    parts = group_folds(groups, folds)
    path = []
    for lam in lambda_grid:
        losses = []
        for val in parts:
            tr = np.setdiff1d(np.arange(len(y)), val)
            m = _fit_once(X[tr], y[tr], lam, mask[tr])
            losses.append(log_loss(m.predict_proba(X[val]), y[val]))
        path.append((float(lam), float(np.mean(losses))))
    return path


def train(
    X_filled,
    y,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    folds: int = 5,
    groups: Sequence | None = None,
    mask: np.ndarray | None = None,
    items: Sequence[str] = (),
) -> LogisticModel:
    """Pick lambda by lot-grouped CV, then refit on all rows.

    ``mask`` marks which cells were observed before imputation; standardization
    statistics use only those. Without ``groups`` every row is its own group.
    """
    X, yf = validate_inputs(X_filled, y)
    if folds > X.shape[0]:
        raise ValueError(f"folds={folds} exceeds N={X.shape[0]}")
    if any(not lam > 0 for lam in lambda_grid) or len(lambda_grid) == 0:
        raise ValueError("lambda grid must be non-empty and positive")
    if mask is None:
        mask = np.ones(X.shape, dtype=bool)
    if groups is None:
        groups = np.arange(X.shape[0])
    if len(lambda_grid) == 1:
        path = [(float(lambda_grid[0]), float("nan"))]
        best = float(lambda_grid[0])
    else:
        path = cross_validate(X, yf, groups, lambda_grid, folds, mask)
        best = min(path, key=lambda t: (t[1], -t[0]))[0]
    m = _fit_once(X, yf, best, mask, items)
    return LogisticModel(weights=m.weights, bias=m.bias, lam=m.lam, standardizer=m.standardizer,
                         items=m.items, cv_path=tuple(path))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.size == 0 or y.min() == y.max():
        raise ValueError("AUC needs both classes present")
    return y.astype(bool)


def roc_auc(scores, y) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    pos = _check_binary(y)
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def normalized_auc(auc: float) -> float:
    return abs(2.0 * auc - 1.0)


def true_positive_rate(proba, y, threshold: float = 0.5) -> float:
    y = np.asarray(y)
    pos = y == 1
    if not pos.any():
        return float("nan")
    return float(np.mean(np.asarray(proba)[pos] >= threshold))


@dataclass(frozen=True)
class EvalReport:
    auc: float
    normalized_auc: float
    tpr: float
    threshold: float
    fold_lambdas: tuple[tuple[float, float], ...] = ()


def evaluate(proba, y, threshold: float = 0.5, fold_lambdas=()) -> EvalReport:
    auc = roc_auc(proba, y)
    return EvalReport(auc=auc, normalized_auc=normalized_auc(auc),
                      tpr=true_positive_rate(proba, y, threshold), threshold=threshold,
                      fold_lambdas=tuple(fold_lambdas))


def stratified_folds(y, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded wafer-level folds with the class balance of ``y`` preserved."""
    y = np.asarray(y)
    rng = np.random.Generator(np.random.PCG64(seed))
    parts: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))
        for j, i in enumerate(idx):
            parts[(j + offset) % folds].append(int(i))
        offset += len(idx)
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def cross_fit_proba(
    X_filled, y, groups, mask=None, lambda_grid=DEFAULT_LAMBDA_GRID, outer_folds: int = 3,
    inner_folds: int = 3, split: str = "wafer", seed: int = 0,
) -> np.ndarray:
    """Out-of-fold probabilities: every wafer is scored by a model that did not
    train on it.

    ``split="wafer"`` uses seeded stratified wafer folds; ``split="lot"`` holds
    out whole lots. Lambda is re-selected by lot-grouped CV inside each
    training split.
    """
    X = np.asarray(X_filled, dtype=np.float64)
    y = np.asarray(y)
    groups = np.asarray(groups, dtype=object)
    if mask is None:
        mask = np.ones(X.shape, dtype=bool)
    if split == "wafer":
        outer = stratified_folds(y, outer_folds, seed)
    elif split == "lot":
        outer = group_folds(groups, outer_folds)
    else:
        raise ValueError(f"unknown split {split!r}")
    out = np.full(len(y), np.nan)
    for val in outer:
        tr = np.setdiff1d(np.arange(len(y)), val)
        n_inner = min(inner_folds, len(set(groups[tr].tolist())))
        model = train(X[tr], y[tr], lambda_grid, max(n_inner, 2), groups[tr], mask[tr])
        out[val] = model.predict_proba(X[val])
    return out


# ---------------------------------------------------------------------------
# univariate screen
# ---------------------------------------------------------------------------

UNIVARIATE_LAMBDA = 1e-4


@dataclass(frozen=True)
class UnivariateResult:
    item_id: str
    sample_size: int
    auc: float
    normalized_auc: float
    flag: str


def univariate_screen(ds: TrajectoryDataset, lam: float = UNIVARIATE_LAMBDA) -> list[UnivariateResult]:
    """Per-item 1-D logistic fit on the wafers that observed the item.

    AUC is in-sample. Items with fewer than two wafers in either class are
    flagged ``unreliable`` and get a normalized AUC of 0.
    """
    out = []
    for k, item in enumerate(ds.items):
        rows = ds.mask[:, k]
        x = ds.X[rows, k][:, None]
        yk = ds.y[rows]
        n_pos = int(yk.sum())
        n_neg = int(yk.size - n_pos)
        if n_pos < 2 or n_neg < 2:
            out.append(UnivariateResult(item, int(rows.sum()), float("nan"), 0.0, "unreliable"))
            continue
        m = _fit_once(x, yk.astype(np.float64), lam, np.ones(x.shape, dtype=bool))
        auc = roc_auc(m.score(x), yk)
        out.append(UnivariateResult(item, int(rows.sum()), auc, normalized_auc(auc), "ok"))
    return out
