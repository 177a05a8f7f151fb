"""Shapley attribution engines.

Three ways of filling non-participating items are supported:

* ``baseline_mean`` - a fixed reference vector (usually the column means);
* ``conditional_expectation`` - average of ``f`` over background rows;
* ``laki_trajectory`` - the wafer's leave-self-out LAKI baseline.

Standard Shapley values come from full subset enumeration. Trajectory
Shapley scores only look at prefix coalitions ``{1..i}``; with the sum rule
imposed they reduce to one difference of ``f`` per item, i.e. ``D + 1``
model evaluations per wafer.

``f`` is always a batch function: it maps an ``(M, D)`` array to ``M`` values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import _kernels
from .data_model import TrajectoryDataset
from .laki import LotKernel, baseline_matrix

BatchFn = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_D = 20
MAX_ORACLE_D = 12
SUM_RULE_TOL = 1e-9
LARGE_RESIDUAL = 0.5


class Mode(str, enum.Enum):
    BASELINE_MEAN = "baseline_mean"
    CONDITIONAL_EXPECTATION = "conditional_expectation"
    LAKI_TRAJECTORY = "laki_trajectory"


class Method(str, enum.Enum):
    BASELINE = "baseline"
    CE = "ce"
    TSA = "tsa"
    TSA_ORACLE = "tsa_oracle"


class SumRuleError(AssertionError):
    pass


class LakiBackground:
    """Per-wafer trajectory baselines, computed once for a whole dataset."""

    def __init__(self, wafers: Iterable[str], baselines: np.ndarray):
        self.wafers = tuple(wafers)
        self.baselines = np.asarray(baselines, dtype=np.float64)
        self._row = {w: i for i, w in enumerate(self.wafers)}
        if self.baselines.shape[0] != len(self.wafers):
            raise ValueError("one baseline row per wafer required")

    @classmethod
    def from_dataset(cls, ds: TrajectoryDataset, kernel: LotKernel) -> "LakiBackground":
        return cls(ds.wafers, baseline_matrix(ds, kernel))

    def baseline(self, wafer: str) -> np.ndarray:
        try:
            return self.baselines[self._row[wafer]]
        except KeyError:
            raise KeyError(f"no baseline for wafer {wafer!r}") from None


@dataclass(frozen=True)
class ValueFunctionSpec:
    mode: Mode
    f: BatchFn
    background: object

    def __post_init__(self):
        mode = Mode(self.mode)
        object.__setattr__(self, "mode", mode)
        bg = self.background
        if mode is Mode.BASELINE_MEAN and not (isinstance(bg, np.ndarray) and bg.ndim == 1):
            raise TypeError("baseline_mean needs a 1-D reference vector")
        if mode is Mode.CONDITIONAL_EXPECTATION and not (isinstance(bg, np.ndarray) and bg.ndim == 2):
            raise TypeError("conditional_expectation needs a 2-D background matrix")
        if mode is Mode.LAKI_TRAJECTORY and not isinstance(bg, LakiBackground):
            raise TypeError("laki_trajectory needs a LakiBackground")

    def reference(self, wafer: str | None) -> np.ndarray:
        """The fill-in vector(s) for non-members: 1-D, or 2-D for CE."""
        if self.mode is Mode.LAKI_TRAJECTORY:
            if wafer is None:
                raise ValueError("laki_trajectory value function needs a wafer id")
            return self.background.baseline(wafer)
        return self.background


@dataclass(frozen=True)
class AttributionVector:
    wafer_id: str | None
    scores: np.ndarray
    v_full: float
    v_empty: float
    method: Method

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        resid = self.sum_rule_residual
        scale = max(1.0, abs(self.v_full), abs(self.v_empty))
        if not resid <= SUM_RULE_TOL * scale:
            raise SumRuleError(
                f"scores sum to {float(np.sum(self.scores))!r}, expected "
                f"{self.v_full - self.v_empty!r} (residual {resid:.3e})"
            )

    @property
    def sum_rule_residual(self) -> float:
        return float(abs(np.sum(self.scores) - (self.v_full - self.v_empty)))


def _coalition_mask(coalition, d: int) -> np.ndarray:
    m = np.zeros(d, dtype=bool)
    idx = list(coalition)
    if any(i < 0 or i >= d for i in idx):
        raise IndexError(f"coalition {sorted(idx)} outside 0..{d - 1}")
    m[idx] = True
    return m


def is_admissible(coalition, d: int) -> bool:
    """True iff the (0-based) coalition is a prefix ``{0..k-1}``."""
    members = sorted(set(coalition))
    return members == list(range(len(members))) and len(members) <= d


def _eval_masks(spec: ValueFunctionSpec, masks: np.ndarray, x_t: np.ndarray, wafer) -> np.ndarray:
    """v(S) for each boolean row of ``masks``."""
    ref = spec.reference(wafer)
    if spec.mode is Mode.CONDITIONAL_EXPECTATION:
        bg = np.asarray(ref, dtype=np.float64)
        out = np.empty(masks.shape[0])
        for r, m in enumerate(masks):
            hyb = np.where(m[None, :], x_t[None, :], bg)
            out[r] = float(np.mean(spec.f(hyb)))
        return out
    hyb = np.where(masks, x_t[None, :], np.asarray(ref)[None, :])
    return np.asarray(spec.f(hyb), dtype=np.float64).reshape(-1)


def value(spec: ValueFunctionSpec, coalition, x_t, wafer: str | None = None) -> float:
    """Value of a coalition of 0-based item indices.

    Members keep the test wafer's values; non-members come from the value
    function's background.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    m = _coalition_mask(coalition, x_t.size)
    if not np.all(np.isfinite(x_t[m])):
        raise ValueError("x_t must be finite on coalition members")
    return float(_eval_masks(spec, m[None, :], x_t, wafer)[0])


def _all_masks(d: int) -> np.ndarray:
    codes = np.arange(1 << d, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(bool)


def subset_values(spec: ValueFunctionSpec, x_t, wafer=None, chunk: int = 1 << 14) -> np.ndarray:
    """v(S) for every subset, indexed by bitmask (bit i = item i)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.size
    out = np.empty(1 << d)
    for start in range(0, 1 << d, chunk):
        codes = np.arange(start, min(start + chunk, 1 << d), dtype=np.int64)
        masks = ((codes[:, None] >> np.arange(d)) & 1).astype(bool)
        out[start : start + codes.size] = _eval_masks(spec, masks, x_t, wafer)
    return out


def shapley_exact(spec: ValueFunctionSpec, x_t, wafer: str | None = None) -> AttributionVector:
    """Classical Shapley values by enumerating all ``2**D`` coalitions."""
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.size
    if d > MAX_EXACT_D:
        raise ValueError(
            f"D={d} exceeds the enumeration limit {MAX_EXACT_D}; use trajectory_shapley "
            "(closed form) or a sampling estimator instead"
        )
    vals = subset_values(spec, x_t, wafer)
    sv = _kernels.shapley_from_values(vals, d)
    method = Method.CE if spec.mode is Mode.CONDITIONAL_EXPECTATION else Method.BASELINE
    return AttributionVector(wafer, sv, float(vals[-1]), float(vals[0]), method)


def prefix_hybrids(x_t: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Row ``i`` (0..D) is ``x_t`` on the first ``i`` items and ``x0`` after."""
    d = x_t.size
    lower = np.tri(d + 1, d, k=-1, dtype=bool)
    return np.where(lower, x_t[None, :], x0[None, :])


def trajectory_shapley(spec: ValueFunctionSpec, x_t, wafer: str | None = None) -> AttributionVector:
    """Closed-form trajectory Shapley scores.

    ``s_i = f(x_t[:i+1], x0[i+1:]) - f(x_t[:i], x0[i:])``; the scores telescope,
    so they sum to ``f(x_t) - f(x0)``.
    """
    if Mode(spec.mode) is not Mode.LAKI_TRAJECTORY:
        raise ValueError("trajectory_shapley requires a laki_trajectory value function")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(spec.reference(wafer), dtype=np.float64)
    if x0.shape != x_t.shape:
        raise ValueError("baseline and x_t differ in length")
    v = np.asarray(spec.f(prefix_hybrids(x_t, x0)), dtype=np.float64).reshape(-1)
    return AttributionVector(wafer, np.diff(v), float(v[-1]), float(v[0]), Method.TSA)


def trajectory_shapley_oracle(
    spec: ValueFunctionSpec, x_t, wafer: str | None = None, counter: list | None = None
) -> AttributionVector:
    """Prefix-enumeration reference for :func:`trajectory_shapley`.

    Walks the admissible coalitions ``{}, {0}, {0,1}, ...`` through
    :func:`value` one at a time and differences consecutive values.
    ``counter`` (a list) receives one entry per value evaluation.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.size
    if d > MAX_ORACLE_D:
        raise ValueError(f"D={d} exceeds the oracle limit {MAX_ORACLE_D}")
    prefixes = [tuple(range(k)) for k in range(d + 1)]
    vals = []
    for s in prefixes:
        assert is_admissible(s, d)
        vals.append(value(spec, s, x_t, wafer))
        if counter is not None:
            counter.append(s)
    scores = np.array([vals[i + 1] - vals[i] for i in range(d)])
    return AttributionVector(wafer, scores, vals[-1], vals[0], Method.TSA_ORACLE)


@dataclass(frozen=True)
class DeviationReport:
    attribution: AttributionVector
    y_true: int
    residual: float
    large_residual: bool


def deviation_report(attr: AttributionVector, y_true: int) -> DeviationReport:
    """Attach ``f(x_t) - y`` so callers can tell a wrong prediction from a
    confidently explained one."""
    if y_true not in (0, 1):
        raise ValueError("y_true must be 0 or 1")
    resid = attr.v_full - y_true
    return DeviationReport(attr, int(y_true), float(resid), bool(abs(resid) > LARGE_RESIDUAL))


def model_function(model, kind: str = "probability") -> BatchFn:
    """Wrap a :class:`~trajshap.classifier.LogisticModel` as a batch ``f``."""
    if kind == "probability":
        return lambda X: np.atleast_1d(model.predict_proba(np.atleast_2d(X)))
    if kind == "logit":
        return lambda X: np.atleast_1d(model.score(np.atleast_2d(X)))
    raise ValueError(f"unknown f mode {kind!r}")


def build_spec(
    mode: Mode | str,
    f: BatchFn,
    ds: TrajectoryDataset | None = None,
    kernel: LotKernel | None = None,
    X_background: np.ndarray | None = None,
    reference: np.ndarray | None = None,
) -> ValueFunctionSpec:
    mode = Mode(mode)
    if mode is Mode.BASELINE_MEAN:
        if reference is None:
            if X_background is None:
                raise ValueError("baseline_mean needs a reference or background matrix")
            reference = np.asarray(X_background).mean(axis=0)
        return ValueFunctionSpec(mode, f, np.asarray(reference, dtype=np.float64))
    if mode is Mode.CONDITIONAL_EXPECTATION:
        if X_background is None:
            raise ValueError("conditional_expectation needs a background matrix")
        return ValueFunctionSpec(mode, f, np.asarray(X_background, dtype=np.float64))
    if ds is None or kernel is None:
        raise ValueError("laki_trajectory needs a dataset and its lot kernel")
    return ValueFunctionSpec(mode, f, LakiBackground.from_dataset(ds, kernel))
