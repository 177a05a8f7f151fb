"""Randomized self-check of the Shapley engines.

Each instance is generated from its own integer seed, so a failure can be
replayed in isolation with ``run_validation(max_d, seed=<printed seed>,
n_instances=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import shapley
from .shapley import LakiBackground, Mode, ValueFunctionSpec

TOL_EXACT = 1e-12
TOL_AXIOM = 1e-9
MAX_AXIOM_D = 8


@dataclass
class ValidationReport:
    n_instances: int = 0
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def random_linear(rng, d):
    w = rng.normal(size=d)
    b = float(rng.normal())
    return w, b, (lambda X: np.asarray(X) @ w + b)


def random_nonlinear(rng, d):
    """Sigmoid of a random quadratic form; items interact."""
    w = rng.normal(size=d)
    Q = rng.normal(scale=0.5, size=(d, d))
    Q = 0.5 * (Q + Q.T)

    def f(X):
        X = np.atleast_2d(X)
        u = X @ w + np.einsum("ij,jk,ik->i", X, Q, X)
        return 1.0 / (1.0 + np.exp(-u))

    return f


def _tsa_spec(f, x0):
    return ValueFunctionSpec(Mode.LAKI_TRAJECTORY, f, LakiBackground(["w"], x0[None, :]))


def check_instance(seed: int, max_d: int, closed_form: Callable = shapley.trajectory_shapley) -> list[str]:
    rng = np.random.Generator(np.random.PCG64(seed))
    d = int(rng.integers(1, max_d + 1))
    x_t = rng.normal(size=d)
    x0 = rng.normal(size=d)
    problems = []

    w, b, f_lin = random_linear(rng, d)
    f_nl = random_nonlinear(rng, d)
    for name, f in (("linear", f_lin), ("nonlinear", f_nl)):
        spec = _tsa_spec(f, x0)
        try:
            fast = closed_form(spec, x_t, "w")
        except AssertionError as exc:
            problems.append(f"{name}: closed form rejected: {exc}")
            continue
        slow = shapley.trajectory_shapley_oracle(spec, x_t, "w")
        gap = float(np.max(np.abs(fast.scores - slow.scores)))
        if gap > TOL_EXACT:
            problems.append(f"{name}: closed form vs prefix oracle differ by {gap:.3e} (D={d})")
        if fast.sum_rule_residual > TOL_AXIOM:
            problems.append(f"{name}: sum rule residual {fast.sum_rule_residual:.3e}")
        if name == "linear":
            expect = w * (x_t - x0)
            gap = float(np.max(np.abs(fast.scores - expect)))
            if gap > TOL_EXACT * max(1.0, float(np.max(np.abs(expect)))):
                problems.append(f"linear: scores off w*(x_t - x0) by {gap:.3e}")

    if d <= MAX_AXIOM_D:
        ref = rng.normal(size=d)
        spec = ValueFunctionSpec(Mode.BASELINE_MEAN, f_nl, ref)
        sv = shapley.shapley_exact(spec, x_t).scores
        v_empty = float(f_nl(ref[None, :])[0])
        v_full = float(f_nl(x_t[None, :])[0])
        if abs(sv.sum() - (v_full - v_empty)) > TOL_AXIOM:
            problems.append("standard SV: efficiency violated")
        if d >= 2:
            # dummy: make item 0 irrelevant
            def f_dummy(X, f=f_nl):
                X = np.array(X, dtype=np.float64, copy=True)
                X[:, 0] = 0.0
                return f(X)

            sv_d = shapley.shapley_exact(ValueFunctionSpec(Mode.BASELINE_MEAN, f_dummy, ref), x_t).scores
            if abs(sv_d[0]) > TOL_AXIOM:
                problems.append(f"standard SV: dummy item got {sv_d[0]:.3e}")
            # symmetry: f symmetric in items 0 and 1, equal inputs on both
            def f_sym(X, f=f_nl):
                X = np.asarray(X, dtype=np.float64)
                Xs = X.copy()
                Xs[:, [0, 1]] = X[:, [1, 0]]
                return 0.5 * (f(X) + f(Xs))

            xs, rs = x_t.copy(), ref.copy()
            xs[1], rs[1] = xs[0], rs[0]
            sv_s = shapley.shapley_exact(ValueFunctionSpec(Mode.BASELINE_MEAN, f_sym, rs), xs).scores
            if abs(sv_s[0] - sv_s[1]) > TOL_AXIOM:
                problems.append(f"standard SV: symmetric items differ by {abs(sv_s[0] - sv_s[1]):.3e}")
    return problems


def run_validation(max_d: int = 12, seed: int = 0, n_instances: int = 200,
                   closed_form: Callable = shapley.trajectory_shapley) -> ValidationReport:
    if not 1 <= max_d <= shapley.MAX_ORACLE_D:
        raise ValueError(f"max_d must lie in [1, {shapley.MAX_ORACLE_D}]")
    rep = ValidationReport()
    for i in range(n_instances):
        inst = seed + i
        for msg in check_instance(inst, max_d, closed_form):
            rep.failures.append((inst, msg))
        rep.n_instances += 1
    return rep


def broken_closed_form(spec, x_t, wafer=None):
    """Deliberately wrong trajectory scores (reversed), for exercising the
    failure path of the validator."""
    good = shapley.trajectory_shapley(spec, x_t, wafer)
    return shapley.AttributionVector(good.wafer_id, good.scores[::-1].copy(), good.v_full,
                                     good.v_empty, good.method)
