"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``TRAJSHAP_DISABLE_NUMBA`` is
unset (or ``0``). Setting ``TRAJSHAP_DISABLE_NUMBA=1`` forces the numpy path,
which is handy for debugging and for the backend comparison benchmark.

Both backends implement the same algorithm; results agree to rounding, and
each backend is deterministic on its own.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba as nb

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    _HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("TRAJSHAP_DISABLE_NUMBA", "0").strip() not in ("", "0")


USE_NUMBA = _HAVE_NUMBA and not _env_disabled()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _njit(fn):
    if _HAVE_NUMBA:
        return nb.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# lot-sharing counts
# ---------------------------------------------------------------------------


def lot_share_counts_numpy(lot_codes: np.ndarray) -> np.ndarray:
    """Count, for each wafer pair, the operations spent in the same lot.

    ``lot_codes`` is ``(N, J)`` int64 with ``-1`` where the wafer did not run
    operation ``j`` (or ran it after its label point).
    """
    codes = np.asarray(lot_codes, dtype=np.int64)
    n = codes.shape[0]
    out = np.zeros((n, n), dtype=np.int64)
    for j in range(codes.shape[1]):
        col = codes[:, j]
        present = col >= 0
        same = (col[:, None] == col[None, :]) & present[:, None] & present[None, :]
        out += same
    return out


@_njit
def _lot_share_counts_nb(codes):
    n, n_ops = codes.shape
    out = np.zeros((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(a, n):
            c = 0
            for j in range(n_ops):
                la = codes[a, j]
                if la >= 0 and la == codes[b, j]:
                    c += 1
            out[a, b] = c
            out[b, a] = c
    return out


def lot_share_counts_numba(lot_codes: np.ndarray) -> np.ndarray:
    return _lot_share_counts_nb(np.ascontiguousarray(lot_codes, dtype=np.int64))


def lot_share_counts(lot_codes: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return lot_share_counts_numba(lot_codes)
    return lot_share_counts_numpy(lot_codes)


# ---------------------------------------------------------------------------
# L2-regularized logistic regression, full-batch scaled gradient descent
# ---------------------------------------------------------------------------
#
# Objective: mean_i softplus(u_i) - y_i u_i  +  lam/2 * ||w||^2,  u = Z w + b.
# Step direction is the gradient scaled by a fixed diagonal (inverse of a
# curvature bound per coordinate); step length by Armijo backtracking, so the
# objective never increases.

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 60


def _softplus_np(u):
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid_np(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_objective_numpy(Z, y, w, b, lam):
    u = Z @ w + b
    return float(np.mean(_softplus_np(u) - y * u) + 0.5 * lam * np.dot(w, w))


def logistic_gradient_numpy(Z, y, w, b, lam, free):
    u = Z @ w + b
    r = _sigmoid_np(u) - y
    gw = Z.T @ r / Z.shape[0] + lam * w
    gw = np.where(free, gw, 0.0)
    return gw, float(np.mean(r))


def _precond_numpy(Z, lam, free):
    curv = 0.25 * np.mean(Z * Z, axis=0) + lam
    return np.where(free, 1.0 / curv, 0.0), 4.0


def fit_logistic_numpy(Z, y, lam, free, tol, max_iter):
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    free = np.asarray(free, dtype=np.bool_)
    d = Z.shape[1]
    w = np.zeros(d)
    b = 0.0
    pw, pb = _precond_numpy(Z, lam, free)
    losses = np.empty(max_iter + 1)
    loss = logistic_objective_numpy(Z, y, w, b, lam)
    losses[0] = loss
    t = 1.0
    it = 0
    while it < max_iter:
        gw, gb = logistic_gradient_numpy(Z, y, w, b, lam, free)
        gnorm = math.sqrt(float(np.dot(gw, gw)) + gb * gb)
        if gnorm <= tol:
            break
        dw = pw * gw
        db = pb * gb
        decrease = float(np.dot(gw, dw)) + gb * db
        t = min(1.0, 2.0 * t)
        accepted = False
        for _ in range(_MAX_HALVINGS):
            w_new = w - t * dw
            b_new = b - t * db
            new_loss = logistic_objective_numpy(Z, y, w_new, b_new, lam)
            if new_loss <= loss - _ARMIJO_C * t * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable decrease left along this direction
            break
        w, b, loss = w_new, b_new, new_loss
        it += 1
        losses[it] = loss
    return w, b, it, losses[: it + 1].copy()


@_njit
def _softplus_nb(u):
    if u > 0.0:
        return u + math.log1p(math.exp(-u))
    return math.log1p(math.exp(u))


@_njit
def _sigmoid_nb(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@_njit
def _objective_nb(Z, y, w, b, lam):
    n, d = Z.shape
    acc = 0.0
    for i in range(n):
        u = b
        for j in range(d):
            u += Z[i, j] * w[j]
        acc += _softplus_nb(u) - y[i] * u
    reg = 0.0
    for j in range(d):
        reg += w[j] * w[j]
    return acc / n + 0.5 * lam * reg


@_njit
def _gradient_nb(Z, y, w, b, lam, free, gw):
    n, d = Z.shape
    for j in range(d):
        gw[j] = 0.0
    gb = 0.0
    for i in range(n):
        u = b
        for j in range(d):
            u += Z[i, j] * w[j]
        r = _sigmoid_nb(u) - y[i]
        gb += r
        for j in range(d):
            gw[j] += Z[i, j] * r
    for j in range(d):
        if free[j]:
            gw[j] = gw[j] / n + lam * w[j]
        else:
            gw[j] = 0.0
    return gb / n


@_njit
def _fit_logistic_nb(Z, y, lam, free, tol, max_iter):
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    pw = np.zeros(d)
    for j in range(d):
        if free[j]:
            s = 0.0
            for i in range(n):
                s += Z[i, j] * Z[i, j]
            pw[j] = 1.0 / (0.25 * s / n + lam)
    pb = 4.0
    gw = np.zeros(d)
    dw = np.zeros(d)
    w_new = np.zeros(d)
    losses = np.empty(max_iter + 1)
    loss = _objective_nb(Z, y, w, b, lam)
    losses[0] = loss
    t = 1.0
    it = 0
    while it < max_iter:
        gb = _gradient_nb(Z, y, w, b, lam, free, gw)
        g2 = gb * gb
        for j in range(d):
            g2 += gw[j] * gw[j]
        if math.sqrt(g2) <= tol:
            break
        decrease = 0.0
        for j in range(d):
            dw[j] = pw[j] * gw[j]
            decrease += gw[j] * dw[j]
        db = pb * gb
        decrease += gb * db
        t = min(1.0, 2.0 * t)
        accepted = False
        new_loss = loss
        b_new = b
        for _ in range(_MAX_HALVINGS):
            for j in range(d):
                w_new[j] = w[j] - t * dw[j]
            b_new = b - t * db
            new_loss = _objective_nb(Z, y, w_new, b_new, lam)
            if new_loss <= loss - _ARMIJO_C * t * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        for j in range(d):
            w[j] = w_new[j]
        b = b_new
        loss = new_loss
        it += 1
        losses[it] = loss
    return w, b, it, losses[: it + 1].copy()


def fit_logistic_numba(Z, y, lam, free, tol, max_iter):
    w, b, it, losses = _fit_logistic_nb(
        np.ascontiguousarray(Z, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        float(lam),
        np.ascontiguousarray(free, dtype=np.bool_),
        float(tol),
        int(max_iter),
    )
    return w, float(b), int(it), losses


def fit_logistic(Z, y, lam, free, tol=1e-8, max_iter=10_000):
    """Minimize the regularized logistic objective.

    Returns ``(weights, bias, n_iterations, objective_trace)``.
    """
    if USE_NUMBA:
        return fit_logistic_numba(Z, y, lam, free, tol, max_iter)
    return fit_logistic_numpy(Z, y, lam, free, tol, max_iter)


# ---------------------------------------------------------------------------
# Shapley accumulation over an enumerated subset game
# ---------------------------------------------------------------------------


def shapley_weights(d: int) -> np.ndarray:
    """``wt[s] = s! (d-s-1)! / d!`` for a coalition of size ``s`` not holding i."""
    return np.array(
        [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    )


def shapley_from_values_numpy(values: np.ndarray, d: int) -> np.ndarray:
    """Shapley values from ``values[mask]`` = v(S) for every bitmask ``S``."""
    values = np.asarray(values, dtype=np.float64)
    masks = np.arange(1 << d, dtype=np.int64)
    sizes = np.zeros(1 << d, dtype=np.int64)
    for i in range(d):
        sizes += (masks >> i) & 1
    wt = shapley_weights(d)
    out = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        out[i] = np.sum(wt[sizes[without]] * (values[without | bit] - values[without]))
    return out


@_njit
def _shapley_from_values_nb(values, d, wt):
    out = np.zeros(d)
    n_masks = 1 << d
    for mask in range(n_masks):
        size = 0
        m = mask
        while m:
            size += m & 1
            m >>= 1
        if size == d:
            continue
        base = values[mask]
        w = wt[size]
        for i in range(d):
            bit = 1 << i
            if mask & bit == 0:
                out[i] += w * (values[mask | bit] - base)
    return out


def shapley_from_values_numba(values: np.ndarray, d: int) -> np.ndarray:
    return _shapley_from_values_nb(
        np.ascontiguousarray(values, dtype=np.float64), int(d), shapley_weights(d)
    )


def shapley_from_values(values: np.ndarray, d: int) -> np.ndarray:
    if USE_NUMBA:
        return shapley_from_values_numba(values, d)
    return shapley_from_values_numpy(values, d)
