"""Lot-aware kernel imputation.

Wafers that ran many operations in the same lot are treated as close peers:
``C[n, m]`` counts shared (op_index, lot) pairs, ``W`` is the Jaccard index
of the two operation histories, and a missing cell is filled with the
``W``-weighted average of the peers that observed that item.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data_model import TrajectoryDataset, dataset_to_dict


class Provenance(enum.IntEnum):
    OBSERVED = 0
    KERNEL_IMPUTED = 1
    COLUMN_MEAN_FALLBACK = 2


@dataclass(frozen=True, eq=False)
class LotKernel:
    C: np.ndarray
    W: np.ndarray


@dataclass(frozen=True, eq=False)
class ImputedDataset:
    X_filled: np.ndarray
    provenance: np.ndarray
    column_means: np.ndarray


def lot_code_matrix(ds: TrajectoryDataset) -> np.ndarray:
    """``(N, J)`` matrix of integer lot codes per operation, ``-1`` if absent."""
    lot_ids = sorted({lot for w in ds.wafers for _, lot in ds.ops[w]})
    code = {lot: i for i, lot in enumerate(lot_ids)}
    n_ops = 1 + max((op for w in ds.wafers for op, _ in ds.ops[w]), default=-1)
    out = np.full((ds.N, max(n_ops, 0)), -1, dtype=np.int64)
    for n, w in enumerate(ds.wafers):
        for op, lot in ds.ops[w]:
            out[n, op] = code[lot]
    return out


def jaccard_from_counts(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    diag = np.diag(C)
    denom = diag[:, None] + diag[None, :] - C
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(denom > 0, C / denom, 0.0)
    np.fill_diagonal(W, 0.0)
    return W


def build_lot_kernel(ds: TrajectoryDataset) -> LotKernel:
    """Lot-sharing counts and their Jaccard kernel.

    Each wafer's operation log already stops before its label measurement, so
    an operation present in both logs lies before both label points.
    """
    empty = [w for w in ds.wafers if len(ds.ops[w]) == 0]
    if empty:
        raise ValueError(f"wafer(s) with zero operations, Jaccard undefined: {empty[:5]}")
    C = _kernels.lot_share_counts(lot_code_matrix(ds))
    return LotKernel(C=C, W=jaccard_from_counts(C))


def _observed_parts(ds: TrajectoryDataset):
    M = ds.mask.astype(np.float64)
    X0 = np.where(ds.mask, ds.X, 0.0)
    return X0, M


def column_means(ds: TrajectoryDataset) -> np.ndarray:
    X0, M = _observed_parts(ds)
    counts = M.sum(axis=0)
    sums = X0.sum(axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)


def _kernel_average(W: np.ndarray, X0: np.ndarray, M: np.ndarray):
    num = W @ X0
    den = W @ M
    return num, den


def impute(ds: TrajectoryDataset, kernel: LotKernel) -> ImputedDataset:
    """Fill every missing cell; observed cells are copied through untouched.

    Normalization runs over the peers that observed the item, so each filled
    value is a convex combination of observed values. With no weighted peer
    the column mean is used; an item observed nowhere is filled with 0.
    """
    W = np.asarray(kernel.W, dtype=np.float64)
    if W.shape != (ds.N, ds.N):
        raise ValueError("kernel does not match dataset size")
    X0, M = _observed_parts(ds)
    num, den = _kernel_average(W, X0, M)
    means = column_means(ds)
    has_peer = den > 0
    filled = np.where(has_peer, num / np.where(has_peer, den, 1.0), means[None, :])
    X_filled = np.where(ds.mask, ds.X, filled)
    prov = np.where(
        ds.mask,
        Provenance.OBSERVED,
        np.where(has_peer, Provenance.KERNEL_IMPUTED, Provenance.COLUMN_MEAN_FALLBACK),
    ).astype(np.int8)
    return ImputedDataset(X_filled=X_filled, provenance=prov, column_means=means)


def impute_column_mean(ds: TrajectoryDataset) -> ImputedDataset:
    """Plain per-item mean fill, the no-kernel reference."""
    means = column_means(ds)
    X_filled = np.where(ds.mask, ds.X, means[None, :])
    prov = np.where(ds.mask, Provenance.OBSERVED, Provenance.COLUMN_MEAN_FALLBACK).astype(np.int8)
    return ImputedDataset(X_filled=X_filled, provenance=prov, column_means=means)


def baseline_matrix(ds: TrajectoryDataset, kernel: LotKernel) -> np.ndarray:
    """Leave-self-out LAKI baseline for every wafer, ``(N, D)``.

    Row ``n`` is what LAKI would impute for wafer ``n`` if none of its own
    cells were observed. ``W[n, n] = 0`` keeps the wafer out of the kernel
    average; the column-mean fallback also excludes the wafer's own value.
    """
    W = np.asarray(kernel.W, dtype=np.float64)
    X0, M = _observed_parts(ds)
    num, den = _kernel_average(W, X0, M)
    counts = M.sum(axis=0)[None, :] - M
    sums = X0.sum(axis=0)[None, :] - X0
    loo_mean = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    has_peer = den > 0
    return np.where(has_peer, num / np.where(has_peer, den, 1.0), loo_mean)


def baseline_trajectory(ds: TrajectoryDataset, kernel: LotKernel, wafer: str) -> np.ndarray:
    n = ds.wafer_index(wafer)
    W = np.asarray(kernel.W, dtype=np.float64)
    X0, M = _observed_parts(ds)
    w = W[n].copy()
    w[n] = 0.0
    num = w @ X0
    den = w @ M
    counts = M.sum(axis=0) - M[n]
    sums = X0.sum(axis=0) - X0[n]
    loo_mean = np.where(counts > 0, sums / np.maximum(counts, 1.0), 0.0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), loo_mean)


def imputed_to_dict(ds: TrajectoryDataset, imp: ImputedDataset) -> dict:
    """Dataset JSON layout with the filled matrix and a parallel provenance
    matrix of integer codes."""
    doc = dataset_to_dict(ds)
    doc["X"] = imp.X_filled.tolist()
    doc["provenance"] = imp.provenance.astype(int).tolist()
    doc["provenance_codes"] = {p.name.lower(): int(p) for p in Provenance}
    doc["column_means"] = imp.column_means.tolist()
    return doc
