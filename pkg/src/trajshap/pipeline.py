"""End-to-end steps shared by the CLI and the acceptance checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import classifier, laki, report, shapley
from .data_model import TrajectoryDataset

IMPUTATION_MODES = ("laki", "column_mean")


def fill(ds: TrajectoryDataset, mode: str, kernel: laki.LotKernel | None = None) -> laki.ImputedDataset:
    if mode == "laki":
        return laki.impute(ds, kernel if kernel is not None else laki.build_lot_kernel(ds))
    if mode == "column_mean":
        return laki.impute_column_mean(ds)
    raise ValueError(f"unknown imputation mode {mode!r}")


def heldout_report(
    ds: TrajectoryDataset,
    mode: str,
    lambda_grid=classifier.DEFAULT_LAMBDA_GRID,
    folds: int = 3,
    seed: int = 0,
    threshold: float = 0.5,
    kernel: laki.LotKernel | None = None,
) -> classifier.EvalReport:
    """Out-of-fold evaluation of the classifier under one imputation mode."""
    X = fill(ds, mode, kernel).X_filled
    p = classifier.cross_fit_proba(
        X, ds.y, ds.groups(), ds.mask, lambda_grid, outer_folds=folds, inner_folds=folds,
        seed=seed,
    )
    return classifier.evaluate(p, ds.y, threshold)


def fit_model(ds, mode="laki", lambda_grid=classifier.DEFAULT_LAMBDA_GRID, folds=3, kernel=None,
              rows=None) -> classifier.LogisticModel:
    X = fill(ds, mode, kernel).X_filled
    rows = np.arange(ds.N) if rows is None else np.asarray(rows)
    groups = ds.groups()[rows]
    n_groups = len(set(groups.tolist()))
    return classifier.train(X[rows], ds.y[rows], lambda_grid, min(folds, n_groups), groups,
                            ds.mask[rows], ds.items)


def attribute(
    ds: TrajectoryDataset,
    model: classifier.LogisticModel,
    wafer: str,
    method: str = "tsa",
    f_mode: str = "probability",
    kernel: laki.LotKernel | None = None,
    imputation: str = "laki",
    background: shapley.LakiBackground | None = None,
) -> shapley.AttributionVector:
    """Attribution scores for one wafer.

    The wafer's own row is LAKI-filled for trajectory scores (so its unmeasured
    items coincide with the baseline and score 0); the baseline and CE methods
    fill it with the configured imputation and use the filled matrix as their
    background.
    """
    if tuple(model.items) and tuple(model.items) != tuple(ds.items):
        raise ValueError("model items do not match dataset items")
    kernel = kernel if kernel is not None else laki.build_lot_kernel(ds)
    n = ds.wafer_index(wafer)
    f = shapley.model_function(model, f_mode)
    if method == "tsa":
        X = laki.impute(ds, kernel).X_filled
        bg = background if background is not None else shapley.LakiBackground.from_dataset(ds, kernel)
        spec = shapley.ValueFunctionSpec(shapley.Mode.LAKI_TRAJECTORY, f, bg)
        return shapley.trajectory_shapley(spec, X[n], wafer)
    X = fill(ds, imputation, kernel).X_filled
    if method == "baseline":
        spec = shapley.build_spec(shapley.Mode.BASELINE_MEAN, f, X_background=X)
    elif method == "ce":
        spec = shapley.build_spec(shapley.Mode.CONDITIONAL_EXPECTATION, f, X_background=X)
    else:
        raise ValueError(f"unknown shapley method {method!r}")
    return shapley.shapley_exact(spec, X[n], wafer)


@dataclass(frozen=True)
class RecoveryResult:
    hit_rate: float
    n_wafers: int
    hits: tuple[str, ...]
    misses: tuple[str, ...]


def root_cause_recovery(
    ds: TrajectoryDataset,
    causal_items,
    defect_wafers,
    top: int = 3,
    folds: int = 3,
    seed: int = 0,
    lambda_grid=classifier.DEFAULT_LAMBDA_GRID,
) -> RecoveryResult:
    """Share of defect wafers whose top-``top`` items by ``|s_i|`` contain a
    planted cause.

    Each wafer is attributed with a model trained on the other folds, so every
    scored wafer lies outside its model's training set.
    """
    kernel = laki.build_lot_kernel(ds)
    X = laki.impute(ds, kernel).X_filled
    bg = shapley.LakiBackground.from_dataset(ds, kernel)
    causal = set(causal_items)
    wanted = set(defect_wafers)
    hits, misses = [], []
    for val in classifier.stratified_folds(ds.y, folds, seed):
        tr = np.setdiff1d(np.arange(ds.N), val)
        model = fit_model(ds, "laki", lambda_grid, folds, kernel, rows=tr)
        spec = shapley.ValueFunctionSpec(shapley.Mode.LAKI_TRAJECTORY, shapley.model_function(model), bg)
        for i in val:
            w = ds.wafers[i]
            if w not in wanted:
                continue
            a = shapley.trajectory_shapley(spec, X[i], w)
            ranked = [r.item_id for r in report.rank_items(a, ds.order)[:top]]
            (hits if causal & set(ranked) else misses).append(w)
    total = len(hits) + len(misses)
    return RecoveryResult(len(hits) / total if total else float("nan"), total, tuple(hits),
                          tuple(misses))
