"""Synthetic fab data with lots, sparse sampling and planted root causes.

Random numbers come from numpy's PCG64 bit generator seeded with
``SynthSpec.seed`` (``numpy.random.Generator(numpy.random.PCG64(seed))``),
drawn in a fixed order, so a (seed, spec) pair always yields the same CSVs.

Process model
-------------
Every wafer runs ``2 * n_items`` operations. Item ``k`` is measured at
operation ``2k + 1``; a reentrant item also gets an earlier decoy reading at
an even operation, which ingestion must discard. Lots occasionally split
(half the wafers move to a new lot) or merge, so wafers share varying parts
of their history.

A measurement value is ``mean_k + scale_k * z`` with latent
``z = lot_effect[lot at op, k] + wafer_load_k * wafer_effect + noise``. The
true defect logit is ``intercept + causal_effect_size * sum(z_c / sd(z_c))``
over the planted items, with the intercept centring the logits at their
median. Labels are Bernoulli draws, then flipped with ``label_noise``.

Observation pattern: planted items are measured on most wafers
(``causal_sampling_rate``); other items get a heavy-tailed per-item rate,
realized mostly by sampling whole lots and measuring part of each sampled
lot. A final wafer-level pass adds or removes single cells among the
non-planted items so that the observed fraction equals
``1 - missing_rate_target`` up to rounding.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data_model import (
    LABEL_HEADER,
    MEASUREMENT_HEADER,
    OPS_HEADER,
    MeasurementRecord,
)

OUTPUT_FILES = ("measurements.csv", "labels.csv", "ops.csv", "ground_truth.json")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_lots: int = 6
    wafers_per_lot: int = 8
    n_items: int = 40
    missing_rate_target: float = 0.94
    n_causal_items: int = 2
    causal_effect_size: float = 3.0
    label_noise: float = 0.05
    lot_effect_sd: float = 1.0
    reentrant_rate: float = 0.1
    # knobs beyond the core list above
    wafer_effect_sd: float = 0.5
    causal_sampling_rate: float = 0.9
    sparse_causal_items: int = 1
    sparse_causal_rate: float = 0.3
    sparse_causal_lot_sd: float = 3.0
    split_merge_rate: float = 0.05
    lot_sampling_share: float = 0.5

    def __post_init__(self):
        if self.n_lots < 1 or self.wafers_per_lot < 1 or self.n_lots * self.wafers_per_lot < 2:
            raise ValueError("need at least two wafers (n_lots * wafers_per_lot >= 2)")
        if self.n_items < 1:
            raise ValueError("n_items must be >= 1")
        if not 0 <= self.n_causal_items <= self.n_items:
            raise ValueError("n_causal_items must lie in [0, n_items]")
        if not 0.0 <= self.missing_rate_target < 1.0:
            raise ValueError("missing_rate_target must lie in [0, 1)")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")
        if not 0.0 <= self.reentrant_rate <= 1.0:
            raise ValueError("reentrant_rate must lie in [0, 1]")
        if self.lot_effect_sd < 0 or self.wafer_effect_sd < 0 or self.sparse_causal_lot_sd < 0:
            raise ValueError("effect standard deviations must be >= 0")
        if not 0.0 <= self.causal_sampling_rate <= 1.0:
            raise ValueError("causal_sampling_rate must lie in [0, 1]")
        if not 0 <= self.sparse_causal_items <= self.n_causal_items:
            raise ValueError("sparse_causal_items must lie in [0, n_causal_items]")
        if not 0.0 <= self.sparse_causal_rate <= 1.0:
            raise ValueError("sparse_causal_rate must lie in [0, 1]")
        if not 0.0 <= self.split_merge_rate <= 1.0:
            raise ValueError("split_merge_rate must lie in [0, 1]")
        if not 0.0 < self.lot_sampling_share <= 1.0:
            raise ValueError("lot_sampling_share must lie in (0, 1]")

    @property
    def n_wafers(self) -> int:
        return self.n_lots * self.wafers_per_lot

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec field(s): {sorted(unknown)}")
        ints = {"seed", "n_lots", "wafers_per_lot", "n_items", "n_causal_items"}
        clean = {}
        for k, v in doc.items():
            if k in ints:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ValueError(f"{k} must be an integer")
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"{k} must be a number")
            clean[k] = v
        return cls(**clean)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("SynthSpec JSON must be an object")
        return cls.from_dict(doc)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    causal_item_ids: tuple[str, ...]
    true_logit_weights: np.ndarray
    intercept: float
    wafer_ids: tuple[str, ...]
    true_logit: np.ndarray
    clean_label: np.ndarray
    latent_X: np.ndarray = field(repr=False)

    def to_dict(self, items) -> dict:
        return {
            "causal_item_ids": list(self.causal_item_ids),
            "items": list(items),
            "true_logit_weights": [float(v) for v in self.true_logit_weights],
            "intercept": float(self.intercept),
            "wafers": list(self.wafer_ids),
            "true_logit": [float(v) for v in self.true_logit],
            "clean_label": [int(v) for v in self.clean_label],
        }


@dataclass(frozen=True, eq=False)
class SynthOutput:
    spec: SynthSpec
    records: list[MeasurementRecord]
    labels: dict[str, int]
    ops_log: dict[str, list[tuple[int, str]]]
    truth: GroundTruth
    items: tuple[str, ...]


def item_name(k: int) -> str:
    return f"ITEM_{k:03d}"


def _lot_history(spec: SynthSpec, rng: np.random.Generator, n_ops: int) -> np.ndarray:
    """Integer lot label per (wafer, op)."""
    n = spec.n_wafers
    current = np.repeat(np.arange(spec.n_lots), spec.wafers_per_lot)
    next_id = spec.n_lots
    hist = np.empty((n, n_ops), dtype=np.int64)
    for j in range(n_ops):
        if j > 0 and rng.random() < spec.split_merge_rate:
            lots = np.unique(current)
            if rng.random() < 0.5:
                big = [l for l in lots if np.sum(current == l) >= 2]
                if big:
                    lot = big[rng.integers(len(big))]
                    members = np.flatnonzero(current == lot)
                    moved = rng.choice(members, size=members.size // 2, replace=False)
                    current = current.copy()
                    current[moved] = next_id
                    next_id += 1
            elif lots.size > spec.n_lots:
                a, b = rng.choice(lots, size=2, replace=False)
                current = np.where(current == b, a, current)
        hist[:, j] = current
    return hist


def _timestamps(spec, rng, lot_hist) -> np.ndarray:
    n, n_ops = lot_hist.shape
    clock = np.repeat(rng.uniform(0.0, 5 * 86400.0, size=spec.n_lots), spec.wafers_per_lot)
    clock = clock + 3600.0
    out = np.empty((n, n_ops))
    for j in range(n_ops):
        for lot in np.unique(lot_hist[:, j]):
            members = lot_hist[:, j] == lot
            start = clock[members].max()
            clock[members] = start + 3600.0 * (1.0 + rng.exponential(2.0))
        out[:, j] = clock
    return out


def _noncausal_rates(spec, rng, noncausal, budget) -> np.ndarray:
    n = spec.n_wafers
    raw = rng.lognormal(mean=0.0, sigma=1.0, size=len(noncausal))
    rates = np.zeros(len(noncausal))
    if budget <= 0 or len(noncausal) == 0:
        return rates
    target = budget / n
    # water-fill: scale the raw weights so the capped rates sum to target
    free = np.ones(len(noncausal), dtype=bool)
    for _ in range(len(noncausal) + 1):
        remaining = target - np.sum(~free)
        scale = remaining / raw[free].sum() if free.any() else 0.0
        rates = np.where(free, raw * scale, 1.0)
        over = free & (rates > 1.0)
        if not over.any():
            break
        free &= ~over
    return np.clip(rates, 0.0, 1.0)


def generate(spec: SynthSpec) -> SynthOutput:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, d = spec.n_wafers, spec.n_items
    n_ops = 2 * d
    wafers = tuple(f"W{i:04d}" for i in range(n))
    items = tuple(item_name(k) for k in range(d))

    total = n * d
    target_obs = int(round(total * (1.0 - spec.missing_rate_target)))
    if target_obs == 0:
        raise ValueError(
            f"missing_rate_target={spec.missing_rate_target} leaves no observation out of "
            f"{total} cells; every wafer would lose every item"
        )

    lot_hist = _lot_history(spec, rng, n_ops)
    ts = _timestamps(spec, rng, lot_hist)
    true_op = 2 * np.arange(d) + 1

    # planted causes; the last ``sparse_causal_items`` of them are sampled lot-wise
    causal = np.sort(rng.choice(d, size=spec.n_causal_items, replace=False))
    n_dense = spec.n_causal_items - spec.sparse_causal_items
    dense, sparse = causal[:n_dense], causal[n_dense:]
    lot_sd = np.full(d, spec.lot_effect_sd)
    lot_sd[sparse] = spec.sparse_causal_lot_sd

    # latent values
    item_mean = rng.normal(0.0, 5.0, size=d)
    item_scale = rng.lognormal(0.0, 0.5, size=d)
    wafer_load = rng.choice([-1.0, 1.0], size=d) * rng.uniform(0.5, 1.0, size=d)
    wafer_eff = rng.normal(0.0, spec.wafer_effect_sd, size=n)
    n_lot_ids = int(lot_hist.max()) + 1
    lot_eff = rng.normal(0.0, 1.0, size=(n_lot_ids, d)) * lot_sd
    noise = rng.normal(0.0, 1.0, size=(n, d))
    lots_at_item = lot_hist[:, true_op]
    z = lot_eff[lots_at_item, np.arange(d)[None, :]] + wafer_eff[:, None] * wafer_load + noise
    z_sd = np.sqrt(lot_sd**2 + (spec.wafer_effect_sd * wafer_load) ** 2 + 1.0)
    latent = item_mean + item_scale * z

    # labels
    w_std = np.zeros(d)
    w_std[causal] = spec.causal_effect_size
    contrib = (z / z_sd) @ w_std
    intercept_std = -float(np.median(contrib)) if spec.n_causal_items else 0.0
    logit = intercept_std + contrib
    clean = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)
    flip = rng.random(n) < spec.label_noise
    y = np.where(flip, 1 - clean, clean)
    # same logit expressed in raw measurement units
    w_raw = w_std / (z_sd * item_scale)
    intercept_raw = intercept_std - float(np.sum(w_raw * item_mean))

    # observation pattern
    observed = np.zeros((n, d), dtype=bool)
    is_causal = np.zeros(d, dtype=bool)
    is_causal[causal] = True
    if spec.missing_rate_target == 0.0:
        observed[:] = True
    else:
        floor = 1.0 - spec.missing_rate_target
        c_rate = max(spec.causal_sampling_rate, floor)
        s_rate = max(spec.sparse_causal_rate, floor)
        want = n * (len(dense) * c_rate + len(sparse) * s_rate)
        if want > target_obs:
            c_rate *= target_obs / want
            s_rate *= target_obs / want
        share = spec.lot_sampling_share

        def lot_sample(k, rate):
            lot_p = min(1.0, rate / share)
            in_lot_p = min(1.0, rate / lot_p) if lot_p > 0 else 0.0
            for lot in np.unique(lots_at_item[:, k]):
                members = np.flatnonzero(lots_at_item[:, k] == lot)
                if rng.random() < lot_p:
                    observed[members, k] = rng.random(members.size) < in_lot_p

        for k in dense:
            observed[:, k] = rng.random(n) < c_rate
        for k in sparse:
            lot_sample(k, s_rate)
        noncausal = np.flatnonzero(~is_causal)
        budget = target_obs - int(observed.sum())
        rates = _noncausal_rates(spec, rng, noncausal, budget)
        for k, rate in zip(noncausal, rates):
            lot_sample(k, rate)
        # an item nobody measured would not exist in the logs at all
        for k in noncausal:
            if not observed[:, k].any():
                observed[rng.integers(n), k] = True
        # wafer-level fill to the exact observation budget
        pool = np.zeros((n, d), dtype=bool)
        pool[:, noncausal] = True
        diff = target_obs - int(observed.sum())
        if diff > 0:
            cand = np.flatnonzero((pool & ~observed).ravel())
            pick = rng.choice(cand, size=min(diff, cand.size), replace=False)
            observed.ravel()[pick] = True
        elif diff < 0:
            # thin only items that keep at least one reading
            removable = pool & observed & (observed.sum(axis=0) >= 2)[None, :]
            cand = np.flatnonzero(removable.ravel())
            for c in rng.permutation(cand):
                if diff == 0:
                    break
                k = c % d
                if observed[:, k].sum() >= 2:
                    observed.ravel()[c] = False
                    diff += 1

    # reentrant decoys: an earlier, different reading of a few items
    n_re = int(round(spec.reentrant_rate * d))
    reentrant = np.sort(rng.choice(d, size=n_re, replace=False)) if n_re else np.array([], int)
    decoy_op = {int(k): 2 * int(rng.integers(0, k + 1)) for k in reentrant}
    decoy_shift = rng.normal(4.0, 1.0, size=(n, d))

    lot_name = [f"L{l:03d}" for l in range(int(lot_hist.max()) + 1)]
    records: list[MeasurementRecord] = []
    for i, w in enumerate(wafers):
        for k in range(d):
            if not observed[i, k]:
                continue
            if k in decoy_op:
                op = decoy_op[k]
                records.append(MeasurementRecord(
                    w, lot_name[lot_hist[i, op]], items[k], op, float(ts[i, op]),
                    float(item_mean[k] + item_scale[k] * (z[i, k] + decoy_shift[i, k])),
                ))
            op = int(true_op[k])
            records.append(MeasurementRecord(
                w, lot_name[lot_hist[i, op]], items[k], op, float(ts[i, op]), float(latent[i, k])
            ))

    ops_log = {w: [(j, lot_name[lot_hist[i, j]]) for j in range(n_ops)] for i, w in enumerate(wafers)}
    labels = {w: int(y[i]) for i, w in enumerate(wafers)}
    truth = GroundTruth(
        causal_item_ids=tuple(items[k] for k in causal),
        true_logit_weights=w_raw,
        intercept=intercept_raw,
        wafer_ids=wafers,
        true_logit=logit,
        clean_label=clean,
        latent_X=latent,
    )
    return SynthOutput(spec, records, labels, ops_log, truth, items)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def render_outputs(out: SynthOutput) -> dict[str, bytes]:
    """The four generator files as bytes, keyed by file name."""
    import csv

    def table(header, rows):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
        return buf.getvalue().encode("utf-8")

    meas = table(MEASUREMENT_HEADER, (
        [r.wafer_id, r.lot_id, r.item_id, r.op_index, repr(r.timestamp), repr(r.value)]
        for r in out.records
    ))
    labels = table(LABEL_HEADER, ([w, out.labels[w]] for w in sorted(out.labels)))
    ops = table(OPS_HEADER, ([w, op, lot] for w in sorted(out.ops_log) for op, lot in out.ops_log[w]))
    doc = out.truth.to_dict(out.items)
    doc["spec"] = asdict(out.spec)
    truth = (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8")
    return dict(zip(OUTPUT_FILES, (meas, labels, ops, truth)))


def write_outputs(out: SynthOutput, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in render_outputs(out).items():
        path = out_dir / name
        tmp = path.with_name(name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
        paths.append(path)
    return paths


def replay(seed: int, spec: SynthSpec) -> dict[str, bytes]:
    return render_outputs(generate(replace(spec, seed=seed)))


def digest(files: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode())
        h.update(files[name])
    return h.hexdigest()


def load_ground_truth(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
