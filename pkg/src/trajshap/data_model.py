"""Wafer / lot / measurement data model and ingestion.

Raw measurement logs are deduplicated (reentrant steps keep only the record
with the largest ``op_index``) and arranged into a fixed ``N x D`` matrix with
an explicit observation mask. Items are ordered by median ``op_index`` across
wafers, ties broken lexicographically by ``item_id``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised when raw measurement logs cannot be turned into a dataset."""


@dataclass(frozen=True)
class MeasurementRecord:
    wafer_id: str
    lot_id: str
    item_id: str
    op_index: int
    timestamp: float
    value: float


@dataclass(frozen=True)
class ItemOrder:
    items: tuple[str, ...]
    timestamps: tuple[float, ...]

    def __post_init__(self):
        if len(self.items) < 1:
            raise ValueError("ItemOrder needs at least one item")
        if len(set(self.items)) != len(self.items):
            raise ValueError("ItemOrder items must be distinct")
        if len(self.timestamps) != len(self.items):
            raise ValueError("one timestamp per item required")

    def __len__(self) -> int:
        return len(self.items)

    def index(self, item_id: str) -> int:
        return self.items.index(item_id)


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """Immutable ``N x D`` trajectory matrix plus lot/operation context.

    ``X`` holds NaN wherever ``mask`` is False; code downstream must go
    through the mask (or imputation) and never read those cells directly.
    ``ops`` maps each wafer to its ``(op_index, lot_id)`` history before the
    label measurement.
    """

    wafers: tuple[str, ...]
    lots: Mapping[str, str]
    X: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    ops: Mapping[str, tuple[tuple[int, str], ...]]
    order: ItemOrder
    n_dropped_unlabeled: int = field(default=0, compare=False)

    def __post_init__(self):
        for arr in (self.X, self.mask, self.y):
            arr.setflags(write=False)

    @property
    def N(self) -> int:
        return len(self.wafers)

    @property
    def D(self) -> int:
        return len(self.order)

    @property
    def items(self) -> tuple[str, ...]:
        return self.order.items

    def wafer_index(self, wafer_id: str) -> int:
        try:
            return self.wafers.index(wafer_id)
        except ValueError:
            raise KeyError(f"unknown wafer {wafer_id!r}") from None

    def groups(self) -> np.ndarray:
        """Lot id per wafer row, for group-aware fold splitting."""
        return np.array([self.lots[w] for w in self.wafers], dtype=object)

    def equals(self, other: "TrajectoryDataset") -> bool:
        return (
            self.wafers == other.wafers
            and dict(self.lots) == dict(other.lots)
            and self.order == other.order
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.y, other.y)
            and np.array_equal(
                np.where(self.mask, self.X, 0.0), np.where(other.mask, other.X, 0.0)
            )
            and {k: tuple(v) for k, v in self.ops.items()}
            == {k: tuple(v) for k, v in other.ops.items()}
        )

    def subset(self, rows: Sequence[int]) -> "TrajectoryDataset":
        rows = list(rows)
        wafers = tuple(self.wafers[r] for r in rows)
        return TrajectoryDataset(
            wafers=wafers,
            lots={w: self.lots[w] for w in wafers},
            X=self.X[rows].copy(),
            mask=self.mask[rows].copy(),
            y=self.y[rows].copy(),
            ops={w: self.ops[w] for w in wafers},
            order=self.order,
        )


def _median(values: Sequence[float]) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def ingest(
    records: Iterable[MeasurementRecord],
    labels: Mapping[str, int],
    ops_log: Mapping[str, Sequence[tuple[int, str]]],
) -> TrajectoryDataset:
    """Build a :class:`TrajectoryDataset` from raw logs.

    Wafers without a label are dropped (the count is logged and kept on the
    dataset as ``n_dropped_unlabeled``). Labeled wafers with no measurements
    are kept as all-missing rows.
    """
    kept: dict[tuple[str, str], MeasurementRecord] = {}
    seen: dict[tuple[str, str, int], float] = {}
    n_records = 0
    for rec in records:
        n_records += 1
        if not math.isfinite(rec.value):
            raise IngestError(f"non-finite value in record {rec}")
        triple = (rec.wafer_id, rec.item_id, int(rec.op_index))
        if triple in seen:
            if seen[triple] != rec.value:
                raise IngestError(
                    f"conflicting duplicate measurement for wafer={rec.wafer_id!r} "
                    f"item={rec.item_id!r} op_index={rec.op_index}: "
                    f"{seen[triple]!r} vs {rec.value!r}"
                )
            continue
        seen[triple] = rec.value
        key = (rec.wafer_id, rec.item_id)
        prev = kept.get(key)
        if prev is None or rec.op_index > prev.op_index:
            kept[key] = rec
    if n_records == 0:
        raise IngestError("no measurement records")

    for w, lab in labels.items():
        if int(lab) not in (0, 1):
            raise IngestError(f"label for wafer {w!r} must be 0 or 1, got {lab!r}")
        if w not in ops_log:
            raise IngestError(f"labeled wafer {w!r} missing from operations log")

    measured_wafers = {w for (w, _) in kept}
    unlabeled = measured_wafers - set(labels)
    if unlabeled:
        log.warning("dropping %d unlabeled wafer(s)", len(unlabeled))

    wafers = tuple(sorted(labels))
    kept = {k: r for k, r in kept.items() if k[0] in labels}
    if not kept:
        raise IngestError("no measurement records for labeled wafers")

    op_by_item: dict[str, list[int]] = defaultdict(list)
    ts_by_item: dict[str, list[float]] = defaultdict(list)
    for (_, item), rec in kept.items():
        op_by_item[item].append(rec.op_index)
        ts_by_item[item].append(float(rec.timestamp))
    items = sorted(op_by_item, key=lambda it: (_median(op_by_item[it]), it))
    order = ItemOrder(
        items=tuple(items), timestamps=tuple(_median(ts_by_item[it]) for it in items)
    )
    col = {it: k for k, it in enumerate(items)}
    row = {w: n for n, w in enumerate(wafers)}

    X = np.full((len(wafers), len(items)), np.nan)
    mask = np.zeros((len(wafers), len(items)), dtype=bool)
    for (w, item), rec in kept.items():
        X[row[w], col[item]] = rec.value
        mask[row[w], col[item]] = True

    ops = {}
    for w in wafers:
        entries = sorted((int(o), str(l)) for o, l in ops_log[w])
        op_ids = [o for o, _ in entries]
        if len(set(op_ids)) != len(op_ids):
            raise IngestError(f"wafer {w!r} has repeated op_index in operations log")
        ops[w] = tuple(entries)

    lots = {}
    for w in wafers:
        if ops[w]:
            lots[w] = ops[w][-1][1]
        else:
            recs = [r for (ww, _), r in kept.items() if ww == w]
            if not recs:
                raise IngestError(f"wafer {w!r} has neither operations nor records")
            lots[w] = max(recs, key=lambda r: r.op_index).lot_id

    y = np.array([int(labels[w]) for w in wafers], dtype=np.int64)
    return TrajectoryDataset(
        wafers=wafers,
        lots=lots,
        X=X,
        mask=mask,
        y=y,
        ops=ops,
        order=order,
        n_dropped_unlabeled=len(unlabeled),
    )


def summary_stats(ds: TrajectoryDataset) -> dict:
    return {
        "N": ds.N,
        "D": ds.D,
        "missing_rate": float(1.0 - ds.mask.mean()),
        "label_rate": float(ds.y.mean()),
    }


# ---------------------------------------------------------------------------
# CSV / JSON I/O
# ---------------------------------------------------------------------------

MEASUREMENT_HEADER = ["wafer_id", "lot_id", "item_id", "op_index", "timestamp", "value"]
LABEL_HEADER = ["wafer_id", "label"]
OPS_HEADER = ["wafer_id", "op_index", "lot_id"]


def _check_header(path: Path, got: list[str] | None, want: list[str]) -> None:
    if got != want:
        raise IngestError(f"{path}: expected header {','.join(want)}, got {got}")


def read_measurements(path: str | Path) -> list[MeasurementRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(path, reader.fieldnames, MEASUREMENT_HEADER)
        out = []
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(
                    MeasurementRecord(
                        wafer_id=row["wafer_id"],
                        lot_id=row["lot_id"],
                        item_id=row["item_id"],
                        op_index=int(row["op_index"]),
                        timestamp=float(row["timestamp"]),
                        value=float(row["value"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}:{line_no}: {exc}") from None
    return out


def read_labels(path: str | Path) -> dict[str, int]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(path, reader.fieldnames, LABEL_HEADER)
        out = {}
        for line_no, row in enumerate(reader, start=2):
            try:
                out[row["wafer_id"]] = int(row["label"])
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}:{line_no}: {exc}") from None
    return out


def read_ops(path: str | Path) -> dict[str, list[tuple[int, str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(path, reader.fieldnames, OPS_HEADER)
        out: dict[str, list[tuple[int, str]]] = defaultdict(list)
        for line_no, row in enumerate(reader, start=2):
            try:
                out[row["wafer_id"]].append((int(row["op_index"]), row["lot_id"]))
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}:{line_no}: {exc}") from None
    return dict(out)


def load_csvs(measurements: str | Path, labels: str | Path, ops: str | Path) -> TrajectoryDataset:
    return ingest(read_measurements(measurements), read_labels(labels), read_ops(ops))


def write_measurements(path: str | Path, records: Iterable[MeasurementRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MEASUREMENT_HEADER)
        for r in records:
            wr.writerow([r.wafer_id, r.lot_id, r.item_id, r.op_index, repr(float(r.timestamp)),
                         repr(float(r.value))])


def write_labels(path: str | Path, labels: Mapping[str, int]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(LABEL_HEADER)
        for w in sorted(labels):
            wr.writerow([w, int(labels[w])])


def write_ops(path: str | Path, ops_log: Mapping[str, Sequence[tuple[int, str]]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(OPS_HEADER)
        for w in sorted(ops_log):
            for op, lot in ops_log[w]:
                wr.writerow([w, op, lot])


def _float_or_none(v: float, observed: bool):
    return float(v) if observed else None


def dataset_to_dict(ds: TrajectoryDataset) -> dict:
    return {
        "items": list(ds.items),
        "timestamps": [float(t) for t in ds.order.timestamps],
        "wafers": list(ds.wafers),
        "lots": [ds.lots[w] for w in ds.wafers],
        "y": [int(v) for v in ds.y],
        "X": [
            [_float_or_none(ds.X[n, k], ds.mask[n, k]) for k in range(ds.D)]
            for n in range(ds.N)
        ],
        "ops": {w: [[op, lot] for op, lot in ds.ops[w]] for w in ds.wafers},
    }


def dataset_from_dict(doc: Mapping) -> TrajectoryDataset:
    wafers = tuple(doc["wafers"])
    order = ItemOrder(items=tuple(doc["items"]), timestamps=tuple(float(t) for t in doc["timestamps"]))
    rows = doc["X"]
    X = np.array([[np.nan if v is None else float(v) for v in r] for r in rows], dtype=np.float64)
    X = X.reshape(len(wafers), len(order))
    mask = np.array([[v is not None for v in r] for r in rows], dtype=bool).reshape(X.shape)
    ops_doc = doc.get("ops", {})
    ops = {w: tuple((int(o), str(l)) for o, l in ops_doc.get(w, [])) for w in wafers}
    return TrajectoryDataset(
        wafers=wafers,
        lots=dict(zip(wafers, doc["lots"])),
        X=X,
        mask=mask,
        y=np.array(doc["y"], dtype=np.int64),
        ops=ops,
        order=order,
    )


def dump_dataset(ds: TrajectoryDataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=1) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> TrajectoryDataset:
    return dataset_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def dataset_to_records(ds: TrajectoryDataset) -> list[MeasurementRecord]:
    """Flatten the observed cells back into one record per (wafer, item).

    Each record gets the item's representative timestamp and a synthetic
    ``op_index`` equal to the column position, which reproduces the column
    order on re-ingestion.
    """
    out = []
    for n, w in enumerate(ds.wafers):
        for k, item in enumerate(ds.items):
            if ds.mask[n, k]:
                out.append(
                    MeasurementRecord(w, ds.lots[w], item, k, ds.order.timestamps[k],
                                      float(ds.X[n, k]))
                )
    return out
