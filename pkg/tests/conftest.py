import numpy as np
import pytest

from trajshap import data_model, laki, synthfab
from trajshap.data_model import MeasurementRecord


def rec(wafer, item, op, value, lot="L1", ts=None):
    return MeasurementRecord(wafer, lot, item, op, float(op if ts is None else ts), value)


def tiny_dataset(X, y, lots=None, n_ops=4):
    """Dataset from a dense matrix with NaN for missing cells.

    Each wafer runs ``n_ops`` operations, all in its own lot; item ``k`` is
    read at op ``k``.
    """
    X = np.asarray(X, dtype=float)
    N, D = X.shape
    lots = lots or ["L0"] * N
    wafers = [f"W{n}" for n in range(N)]
    records = [
        rec(wafers[n], f"I{k}", k, X[n, k], lots[n])
        for n in range(N) for k in range(D) if np.isfinite(X[n, k])
    ]
    ops = {w: [(j, lots[n]) for j in range(max(n_ops, D))] for n, w in enumerate(wafers)}
    return data_model.ingest(records, dict(zip(wafers, map(int, y))), ops)


@pytest.fixture(scope="session")
def default_output():
    return synthfab.generate(synthfab.SynthSpec())


@pytest.fixture(scope="session")
def default_ds(default_output):
    o = default_output
    return data_model.ingest(o.records, o.labels, o.ops_log)


@pytest.fixture(scope="session")
def default_kernel(default_ds):
    return laki.build_lot_kernel(default_ds)


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k:2d}: {msg}")
