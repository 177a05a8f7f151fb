import numpy as np
import pytest
from dataclasses import replace
from hypothesis import HealthCheck, given, settings, strategies as st

from trajshap import data_model, laki, synthfab
from trajshap.laki import LotKernel, Provenance

from conftest import rec, tiny_dataset


def _ops_dataset(histories, X=None):
    """One item per wafer, observed everywhere unless ``X`` says otherwise."""
    wafers = [f"W{n}" for n in range(len(histories))]
    X = np.arange(1.0, len(wafers) + 1)[:, None] if X is None else np.asarray(X, float)
    records = [rec(w, f"I{k}", k, X[n, k]) for n, w in enumerate(wafers)
               for k in range(X.shape[1]) if np.isfinite(X[n, k])]
    labels = {w: n % 2 for n, w in enumerate(wafers)}
    return data_model.ingest(records, labels, dict(zip(wafers, histories)))


def _kernel(W):
    W = np.asarray(W, float)
    return LotKernel(C=np.zeros(W.shape, dtype=np.int64), W=W)


def test_jaccard_direct_value():
    W = laki.jaccard_from_counts(np.array([[10, 5], [5, 8]]))
    assert W[0, 1] == pytest.approx(5 / 13, abs=1e-15)
    assert W[0, 0] == 0.0 and W[1, 1] == 0.0


def test_identical_history_gives_one():
    hist = [(j, "LA") for j in range(10)]
    k = laki.build_lot_kernel(_ops_dataset([hist, list(hist)]))
    assert k.C[0, 1] == 10
    assert k.W[0, 1] == 1.0


def test_never_coresident_gives_zero():
    k = laki.build_lot_kernel(_ops_dataset([[(j, "LA") for j in range(5)],
                                            [(j, "LB") for j in range(5)]]))
    assert k.C[0, 1] == 0
    assert k.W[0, 1] == 0.0


def test_counts_only_matching_op_and_lot():
    a = [(0, "L1"), (1, "L1"), (2, "L2"), (3, "L2")]
    b = [(0, "L1"), (1, "L3"), (2, "L2")]          # stops earlier
    k = laki.build_lot_kernel(_ops_dataset([a, b]))
    np.testing.assert_array_equal(k.C, [[4, 2], [2, 3]])
    assert k.W[0, 1] == pytest.approx(2 / (4 + 3 - 2))


def test_zero_ops_is_error():
    ds = _ops_dataset([[(0, "L1")], []])
    with pytest.raises(ValueError, match="zero operations"):
        laki.build_lot_kernel(ds)


def test_weighted_average_example():
    ds = tiny_dataset([[np.nan], [2.0], [8.0]], [0, 1, 0])
    W = [[0, 0.5, 0.25], [0.5, 0, 0], [0.25, 0, 0]]
    imp = laki.impute(ds, _kernel(W))
    assert imp.X_filled[0, 0] == pytest.approx(4.0, abs=1e-15)
    assert imp.provenance[0, 0] == Provenance.KERNEL_IMPUTED


def test_mean_fallback_example():
    ds = tiny_dataset([[np.nan], [1.0], [3.0]], [0, 1, 0])
    imp = laki.impute(ds, _kernel(np.zeros((3, 3))))
    assert imp.X_filled[0, 0] == 2.0
    assert imp.provenance[0, 0] == Provenance.COLUMN_MEAN_FALLBACK


def test_peers_without_the_item_do_not_count():
    # W0 is tied to W1 only, which lacks the item: fall back to the mean.
    ds = tiny_dataset([[np.nan, 1.0], [np.nan, 2.0], [6.0, 3.0]], [0, 1, 0])
    W = [[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]]
    imp = laki.impute(ds, _kernel(W))
    assert imp.X_filled[0, 0] == 6.0
    assert imp.provenance[0, 0] == Provenance.COLUMN_MEAN_FALLBACK


def test_fully_observed_row_unchanged(default_ds, default_kernel):
    ds = tiny_dataset([[1.5, -2.0], [np.nan, 4.0]], [0, 1])
    imp = laki.impute(ds, laki.build_lot_kernel(ds))
    np.testing.assert_array_equal(imp.X_filled[0], [1.5, -2.0])
    assert (imp.provenance[0] == Provenance.OBSERVED).all()


def test_observed_cells_bit_identical(default_ds, default_kernel):
    imp = laki.impute(default_ds, default_kernel)
    m = default_ds.mask
    assert np.array_equal(imp.X_filled[m], default_ds.X[m])
    assert np.all(np.isfinite(imp.X_filled))
    assert np.array_equal(imp.provenance == Provenance.OBSERVED, m)


def test_never_observed_item_fills_zero():
    base = tiny_dataset([[1.0], [2.0]], [0, 1])
    X = np.column_stack([base.X, [np.nan, np.nan]])
    mask = np.column_stack([base.mask, [False, False]])
    order = data_model.ItemOrder(base.items + ("EMPTY",), base.order.timestamps + (9.0,))
    ds = replace(base, X=X, mask=mask, order=order)
    imp = laki.impute(ds, _kernel([[0, 1], [1, 0]]))
    np.testing.assert_array_equal(imp.X_filled[:, 1], [0.0, 0.0])
    assert (imp.provenance[:, 1] == Provenance.COLUMN_MEAN_FALLBACK).all()


def test_baseline_single_peer():
    ds = tiny_dataset([[1.0], [7.0], [100.0]], [0, 1, 0])
    kern = _kernel([[0, 0.3, 0], [0.3, 0, 0], [0, 0, 0]])
    assert laki.baseline_trajectory(ds, kern, "W0")[0] == pytest.approx(7.0, rel=1e-15)


def test_baseline_zero_row_gives_column_means():
    # the wafer has no observations of its own, so leaving it out changes nothing
    ds = tiny_dataset([[np.nan, np.nan], [1.0, 10.0], [3.0, 20.0]], [0, 1, 0])
    kern = _kernel([[0, 0, 0], [0, 0, 0.5], [0, 0.5, 0]])
    np.testing.assert_array_equal(laki.baseline_trajectory(ds, kern, "W0"), laki.column_means(ds))


def test_baseline_mean_fallback_leaves_self_out():
    ds = tiny_dataset([[100.0], [1.0], [3.0]], [0, 1, 0])
    kern = _kernel(np.zeros((3, 3)))
    assert laki.baseline_trajectory(ds, kern, "W0")[0] == 2.0


def test_baseline_ignores_own_value(default_ds, default_kernel):
    B = laki.baseline_matrix(default_ds, default_kernel)
    W = default_kernel.W
    X0 = np.where(default_ds.mask, default_ds.X, 0.0)
    M = default_ds.mask.astype(float)
    for n in range(default_ds.N):
        keep = np.arange(default_ds.N) != n
        num = W[n, keep] @ X0[keep]
        den = W[n, keep] @ M[keep]
        cnt = M[keep].sum(0)
        loo = np.where(cnt > 0, X0[keep].sum(0) / np.maximum(cnt, 1), 0.0)
        direct = np.where(den > 0, num / np.where(den > 0, den, 1), loo)
        np.testing.assert_allclose(B[n], direct, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(laki.baseline_trajectory(default_ds, default_kernel, default_ds.wafers[n]),
                                   B[n], rtol=1e-12, atol=1e-12)


def test_baseline_invariant_to_own_observation(default_ds, default_kernel):
    n = int(np.argmax(default_ds.mask.sum(1)))
    X = default_ds.X.copy()
    X[n, default_ds.mask[n]] += 1000.0
    shifted = replace(default_ds, X=X)
    a = laki.baseline_trajectory(default_ds, default_kernel, default_ds.wafers[n])
    b = laki.baseline_trajectory(shifted, default_kernel, default_ds.wafers[n])
    np.testing.assert_array_equal(a, b)


def test_column_mean_imputation(default_ds):
    imp = laki.impute_column_mean(default_ds)
    means = laki.column_means(default_ds)
    miss = ~default_ds.mask
    np.testing.assert_array_equal(imp.X_filled[miss], np.broadcast_to(means, miss.shape)[miss])


def test_imputed_json_has_provenance(default_ds, default_kernel):
    doc = laki.imputed_to_dict(default_ds, laki.impute(default_ds, default_kernel))
    P = np.array(doc["provenance"])
    assert P.shape == (default_ds.N, default_ds.D)
    assert set(np.unique(P)) <= {0, 1, 2}
    assert doc["provenance_codes"]["kernel_imputed"] == 1


# -- properties over generated fabs ------------------------------------------

small_specs = st.builds(
    synthfab.SynthSpec,
    seed=st.integers(0, 10_000),
    n_lots=st.integers(1, 4),
    wafers_per_lot=st.integers(2, 5),
    n_items=st.integers(2, 8),
    missing_rate_target=st.sampled_from([0.0, 0.3, 0.7]),
    n_causal_items=st.just(1),
    sparse_causal_items=st.just(0),
)


def _gen(spec):
    o = synthfab.generate(spec)
    return data_model.ingest(o.records, o.labels, o.ops_log)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_specs)
def test_kernel_invariants(spec):
    ds = _gen(spec)
    k = laki.build_lot_kernel(ds)
    C, W = k.C, k.W
    assert np.array_equal(C, C.T)
    assert np.all(np.diag(C) == [len(ds.ops[w]) for w in ds.wafers])
    assert np.all(np.diag(C) > 0)
    d = np.diag(C)
    assert np.all(C <= np.minimum(d[:, None], d[None, :]))
    assert np.array_equal(W, W.T)
    assert np.all(np.diag(W) == 0)
    assert np.all((W >= 0) & (W <= 1))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_specs, st.floats(0.01, 100.0))
def test_scale_equivariance(spec, c):
    ds = _gen(spec)
    k = laki.build_lot_kernel(ds)
    a = laki.impute(ds, k).X_filled
    b = laki.impute(replace(ds, X=ds.X * c), k).X_filled
    np.testing.assert_allclose(b, a * c, rtol=1e-12, atol=1e-300)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_specs)
def test_kernel_fills_are_convex(spec):
    ds = _gen(spec)
    imp = laki.impute(ds, laki.build_lot_kernel(ds))
    for k in range(ds.D):
        obs = ds.X[ds.mask[:, k], k]
        sel = imp.provenance[:, k] == Provenance.KERNEL_IMPUTED
        if sel.any():
            v = imp.X_filled[sel, k]
            span = 1e-12 * max(1.0, np.abs(obs).max())
            assert v.min() >= obs.min() - span and v.max() <= obs.max() + span


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(small_specs)
def test_impute_deterministic(spec):
    ds = _gen(spec)
    k = laki.build_lot_kernel(ds)
    a, b = laki.impute(ds, k), laki.impute(ds, k)
    assert np.array_equal(a.X_filled, b.X_filled) and np.array_equal(a.provenance, b.provenance)


def test_imputed_json_matches_dataset_layout(default_ds, default_kernel):
    doc = laki.imputed_to_dict(default_ds, laki.impute(default_ds, default_kernel))
    base = data_model.dataset_to_dict(default_ds)
    for key in ("items", "timestamps", "wafers", "lots", "y"):
        assert doc[key] == base[key]
    assert all(v is not None for row in doc["X"] for v in row)
