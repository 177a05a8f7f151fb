import numpy as np
import pytest

from trajshap import classifier, data_model, pipeline, synthfab
from trajshap.synthfab import SynthSpec


def _ds(out):
    return data_model.ingest(out.records, out.labels, out.ops_log)


def test_default_shape(default_output, default_ds):
    assert default_ds.N == 48 and default_ds.D == 40
    assert len(default_output.truth.causal_item_ids) == 2


def test_missing_rate_within_tolerance():
    for seed in range(5):
        s = data_model.summary_stats(_ds(synthfab.generate(SynthSpec(seed=seed))))
        assert abs(s["missing_rate"] - 0.94) <= 0.02


@pytest.mark.parametrize("target", [0.5, 0.8])
def test_other_missing_targets(target):
    s = data_model.summary_stats(_ds(synthfab.generate(SynthSpec(missing_rate_target=target))))
    assert abs(s["missing_rate"] - target) <= 0.02


def test_zero_missing_is_fully_observed():
    ds = _ds(synthfab.generate(SynthSpec(missing_rate_target=0.0)))
    assert ds.mask.all()


def test_infeasible_target():
    with pytest.raises(ValueError, match="missing"):
        synthfab.generate(SynthSpec(n_lots=1, wafers_per_lot=2, n_items=1, n_causal_items=1,
                                    sparse_causal_items=0, missing_rate_target=0.9))


@pytest.mark.parametrize("kw", [
    dict(n_lots=1, wafers_per_lot=1),
    dict(n_items=3, n_causal_items=4),
    dict(missing_rate_target=1.0),
    dict(label_noise=0.5),
])
def test_spec_invariants(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_spec_json_roundtrip():
    spec = SynthSpec(seed=17, n_items=12)
    again = SynthSpec.from_json(spec.to_json())
    assert again == spec
    assert synthfab.digest(synthfab.render_outputs(synthfab.generate(spec))) == \
        synthfab.digest(synthfab.render_outputs(synthfab.generate(again)))


def test_spec_rejects_unknown_field():
    with pytest.raises(ValueError, match="unknown"):
        SynthSpec.from_dict({"seed": 1, "n_wafers": 3})
    with pytest.raises((ValueError, TypeError)):
        SynthSpec.from_dict({"seed": "one"})


def test_replay_is_byte_identical():
    spec = SynthSpec(seed=3)
    a, b = synthfab.replay(3, spec), synthfab.replay(3, spec)
    assert synthfab.digest(a) == synthfab.digest(b)
    assert set(a) == set(synthfab.OUTPUT_FILES)


def test_different_seeds_differ():
    a = synthfab.generate(SynthSpec(seed=1)).labels
    b = synthfab.generate(SynthSpec(seed=2)).labels
    assert a != b


def test_ground_truth(default_output):
    t = default_output.truth
    items = default_output.items
    doc = t.to_dict(items)
    assert set(doc["causal_item_ids"]) == set(t.causal_item_ids)
    w = dict(zip(items, doc["true_logit_weights"]))
    for item in items:
        assert (w[item] != 0) == (item in t.causal_item_ids)
    assert len(t.true_logit) == len(t.wafer_ids)


def test_reentrant_decoys_are_earlier(default_output, default_ds):
    by_key = {}
    for r in default_output.records:
        by_key.setdefault((r.wafer_id, r.item_id), []).append(r)
    doubles = {k: v for k, v in by_key.items() if len(v) > 1}
    assert doubles
    for (w, item), recs in doubles.items():
        latest = max(recs, key=lambda r: r.op_index)
        assert default_ds.X[default_ds.wafer_index(w), default_ds.order.index(item)] == latest.value


def test_timestamps_follow_op_order(default_output):
    by_wafer = {}
    for r in default_output.records:
        by_wafer.setdefault(r.wafer_id, []).append((r.op_index, r.timestamp))
    for rows in by_wafer.values():
        rows.sort()
        ts = [t for _, t in rows]
        assert ts == sorted(ts)


def test_lot_structure_varies(default_ds, default_kernel):
    C = default_kernel.C
    d = np.diag(C)
    off = C[~np.eye(len(d), dtype=bool)]
    assert (off == 0).any()
    partial = (off > 0) & (off < np.minimum.outer(d, d)[~np.eye(len(d), dtype=bool)])
    assert partial.any()


def test_missingness_is_mostly_lot_level(default_ds):
    # for lot-sampled items, wafers of one lot agree on whether the item was read
    lots = np.array([default_ds.lots[w] for w in default_ds.wafers])
    agree = []
    for k in range(default_ds.D):
        m = default_ds.mask[:, k]
        for lot in set(lots):
            sel = m[lots == lot]
            agree.append(sel.all() or not sel.any())
    assert np.mean(agree) > 0.6


def test_separability_of_planted_items():
    for seed in range(5):
        out = synthfab.generate(SynthSpec(seed=seed, n_lots=10, wafers_per_lot=20,
                                          missing_rate_target=0.0, causal_effect_size=2.0))
        res = classifier.univariate_screen(_ds(out))
        causal = [r.normalized_auc for r in res if r.item_id in out.truth.causal_item_ids]
        noise = [r.normalized_auc for r in res if r.item_id not in out.truth.causal_item_ids]
        assert min(causal) > np.percentile(noise, 95)


def test_null_effect_cv_auc():
    aucs = []
    for seed in range(20):
        ds = _ds(synthfab.generate(SynthSpec(seed=seed, causal_effect_size=0.0)))
        aucs.append(pipeline.heldout_report(ds, "laki", seed=0).auc)
    assert 0.4 <= float(np.mean(aucs)) <= 0.6


def test_write_outputs(tmp_path, default_output):
    paths = synthfab.write_outputs(default_output, tmp_path)
    assert sorted(p.name for p in paths) == sorted(synthfab.OUTPUT_FILES)
    gt = synthfab.load_ground_truth(tmp_path / "ground_truth.json")
    assert set(gt["causal_item_ids"]) == set(default_output.truth.causal_item_ids)
    back = data_model.load_csvs(tmp_path / "measurements.csv", tmp_path / "labels.csv", tmp_path / "ops.csv")
    assert back.N == 48
