"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records a one-line verdict that is printed in the pytest
terminal summary (see ``conftest.py``), and also prints it when run with
``-s``.
"""

import time
from pathlib import Path

import numpy as np

from trajshap import classifier, cli, data_model, laki, pipeline, report, shapley, synthfab, validation
from trajshap.shapley import LakiBackground, Mode, ValueFunctionSpec

from conftest import ACCEPTANCE


def verdict(k, ok, msg):
    ACCEPTANCE[k] = (bool(ok), msg)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {msg}")
    assert ok, msg


def _dataset(seed=0, **kw):
    out = synthfab.generate(synthfab.SynthSpec(seed=seed, **kw))
    return out, data_model.ingest(out.records, out.labels, out.ops_log)


def _wafer_pool(n_wafers):
    """Trained (dataset, model, spec, X_filled) bundles covering ``n_wafers`` wafers."""
    pool, seen, seed = [], 0, 0
    while seen < n_wafers:
        _, ds = _dataset(seed)
        kernel = laki.build_lot_kernel(ds)
        model = pipeline.fit_model(ds, "laki", kernel=kernel)
        bg = LakiBackground.from_dataset(ds, kernel)
        X = laki.impute(ds, kernel).X_filled
        take = min(ds.N, n_wafers - seen)
        pool.append((ds, model, bg, X, take))
        seen += take
        seed += 1
    return pool


def test_1_sum_rule():
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for ds, model, bg, X, take in _wafer_pool(100):
        spec = ValueFunctionSpec(Mode.LAKI_TRAJECTORY, shapley.model_function(model), bg)
        for n in range(take):
            a = shapley.trajectory_shapley(spec, X[n], ds.wafers[n])
            f_t = float(model.predict_proba(X[n][None, :])[0])
            f_0 = float(model.predict_proba(bg.baseline(ds.wafers[n])[None, :])[0])
            worst = max(worst, abs(a.scores.sum() - (f_t - f_0)))
            count += 1
    dt = time.perf_counter() - t0
    verdict(1, count == 100 and worst <= 1e-9 and dt < 10,
            f"sum rule on {count} wafers, max residual {worst:.2e} (<=1e-9), {dt:.2f}s (<10s)")


def test_2_closed_form_equals_oracle():
    t0 = time.perf_counter()
    worst, dims = 0.0, set()
    for seed in range(200):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 13))
        dims.add(d)
        f = validation.random_nonlinear(rng, d)
        x_t, x0 = rng.normal(size=d), rng.normal(size=d)
        spec = ValueFunctionSpec(Mode.LAKI_TRAJECTORY, f, LakiBackground(["w"], x0[None, :]))
        a = shapley.trajectory_shapley(spec, x_t, "w")
        b = shapley.trajectory_shapley_oracle(spec, x_t, "w")
        worst = max(worst, float(np.max(np.abs(a.scores - b.scores))))
    dt = time.perf_counter() - t0
    verdict(2, worst <= 1e-12 and dt < 30 and max(dims) == 12,
            f"200 instances, D in [{min(dims)}, {max(dims)}], max gap {worst:.2e} (<=1e-12), {dt:.2f}s (<30s)")


def test_3_linear_exactness(default_ds, default_kernel):
    model = pipeline.fit_model(default_ds, "laki", kernel=default_kernel)
    f = shapley.model_function(model, "logit")
    bg = LakiBackground.from_dataset(default_ds, default_kernel)
    spec = ValueFunctionSpec(Mode.LAKI_TRAJECTORY, f, bg)
    X = laki.impute(default_ds, default_kernel).X_filled
    w_raw = model.weights / model.standardizer.std
    worst = 0.0
    for n, wafer in enumerate(default_ds.wafers):
        a = shapley.trajectory_shapley(spec, X[n], wafer)
        worst = max(worst, float(np.max(np.abs(a.scores - w_raw * (X[n] - bg.baseline(wafer))))))
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = int(rng.integers(1, 30))
        w, b = rng.normal(size=d), float(rng.normal())
        x_t, x0 = rng.normal(size=d), rng.normal(size=d)
        spec = ValueFunctionSpec(Mode.LAKI_TRAJECTORY, lambda Z, w=w, b=b: np.atleast_2d(Z) @ w + b,
                                 LakiBackground(["w"], x0[None, :]))
        a = shapley.trajectory_shapley(spec, x_t, "w")
        worst = max(worst, float(np.max(np.abs(a.scores - w * (x_t - x0)))))
    verdict(3, worst <= 1e-12, f"linear logit scores vs w*(x_t - x0), max error {worst:.2e} (<=1e-12)")


def test_4_standard_sv_axioms():
    t0 = time.perf_counter()
    worst = {"efficiency": 0.0, "dummy": 0.0, "symmetry": 0.0}
    n_models = 0
    for seed in range(120):
        rng = np.random.default_rng(10_000 + seed)
        d = int(rng.integers(2, 9))
        f = validation.random_nonlinear(rng, d)
        x, ref = rng.normal(size=d), rng.normal(size=d)
        sv = shapley.shapley_exact(ValueFunctionSpec(Mode.BASELINE_MEAN, f, ref), x)
        gap = abs(sv.scores.sum() - (float(f(x[None])[0]) - float(f(ref[None])[0])))
        worst["efficiency"] = max(worst["efficiency"], gap)

        j = int(rng.integers(0, d))

        def f_dummy(Z, f=f, j=j):
            Z = np.array(Z, dtype=float, copy=True)
            Z[:, j] = 0.0
            return f(Z)

        sv_d = shapley.shapley_exact(ValueFunctionSpec(Mode.BASELINE_MEAN, f_dummy, ref), x)
        worst["dummy"] = max(worst["dummy"], abs(sv_d.scores[j]))

        a, b = rng.choice(d, size=2, replace=False)

        def f_sym(Z, f=f, a=a, b=b):
            Z = np.asarray(Z, dtype=float)
            S = Z.copy()
            S[:, [a, b]] = Z[:, [b, a]]
            return 0.5 * (f(Z) + f(S))

        xs, rs = x.copy(), ref.copy()
        xs[b], rs[b] = xs[a], rs[a]
        sv_s = shapley.shapley_exact(ValueFunctionSpec(Mode.BASELINE_MEAN, f_sym, rs), xs)
        worst["symmetry"] = max(worst["symmetry"], abs(sv_s.scores[a] - sv_s.scores[b]))
        n_models += 1
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-9 and dt < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(4, ok, f"{n_models} models with D<=8: {detail} (<=1e-9), {dt:.2f}s (<60s)")


def test_5_laki_improves_tpr():
    t0 = time.perf_counter()
    gains = []
    for seed in range(10):
        _, ds = _dataset(seed)
        kernel = laki.build_lot_kernel(ds)
        tpr_laki = pipeline.heldout_report(ds, "laki", kernel=kernel).tpr
        tpr_mean = pipeline.heldout_report(ds, "column_mean", kernel=kernel).tpr
        gains.append((tpr_laki, tpr_mean))
    dt = time.perf_counter() - t0
    g = np.array(gains)
    mean_laki, mean_mean = g[:, 0].mean(), g[:, 1].mean()
    improvement = mean_laki - mean_mean
    wins = int(np.sum(g[:, 0] >= g[:, 1]))
    verdict(5, mean_laki >= mean_mean and improvement > 0 and dt < 300,
            f"mean held-out TPR laki {mean_laki:.3f} vs column_mean {mean_mean:.3f} "
            f"(improvement {improvement:+.3f}, laki >= mean on {wins}/10 seeds), {dt:.1f}s (<300s)")


def test_6_curve_endpoints():
    worst, n_curves = 0.0, 0
    for ds, model, bg, X, take in _wafer_pool(100):
        spec = ValueFunctionSpec(Mode.LAKI_TRAJECTORY, shapley.model_function(model), bg)
        for n in range(take):
            w = ds.wafers[n]
            c = report.cumulative_curve(shapley.trajectory_shapley(spec, X[n], w), ds.order)
            p_x0 = classifier.predict_proba(model, bg.baseline(w))
            p_xt = classifier.predict_proba(model, X[n])
            worst = max(worst, abs(c.beta(0.0) - p_x0), abs(c.beta(np.inf) - p_xt))
            n_curves += 1
    verdict(6, worst <= 1e-12, f"{n_curves} curves, max |beta(0)-p(x0)|, |beta(inf)-p(x_t)| = {worst:.2e} (<=1e-12)")


def test_7_root_cause_recovery(default_output, default_ds):
    t = default_output.truth
    defect = [w for w, c in zip(t.wafer_ids, t.clean_label) if c == 1]
    res = pipeline.root_cause_recovery(default_ds, t.causal_item_ids, defect, top=3)
    verdict(7, res.hit_rate >= 0.8,
            f"planted item in top-3 |s_i| for {len(res.hits)}/{res.n_wafers} true-defect wafers "
            f"= {res.hit_rate:.3f} (>=0.8)")


def test_8_gradient_finite_differences(default_ds, default_kernel):
    X = laki.impute(default_ds, default_kernel).X_filled
    Z = classifier.Standardizer.fit(X, default_ds.mask).transform(X)
    y = default_ds.y.astype(float)
    rng = np.random.default_rng(8)
    h, worst = 1e-5, 0.0
    for _ in range(20):
        w = rng.normal(scale=0.5, size=Z.shape[1])
        b = float(rng.normal())
        lam = float(10 ** rng.uniform(-4, 1))
        gw, gb = classifier.gradient(Z, y, w, b, lam)
        g = np.append(gw, gb)
        num = np.empty_like(g)
        for j in range(g.size):
            e = np.zeros(g.size)
            e[j] = h
            up = classifier.objective(Z, y, w + e[:-1], b + e[-1], lam)
            dn = classifier.objective(Z, y, w - e[:-1], b - e[-1], lam)
            num[j] = (up - dn) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - num) / np.linalg.norm(num)))
    verdict(8, worst <= 1e-4, f"20 random points, max relative error {worst:.2e} (<=1e-4, step 1e-5)")


def test_9_regime_bands(default_ds):
    s = data_model.summary_stats(default_ds)
    ok = 0.90 <= s["missing_rate"] <= 0.97 and 0.4 <= s["label_rate"] <= 0.6
    verdict(9, ok, f"missing_rate {s['missing_rate']:.3f} in [0.90, 0.97], "
                   f"label_rate {s['label_rate']:.3f} in [0.4, 0.6]")


def _pipeline_run(root: Path) -> dict[str, bytes]:
    assert cli.main(["synth", "--out", str(root)]) == 0
    assert cli.main(["train", "--out", str(root), "--compare-imputation"]) == 0
    files = {}
    for wafer in ("W0000", "W0021", "W0047"):
        assert cli.main(["attribute", wafer, "--out", str(root)]) == 0
        for name in ("attr.csv", "curve.csv", "curve.svg", "jumps.csv"):
            files[f"{wafer}/{name}"] = (root / name).read_bytes()
    for name in ("model.json", "eval.csv", "cv.csv", "imputed.json", *synthfab.OUTPUT_FILES):
        files[name] = (root / name).read_bytes()
    return files


def test_10_determinism(tmp_path):
    a = _pipeline_run(tmp_path / "run1")
    b = _pipeline_run(tmp_path / "run2")
    diff = sorted(k for k in a if a[k] != b[k])
    verdict(10, not diff and set(a) == set(b),
            f"{len(a)} output files byte-identical across two runs" if not diff else f"differing: {diff}")
