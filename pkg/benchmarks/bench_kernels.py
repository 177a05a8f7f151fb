"""Time the numba and numpy backends of each hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Numba timings exclude the first (compiling) call. Outputs from the two
backends are compared as well, so a run doubles as a consistency check.
"""

import argparse
import time

import numpy as np

from trajshap import _kernels as K
from trajshap import data_model, laki, synthfab


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(seed):
    out = synthfab.generate(synthfab.SynthSpec(seed=seed, n_lots=20, wafers_per_lot=25))
    ds = data_model.ingest(out.records, out.labels, out.ops_log)
    codes = laki.lot_code_matrix(ds)
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(400, 40))
    y = (Z @ rng.normal(size=40) * 0.3 + rng.normal(size=400) > 0).astype(float)
    free = np.ones(40, dtype=bool)
    values = rng.normal(size=1 << 16)
    return [
        ("lot_share_counts  N=%d J=%d" % codes.shape,
         lambda: K.lot_share_counts_numpy(codes), lambda: K.lot_share_counts_numba(codes)),
        ("fit_logistic      N=400 D=40",
         lambda: K.fit_logistic_numpy(Z, y, 1e-2, free, 1e-8, 10_000)[0],
         lambda: K.fit_logistic_numba(Z, y, 1e-2, free, 1e-8, 10_000)[0]),
        ("shapley_from_values D=16",
         lambda: K.shapley_from_values_numpy(values, 16),
         lambda: K.shapley_from_values_numba(values, 16)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':32s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, f_np, f_nb in cases(args.seed):
        f_nb()  # compile
        t_np, r_np = best_of(f_np, args.repeat)
        t_nb, r_nb = best_of(f_nb, args.repeat)
        diff = float(np.max(np.abs(np.asarray(r_np, float) - np.asarray(r_nb, float))))
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
