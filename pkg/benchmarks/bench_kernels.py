"""Time the compiled kernels against the numpy fallback.

Run from the repo root after an editable install:

    python3 benchmarks/bench_kernels.py

The compiled extension and the pure backend expose the same six functions;
this drives both through the workloads that dominate training (the K-step
inner fit called once per candidate question) and prints per-call timings
plus the speedup. Numbers are medians over repeats, so a busy machine adds
noise but does not skew the ratio much.
"""
import statistics
import time

import numpy as np

from catlab import backend, kernels_py

try:
    from catlab import _core
except ImportError:
    _core = None


def time_call(fn, args, repeats=200, number=20):
    laps = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        laps.append((time.perf_counter() - t0) / number)
    return statistics.median(laps)


def irt_workload(rng, n_items):
    b = rng.uniform(-3.0, 3.0, size=n_items)
    y = (rng.random(n_items) < 0.5).astype(np.float64)
    raw = float(rng.normal())
    return raw, b, y


def ncdm_workload(rng, k=8, n_items=40):
    q = (rng.random((n_items, k)) < 0.4).astype(np.float64)
    q[np.arange(n_items), rng.integers(0, k, n_items)] = 1.0
    hdiff = rng.uniform(0.1, 0.9, (n_items, k))
    hdisc = rng.uniform(0.1, 0.9, n_items)
    w1 = np.abs(rng.normal(0.0, 0.1, (128, k)))
    b1 = rng.normal(0.0, 0.1, 128)
    w2 = np.abs(rng.normal(0.0, 0.1, (64, 128)))
    b2 = rng.normal(0.0, 0.1, 64)
    w3 = np.abs(rng.normal(0.0, 0.1, (1, 64)))
    b3 = rng.normal(0.0, 0.5, 1)
    y = (rng.random(n_items) < 0.5).astype(np.float64)
    raw = rng.normal(size=k)
    return (raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3), y


def main():
    rng = np.random.default_rng(7)
    if _core is None:
        print("compiled extension not built; timing the numpy backend only")
    print(f"active backend: {backend.BACKEND}\n")

    rows = []
    for n_items in (10, 40, 200):
        raw, b, y = irt_workload(rng, n_items)
        args = (raw, b, y, 5, 0.1)
        t_py = time_call(kernels_py.irt_inner, args)
        t_c = time_call(_core.irt_inner, args) if _core else float("nan")
        rows.append((f"irt_inner    n={n_items:<4d} k=5", t_py, t_c))

    net, y = ncdm_workload(rng)
    args = net + (y, 5, 0.1)
    t_py = time_call(kernels_py.ncdm_inner, args, repeats=50, number=5)
    t_c = time_call(_core.ncdm_inner, args, repeats=50, number=5) if _core else float("nan")
    rows.append(("ncdm_inner   n=40   k=5", t_py, t_c))

    raw, b, y = irt_workload(rng, 400)
    t_py = time_call(kernels_py.irt_predict, (raw, b))
    t_c = time_call(_core.irt_predict, (raw, b)) if _core else float("nan")
    rows.append(("irt_predict  n=400", t_py, t_c))

    print(f"{'workload':<26s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, t_py, t_c in rows:
        ratio = t_py / t_c if t_c == t_c and t_c > 0 else float("nan")
        print(f"{name:<26s} {t_py * 1e6:>8.1f}us {t_c * 1e6:>8.1f}us {ratio:>7.1f}x")

    if _core is not None:
        raw, b, y = irt_workload(rng, 40)
        d_py = kernels_py.irt_inner(raw, b, y, 5, 0.1)
        d_c = _core.irt_inner(raw, b, y, 5, 0.1)
        print(f"\nbackend agreement on a shared irt_inner call: |diff| = {abs(d_py - d_c):.2e}")


if __name__ == "__main__":
    main()
