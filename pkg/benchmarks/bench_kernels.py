"""Benchmark the compiled kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py

Times the three hot paths (bulk generator fill, convolution forward +
backward, 2x2 max pooling) and an end-to-end training epoch on the default
synthetic problem under both backends.
"""

import time

import numpy as np

from plab.kernels import _fallback

try:
    from plab import _core
except ImportError:
    _core = None


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(impl, name):
    rows = []
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    rows.append(("xoshiro_fill 1M", timeit(lambda: impl.xoshiro_fill(state, 1_000_000))))

    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 8, 16, 16))
    k = rng.normal(size=(16, 8, 3, 3))
    rows.append(("conv2d_fwd 32x8x16x16", timeit(lambda: impl.conv2d_fwd(x, k, 1, 1))))
    y = impl.conv2d_fwd(x, k, 1, 1)
    rows.append(("conv2d_bwd 32x8x16x16", timeit(lambda: impl.conv2d_bwd(x, k, y, 1, 1))))

    xp = rng.normal(size=(32, 16, 16, 16))
    rows.append(("maxpool2 32x16x16x16", timeit(lambda: impl.maxpool2_fwd(xp))))

    print(f"\n{name}")
    for label, secs in rows:
        print(f"  {label:28s} {secs * 1e3:9.3f} ms")
    return dict(rows)


def bench_training_epoch():
    import importlib
    import os

    results = {}
    for forced, label in ((None, "compiled"), ("1", "fallback")):
        if forced is None and _core is None:
            continue
        env = os.environ.copy()
        code = (
            "import time, numpy as np\n"
            "from plab.data import gen_synthetic\n"
            "from plab.network import TrainConfig, build_model, train\n"
            "import plab\n"
            "ds = gen_synthetic(n=400, seed=0)\n"
            "m = build_model('smallconv', (3,16,16), 4, seed=0)\n"
            "t0 = time.perf_counter()\n"
            "train(m, ds.subset('train'), TrainConfig(epochs=2, batch_size=32, lr=0.05, seed=0))\n"
            "print(plab.BACKEND, time.perf_counter() - t0)\n"
        )
        if forced:
            env["PLAB_PURE_PYTHON"] = forced
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True
        )
        if out.returncode == 0:
            backend, secs = out.stdout.split()
            results[backend] = float(secs)
    if results:
        print("\ntraining, 2 epochs on the default synthetic problem")
        for backend, secs in results.items():
            print(f"  {backend:10s} {secs:8.3f} s")
    return results


def main():
    fb = bench_backend(_fallback, "fallback (pure numpy)")
    if _core is None:
        print("\ncompiled extension not built; install with the C toolchain to compare")
    else:
        co = bench_backend(_core, "compiled (cython)")
        print("\nspeedup (fallback / compiled)")
        for key in co:
            print(f"  {key:28s} {fb[key] / co[key]:8.2f}x")
    bench_training_epoch()


if __name__ == "__main__":
    main()
