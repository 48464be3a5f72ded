"""Compare the compiled kernels with the numpy fallback on workload-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from spikecaps._kernels import fallback, native


def cases(rng):
    # shapes taken from the scaled network at batch 50
    x1 = rng.normal(size=(50, 1, 28, 28))
    s1 = (rng.uniform(size=(50, 32, 20, 20)) < 0.3).astype(np.float64)
    rows = fallback.im2col(s1, 9, 2)
    cur = rng.normal(0.3, 0.5, size=(5, 50 * 32 * 20 * 20))
    v0 = np.zeros(cur.shape[1])
    v_pre = fallback.lif_forward(cur, v0, 0.2, 0.5)[0]
    g = rng.normal(size=cur.shape)
    return {
        "im2col conv1 (50x1x28x28, k9 s1)": lambda k: k.im2col(x1, 9, 1),
        "im2col primary (50x32x20x20, k9 s2)": lambda k: k.im2col(s1, 9, 2),
        "col2im primary": lambda k: k.col2im(rows, s1.shape, 9, 2),
        "lif_forward (5 x 640k)": lambda k: k.lif_forward(cur, v0, 0.2, 0.5),
        "lif_backward (5 x 640k)": lambda k: k.lif_backward(v_pre, g, g, v0, 0.2, 0.5),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if native is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'python ms':>10s} {'native ms':>10s} {'speedup':>8s}  bitwise")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(fallback), number=1, repeat=args.repeat)) * 1e3
        t_nat = min(timeit.repeat(lambda: fn(native), number=1, repeat=args.repeat)) * 1e3
        a, b = fn(fallback), fn(native)
        a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"{name:40s} {t_py:10.1f} {t_nat:10.1f} {t_py / t_nat:7.1f}x  {same}")


if __name__ == "__main__":
    main()
