"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow the two workloads in the package: a 1D bound-verification
batch and a 2D MID training batch. The first numba call per kernel is a
compile and is excluded.
"""
import argparse
import time

import numpy as np

from windowed_conv import _accel, kernels


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x1 = rng.normal(size=(16, 8, 132))
    w1 = rng.normal(size=(8, 8, 5))
    g1 = rng.normal(size=(16, 8, 128))
    x2 = rng.normal(size=(4, 16, 68, 68))
    w2 = rng.normal(size=(32, 16, 5, 5))
    g2 = rng.normal(size=(4, 32, 64, 64))
    pts = rng.uniform(-160, 160, size=(2, 100))
    c = np.linspace(-160, 160, 256)
    sites = rng.uniform(-300, 300, size=(300, 2))
    dist = np.hypot(*(sites[:, None, :] - sites[None, :, :]).transpose(2, 0, 1))
    return [
        ("corr1d_forward", (x1, w1)),
        ("corr1d_grad_weight", (x1, g1, 5)),
        ("corr1d_grad_input", (g1, w1, 132)),
        ("corr2d_forward", (x2, w2)),
        ("corr2d_grad_weight", (x2, g2, 5)),
        ("corr2d_grad_input", (g2, w2, 68, 68)),
        ("gaussian_raster", (pts[0], pts[1], c, c, 6.4)),
        ("dense_prim", (dist,)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba backend disabled; unset WINDOWED_CONV_DISABLE_NUMBA to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for name, a in cases(rng):
        t_np = best_of(getattr(kernels, name + "_np"), a, args.repeat)
        t_nb = best_of(getattr(kernels, name + "_nb"), a, args.repeat)
        print(f"{name:<22}{t_np:>12.4g}{t_nb:>12.4g}{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
