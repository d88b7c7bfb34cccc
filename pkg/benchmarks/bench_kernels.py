"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py --repeat 5

Each kernel is warmed up once (JIT compile) before timing; the best of
``--repeat`` runs is reported.
"""
import argparse
import time

import numpy as np

from clipstream import _accel
from clipstream.kernels import adam, hashgrid
from clipstream.kernels import raster as rk


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def raster_inputs(n, size, rng):
    mean = rng.uniform(0, size, (n, 2))
    a, c = rng.uniform(1, 12, n), rng.uniform(1, 12, n)
    cov = np.column_stack([a, rng.uniform(-0.5, 0.5, n) * np.sqrt(a * c), c])
    return (np.ascontiguousarray(mean), np.ascontiguousarray(rk.conics(cov)), rng.uniform(size=(n, 3)),
            rng.uniform(0.1, 0.9, n), cov)


def cases(args, rng):
    H = W = args.size
    mean, conic, color, opacity, cov = raster_inputs(args.splats, args.size, rng)
    dimg = rng.normal(size=(H, W, 3))
    x = rng.uniform(size=(args.points, 4))
    tables = rng.normal(size=(8, 1 << 16, 4))
    res = np.array([8, 11, 17, 24, 36, 53, 80, 128])
    dout = rng.normal(size=(args.points, 32))
    p, g = rng.normal(size=args.params), rng.normal(size=args.params)
    m, v = np.zeros_like(p), np.zeros_like(p)

    out = {
        "raster forward": (lambda: rk.rasterize_forward_np(mean, conic, color, opacity, H, W), None),
        "raster backward": (lambda: rk.rasterize_backward_np(mean, conic, color, opacity, H, W, dimg), None),
        "hashgrid forward": (lambda: hashgrid.encode_forward_np(x, tables, res), None),
        "hashgrid backward": (lambda: hashgrid.encode_backward_np(x, tables, res, dout, True), None),
        "adam step": (lambda: adam.adam_step_np(p, g, m, v, 1e-3, 0.9, 0.999, 1e-15, 1), None),
    }
    if _accel.USE_NUMBA:
        tiles = rk.bin_tiles(mean, cov, H, W)
        _, final_t, n_used = rk.rasterize_forward_nb(mean, conic, color, opacity, H, W, tiles)
        out["raster forward"] = (out["raster forward"][0],
                                 lambda: rk.rasterize_forward_nb(mean, conic, color, opacity, H, W, tiles))
        out["raster backward"] = (out["raster backward"][0],
                                  lambda: rk.rasterize_backward_nb(mean, conic, color, opacity, H, W, tiles, final_t,
                                                                   n_used, dimg))
        out["hashgrid forward"] = (out["hashgrid forward"][0], lambda: hashgrid.encode_forward_nb(x, tables, res))
        out["hashgrid backward"] = (out["hashgrid backward"][0],
                                    lambda: hashgrid.encode_backward_nb(x, tables, res, dout, True))
        out["adam step"] = (out["adam step"][0], lambda: adam.adam_step_nb(p, g, m, v, 1e-3, 0.9, 0.999, 1e-15, 1))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64, help="image side in pixels")
    ap.add_argument("--splats", type=int, default=2000)
    ap.add_argument("--points", type=int, default=2000, help="hash-grid queries")
    ap.add_argument("--params", type=int, default=1_000_000, help="Adam parameter count")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"backend flag: {_accel.BACKEND}")
    print(f"{'kernel':20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn) in cases(args, rng).items():
        t_np = best_of(np_fn, args.repeat) * 1e3
        if nb_fn is None:
            print(f"{name:20s} {t_np:10.2f} {'n/a':>10s} {'':>8s}")
            continue
        t_nb = best_of(nb_fn, args.repeat) * 1e3
        print(f"{name:20s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
