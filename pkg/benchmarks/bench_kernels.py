"""Compare the compiled and pure-Python loss+gradient kernels.

    python benchmarks/bench_kernels.py [--n 2000] [--fits 5]

Reports per-call time of each kernel on both backends and the wall time of a
few box fits on each.
"""

import argparse
import time

import numpy as np

from span3d import _fallback, fit, kernels
from span3d.fit import FitConfig, fit_box, sampler_rng, scene_problem
from span3d.kitti import KITTI_P2, synth_scene

try:
    from span3d import _ckernels
except ImportError:
    _ckernels = None


def _per_call(fn, args_list) -> float:
    t0 = time.perf_counter()
    for a in args_list:
        fn(*a)
    return (time.perf_counter() - t0) / len(args_list)


def _fits(n: int) -> float:
    cfg = FitConfig()
    t0 = time.perf_counter()
    for i in range(n):
        p = scene_problem(cfg, i, 0.0)
        fit_box(p.init, p.gt, p.K, p.rect, cfg, rng=sampler_rng(cfg, i))
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="kernel calls per backend")
    ap.add_argument("--fits", type=int, default=5, help="box fits per backend")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    boxes, K, rects = synth_scene(rng, 2 * args.n)
    intr = KITTI_P2.as_tuple()
    sp = [(boxes[2 * i].params(), boxes[2 * i + 1].params(), 0) for i in range(args.n)]
    pr = [(boxes[2 * i].params(), intr, rects[2 * i + 1].as_tuple()) for i in range(args.n)]

    backends = [("python", _fallback)]
    if _ckernels is not None:
        backends.insert(0, ("cython", _ckernels))
    rows = []
    for name, mod in backends:
        t_sp = _per_call(mod.spatial_loss_grad, sp)
        t_pr = _per_call(mod.projection_loss_grad, pr)
        # route fit_box through this backend
        fit.kernels.spatial_loss_grad = mod.spatial_loss_grad
        fit.kernels.projection_loss_grad = mod.projection_loss_grad
        t_fit = _fits(args.fits)
        rows.append((name, t_sp, t_pr, t_fit))
    fit.kernels.spatial_loss_grad = kernels._impl.spatial_loss_grad
    fit.kernels.projection_loss_grad = kernels._impl.projection_loss_grad

    print(f"{'backend':8} {'spatial us':>12} {'projection us':>14} {f'{args.fits} fits s':>10}")
    for name, a, b, c in rows:
        print(f"{name:8} {a * 1e6:12.1f} {b * 1e6:14.1f} {c:10.2f}")
    if len(rows) == 2:
        (_, a0, b0, c0), (_, a1, b1, c1) = rows
        print(f"speedup  {a1 / a0:12.1f}x {b1 / b0:13.1f}x {c1 / c0:9.1f}x")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
