"""Time one Crank-Nicolson solve with the compiled and the numpy kernel.

    python benchmarks/bench_step.py [--M 4000 8000 16000] [--repeat 200]

Also times a full short evolution with each backend (the compiled one is
swapped in through tnls.kernels).
"""
import argparse
import timeit

import numpy as np

from tnls import _kernels_py, kernels
from tnls.dynamics import EvolutionConfig, evolve
from tnls.grid import reference_grid
from tnls.ground_state import eval_W


def step_times(M, repeat):
    g = reference_grid(3, M=M)
    u = eval_W(g) * np.exp(0.3j * g.r)
    pot = np.abs(u) ** 4 + 0j
    out = np.empty(M, complex)
    fns = {"python": _kernels_py.cn_step}
    if kernels.BACKEND == "cython":
        from tnls import _kernels
        fns["cython"] = _kernels.cn_step
    res = {}
    for name, fn in fns.items():
        t = timeit.repeat(lambda: fn(u, pot, g.vol, g.kdiag, g.koff, 0.01, out), number=repeat, repeat=3)
        res[name] = min(t) / repeat
    return res


def evolve_times(M, t_end=1.0):
    g = reference_grid(3, M=M)
    u0 = 0.9 * eval_W(g)
    cfg = EvolutionConfig(dt=0.01, t_end=t_end, observer_stride=50)
    res = {}
    saved = kernels.cn_step
    try:
        backends = {"python": _kernels_py.cn_step}
        if kernels.BACKEND == "cython":
            backends["cython"] = saved
        for name, fn in backends.items():
            kernels.cn_step = fn
            t = timeit.default_timer()
            evolve(g, u0, cfg)
            res[name] = timeit.default_timer() - t
    finally:
        kernels.cn_step = saved
    return res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--M", type=int, nargs="+", default=[4000, 8000, 16000])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    print("compiled backend available:", kernels.BACKEND == "cython")
    print("%8s %14s %14s %8s" % ("M", "python [us]", "cython [us]", "speedup"))
    for M in args.M:
        r = step_times(M, args.repeat)
        cy = r.get("cython", np.nan)
        print("%8d %14.1f %14.1f %8.2f" % (M, 1e6 * r["python"], 1e6 * cy, r["python"] / cy))
    r = evolve_times(args.M[0])
    print("evolve t_end=1, M=%d: %s" % (args.M[0], ", ".join("%s %.2f s" % kv for kv in r.items())))


if __name__ == "__main__":
    main()
