"""Time the numba kernels against the plain NumPy fallback.

Each backend runs in its own interpreter (``HSM_NUMBA=1`` / ``HSM_NUMBA=0``)
so that no compiled helper leaks into the fallback timing. Compilation is
excluded: every case is called once before timing.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases(quick):
    from hsm.covband import estimate, gen_moving_average, sample_covariance, sample_gaussian
    from hsm.hierarchy import Hierarchy, group_structure_gl, group_structure_log, random_dag
    from hsm.prox_gl import prox_gl_dual_bcd, prox_gl_path, prox_mgl_path
    from hsm.prox_log import prox_log_naive_bcd, prox_log_path, prox_log_path_bcd

    rng = np.random.default_rng(0)
    D = 100 if quick else 400
    sizes = rng.integers(1, 4, D)
    y = rng.standard_normal(int(sizes.sum()))
    Dm = 20 if quick else 50
    msizes = rng.integers(1, 4, Dm)
    ym = rng.standard_normal(int(msizes.sum())) * np.repeat(np.linspace(2, 0.1, Dm), msizes)
    h = random_dag(rng, 12 if quick else 25)
    yd = rng.standard_normal(h.p)
    gsg, gsl = group_structure_gl(h), group_structure_log(h)
    p = 40 if quick else 100
    S = sample_covariance(sample_gaussian(gen_moving_average(p, 10), 50, 1))
    return {
        f"log path prox (D={D})": lambda: prox_log_path(y, sizes, 0.5),
        f"gl path prox (D={D})": lambda: prox_gl_path(y, sizes, 0.5),
        f"mgl path prox (D={Dm})": lambda: prox_mgl_path(ym, msizes, 0.3),
        f"log naive bcd (p={h.p})": lambda: prox_log_naive_bcd(yd, gsl, 0.3, tol=1e-10),
        f"log path bcd (p={h.p})": lambda: prox_log_path_bcd(yd, h, lam=0.3, tol=1e-10),
        f"gl dual bcd (p={h.p})": lambda: prox_gl_dual_bcd(yd, gsg, 0.3, tol=1e-10),
        f"covband log (p={p})": lambda: estimate(S, 0.3, "log"),
        f"covband mgl (p={p})": lambda: estimate(S, 0.3, "mgl"),
    }


def _worker(repeat, quick):
    out = {}
    for name, fn in _cases(quick).items():
        fn()
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps(out))


def _run(flag, repeat, quick):
    env = dict(os.environ, HSM_NUMBA=flag)
    cmd = [sys.executable, __file__, "--worker", "--repeat", str(repeat)]
    if quick:
        cmd.append("--quick")
    res = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller instances")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        _worker(args.repeat, args.quick)
        return
    fast = _run("1", args.repeat, args.quick)
    slow = _run("0", args.repeat, args.quick)
    width = max(len(k) for k in fast)
    print(f"{'case':<{width}}  {'numba (s)':>11}  {'numpy (s)':>11}  {'speedup':>8}")
    for name in fast:
        f, s = fast[name], slow[name]
        print(f"{name:<{width}}  {f:11.3e}  {s:11.3e}  {s / f:8.1f}")


if __name__ == "__main__":
    main()
