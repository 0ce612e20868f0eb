"""Time the numba kernels against their numpy fallbacks.

Both variants are called directly, so one process covers both paths
regardless of ``RBDG_DISABLE_NUMBA``. Run with ``python3 benchmarks/bench_kernels.py``.
"""

import argparse
import timeit

import numpy as np

from rbdg import prox
from rbdg.experiments import BaseConfig, make_instance, realization_seed


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_prox(size, repeat):
    rng = np.random.default_rng(0)
    v, a, b = rng.normal(size=size), rng.uniform(0, 1, size), rng.uniform(0, 1, size)
    anchor = rng.normal(size=size)
    args = (v, a, b, anchor)
    np.testing.assert_allclose(prox._dprox_nb(*args), prox._dprox_np(*args), atol=1e-12)
    return _best(lambda: prox._dprox_np(*args), repeat, 20), _best(lambda: prox._dprox_nb(*args), repeat, 20)


def bench_s_loop(iters, repeat):
    inst = make_instance(BaseConfig(pert_ratio=0.1), realization_seed(0, 0, 0))
    g, s_bar = inst.g_ref, inst.s_bar
    wb = np.full_like(s_bar, 1e-3)
    step = 1.0 / (2.0 * prox.commutator_lipschitz(g, True) * 1.02)

    def run(loop):
        trace = np.empty(iters + 1)
        return loop(s_bar.copy(), g, s_bar, wb, 1e-2, 1.0, True, step, iters, 0.0, trace)

    s_nb, s_np = run(prox._s_loop_nb)[0], run(prox._s_loop_np)[0]
    np.testing.assert_allclose(s_nb, s_np, atol=1e-9)
    return _best(lambda: run(prox._s_loop_np), repeat, 1), _best(lambda: run(prox._s_loop_nb), repeat, 1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iters", type=int, default=2000, help="proximal-gradient iterations per S solve")
    args = ap.parse_args(argv)

    rows = [("double_l1_prox 400", *bench_prox(400, args.repeat)),
            ("double_l1_prox 1e5", *bench_prox(100_000, args.repeat)),
            (f"S loop {args.iters} it", *bench_s_loop(args.iters, args.repeat))]
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        print(f"{name:<22}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
