"""Compare the numba and numpy kernel backends on bootstrap-sized inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--replicas 1000] [--bins 110 1100] [--repeat 7]

Each kernel is timed on a (replicas, bins) array; the end-to-end line times
``bootstrap_uncertainty`` with each backend swapped in.  Results from the two
backends are checked for agreement before timing.
"""
import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from atomscatter import _kernels
from atomscatter.analysis import bootstrap_uncertainty
from atomscatter.simulate import SimConfig, simulate_pair
from atomscatter.theory import AtomParams, PhotonParams


@contextmanager
def _backend(name):
    saved = _kernels.first_order_recursion, _kernels.parabolic_peak
    if name == "numba":
        _kernels.first_order_recursion = _kernels.first_order_recursion_numba
        _kernels.parabolic_peak = _kernels.parabolic_peak_numba
    else:
        _kernels.first_order_recursion = _kernels.first_order_recursion_numpy
        _kernels.parabolic_peak = _kernels.parabolic_peak_numpy
    try:
        yield
    finally:
        _kernels.first_order_recursion, _kernels.parabolic_peak = saved


def _best(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--replicas", type=int, default=1000)
    parser.add_argument("--bins", type=int, nargs="+", default=[110, 1100])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])
    if len(backends) == 1:
        print("numba unavailable (or disabled); timing the numpy backend only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'shape':>14}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for n_bins in args.bins:
        x = np.ascontiguousarray(rng.normal(size=(args.replicas, n_bins)))
        kernels = {
            "first_order_recursion": (lambda f: (lambda: f(x, 0.96)), "first_order_recursion"),
            "parabolic_peak": (lambda f: (lambda: f(x)), "parabolic_peak"),
        }
        for label, (bind, stem) in kernels.items():
            funcs = {b: getattr(_kernels, f"{stem}_{b}") for b in backends}
            outputs = {b: funcs[b](x, 0.96) if stem == "first_order_recursion" else funcs[b](x) for b in backends}
            if len(backends) == 2:
                ref, fast = outputs["numpy"], outputs["numba"]
                for r, f in zip(ref if isinstance(ref, tuple) else (ref,), fast if isinstance(fast, tuple) else (fast,)):
                    np.testing.assert_allclose(f, r, rtol=1e-12, atol=1e-12)
            times = {b: _best(bind(funcs[b]), args.repeat) for b in backends}
            speedup = times["numpy"] / times["numba"] if "numba" in times else float("nan")
            print(f"{label:<24}{f'{args.replicas}x{n_bins}':>14}"
                  + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends) + f"{speedup:>9.1f}x")

    atom = AtomParams()
    cfg = SimConfig(atom, PhotonParams.in_units_of(atom, 1.96), 10**6, seed=1)
    g0, g = simulate_pair(cfg)
    times = {}
    for b in backends:
        with _backend(b):
            times[b] = _best(lambda: bootstrap_uncertainty(g0, g, atom, n_resamples=args.replicas, seed=0), args.repeat)
    speedup = times["numpy"] / times["numba"] if "numba" in times else float("nan")
    print(f"{'bootstrap_uncertainty':<24}{f'{args.replicas}x{g0.n_bins}':>14}"
          + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends) + f"{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
