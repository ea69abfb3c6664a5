"""Time the compiled core against the numpy fallback.

Usage: python benchmarks/bench_backends.py [--repeat 5]

Each row reports the best wall time of both backends on the same inputs
and checks that their results agree.
"""
import argparse
import timeit

import numpy as np

from rkkytune import _fallback, manybody

try:
    from rkkytune import _core
except ImportError:  # pragma: no cover
    _core = None


def cases(rng):
    k, n, m = 2000, 200, 800
    pocc = np.ascontiguousarray(rng.standard_normal((k, n)))
    pvir = np.ascontiguousarray(rng.standard_normal((k, m)))
    eocc = np.sort(rng.uniform(0, 200, n))
    evir = np.sort(rng.uniform(201, 1000, m))
    yield "pair_sum 2000 x 200 x 800", "pair_sum", (pocc, pvir, eocc, evir, 1e-10, False)

    L, nb = 20, 10
    basis = manybody.build_basis(L, nb)
    coup = np.array([4.0, 2.0, 0.5, 0.1, 0.05])
    yield "enumerate_states L=20 n=10", "enumerate_states", (L, nb)
    yield "rank_states L=20 n=10", "rank_states", (basis.states, basis.binom)
    yield "diagonal_energies L=20 R=5", "diagonal_energies", (basis.states, L, coup, True)
    yield "hopping_entries L=20", "hopping_entries", (basis.states, L, True, basis.binom)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _core is None:
        raise SystemExit("compiled core not built; run pip install -e . --no-build-isolation")
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'compiled [s]':>13s} {'fallback [s]':>13s} {'speed-up':>9s} agree")
    for label, name, a in cases(rng):
        fc, ff = getattr(_core, name), getattr(_fallback, name)
        tc = min(timeit.repeat(lambda: fc(*a), number=1, repeat=args.repeat))
        tf = min(timeit.repeat(lambda: ff(*a), number=1, repeat=args.repeat))
        print(f"{label:32s} {tc:13.4f} {tf:13.4f} {tf / tc:9.1f} {_same(fc(*a), ff(*a))}")


if __name__ == "__main__":
    main()
