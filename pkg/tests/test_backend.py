import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rkkytune import _backend, _fallback

compiled = pytest.importorskip("rkkytune._core")


def _binom(L):
    from math import comb
    return np.array([[comb(p, k) for k in range(L + 2)] for p in range(L + 1)], dtype=np.int64)


def test_backend_selected():
    assert _backend.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("exclude", [False, True])
def test_pair_sum_parity(rng, exclude):
    K, N, M = 17, 5, 11
    pocc = rng.standard_normal((K, N))
    pvir = rng.standard_normal((K, M))
    eocc = np.sort(rng.uniform(0, 5, N))
    evir = np.sort(rng.uniform(5, 20, M))
    evir[0] = eocc[-1]  # one degenerate pair
    a = compiled.pair_sum(pocc, pvir, eocc, evir, 1e-12, exclude)
    b = _fallback.pair_sum(pocc, pvir, eocc, evir, 1e-12, exclude)
    np.testing.assert_allclose(np.asarray(a[0]), np.asarray(b[0]), rtol=1e-13, atol=1e-15)
    assert a[1] == b[1] == 1


def test_pair_sum_matches_definition(rng):
    K, N, M = 4, 3, 6
    pocc = rng.standard_normal((K, N))
    pvir = rng.standard_normal((K, M))
    eocc = np.array([0.5, 1.5, 2.5])
    evir = np.arange(M) + 3.5
    f, _ = _backend.pair_sum(pocc, pvir, eocc, evir, 1e-12, False)
    ref = -np.einsum("kn,km,nm->k", pocc, pvir, 1.0 / (evir[None, :] - eocc[:, None]))
    np.testing.assert_allclose(f, ref, rtol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12).flatmap(lambda L: st.tuples(st.just(L), st.integers(0, L))))
def test_enumerate_rank_parity(Ln):
    L, n = Ln
    a = np.asarray(compiled.enumerate_states(L, n), dtype=np.uint64)
    b = np.asarray(_fallback.enumerate_states(L, n), dtype=np.uint64)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.diff(a.astype(np.int64)) > 0)
    binom = _binom(L)
    ra = np.asarray(compiled.rank_states(a, binom))
    rb = np.asarray(_fallback.rank_states(a, binom))
    np.testing.assert_array_equal(ra, np.arange(a.size))
    np.testing.assert_array_equal(rb, np.arange(a.size))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.booleans(), st.lists(st.floats(-3, 3), min_size=0, max_size=4))
def test_hamiltonian_pieces_parity(L, periodic, coup):
    n = L // 2
    coup = coup[:(L - 1) // 2] if periodic else coup[:L - 1]
    states = np.asarray(_fallback.enumerate_states(L, n), dtype=np.uint64)
    c = np.asarray(coup, dtype=np.float64)
    np.testing.assert_allclose(compiled.diagonal_energies(states, L, c, periodic),
                               _fallback.diagonal_energies(states, L, c, periodic))
    binom = _binom(L)
    for x, y in zip(compiled.hopping_entries(states, L, periodic, binom),
                    _fallback.hopping_entries(states, L, periodic, binom)):
        np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
