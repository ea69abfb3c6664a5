import math
import warnings

import numpy as np
import pytest
from mpmath import mp

from rkkytune import spectra
from rkkytune.errors import (BoxTooSmall, CutoffTooSmall, DomainError, InsufficientBasis,
                             OpenShellWarning)


def _solve(trap, n_states, half_width=None, n_points=None, ppw=40):
    if half_width is None:
        grid = spectra.GridSpec.default(trap, n_states, ppw)
    else:
        grid = spectra.GridSpec(half_width, n_points)
    return spectra.solve_eigenbasis(spectra.build_1d_hamiltonian(trap, grid), n_states)


def test_trap_defaults_and_validation():
    t = spectra.TrapSpec1D(200)
    assert t.kp_xzp == pytest.approx(math.sqrt(200))
    with pytest.raises(DomainError):
        spectra.TrapSpec1D(0)
    with pytest.raises(DomainError):
        spectra.TrapSpec1D(5, vp_ratio=-1)
    with pytest.raises(DomainError):
        spectra.TrapSpec2D(5, anisotropy=0)


def test_grid_is_mirror_symmetric():
    g = spectra.GridSpec(7.3, 1001)
    x = g.points
    np.testing.assert_array_equal(x, -x[::-1])
    assert x[500] == 0.0
    assert g.refined(2).step == pytest.approx(g.step / 2)


def test_hamiltonian_entries():
    trap = spectra.TrapSpec1D(10)
    grid = spectra.GridSpec(10.0, 201)
    op = spectra.build_1d_hamiltonian(trap, grid)
    h = grid.step
    mid = np.argmin(np.abs(op.interior))
    assert op.diag[mid] == pytest.approx(2 / h ** 2)
    assert trap.potential(2.0) == pytest.approx(1.0)
    assert spectra.TrapSpec1D(200, 400, 13.2).potential(0.0) == 0.0
    v = np.random.default_rng(0).standard_normal(op.diag.size)
    np.testing.assert_allclose(op.matvec(v), op.to_sparse() @ v)


def test_oscillator_levels():
    b = _solve(spectra.TrapSpec1D(5), 5)
    np.testing.assert_allclose(b.energies, np.arange(5) + 0.5, atol=1e-3)


@pytest.mark.parametrize("n", [0, 1, 4, 9])
def test_wavefunctions_match_hermite(n):
    b = _solve(spectra.TrapSpec1D(10), 10)
    x = b.grid.points
    ref = spectra.harmonic_eigenfunction(n, x)
    psi = b.wavefunctions[n]
    psi = psi * np.sign(np.dot(psi, ref))
    err = math.sqrt(np.sum((psi - ref) ** 2) * b.grid.step)
    assert err < 1e-3


def test_even_point_grid_uses_general_solver():
    b = _solve(spectra.TrapSpec1D(4), 4, 10.0, 800)
    np.testing.assert_allclose(b.energies, np.arange(4) + 0.5, atol=2e-3)


def test_wavefunction_normalisation_and_sign(small_basis):
    h = small_basis.grid.step
    norms = np.sum(small_basis.wavefunctions[:20] ** 2, axis=1) * h
    np.testing.assert_allclose(norms, 1.0, rtol=1e-12)
    for psi in small_basis.wavefunctions[:20]:
        first = psi[np.argmax(np.abs(psi) > 1e-8 * np.abs(psi).max())]
        assert first > 0


def test_box_too_small():
    with pytest.raises(BoxTooSmall):
        _solve(spectra.TrapSpec1D(50), 50, 5.0, 501)


@pytest.mark.xfail(strict=True, reason="the level pair at the Fermi level is split by <1e-6; "
                   "lattice and trap together form near-degenerate doublets there")
def test_lattice_gap_exceeds_bare_gap():
    t = spectra.TrapSpec1D(200, 400, 13.2)
    b = _solve(t, 201)
    b0 = spectra.solve_eigenbasis(
        spectra.build_1d_hamiltonian(spectra.TrapSpec1D(200, 0, 13.2), b.grid), 201)
    gap = b.energies[200] - b.energies[199]
    gap0 = b0.energies[200] - b0.energies[199]
    assert gap > 10 * gap0


def test_hermite_values():
    assert spectra.harmonic_eigenfunction(0, 0.0) == pytest.approx((2 * math.pi) ** -0.25,
                                                                   rel=1e-14)
    assert spectra.harmonic_eigenfunction(1, 0.0) == 0.0
    v = spectra.harmonic_eigenfunction(300, 0.0)
    assert math.isfinite(v) and abs(v) < 1


def test_hermite_against_high_precision():
    mp.dps = 40
    xi = np.array([-7.5, -1.2, 0.3, 4.0, 25.0])
    table = spectra.hermite_functions(60, xi)
    for n in (0, 3, 17, 60):
        for j, x in enumerate(xi):
            y = mp.mpf(x) / mp.sqrt(2)
            ref = (mp.hermite(n, y) * mp.e ** (-y * y / 2)
                   / mp.sqrt(mp.mpf(2) ** n * mp.factorial(n) * mp.sqrt(mp.pi)) * mp.mpf(2) ** -0.25)
            assert table[n, j] == pytest.approx(float(ref), rel=1e-10, abs=1e-300)


def test_hermite_large_order_normalised():
    x = np.linspace(-80, 80, 40001)
    t = spectra.hermite_functions(1000, x)
    norms = np.sum(t[[0, 500, 1000]] ** 2, axis=1) * (x[1] - x[0])
    np.testing.assert_allclose(norms, 1.0, rtol=1e-8)
    assert np.all(np.isfinite(t))


def test_2d_basis_counting_and_ties():
    b = spectra.build_2d_basis(spectra.TrapSpec2D(3, 1.0), 2.5)
    assert [tuple(x) for x in b.quantum_labels] == [(0, 0), (0, 1), (1, 0)] or \
        [tuple(x) for x in b.quantum_labels] == [(0, 0), (1, 0), (0, 1)]
    assert b.n_states == 3
    b2 = spectra.build_2d_basis(spectra.TrapSpec2D(3, 2.0), 3.5)
    labels = [tuple(x) for x in b2.quantum_labels]
    assert labels.index((0, 1)) < labels.index((2, 0))
    b3 = spectra.build_2d_basis(spectra.TrapSpec2D(10, 1000.0), 600.0)
    assert np.all(b3.quantum_labels[:10, 1] == 0)
    with pytest.raises(CutoffTooSmall):
        spectra.build_2d_basis(spectra.TrapSpec2D(10, 1.0), 2.0)


def test_2d_basis_energies_sorted_with_grid():
    grid = spectra.GridSpec(10.0, 201)
    b = spectra.build_2d_basis(spectra.TrapSpec2D(5, 1.7), 8.0, grid)
    assert np.all(np.diff(b.energies) >= -1e-10)
    assert b.wavefunctions.shape == (b.n_states, 201)
    e = (b.quantum_labels[:, 0] + 0.5) + 1.7 * (b.quantum_labels[:, 1] + 0.5)
    np.testing.assert_allclose(b.energies, e)


def test_fermi_level_examples():
    b = _solve(spectra.TrapSpec1D(200), 201, ppw=80)
    lev = spectra.fermi_level(b, 200)
    assert lev.energy == pytest.approx(199.5, abs=0.05)
    assert lev.k_f == pytest.approx(math.sqrt(199.5), abs=1e-2)
    one = spectra.fermi_level(_solve(spectra.TrapSpec1D(1), 2), 1)
    assert one.energy == pytest.approx(0.5, abs=1e-3)
    b2 = spectra.build_2d_basis(spectra.TrapSpec2D(4, 1.0), 4.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpenShellWarning)
        assert spectra.fermi_level(b2, 3).energy == pytest.approx(1.5)
    with pytest.raises(InsufficientBasis):
        spectra.fermi_level(b2, b2.n_states + 1)


def test_open_shell_warning():
    b = spectra.build_2d_basis(spectra.TrapSpec2D(2, 1.0), 3.0)
    with pytest.warns(OpenShellWarning):
        assert spectra.fermi_level(b, 2).open_shell
